//! `pose2imu` command-line entry point.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pose2imu::experiments::{
    build_training_set, dataset::SessionData, emit_signal_overlay, evaluate_model, generate_oracle, run_sweep,
    simulate_dataset, sweep::timings_csv, train_regressors, Cell, CellResult, Dataset, EvalReport, ExperimentPlan,
    Manifest, SignalKind, SweepOptions,
};
use pose2imu::experiments::{derive_seed, sweep::F1_AVERAGING};
use pose2imu::har::{self, layout_for, ChannelSlot};
use pose2imu::imu_dsp::{
    detect_sync_offset, parse_imu_csv, resample_linear, write_imu_csv, Channel, ScalerPolicy, SyncConfig,
};
use pose2imu::pose_features::normalize_sequence;
use pose2imu::pose_ingest::{
    ingest_primary_subject, parse_keypoint_file, read_keypoint_dir, TrackingConfig, DEFAULT_MIN_CONFIDENCE,
    POSE_RATE,
};
use pose2imu::regressor;
use pose2imu::skeleton::Placement;
use pose2imu::{Error, Result};

use config::RunConfig;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  bad command line
  3  file could not be read or written (io)
  4  malformed input file (parse)
  5  invalid configuration (config)
  6  invalid manifest (manifest)
  7  data violates a pipeline invariant (invariant)
  8  training failed (training)
  9  checkpoint rejected (checkpoint)

On failure one JSON line {\"error\": {\"kind\", \"code\", \"message\"}} is printed to stderr.";

#[derive(Parser)]
#[command(name = "pose2imu", version, about = "Simulate wearable IMU signals from video pose and evaluate activity classifiers", after_help = EXIT_CODES)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Track the main subject in a keypoint file or directory and write normalised poses.
    IngestPoses {
        input: PathBuf,
        #[arg(long)]
        fps: f64,
        /// Frame width and height in pixels.
        #[arg(long, num_args = 2)]
        image_size: Option<Vec<f64>>,
    },
    /// Parse a sensor CSV and resample it to 50 Hz.
    IngestImu {
        input: PathBuf,
        #[arg(long)]
        placement: Placement,
    },
    /// Estimate the sensor-to-video offset from sync-gesture impacts.
    Sync {
        input: PathBuf,
        #[arg(long)]
        placement: Placement,
        /// Video frames of the impacts, comma separated.
        #[arg(long, value_delimiter = ',')]
        anchors: Vec<usize>,
        #[arg(long)]
        fps: f64,
    },
    /// Fit pose-to-signal regressors on the manifest's generic sessions.
    TrainRegression,
    /// Simulate sensor signals for every session with video.
    Simulate,
    /// Train the activity classifier on the configured mix.
    TrainHar,
    /// Score the trained classifier on the real test sessions.
    Evaluate,
    /// Run every cell of the experiment plan.
    Sweep {
        /// Print the resolved cells without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Overlay measured and simulated signals of one session.
    CompareSignals {
        #[arg(long)]
        session: String,
        /// `placement.channel`, e.g. `left_wrist.acc_norm`.
        #[arg(long)]
        slot: String,
    },
    /// Write a synthetic corpus with exact sensor signals.
    SynthGen,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        "io" => 3,
        "parse" => 4,
        "config" => 5,
        "manifest" => 6,
        "invariant" => 7,
        "training" => 8,
        "checkpoint" => 9,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let line = serde_json::json!({
                "error": { "kind": e.kind(), "code": code, "message": e.to_string() }
            });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, body).map_err(io_err(path))
}

fn json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn resolve(global: &Global) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn record_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    write(&out.join("config.resolved.toml"), cfg.to_toml())
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let (manifest, base) = Manifest::load(cfg.manifest_path()?)?;
    Dataset::load(manifest, &base)
}

fn load_with_simulated(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    let mut ds = load_dataset(cfg)?;
    let dir = out.join("simulated");
    if dir.is_dir() {
        ds.load_simulated(&dir)?;
    }
    Ok(ds)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.global)?;
    match cli.command {
        Command::IngestPoses { input, fps, image_size } => {
            let out = cfg.out_dir()?;
            let frames = if input.is_dir() {
                read_keypoint_dir(&input)?
            } else {
                parse_keypoint_file(&read(&input)?)?
            };
            let tracking = match image_size.as_deref() {
                Some([w, h]) => TrackingConfig::for_image(*w, *h),
                _ => TrackingConfig::default(),
            };
            let poses = ingest_primary_subject(&frames, fps, DEFAULT_MIN_CONFIDENCE, &tracking)?;
            let norm = normalize_sequence(&poses)?;
            let mut csv = Vec::new();
            norm.write_csv(&mut csv)?;
            write(&out.join("normalized_poses.csv"), csv)?;
            let summary = serde_json::json!({
                "input_frames": frames.len(),
                "samples": poses.len(),
                "rate": poses.rate(),
                "start": poses.start(),
            });
            write(&out.join("poses.json"), json(&summary))?;
            println!("{summary}");
        }
        Command::IngestImu { input, placement } => {
            let out = cfg.out_dir()?;
            let rec = parse_imu_csv(&read(&input)?, placement)?;
            let resampled = resample_linear(&rec, POSE_RATE)?;
            write(&out.join(format!("{placement}.csv")), write_imu_csv(&resampled))?;
            println!(
                "{}",
                serde_json::json!({"placement": placement, "native_rate": rec.native_rate(), "samples": resampled.len()})
            );
        }
        Command::Sync {
            input,
            placement,
            anchors,
            fps,
        } => {
            let rec = parse_imu_csv(&read(&input)?, placement)?;
            let uniform = resample_linear(&rec, rec.native_rate().round())?;
            let offset = detect_sync_offset(&uniform.series(Channel::AccNorm)?, &anchors, fps, &SyncConfig::default())?;
            let line = serde_json::json!({"placement": placement, "offset_seconds": offset});
            if let Some(out) = &cfg.out {
                write(&out.join(format!("sync.{placement}.json")), json(&line))?;
            }
            println!("{line}");
        }
        Command::TrainRegression => {
            let out = cfg.out_dir()?;
            record_config(&cfg, out)?;
            let ds = load_dataset(&cfg)?;
            let specs = cfg.regressor_specs()?;
            let mut train = cfg.regression.train.clone();
            train.seed = derive_seed(cfg.seed, "regression");
            let models = train_regressors(&ds, &specs, &train)?;
            let dir = out.join("regressors");
            let mut summary = Vec::new();
            for m in &models {
                let stem = format!("{}.{}", m.spec.placement, m.spec.channel);
                write(&dir.join(format!("{stem}.ckpt")), regressor::save_checkpoint(m)?)?;
                summary.push(serde_json::json!({
                    "regressor": stem,
                    "best_epoch": m.history.best_epoch,
                    "stopped_epoch": m.history.stopped_epoch,
                    "best_val_loss": m.history.val_loss.get(m.history.best_epoch.saturating_sub(1)),
                }));
            }
            write(&dir.join("summary.json"), json(&summary))?;
            println!("trained {} regressors into {}", models.len(), dir.display());
        }
        Command::Simulate => {
            let out = cfg.out_dir()?;
            record_config(&cfg, out)?;
            let mut ds = load_dataset(&cfg)?;
            let dir = out.join("regressors");
            let mut models = Vec::new();
            for spec in cfg.regressor_specs()? {
                let path = dir.join(format!("{}.{}.ckpt", spec.placement, spec.channel));
                models.push(regressor::load_checkpoint(&read(&path)?)?);
            }
            simulate_dataset(&mut ds, &models)?;
            ds.save_simulated(&out.join("simulated"))?;
            let n = ds.sessions.values().filter(|s| s.has(SignalKind::Simulated)).count();
            println!("simulated {n} sessions");
        }
        Command::TrainHar => {
            let out = cfg.out_dir()?;
            record_config(&cfg, out)?;
            let ds = load_with_simulated(&cfg, out)?;
            let k = cfg.har.k.unwrap_or_else(|| ds.manifest.ranked_users().len());
            let layout = layout_for(&cfg.har.channels);
            let set = build_training_set(&ds, cfg.har.mix, k, &layout, cfg.har.filter)?;
            let mut classifier = cfg.classifier.clone();
            classifier.train.seed = derive_seed(cfg.seed, "har");
            let model = har::train_classifier(&set.windows, &ds.manifest.classes, &layout, &classifier)?;
            let dir = out.join("har");
            write(&dir.join("classifier.ckpt"), har::save_checkpoint(&model)?)?;
            let summary = serde_json::json!({
                "mix": cfg.har.mix.to_string(),
                "k": k,
                "sessions": set.sessions.iter().map(|(s, kind)| format!("{s}:{}", match kind {
                    SignalKind::Real => "real",
                    SignalKind::Simulated => "simulated",
                })).collect::<Vec<_>>(),
                "windows": set.windows.len(),
                "best_epoch": model.history.best_epoch,
            });
            write(&dir.join("training.json"), json(&summary))?;
            println!("trained classifier on {} windows", set.windows.len());
        }
        Command::Evaluate => {
            let out = cfg.out_dir()?;
            record_config(&cfg, out)?;
            let ds = load_dataset(&cfg)?;
            let model = har::load_checkpoint(&read(&out.join("har").join("classifier.ckpt"))?)?;
            let (f1, test_windows) = evaluate_model(&ds, &model, cfg.har.filter)?;
            let k = cfg.har.k.unwrap_or_else(|| ds.manifest.ranked_users().len());
            let channels: Vec<Channel> = model.layout.iter().map(|s| s.channel).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
            let id = format!("{}/k{k}/evaluate", cfg.har.mix);
            let cell = Cell {
                seed: model.seed,
                id,
                mix: cfg.har.mix,
                k,
                channels,
                filter: cfg.har.filter,
                scaling: if model.scalers.is_some() {
                    ScalerPolicy::Standard
                } else {
                    ScalerPolicy::None
                },
                repeat: cfg.seed,
            };
            let report = EvalReport {
                classes: model.classes.clone(),
                f1_averaging: F1_AVERAGING.into(),
                cells: vec![CellResult {
                    cell,
                    train_sessions: Vec::new(),
                    train_windows: 0,
                    real_train_windows: 0,
                    test_windows,
                    macro_f1: Some(f1.macro_f1),
                    per_class_f1: f1.per_class.iter().zip(&f1.present).map(|(&v, &p)| p.then_some(v)).collect(),
                    confusion: f1.confusion.clone(),
                    error: None,
                }],
            };
            report.write(&out.join("evaluation"))?;
            println!("macro F1 {:.4} over {test_windows} test windows", f1.macro_f1);
        }
        Command::Sweep { dry_run } => {
            let plan_path = cfg
                .plan
                .as_deref()
                .ok_or_else(|| Error::Config("`plan` is not set".into()))?;
            let plan = ExperimentPlan::parse(&String::from_utf8_lossy(&read(plan_path)?))?;
            let cells = plan.cells(cfg.seed);
            if dry_run {
                for c in &cells {
                    println!("{}\tseed={}", c.id, c.seed);
                }
                return Ok(());
            }
            let out = cfg.out_dir()?;
            record_config(&cfg, out)?;
            let ds = load_with_simulated(&cfg, out)?;
            let dir = out.join("sweep");
            let store = dir.join("cells");
            let (report, timings) = run_sweep(
                &ds,
                &cells,
                &plan.classifier,
                &SweepOptions {
                    workers: cli.global.workers,
                    store: Some(&store),
                },
            )?;
            report.write(&dir)?;
            write(&dir.join("timings.csv"), timings_csv(&timings))?;
            let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
            println!("{} cells, {failed} failed; report in {}", report.cells.len(), dir.display());
        }
        Command::CompareSignals { session, slot } => {
            let out = cfg.out_dir()?;
            let ds = load_with_simulated(&cfg, out)?;
            let slot: ChannelSlot = pose2imu::experiments::dataset::parse_slot(&slot)?;
            let data: &SessionData = ds.get(&session)?;
            let real = data.channel(slot, SignalKind::Real)?;
            let sim = data.channel(slot, SignalKind::Simulated)?;
            let (summary, paths) = emit_signal_overlay(&real, &sim, &out.join("overlays"), &format!("{session}.{slot}"))?;
            for p in paths {
                println!("{}", p.display());
            }
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        }
        Command::SynthGen => {
            let out = cfg.out_dir()?;
            let mut spec = cfg.oracle.clone();
            spec.seed = cfg.seed;
            let corpus = generate_oracle(&spec)?;
            let manifest = corpus.write(out)?;
            record_config(&cfg, out)?;
            println!("{}", manifest.display());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_error_kind_has_its_own_code() {
        let errors = [
            Error::Io {
                path: "x".into(),
                source: std::io::Error::other("x"),
            },
            Error::CsvParse {
                row: 1,
                message: String::new(),
            },
            Error::Config(String::new()),
            Error::Manifest {
                field: String::new(),
                message: String::new(),
            },
            Error::InvalidInput(String::new()),
            Error::Divergence { epoch: 1, loss: 0.0 },
            Error::Checkpoint(String::new()),
        ];
        let codes: std::collections::BTreeSet<u8> = errors.iter().map(exit_code).collect();
        assert_eq!(codes.len(), errors.len());
        assert!(!codes.contains(&1) && !codes.contains(&2));
    }

    #[test]
    fn placement_parses_as_an_argument() {
        let cli = Cli::try_parse_from(["pose2imu", "ingest-imu", "x.csv", "--placement", "left_calf"]).unwrap();
        assert!(matches!(cli.command, Command::IngestImu { placement: Placement::LeftCalf, .. }));
    }
}
