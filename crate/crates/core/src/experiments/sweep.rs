//! Training-source mixes, the evaluation plan and the sweep runner.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::har::{
    layout_for, make_classification_windows, predict_windows, train_classifier, ChannelSlot, ClassifierConfig,
    ClassifierModel, LabeledWindow,
};
use crate::imu_dsp::{Channel, FilterPolicy, ScalerPolicy};

use super::dataset::{Dataset, SessionData, SignalKind};
use super::derive_seed;
use super::manifest::{Role, Source};
use super::metrics::{mean_f1, F1Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mix {
    /// Measured signals of the top-k users.
    Real,
    /// Simulated signals of the top-k users.
    Sim,
    /// Simulated signals of the top-k users plus measured signals of the top `real_users`.
    SimPlusReal { real_users: usize },
    /// Measured signals of the top-k users plus all external simulated data.
    RealPlusExternal,
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mix::Real => f.write_str("real"),
            Mix::Sim => f.write_str("sim"),
            Mix::SimPlusReal { real_users } => write!(f, "sim+real{real_users}"),
            Mix::RealPlusExternal => f.write_str("real+external"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub windows: Vec<LabeledWindow>,
    pub sessions: Vec<(String, SignalKind)>,
}

fn session_windows(
    data: &SessionData,
    layout: &[ChannelSlot],
    kind: SignalKind,
    filter: FilterPolicy,
) -> Result<Vec<LabeledWindow>> {
    let channels = layout
        .iter()
        .map(|&slot| filter.apply(&data.channel(slot, kind)?))
        .collect::<Result<Vec<_>>>()?;
    let mut windows = make_classification_windows(&channels, &data.labels)?;
    for w in &mut windows {
        w.real = kind == SignalKind::Real;
        w.session = data.id.clone();
    }
    Ok(windows)
}

/// Collects training windows for one mix. Test sessions never contribute.
pub fn build_training_set(
    ds: &Dataset,
    mix: Mix,
    k: usize,
    layout: &[ChannelSlot],
    filter: FilterPolicy,
) -> Result<TrainingSet> {
    let ranked = ds.manifest.ranked_users();
    let external: Vec<&str> = ds
        .manifest
        .sessions
        .iter()
        .filter(|s| s.source == Source::SimulatedExternal && s.role == Role::Train)
        .map(|s| s.id.as_str())
        .collect();
    let uses_external = mix == Mix::RealPlusExternal;
    if k == 0 && !(uses_external && !external.is_empty()) {
        return Err(Error::invalid("k = 0 selects no training data"));
    }
    let real_users = match mix {
        Mix::SimPlusReal { real_users } => real_users,
        _ => 0,
    };
    if k > ranked.len() || real_users > ranked.len() {
        return Err(Error::invalid(format!(
            "asked for {} users, only {} are ranked",
            k.max(real_users),
            ranked.len()
        )));
    }

    let local = |users: &[&str], sources: &[Source]| -> Vec<&str> {
        ds.manifest
            .sessions
            .iter()
            .filter(|s| s.role == Role::Train && sources.contains(&s.source))
            .filter(|s| s.user.as_deref().is_some_and(|u| users.contains(&u)))
            .map(|s| s.id.as_str())
            .collect()
    };
    let top = &ranked[..k];
    let mut picks: Vec<(&str, SignalKind)> = Vec::new();
    match mix {
        Mix::Real | Mix::RealPlusExternal => {
            picks.extend(local(top, &[Source::Real]).into_iter().map(|s| (s, SignalKind::Real)));
        }
        Mix::Sim | Mix::SimPlusReal { .. } => {
            picks.extend(
                local(top, &[Source::Real, Source::SimulatedLocal])
                    .into_iter()
                    .map(|s| (s, SignalKind::Simulated)),
            );
        }
    }
    if real_users > 0 {
        picks.extend(
            local(&ranked[..real_users], &[Source::Real])
                .into_iter()
                .map(|s| (s, SignalKind::Real)),
        );
    }
    if uses_external {
        picks.extend(external.iter().map(|&s| (s, SignalKind::Simulated)));
    }

    let mut windows = Vec::new();
    for &(id, kind) in &picks {
        windows.extend(session_windows(ds.get(id)?, layout, kind, filter)?);
    }
    let tests: BTreeSet<&str> = ds.manifest.test_sessions().map(|s| s.id.as_str()).collect();
    assert!(
        windows.iter().all(|w| !tests.contains(w.session.as_str())),
        "test session leaked into training"
    );
    Ok(TrainingSet {
        windows,
        sessions: picks.into_iter().map(|(s, k)| (s.to_string(), k)).collect(),
    })
}

/// Windows of every real test session.
pub fn test_windows(ds: &Dataset, layout: &[ChannelSlot], filter: FilterPolicy) -> Result<Vec<LabeledWindow>> {
    let tests: Vec<_> = ds.manifest.test_sessions().collect();
    if tests.is_empty() {
        return Err(Error::Manifest {
            field: "sessions.role".into(),
            message: "no session has role = \"test\"".into(),
        });
    }
    let mut windows = Vec::new();
    for s in tests {
        windows.extend(session_windows(ds.get(&s.id)?, layout, SignalKind::Real, filter)?);
    }
    Ok(windows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub mix: Mix,
    pub k: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_channel_sets")]
    pub channel_sets: Vec<Vec<Channel>>,
    #[serde(default = "default_filters")]
    pub filters: Vec<FilterPolicy>,
    #[serde(default = "default_scaling")]
    pub scaling: Vec<ScalerPolicy>,
    pub mixes: Vec<MixSpec>,
    #[serde(default)]
    pub classifier: ClassifierConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_channel_sets() -> Vec<Vec<Channel>> {
    vec![vec![Channel::AccNorm]]
}

fn default_filters() -> Vec<FilterPolicy> {
    vec![FilterPolicy::None]
}

fn default_scaling() -> Vec<ScalerPolicy> {
    vec![ScalerPolicy::Standard]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: String,
    pub mix: Mix,
    pub k: usize,
    pub channels: Vec<Channel>,
    pub filter: FilterPolicy,
    pub scaling: ScalerPolicy,
    pub repeat: u64,
    /// Training seed, derived from the global seed and the cell id.
    pub seed: u64,
}

impl Cell {
    /// Cell id usable as a file name.
    pub fn file_stem(&self) -> String {
        self.id.replace('/', "_")
    }
}

impl ExperimentPlan {
    pub fn parse(text: &str) -> Result<ExperimentPlan> {
        let plan: ExperimentPlan = toml::from_str(text).map_err(|e| Error::Config(format!("plan: {e}")))?;
        if plan.seeds.is_empty() || plan.channel_sets.iter().any(Vec::is_empty) || plan.mixes.is_empty() {
            return Err(Error::Config("plan needs seeds, mixes and non-empty channel sets".into()));
        }
        Ok(plan)
    }

    /// Every cell of the grid in a fixed order.
    pub fn cells(&self, global_seed: u64) -> Vec<Cell> {
        let mut out = Vec::new();
        for spec in &self.mixes {
            for &k in &spec.k {
                for channels in &self.channel_sets {
                    for &filter in &self.filters {
                        for &scaling in &self.scaling {
                            for &repeat in &self.seeds {
                                let names: Vec<&str> = channels.iter().map(|c| c.name()).collect();
                                let scale = match scaling {
                                    ScalerPolicy::None => "unscaled",
                                    ScalerPolicy::Standard => "scaled",
                                };
                                let id = format!(
                                    "{}/k{k}/{}/{}/{scale}/s{repeat}",
                                    spec.mix,
                                    names.join("+"),
                                    filter.name()
                                );
                                out.push(Cell {
                                    seed: derive_seed(global_seed, &id),
                                    id,
                                    mix: spec.mix,
                                    k,
                                    channels: channels.clone(),
                                    filter,
                                    scaling,
                                    repeat,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellResult {
    pub cell: Cell,
    pub train_sessions: Vec<String>,
    pub train_windows: usize,
    pub real_train_windows: usize,
    pub test_windows: usize,
    pub macro_f1: Option<f64>,
    /// `None` for classes absent from the test set.
    pub per_class_f1: Vec<Option<f64>>,
    pub confusion: Vec<Vec<usize>>,
    pub error: Option<String>,
}

/// Trains and evaluates one cell.
pub fn run_cell(ds: &Dataset, cell: &Cell, classifier: &ClassifierConfig) -> Result<(CellResult, ClassifierModel)> {
    let layout = layout_for(&cell.channels);
    let train = build_training_set(ds, cell.mix, cell.k, &layout, cell.filter)?;
    let test = test_windows(ds, &layout, cell.filter)?;
    let mut config = classifier.clone();
    config.input_scaler = cell.scaling;
    config.train.seed = cell.seed;
    let model = train_classifier(&train.windows, &ds.manifest.classes, &layout, &config)?;
    let f1 = score(&model, &test, ds.manifest.classes.len())?;
    let result = CellResult {
        cell: cell.clone(),
        train_sessions: train.sessions.iter().map(|(s, _)| s.clone()).collect(),
        train_windows: train.windows.len(),
        real_train_windows: train.windows.iter().filter(|w| w.real).count(),
        test_windows: test.len(),
        macro_f1: Some(f1.macro_f1),
        per_class_f1: f1
            .per_class
            .iter()
            .zip(&f1.present)
            .map(|(&v, &p)| p.then_some(v))
            .collect(),
        confusion: f1.confusion,
        error: None,
    };
    Ok((result, model))
}

fn score(model: &ClassifierModel, test: &[LabeledWindow], classes: usize) -> Result<F1Report> {
    let pred = predict_windows(model, test)?;
    let truth: Vec<usize> = test.iter().map(|w| w.majority).collect();
    mean_f1(&pred, &truth, classes)
}

/// Scores a trained classifier on the real test sessions.
pub fn evaluate_model(ds: &Dataset, model: &ClassifierModel, filter: FilterPolicy) -> Result<(F1Report, usize)> {
    if model.classes != ds.manifest.classes {
        return Err(Error::invalid("classifier and manifest disagree on the class list"));
    }
    let test = test_windows(ds, &model.layout, filter)?;
    Ok((score(model, &test, model.classes.len())?, test.len()))
}

fn failed(cell: &Cell, classes: usize, err: &Error) -> CellResult {
    CellResult {
        cell: cell.clone(),
        train_sessions: Vec::new(),
        train_windows: 0,
        real_train_windows: 0,
        test_windows: 0,
        macro_f1: None,
        per_class_f1: vec![None; classes],
        confusion: Vec::new(),
        error: Some(format!("{}: {err}", err.kind())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub f1_averaging: String,
    pub cells: Vec<CellResult>,
}

pub const F1_AVERAGING: &str = "macro: unweighted mean of per-class F1 over classes present in the test labels";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions<'a> {
    pub workers: usize,
    /// Directory of finished cell results; existing ones are reused.
    pub store: Option<&'a Path>,
}

/// Wall-clock seconds per cell, kept apart from the deterministic report.
pub type Timings = Vec<(String, f64)>;

/// Runs every cell. A failing cell is recorded and the sweep moves on.
pub fn run_sweep(
    ds: &Dataset,
    cells: &[Cell],
    classifier: &ClassifierConfig,
    options: &SweepOptions,
) -> Result<(EvalReport, Timings)> {
    if ds.manifest.test_sessions().next().is_none() {
        return Err(Error::Manifest {
            field: "sessions.role".into(),
            message: "no session has role = \"test\"".into(),
        });
    }
    if let Some(dir) = options.store {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let classes = ds.manifest.classes.len();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(CellResult, f64)>>> = Mutex::new(vec![None; cells.len()]);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(cell) = cells.get(i) else {
            break;
        };
        let stored = options.store.map(|d| d.join(format!("{}.json", cell.file_stem())));
        let cached = stored
            .as_ref()
            .and_then(|p| std::fs::read(p).ok())
            .and_then(|b| serde_json::from_slice::<CellResult>(&b).ok())
            .filter(|r| r.cell == *cell);
        let started = Instant::now();
        let result = match cached {
            Some(r) => {
                log::info!("cell {} reused from store", cell.id);
                r
            }
            None => {
                log::info!("cell {} running", cell.id);
                let r = match run_cell(ds, cell, classifier) {
                    Ok((r, _)) => r,
                    Err(e) => {
                        log::warn!("cell {} failed: {e}", cell.id);
                        failed(cell, classes, &e)
                    }
                };
                if let Some(path) = &stored {
                    let tmp = path.with_extension("json.tmp");
                    let bytes = serde_json::to_vec_pretty(&r).expect("cell result serializes");
                    if std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, path)).is_err() {
                        log::warn!("could not store cell {}", cell.id);
                    }
                }
                r
            }
        };
        let seconds = started.elapsed().as_secs_f64();
        slots.lock().expect("no worker panicked")[i] = Some((result, seconds));
    };
    let workers = options.workers.max(1).min(cells.len().max(1));
    std::thread::scope(|scope| {
        for _ in 1..workers {
            scope.spawn(work);
        }
        work();
    });
    let mut report = EvalReport {
        classes: ds.manifest.classes.clone(),
        f1_averaging: F1_AVERAGING.into(),
        cells: Vec::with_capacity(cells.len()),
    };
    let mut timings = Vec::with_capacity(cells.len());
    for slot in slots.into_inner().expect("no worker panicked") {
        let (r, secs) = slot.expect("every cell ran");
        timings.push((r.cell.id.clone(), secs));
        report.cells.push(r);
    }
    Ok((report, timings))
}

fn fmt_f1(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl EvalReport {
    /// One row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "cell,mix,k,channels,filter,scaling,repeat,seed,train_windows,real_train_windows,test_windows,macro_f1",
        );
        for c in &self.classes {
            out.push_str(&format!(",f1_{c}"));
        }
        out.push_str(",error\n");
        for r in &self.cells {
            let c = &r.cell;
            let channels: Vec<&str> = c.channels.iter().map(|c| c.name()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                c.id,
                c.mix,
                c.k,
                channels.join("+"),
                c.filter.name(),
                serde_json::to_value(c.scaling).expect("policy serializes").as_str().unwrap_or_default(),
                c.repeat,
                c.seed,
                r.train_windows,
                r.real_train_windows,
                r.test_windows,
                fmt_f1(r.macro_f1)
            ));
            for &v in &r.per_class_f1 {
                out.push_str(&format!(",{}", fmt_f1(v)));
            }
            let err = r.error.as_deref().unwrap_or_default().replace([',', '\n'], ";");
            out.push_str(&format!(",{err}\n"));
        }
        out
    }

    pub fn confusion_csv(&self, cell: &CellResult) -> String {
        let mut out = String::from("truth");
        for c in &self.classes {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&cell.confusion) {
            out.push_str(c);
            for n in row {
                out.push_str(&format!(",{n}"));
            }
            out.push('\n');
        }
        out
    }

    /// Writes `report.csv`, `report.json` and `confusion/<cell>.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let conf_dir = dir.join("confusion");
        std::fs::create_dir_all(&conf_dir).map_err(|e| Error::io(&conf_dir, e))?;
        let put = |path: std::path::PathBuf, body: &[u8]| std::fs::write(&path, body).map_err(|e| Error::io(&path, e));
        put(dir.join("report.csv"), self.to_csv().as_bytes())?;
        put(
            dir.join("report.json"),
            &serde_json::to_vec_pretty(self).expect("report serializes"),
        )?;
        for cell in self.cells.iter().filter(|c| !c.confusion.is_empty()) {
            put(
                conf_dir.join(format!("{}.csv", cell.cell.file_stem())),
                self.confusion_csv(cell).as_bytes(),
            )?;
        }
        Ok(())
    }
}

pub fn timings_csv(timings: &Timings) -> String {
    let mut out = String::from("cell,seconds\n");
    for (id, s) in timings {
        out.push_str(&format!("{id},{s:.3}\n"));
    }
    out
}

/// Ranks train users by how well a classifier trained on their measured
/// data alone does on the test sessions, best first.
pub fn rank_users(
    ds: &Dataset,
    channels: &[Channel],
    filter: FilterPolicy,
    classifier: &ClassifierConfig,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    let layout = layout_for(channels);
    let test = test_windows(ds, &layout, filter)?;
    let truth: Vec<usize> = test.iter().map(|w| w.majority).collect();
    let users: BTreeSet<&str> = ds
        .manifest
        .sessions
        .iter()
        .filter(|s| s.role == Role::Train && s.source == Source::Real)
        .filter_map(|s| s.user.as_deref())
        .collect();
    let mut scores = Vec::new();
    for user in users {
        let mut windows = Vec::new();
        for s in ds
            .manifest
            .sessions
            .iter()
            .filter(|s| s.role == Role::Train && s.source == Source::Real && s.user.as_deref() == Some(user))
        {
            windows.extend(session_windows(ds.get(&s.id)?, &layout, SignalKind::Real, filter)?);
        }
        let mut config = classifier.clone();
        config.train.seed = derive_seed(seed, user);
        let score = match train_classifier(&windows, &ds.manifest.classes, &layout, &config) {
            Ok(model) => mean_f1(&predict_windows(&model, &test)?, &truth, ds.manifest.classes.len())?.macro_f1,
            Err(e) => {
                log::warn!("user {user} cannot be scored alone: {e}");
                0.0
            }
        };
        scores.push((user.to_string(), score));
    }
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_expands_to_stable_cells() {
        let plan = ExperimentPlan::parse(
            r#"
seeds = [1, 2]
filters = ["none", "8hz"]
[[mixes]]
mix = { kind = "sim_plus_real", real_users = 1 }
k = [1, 2]
[[mixes]]
mix = { kind = "real" }
k = [3]
"#,
        )
        .unwrap();
        let cells = plan.cells(7);
        assert_eq!(cells.len(), 2 * 2 * 2 + 2 * 2);
        assert_eq!(cells[0].id, "sim+real1/k1/acc_norm/none/scaled/s1");
        let ids: BTreeSet<_> = cells.iter().map(|c| c.id.clone()).collect();
        assert_eq!(ids.len(), cells.len());
        assert_eq!(plan.cells(7), cells);
        assert_ne!(plan.cells(8)[0].seed, cells[0].seed);
        assert!(ExperimentPlan::parse("mixes = []\nbogus = 1").is_err());
    }
}
