//! Per-placement, per-channel pose-to-IMU regression models.

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::imu_dsp::{apply_scaler, fit_scaler, invert_scaler, Channel, ChannelSeries, FilterPolicy, ScalerParams, ScalerPolicy};
use crate::nn::{train_loop, History, Targets, TcnNetwork, Topology, TrainConfig, TrainSet, ValueBlock};
use crate::pose_features::{window_features, NormalizedPoseSequence, REGRESSION_WINDOW};
use crate::pose_ingest::POSE_RATE;
use crate::skeleton::{Joint, Placement};

const CHECKPOINT_KIND: &str = "regressor";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorSpec {
    pub placement: Placement,
    pub channel: Channel,
    pub joints: Vec<Joint>,
    pub topology: Topology,
    pub scaler: ScalerPolicy,
    pub filter: FilterPolicy,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    REGRESSION_WINDOW
}

impl RegressorSpec {
    /// Standard topology on the placement's default joints, 8 Hz filter and
    /// standard scaling.
    pub fn standard(placement: Placement, channel: Channel) -> Self {
        let joints = placement.default_joints();
        RegressorSpec {
            topology: Topology::standard(input_channels(joints.len()), 1),
            placement,
            channel,
            joints,
            scaler: ScalerPolicy::Standard,
            filter: FilterPolicy::Lowpass8,
            window: REGRESSION_WINDOW,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        if self.joints.is_empty() {
            return Err(Error::Config("regressor joint subset is empty".into()));
        }
        if self.topology.input_channels != input_channels(self.joints.len()) || self.topology.output_channels != 1 {
            return Err(Error::Config(format!(
                "topology maps {} -> {} channels; {} joints need {} -> 1",
                self.topology.input_channels,
                self.topology.output_channels,
                self.joints.len(),
                input_channels(self.joints.len())
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("regression window must be positive".into()));
        }
        Ok(())
    }
}

/// Feature channels for `n` joints: x/y per joint plus speed and its derivative.
pub fn input_channels(n: usize) -> usize {
    (n + 2) * 2
}

/// One synchronised recording: normalised poses and the sensor channel on
/// the same 50 Hz grid.
#[derive(Debug, Clone, Copy)]
pub struct RegressionPair<'a> {
    pub poses: &'a NormalizedPoseSequence,
    pub target: &'a ChannelSeries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationSplit {
    /// Whole recordings held out, by index.
    Pairs(Vec<usize>),
    /// Trailing fraction of every recording.
    Fraction(f64),
}

impl ValidationSplit {
    /// Last recording when there are several, a 10% tail otherwise.
    pub fn auto(pairs: usize) -> Self {
        if pairs >= 2 {
            ValidationSplit::Pairs(vec![pairs - 1])
        } else {
            ValidationSplit::Fraction(0.1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedRegressor {
    pub spec: RegressorSpec,
    pub network: TcnNetwork<f32>,
    pub scaler: Option<ScalerParams>,
    pub history: History,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    spec: RegressorSpec,
    scaler: Option<ScalerParams>,
    history: History,
    seed: u64,
}

/// Sample ranges `[lo, hi)` of one recording used for training or validation.
struct Span<'a> {
    pair: RegressionPair<'a>,
    lo: usize,
    hi: usize,
}

fn split<'a>(pairs: &[RegressionPair<'a>], val: &ValidationSplit) -> Result<(Vec<Span<'a>>, Vec<Span<'a>>)> {
    let mut train = Vec::new();
    let mut hold = Vec::new();
    match val {
        ValidationSplit::Pairs(idx) => {
            if let Some(&bad) = idx.iter().find(|&&i| i >= pairs.len()) {
                return Err(Error::invalid(format!("validation recording {bad} out of range")));
            }
            for (i, &pair) in pairs.iter().enumerate() {
                let span = Span {
                    pair,
                    lo: 0,
                    hi: pair.poses.len(),
                };
                if idx.contains(&i) {
                    hold.push(span);
                } else {
                    train.push(span);
                }
            }
        }
        ValidationSplit::Fraction(f) => {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(Error::invalid(format!("validation fraction {f} outside (0, 1)")));
            }
            for &pair in pairs {
                let n = pair.poses.len();
                let cut = n - ((n as f64 * f).round() as usize).max(1);
                train.push(Span { pair, lo: 0, hi: cut });
                hold.push(Span { pair, lo: cut, hi: n });
            }
        }
    }
    Ok((train, hold))
}

fn build_set(spec: &RegressorSpec, spans: &[Span], targets: &[Vec<f64>]) -> TrainSet<f32> {
    let w = spec.window;
    let channels = input_channels(spec.joints.len());
    let mut inputs = Vec::new();
    let mut out = Vec::new();
    let mut scratch = Vec::with_capacity(w * channels);
    for (span, target) in spans.iter().zip(targets) {
        if span.hi < span.lo + w {
            continue;
        }
        for start in span.lo..=span.hi - w {
            scratch.clear();
            window_features(span.pair.poses, &spec.joints, start, w, &mut scratch);
            inputs.extend(scratch.iter().map(|&v| v as f32));
            out.extend(target[start..start + w].iter().map(|&v| v as f32));
        }
    }
    TrainSet {
        time: w,
        channels,
        inputs,
        targets: Targets::Values { outputs: 1, data: out },
    }
}

/// Trains one regressor on step-1 windows of all recordings.
///
/// Targets are filtered per the spec and then standard-scaled with
/// statistics from the training portion only.
pub fn train_regressor(
    spec: &RegressorSpec,
    pairs: &[RegressionPair],
    val: &ValidationSplit,
    config: &TrainConfig,
) -> Result<TrainedRegressor> {
    spec.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("no recordings to train on"));
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.poses.len() != p.target.len() {
            return Err(Error::shape(format!(
                "recording {i}: {} pose samples vs {} sensor samples",
                p.poses.len(),
                p.target.len()
            )));
        }
        if (p.target.rate - POSE_RATE).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "recording {i}: sensor rate {} Hz, expected {POSE_RATE}",
                p.target.rate
            )));
        }
        if p.target.placement != spec.placement || p.target.channel != spec.channel {
            return Err(Error::invalid(format!(
                "recording {i} holds {}/{}, model is {}/{}",
                p.target.placement, p.target.channel, spec.placement, spec.channel
            )));
        }
    }
    let (train_spans, val_spans) = split(pairs, val)?;
    let filtered = |spans: &[Span]| -> Result<Vec<Vec<f64>>> {
        spans.iter().map(|s| Ok(spec.filter.apply(s.pair.target)?.values)).collect()
    };
    let mut train_targets = filtered(&train_spans)?;
    let mut val_targets = filtered(&val_spans)?;
    let scaler = match spec.scaler {
        ScalerPolicy::None => None,
        ScalerPolicy::Standard => Some(fit_scaler(
            train_spans.iter().zip(&train_targets).map(|(s, t)| &t[s.lo..s.hi]),
        )?),
    };
    if let Some(params) = &scaler {
        for t in train_targets.iter_mut().chain(val_targets.iter_mut()) {
            *t = apply_scaler(t, params);
        }
    }
    let train_set = build_set(spec, &train_spans, &train_targets);
    let val_set = build_set(spec, &val_spans, &val_targets);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid(format!(
            "need at least one {}-sample window for training and validation",
            spec.window
        )));
    }
    let network = TcnNetwork::<f32>::init(&spec.topology, config.seed)?;
    let loop_config = TrainConfig {
        seed: config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
        ..config.clone()
    };
    let (network, history) = train_loop(network, &train_set, &val_set, &loop_config)?;
    log::info!(
        "{}/{}: best epoch {} of {}, val loss {:.5}",
        spec.placement,
        spec.channel,
        history.best_epoch,
        history.stopped_epoch,
        history.val_loss.get(history.best_epoch.saturating_sub(1)).copied().unwrap_or(f64::NAN)
    );
    Ok(TrainedRegressor {
        spec: spec.clone(),
        network,
        scaler,
        history,
        seed: config.seed,
    })
}

/// Number of step-1 windows of width `w` covering each of `n` samples.
pub fn window_coverage(n: usize, w: usize) -> Vec<u32> {
    let mut count = vec![0u32; n];
    if n >= w {
        for s in 0..=n - w {
            for c in &mut count[s..s + w] {
                *c += 1;
            }
        }
    }
    count
}

/// Network outputs in training units, one value per sample, averaged over
/// every window that covers the sample.
fn stitched(model: &TrainedRegressor, norm: &NormalizedPoseSequence) -> Result<Vec<f64>> {
    let w = model.spec.window;
    let n = norm.len();
    if n < w {
        return Err(Error::invalid(format!("sequence of {n} samples is shorter than the {w}-sample window")));
    }
    let channels = input_channels(model.spec.joints.len());
    let starts: Vec<usize> = (0..=n - w).collect();
    let mut sum = vec![0.0f64; n];
    let mut scratch = Vec::with_capacity(w * channels);
    for chunk in starts.chunks(256) {
        let mut data = Vec::with_capacity(chunk.len() * w * channels);
        for &s in chunk {
            scratch.clear();
            window_features(norm, &model.spec.joints, s, w, &mut scratch);
            data.extend(scratch.iter().map(|&v| v as f32));
        }
        let x = ValueBlock::from_vec(chunk.len(), w, channels, data)?;
        let out = model.network.infer(&x)?;
        for (b, &s) in chunk.iter().enumerate() {
            for t in 0..w {
                sum[s + t] += f64::from(out.data[b * w + t]);
            }
        }
    }
    let count = window_coverage(n, w);
    Ok(sum.iter().zip(&count).map(|(s, &c)| s / f64::from(c)).collect())
}

/// Simulated sensor channel in physical units for a whole pose sequence.
pub fn simulate_channel(model: &TrainedRegressor, norm: &NormalizedPoseSequence) -> Result<ChannelSeries> {
    let mut values = stitched(model, norm)?;
    if let Some(params) = &model.scaler {
        values = invert_scaler(&values, params);
    }
    Ok(ChannelSeries::new(model.spec.placement, model.spec.channel, POSE_RATE, values))
}

pub fn save_checkpoint(model: &TrainedRegressor) -> Result<Vec<u8>> {
    let meta = Meta {
        spec: model.spec.clone(),
        scaler: model.scaler,
        history: model.history.clone(),
        seed: model.seed,
    };
    checkpoint::encode(CHECKPOINT_KIND, &model.network, &meta)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<TrainedRegressor> {
    let (network, meta): (TcnNetwork<f32>, Meta) = checkpoint::decode(CHECKPOINT_KIND, bytes)?;
    meta.spec.validate()?;
    if meta.spec.topology != network.topology {
        return Err(Error::Checkpoint("spec topology differs from stored network".into()));
    }
    if (meta.spec.scaler == ScalerPolicy::Standard) != meta.scaler.is_some() {
        return Err(Error::Checkpoint("scaler policy and stored statistics disagree".into()));
    }
    Ok(TrainedRegressor {
        spec: meta.spec,
        network,
        scaler: meta.scaler,
        history: meta.history,
        seed: meta.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_features::normalize_sequence;
    use crate::pose_ingest::{Point, PoseSequence};
    use crate::skeleton::NUM_JOINTS;

    fn tiny_spec() -> RegressorSpec {
        let mut spec = RegressorSpec::standard(Placement::LeftWrist, Channel::AccNorm);
        spec.topology.widths = vec![4, 4];
        spec.topology.dilations = vec![1, 2];
        spec
    }

    fn still_sequence(n: usize) -> NormalizedPoseSequence {
        let frame: [Point; NUM_JOINTS] =
            std::array::from_fn(|j| Point::new(500.0 + 7.0 * j as f64, 400.0 - 11.0 * (j % 5) as f64));
        normalize_sequence(&PoseSequence::new(50.0, vec![frame; n]).unwrap()).unwrap()
    }

    fn model_with_constant_output(c: f32) -> TrainedRegressor {
        let spec = tiny_spec();
        let mut network = TcnNetwork::<f32>::init(&spec.topology, 0).unwrap();
        for v in network.head.kernel.iter_mut() {
            *v = 0.0;
        }
        network.head.bias[0] = c;
        TrainedRegressor {
            spec,
            network,
            scaler: None,
            history: History {
                train_loss: vec![],
                val_loss: vec![],
                best_epoch: 0,
                stopped_epoch: 0,
            },
            seed: 0,
        }
    }

    #[test]
    fn coverage_counts_follow_window_overlap() {
        for n in 16usize..80 {
            let c = window_coverage(n, 16);
            for (i, &k) in c.iter().enumerate() {
                // short sequences are also capped by the number of windows
                let expect = (i + 1).min(16).min(n - i).min(n - 15);
                assert_eq!(k as usize, expect, "n={n} i={i}");
            }
        }
        assert_eq!(window_coverage(17, 16)[1..16], [2u32; 15]);
        assert_eq!(window_coverage(16, 16), vec![1u32; 16]);
    }

    #[test]
    fn constant_model_stitches_exactly() {
        let model = model_with_constant_output(2.5);
        let out = simulate_channel(&model, &still_sequence(37)).unwrap();
        assert!(out.values.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn short_sequence_is_rejected() {
        let model = model_with_constant_output(1.0);
        assert!(simulate_channel(&model, &still_sequence(15)).is_err());
    }

    #[test]
    fn constant_target_is_learned() {
        let norm = still_sequence(80);
        let target = ChannelSeries::new(Placement::LeftWrist, Channel::AccNorm, 50.0, vec![9.81; 80]);
        let mut spec = tiny_spec();
        spec.scaler = ScalerPolicy::None;
        spec.filter = FilterPolicy::None;
        let pairs = [RegressionPair {
            poses: &norm,
            target: &target,
        }];
        let config = TrainConfig {
            max_epochs: 400,
            patience: 30,
            batch_size: 16,
            seed: 2,
            adam: crate::nn::AdamConfig {
                lr: 0.02,
                ..Default::default()
            },
        };
        let model = train_regressor(&spec, &pairs, &ValidationSplit::Fraction(0.25), &config).unwrap();
        let out = simulate_channel(&model, &norm).unwrap();
        assert!(out.values.iter().all(|v| (v - 9.81).abs() < 1e-2), "{:?}", &out.values[..4]);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let norm = still_sequence(40);
        let target = ChannelSeries::new(Placement::LeftWrist, Channel::AccNorm, 50.0, vec![1.0; 39]);
        let pairs = [RegressionPair {
            poses: &norm,
            target: &target,
        }];
        let err = train_regressor(&tiny_spec(), &pairs, &ValidationSplit::Fraction(0.2), &TrainConfig::default());
        assert!(matches!(err, Err(Error::Shape(_))));
        assert!(train_regressor(&tiny_spec(), &[], &ValidationSplit::Fraction(0.2), &TrainConfig::default()).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_policy_check() {
        let mut model = model_with_constant_output(0.5);
        model.spec.scaler = ScalerPolicy::Standard;
        model.scaler = Some(ScalerParams { mean: 9.81, std: 1.5 });
        let bytes = save_checkpoint(&model).unwrap();
        let back = load_checkpoint(&bytes).unwrap();
        assert_eq!(back, model);
        let norm = still_sequence(20);
        assert_eq!(
            simulate_channel(&back, &norm).unwrap(),
            simulate_channel(&model, &norm).unwrap()
        );

        model.scaler = None;
        let inconsistent = save_checkpoint(&model).unwrap();
        assert!(load_checkpoint(&inconsistent).is_err());
    }
}
