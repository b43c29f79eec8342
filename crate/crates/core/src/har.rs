//! Activity classification on 128-sample windows of stacked sensor
//! channels, with per-timestep outputs reduced by majority vote.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::imu_dsp::{fit_scaler, Channel, ChannelSeries, ScalerParams, ScalerPolicy};
use crate::nn::{train_loop, History, Targets, TcnNetwork, Topology, TrainConfig, TrainSet, ValueBlock};
use crate::skeleton::Placement;

pub const CLASSIFICATION_WINDOW: usize = 128;
pub const CLASSIFICATION_HOP: usize = 64;

const CHECKPOINT_KIND: &str = "classifier";

/// One input channel of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSlot {
    pub placement: Placement,
    pub channel: Channel,
}

impl ChannelSlot {
    pub fn new(placement: Placement, channel: Channel) -> Self {
        ChannelSlot { placement, channel }
    }
}

impl std::fmt::Display for ChannelSlot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.placement, self.channel)
    }
}

/// `channel` at every placement, in placement order.
pub fn layout_for(channels: &[Channel]) -> Vec<ChannelSlot> {
    Placement::ALL
        .iter()
        .flat_map(|&p| channels.iter().map(move |&c| ChannelSlot::new(p, c)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    /// Row-major `(128, channels)`.
    pub data: Vec<f32>,
    pub channels: usize,
    pub labels: Vec<usize>,
    pub majority: usize,
    /// Measured (as opposed to simulated) sensor data.
    pub real: bool,
    pub session: String,
    pub offset: usize,
}

/// Modal label; ties go to the lowest class index.
pub fn majority_label(labels: &[usize]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    // BTreeMap iterates in ascending class order; keep the first maximum
    let mut best: Option<(usize, usize)> = None;
    for (class, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((class, n));
        }
    }
    best.map(|(c, _)| c)
}

/// Window start offsets over `n` samples.
pub fn window_offsets(n: usize) -> Vec<usize> {
    if n < CLASSIFICATION_WINDOW {
        return Vec::new();
    }
    (0..=(n - CLASSIFICATION_WINDOW) / CLASSIFICATION_HOP)
        .map(|k| k * CLASSIFICATION_HOP)
        .collect()
}

fn check_aligned(channels: &[ChannelSeries]) -> Result<usize> {
    let n = channels
        .first()
        .ok_or_else(|| Error::invalid("no channels to window"))?
        .len();
    if let Some(bad) = channels.iter().find(|c| c.len() != n) {
        return Err(Error::shape(format!(
            "channel {}.{} has {} samples, expected {n}",
            bad.placement,
            bad.channel,
            bad.len()
        )));
    }
    Ok(n)
}

fn stack(channels: &[ChannelSeries], offset: usize) -> Vec<f32> {
    let mut data = Vec::with_capacity(CLASSIFICATION_WINDOW * channels.len());
    for t in offset..offset + CLASSIFICATION_WINDOW {
        data.extend(channels.iter().map(|c| c.values[t] as f32));
    }
    data
}

/// Half-overlapping 128-sample windows with their ground-truth labels.
///
/// The returned windows are marked real with an empty session id.
pub fn make_classification_windows(channels: &[ChannelSeries], labels: &[usize]) -> Result<Vec<LabeledWindow>> {
    let n = check_aligned(channels)?;
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} samples", labels.len())));
    }
    if n < CLASSIFICATION_WINDOW {
        log::warn!("recording of {n} samples is shorter than one classification window");
    }
    Ok(window_offsets(n)
        .into_iter()
        .map(|offset| {
            let labels = labels[offset..offset + CLASSIFICATION_WINDOW].to_vec();
            LabeledWindow {
                data: stack(channels, offset),
                channels: channels.len(),
                majority: majority_label(&labels).expect("window is non-empty"),
                labels,
                real: true,
                session: String::new(),
                offset,
            }
        })
        .collect())
}

/// Layer shape of the classifier; input and output widths follow from the
/// channel layout and class list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierShape {
    pub kernel_width: usize,
    pub widths: Vec<usize>,
    pub dilations: Vec<usize>,
    pub dropout: f64,
}

impl Default for ClassifierShape {
    fn default() -> Self {
        let t = Topology::standard(1, 1);
        ClassifierShape {
            kernel_width: t.kernel_width,
            widths: t.widths,
            dilations: t.dilations,
            dropout: t.dropout,
        }
    }
}

impl ClassifierShape {
    pub fn topology(&self, inputs: usize, classes: usize) -> Topology {
        Topology {
            input_channels: inputs,
            output_channels: classes,
            kernel_width: self.kernel_width,
            widths: self.widths.clone(),
            dilations: self.dilations.clone(),
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    #[serde(default)]
    pub shape: ClassifierShape,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub input_scaler: ScalerPolicy,
}

fn default_val_fraction() -> f64 {
    0.1
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            shape: ClassifierShape::default(),
            train: TrainConfig::default(),
            val_fraction: default_val_fraction(),
            input_scaler: ScalerPolicy::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub classes: Vec<String>,
    pub layout: Vec<ChannelSlot>,
    pub network: TcnNetwork<f32>,
    /// Per-channel input scaling fitted on the training windows.
    pub scalers: Option<Vec<ScalerParams>>,
    pub history: History,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    classes: Vec<String>,
    layout: Vec<ChannelSlot>,
    scalers: Option<Vec<ScalerParams>>,
    history: History,
    seed: u64,
}

/// Validation picks of a stratified split: per class `max(1, round(f·n))`
/// windows when the class has at least two, none otherwise.
pub fn stratified_split(majorities: &[usize], fraction: f64, seed: u64) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in majorities.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    for (_, mut members) in by_class {
        let n = members.len();
        if n < 2 {
            continue;
        }
        let k = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..k]);
    }
    picked.sort_unstable();
    picked
}

fn scale_window(data: &[f32], scalers: Option<&[ScalerParams]>) -> Vec<f32> {
    match scalers {
        None => data.to_vec(),
        Some(s) => data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let p = &s[i % s.len()];
                ((f64::from(v) - p.mean) / p.std) as f32
            })
            .collect(),
    }
}

fn to_set(windows: &[&LabeledWindow], scalers: Option<&[ScalerParams]>, channels: usize) -> TrainSet<f32> {
    let mut inputs = Vec::with_capacity(windows.len() * CLASSIFICATION_WINDOW * channels);
    let mut labels = Vec::with_capacity(windows.len() * CLASSIFICATION_WINDOW);
    for w in windows {
        inputs.extend(scale_window(&w.data, scalers));
        labels.extend_from_slice(&w.labels);
    }
    TrainSet {
        time: CLASSIFICATION_WINDOW,
        channels,
        inputs,
        targets: Targets::Classes(labels),
    }
}

/// Trains on `windows`, holding out a stratified validation share of the
/// real windows (or of the simulated ones when no real data is present).
pub fn train_classifier(
    windows: &[LabeledWindow],
    classes: &[String],
    layout: &[ChannelSlot],
    config: &ClassifierConfig,
) -> Result<ClassifierModel> {
    if windows.is_empty() {
        return Err(Error::invalid("no training windows"));
    }
    let channels = layout.len();
    if let Some(w) = windows
        .iter()
        .find(|w| w.channels != channels || w.data.len() != CLASSIFICATION_WINDOW * channels)
    {
        return Err(Error::shape(format!(
            "window from `{}` has {} channels, layout has {channels}",
            w.session, w.channels
        )));
    }
    if let Some(l) = windows.iter().flat_map(|w| &w.labels).find(|&&l| l >= classes.len()) {
        return Err(Error::invalid(format!("label {l} outside {} classes", classes.len())));
    }
    let missing: Vec<String> = (0..classes.len())
        .filter(|c| !windows.iter().any(|w| w.majority == *c))
        .map(|c| classes[c].clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingClasses(missing));
    }

    let any_real = windows.iter().any(|w| w.real);
    let pool: Vec<usize> = (0..windows.len()).filter(|&i| windows[i].real == any_real).collect();
    let majorities: Vec<usize> = pool.iter().map(|&i| windows[i].majority).collect();
    let mut val_idx: Vec<usize> = stratified_split(&majorities, config.val_fraction, config.train.seed)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    if val_idx.is_empty() {
        if pool.len() < 2 {
            return Err(Error::invalid("not enough windows to hold out a validation set"));
        }
        val_idx.push(pool[pool.len() - 1]);
    }
    let mut is_val = vec![false; windows.len()];
    for &i in &val_idx {
        is_val[i] = true;
    }
    let train: Vec<&LabeledWindow> = windows.iter().zip(&is_val).filter(|(_, v)| !**v).map(|(w, _)| w).collect();
    let val: Vec<&LabeledWindow> = val_idx.iter().map(|&i| &windows[i]).collect();

    let scalers = match config.input_scaler {
        ScalerPolicy::None => None,
        ScalerPolicy::Standard => {
            let per_channel: Vec<Vec<f64>> = (0..channels)
                .map(|c| {
                    train
                        .iter()
                        .flat_map(|w| w.data.iter().skip(c).step_by(channels).map(|&v| f64::from(v)))
                        .collect()
                })
                .collect();
            Some(
                per_channel
                    .iter()
                    .map(|v| fit_scaler([v.as_slice()]))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
    };
    let train_set = to_set(&train, scalers.as_deref(), channels);
    let val_set = to_set(&val, scalers.as_deref(), channels);
    let topology = config.shape.topology(channels, classes.len());
    let network = TcnNetwork::<f32>::init(&topology, config.train.seed)?;
    let loop_config = TrainConfig {
        seed: config.train.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
        ..config.train.clone()
    };
    let (network, history) = train_loop(network, &train_set, &val_set, &loop_config)?;
    log::info!(
        "classifier: {} train / {} val windows, best epoch {} of {}",
        train.len(),
        val.len(),
        history.best_epoch,
        history.stopped_epoch
    );
    Ok(ClassifierModel {
        classes: classes.to_vec(),
        layout: layout.to_vec(),
        network,
        scalers,
        history,
        seed: config.train.seed,
    })
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-timestep labels for a batch of raw (unscaled) windows.
pub fn predict_timesteps(model: &ClassifierModel, windows: &[&[f32]]) -> Result<Vec<Vec<usize>>> {
    let channels = model.layout.len();
    let classes = model.classes.len();
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(64) {
        let mut data = Vec::with_capacity(chunk.len() * CLASSIFICATION_WINDOW * channels);
        for w in chunk {
            if w.len() != CLASSIFICATION_WINDOW * channels {
                return Err(Error::shape(format!(
                    "window has {} values, model expects {}",
                    w.len(),
                    CLASSIFICATION_WINDOW * channels
                )));
            }
            data.extend(scale_window(w, model.scalers.as_deref()));
        }
        let logits = model
            .network
            .infer(&ValueBlock::from_vec(chunk.len(), CLASSIFICATION_WINDOW, channels, data)?)?;
        for b in 0..chunk.len() {
            out.push(
                (0..CLASSIFICATION_WINDOW)
                    .map(|t| argmax(logits.row(b, t)))
                    .collect(),
            );
        }
        debug_assert_eq!(logits.channels, classes);
    }
    Ok(out)
}

/// Majority-voted label of each window.
pub fn predict_windows(model: &ClassifierModel, windows: &[LabeledWindow]) -> Result<Vec<usize>> {
    let views: Vec<&[f32]> = windows.iter().map(|w| w.data.as_slice()).collect();
    Ok(predict_timesteps(model, &views)?
        .iter()
        .map(|l| majority_label(l).expect("window is non-empty"))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub offsets: Vec<usize>,
    pub window_labels: Vec<usize>,
    pub timestep_labels: Vec<Vec<usize>>,
}

/// Classifies every window of an aligned channel set laid out as the model's.
pub fn predict(model: &ClassifierModel, channels: &[ChannelSeries]) -> Result<Prediction> {
    let got: Vec<ChannelSlot> = channels.iter().map(|c| ChannelSlot::new(c.placement, c.channel)).collect();
    if got != model.layout {
        return Err(Error::shape(format!(
            "channel layout [{}] differs from the model's [{}]",
            got.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "),
            model.layout.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
        )));
    }
    let n = check_aligned(channels)?;
    if n < CLASSIFICATION_WINDOW {
        return Err(Error::invalid(format!(
            "{n} samples is shorter than one {CLASSIFICATION_WINDOW}-sample window"
        )));
    }
    let offsets = window_offsets(n);
    let stacked: Vec<Vec<f32>> = offsets.iter().map(|&o| stack(channels, o)).collect();
    let views: Vec<&[f32]> = stacked.iter().map(Vec::as_slice).collect();
    let timestep_labels = predict_timesteps(model, &views)?;
    let window_labels = timestep_labels
        .iter()
        .map(|l| majority_label(l).expect("window is non-empty"))
        .collect();
    Ok(Prediction {
        offsets,
        window_labels,
        timestep_labels,
    })
}

pub fn save_checkpoint(model: &ClassifierModel) -> Result<Vec<u8>> {
    let meta = Meta {
        classes: model.classes.clone(),
        layout: model.layout.clone(),
        scalers: model.scalers.clone(),
        history: model.history.clone(),
        seed: model.seed,
    };
    checkpoint::encode(CHECKPOINT_KIND, &model.network, &meta)
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<ClassifierModel> {
    let (network, meta): (TcnNetwork<f32>, Meta) = checkpoint::decode(CHECKPOINT_KIND, bytes)?;
    let t = &network.topology;
    if t.input_channels != meta.layout.len() || t.output_channels != meta.classes.len() {
        return Err(Error::Checkpoint("topology does not match channel layout and classes".into()));
    }
    if meta.scalers.as_ref().is_some_and(|s| s.len() != meta.layout.len()) {
        return Err(Error::Checkpoint("one input scaler per channel expected".into()));
    }
    Ok(ClassifierModel {
        classes: meta.classes,
        layout: meta.layout,
        network,
        scalers: meta.scalers,
        history: meta.history,
        seed: meta.seed,
    })
}
