use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::loss::{mse_loss, softmax_cross_entropy, LossKind};
use super::{AdamConfig, AdamState, Scalar, TcnNetwork, ValueBlock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 500,
            patience: 25,
            batch_size: 64,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size and max epochs must be positive".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} must be below max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets<T> {
    /// `(examples, time, outputs)` regression targets.
    Values { outputs: usize, data: Vec<T> },
    /// One class index per `(example, time)`.
    Classes(Vec<usize>),
}

/// Materialised examples of shape `(time, channels)` with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet<T> {
    pub time: usize,
    pub channels: usize,
    pub inputs: Vec<T>,
    pub targets: Targets<T>,
}

impl<T: Scalar> TrainSet<T> {
    pub fn len(&self) -> usize {
        self.inputs.len() / (self.time * self.channels).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.targets {
            Targets::Values { .. } => LossKind::Mse,
            Targets::Classes(_) => LossKind::CrossEntropy,
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        if self.inputs.len() != n * self.time * self.channels {
            return Err(Error::shape("inputs are not a whole number of examples"));
        }
        let expected = match &self.targets {
            Targets::Values { outputs, data } => (data.len(), n * self.time * outputs),
            Targets::Classes(labels) => (labels.len(), n * self.time),
        };
        if expected.0 != expected.1 {
            return Err(Error::shape(format!(
                "{} target values for {n} examples",
                expected.0
            )));
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> TrainSet<T> {
        let (batch, targets) = self.gather(indices);
        TrainSet {
            time: self.time,
            channels: self.channels,
            inputs: batch.data,
            targets,
        }
    }

    fn gather(&self, indices: &[usize]) -> (ValueBlock<T>, Targets<T>) {
        let stride = self.time * self.channels;
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(&self.inputs[i * stride..(i + 1) * stride]);
        }
        let targets = match &self.targets {
            Targets::Values { outputs, data: t } => {
                let s = self.time * outputs;
                let mut out = Vec::with_capacity(indices.len() * s);
                for &i in indices {
                    out.extend_from_slice(&t[i * s..(i + 1) * s]);
                }
                Targets::Values {
                    outputs: *outputs,
                    data: out,
                }
            }
            Targets::Classes(labels) => {
                let mut out = Vec::with_capacity(indices.len() * self.time);
                for &i in indices {
                    out.extend_from_slice(&labels[i * self.time..(i + 1) * self.time]);
                }
                Targets::Classes(out)
            }
        };
        (
            ValueBlock {
                batch: indices.len(),
                time: self.time,
                channels: self.channels,
                data,
            },
            targets,
        )
    }
}

fn loss_and_grad<T: Scalar>(out: &ValueBlock<T>, targets: &Targets<T>) -> Result<(f64, ValueBlock<T>)> {
    match targets {
        Targets::Values { data, .. } => mse_loss(out, data),
        Targets::Classes(labels) => softmax_cross_entropy(out, labels),
    }
}

/// Mean loss over a whole set without dropout.
pub fn evaluate_loss<T: Scalar>(net: &TcnNetwork<T>, set: &TrainSet<T>, batch_size: usize) -> Result<f64> {
    let n = set.len();
    if n == 0 {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let mut total = 0.0;
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, targets) = set.gather(chunk);
        let out = net.infer(&x)?;
        let (loss, _) = loss_and_grad(&out, &targets)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over validation losses.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    /// Records the validation loss of 1-based `epoch`.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

/// Mini-batch Adam with early stopping on the validation loss; returns the
/// weights of the best validation epoch.
pub fn train_loop<T: Scalar>(
    mut net: TcnNetwork<T>,
    train: &TrainSet<T>,
    val: &TrainSet<T>,
    config: &TrainConfig,
) -> Result<(TcnNetwork<T>, History)> {
    config.validate()?;
    train.check()?;
    val.check()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    if train.channels != net.topology.input_channels || val.channels != train.channels {
        return Err(Error::shape(format!(
            "network expects {} input channels, data has {}",
            net.topology.input_channels, train.channels
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(config.adam, net.params().iter().map(|p| p.len()));
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = net.clone();
    let mut history = History {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_epoch: 0,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (x, targets) = train.gather(chunk);
            let (out, cache) = net.forward(&x, Some(&mut rng))?;
            let (loss, grad) = loss_and_grad(&out, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            let grads = net.backward(&cache, &grad);
            let flat = grads.flat();
            let mut params = net.params_mut();
            adam.step(&mut params, &flat)?;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_loss = evaluate_loss(&net, val, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: val_loss });
        }
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        history.stopped_epoch = epoch;
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = net.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    history.best_epoch = stopper.best_epoch();
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Topology;

    fn run_schedule(losses: impl Iterator<Item = f64>, patience: usize, max_epochs: usize) -> (usize, usize) {
        let mut s = EarlyStopping::new(patience);
        let mut stopped = 0;
        for (i, loss) in losses.take(max_epochs).enumerate() {
            stopped = i + 1;
            if s.observe(i + 1, loss) == StopDecision::Stop {
                break;
            }
        }
        (stopped, s.best_epoch())
    }

    #[test]
    fn decreasing_then_flat_stops_after_patience() {
        let schedule = (1..=30).map(|e| 1.0 / e as f64).chain(std::iter::repeat(1.0 / 30.0));
        assert_eq!(run_schedule(schedule, 25, 500), (55, 30));
    }

    #[test]
    fn immediate_plateau_stops_at_patience_plus_one() {
        assert_eq!(run_schedule(std::iter::repeat(0.5), 25, 500), (26, 1));
    }

    #[test]
    fn max_epochs_caps_training() {
        let schedule = (1..).map(|e| 1.0 / e as f64);
        assert_eq!(run_schedule(schedule, 25, 500), (500, 500));
    }

    fn linear_task(n: usize, slope: f32) -> TrainSet<f32> {
        let xs: Vec<f32> = (0..n).map(|i| (i as f32 / n as f32) * 2.0 - 1.0).collect();
        let ys = xs.iter().map(|x| slope * x).collect();
        TrainSet {
            time: 1,
            channels: 1,
            inputs: xs,
            targets: Targets::Values { outputs: 1, data: ys },
        }
    }

    #[test]
    fn learns_linear_slope() {
        // closed form: least squares through the origin on noiseless data is
        // exactly the generating slope
        let topo = Topology {
            input_channels: 1,
            output_channels: 1,
            kernel_width: 1,
            widths: vec![1],
            dilations: vec![1],
            dropout: 0.0,
        };
        let mut net = TcnNetwork::<f32>::init(&topo, 3).unwrap();
        // a purely linear path: silence the rectified branch
        for p in net.blocks[0].conv1.kernel.iter_mut() {
            *p = 0.0;
        }
        for p in net.blocks[0].conv2.kernel.iter_mut() {
            *p = 0.0;
        }
        let train = linear_task(64, 3.0);
        let val = linear_task(16, 3.0);
        let config = TrainConfig {
            max_epochs: 2000,
            patience: 50,
            batch_size: 16,
            seed: 1,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
        };
        let (net, history) = train_loop(net, &train, &val, &config).unwrap();
        // slope of the trained map
        let probe = ValueBlock::from_vec(2, 1, 1, vec![0.0f32, 1.0]).unwrap();
        let out = net.infer(&probe).unwrap();
        let slope = out.data[1] - out.data[0];
        assert!((slope - 3.0).abs() < 1e-2, "slope {slope}, history {:?}", history.best_epoch);
    }

    #[test]
    fn identical_seeds_identical_training() {
        let topo = Topology {
            input_channels: 1,
            output_channels: 1,
            kernel_width: 3,
            widths: vec![4, 4],
            dilations: vec![1, 2],
            dropout: 0.2,
        };
        let train = linear_task(40, -2.0);
        let val = linear_task(8, -2.0);
        let config = TrainConfig {
            max_epochs: 15,
            patience: 5,
            batch_size: 8,
            seed: 11,
            adam: AdamConfig::default(),
        };
        let run = || train_loop(TcnNetwork::<f32>::init(&topo, 4).unwrap(), &train, &val, &config).unwrap();
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
    }

    #[test]
    fn divergence_reports_epoch() {
        let topo = Topology {
            input_channels: 1,
            output_channels: 1,
            kernel_width: 1,
            widths: vec![1],
            dilations: vec![1],
            dropout: 0.0,
        };
        let mut train = linear_task(8, 1.0);
        if let Targets::Values { data, .. } = &mut train.targets {
            data[3] = f32::INFINITY;
        }
        let val = linear_task(4, 1.0);
        let config = TrainConfig {
            max_epochs: 10,
            patience: 3,
            batch_size: 8,
            seed: 0,
            adam: AdamConfig::default(),
        };
        let err = train_loop(TcnNetwork::<f32>::init(&topo, 0).unwrap(), &train, &val, &config).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 1, .. }));
    }

    #[test]
    fn config_invariants() {
        let bad = TrainConfig {
            patience: 500,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
