//! Minimal value-and-gradient engine for residual dilated 1-D convolution
//! networks: same-padded convolutions, rectifiers, inverted dropout,
//! losses, Adam and an early-stopping training loop.
//!
//! Each layer caches what its reverse pass needs during the forward pass;
//! [`TcnNetwork::backward`] walks the declared graph in reverse.

mod adam;
mod block;
mod conv;
mod loss;
mod scalar;
mod tcn;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use block::ValueBlock;
pub use conv::{Conv1d, ConvCache, ConvGrads};
pub use loss::{mse_loss, softmax_cross_entropy, LossKind};
pub use scalar::Scalar;
pub use tcn::{BlockCache, ForwardCache, NetworkGrads, TcnBlock, TcnNetwork, Topology};
pub use train::{evaluate_loss, train_loop, EarlyStopping, History, StopDecision, Targets, TrainConfig, TrainSet};
