pub mod checkpoint;
pub mod error;
pub mod experiments;
pub mod har;
pub mod imu_dsp;
pub mod nn;
pub mod pose_features;
pub mod pose_ingest;
pub mod regressor;
pub mod skeleton;
pub mod synth;

pub use error::{Error, Result};
