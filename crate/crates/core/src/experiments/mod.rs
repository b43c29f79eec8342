//! Evaluation matrix: datasets, training-source mixes, sweeps and reports.

use sha2::{Digest, Sha256};

pub mod dataset;
pub mod manifest;
pub mod metrics;
pub mod oracle;
pub mod overlay;
pub mod pipeline;
pub mod sweep;

pub use dataset::{Dataset, SessionData, SignalKind};
pub use manifest::{Manifest, Role, Session, Source, User};
pub use metrics::{confusion_matrix, f1_from_confusion, mean_f1, F1Report};
pub use oracle::{generate_oracle, OracleCorpus, OracleSpec};
pub use overlay::{compare, emit_signal_overlay, OverlaySummary};
pub use pipeline::{simulate_dataset, train_regressors};
pub use sweep::{
    build_training_set, evaluate_model, rank_users, run_cell, run_sweep, Cell, CellResult, EvalReport, ExperimentPlan, Mix, MixSpec,
    SweepOptions,
};

/// Seed for a named sub-task: the first 8 bytes of SHA-256 over the global
/// seed and the name.
pub fn derive_seed(global: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
