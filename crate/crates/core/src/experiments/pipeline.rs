//! Pose-to-signal regression over a whole dataset.

use crate::error::{Error, Result};
use crate::har::ChannelSlot;
use crate::nn::TrainConfig;
use crate::pose_features::{normalize_sequence, NormalizedPoseSequence};
use crate::regressor::{simulate_channel, train_regressor, RegressionPair, RegressorSpec, TrainedRegressor, ValidationSplit};

use super::dataset::{Dataset, SessionData, SignalKind};
use super::derive_seed;
use super::manifest::{Role, Source};

/// Sessions with both video and measured sensors used to fit regressors:
/// generic sessions when there are any, real train sessions otherwise.
pub fn regression_sessions(ds: &Dataset) -> Vec<&SessionData> {
    let pick = |role: Role| -> Vec<&SessionData> {
        ds.manifest
            .sessions
            .iter()
            .filter(|s| s.role == role && s.source == Source::Real && s.poses.is_some())
            .filter_map(|s| ds.sessions.get(&s.id))
            .collect()
    };
    let generic = pick(Role::Generic);
    if generic.is_empty() {
        log::warn!("no generic sessions; fitting regressors on real train sessions");
        pick(Role::Train)
    } else {
        generic
    }
}

/// Fits one regressor per spec. Each gets its own seed derived from
/// `config.seed` and its output slot.
pub fn train_regressors(ds: &Dataset, specs: &[RegressorSpec], config: &TrainConfig) -> Result<Vec<TrainedRegressor>> {
    let sessions = regression_sessions(ds);
    if sessions.is_empty() {
        return Err(Error::Manifest {
            field: "sessions.role".into(),
            message: "no session pairs video with sensor data for regression".into(),
        });
    }
    let norms = sessions
        .iter()
        .map(|s| normalize_sequence(s.poses.as_ref().expect("filtered on poses")))
        .collect::<Result<Vec<NormalizedPoseSequence>>>()?;
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let slot = ChannelSlot::new(spec.placement, spec.channel);
        let targets = sessions
            .iter()
            .map(|s| s.channel(slot, SignalKind::Real))
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<RegressionPair> = norms
            .iter()
            .zip(&targets)
            .map(|(poses, target)| RegressionPair { poses, target })
            .collect();
        let mut cfg = config.clone();
        cfg.seed = derive_seed(config.seed, &slot.to_string());
        log::info!("training regressor {slot} on {} recordings", pairs.len());
        out.push(train_regressor(spec, &pairs, &ValidationSplit::auto(pairs.len()), &cfg)?);
    }
    Ok(out)
}

pub fn simulate_session(regressors: &[TrainedRegressor], data: &mut SessionData) -> Result<()> {
    let Some(poses) = &data.poses else {
        return Ok(());
    };
    let norm = normalize_sequence(poses)?;
    for model in regressors {
        let mut series = simulate_channel(model, &norm)?;
        series.start = data.start;
        data.simulated
            .insert(ChannelSlot::new(model.spec.placement, model.spec.channel), series);
    }
    Ok(())
}

/// Fills in simulated signals for every session with video.
pub fn simulate_dataset(ds: &mut Dataset, regressors: &[TrainedRegressor]) -> Result<()> {
    for data in ds.sessions.values_mut() {
        simulate_session(regressors, data)?;
    }
    Ok(())
}
