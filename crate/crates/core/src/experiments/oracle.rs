//! Synthetic corpus in the manifest layout, built from the kinematic oracle.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu_dsp::{write_imu_csv, ImuRecording};
use crate::pose_ingest::{
    ingest_primary_subject, write_keypoint_lines, PoseSequence, RawKeypointFrame, TrackingConfig,
    DEFAULT_MIN_CONFIDENCE, POSE_RATE,
};
use crate::skeleton::Placement;
use crate::synth::{
    analytic_imu, generate_scene, render_frames, Activity, GenericBands, KinematicScene, MotionKind, RenderNoise,
    SceneConfig, UserProfile,
};

use super::dataset::{Dataset, SessionData};
use super::derive_seed;
use super::manifest::{write_label_intervals, Manifest, Role, Session, Source, User};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSpec {
    pub train_users: usize,
    pub test_users: usize,
    /// Labelled scenes per class for every train and test user.
    pub scenes_per_class: usize,
    /// Unlabelled free-motion scenes for regressor training.
    pub generic_scenes: usize,
    /// Labelled scenes per class from people outside the user pool (video only).
    pub external_scenes_per_class: usize,
    pub scene_duration: f64,
    pub generic_duration: f64,
    pub pixel_sigma: f64,
    pub dropout: f64,
    pub max_zoom_rate: f64,
    pub seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            train_users: 4,
            test_users: 2,
            scenes_per_class: 2,
            generic_scenes: 40,
            external_scenes_per_class: 0,
            scene_duration: 10.24,
            generic_duration: 10.24,
            pixel_sigma: 0.0,
            dropout: 0.0,
            max_zoom_rate: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRecording {
    pub session: Session,
    pub scene: KinematicScene,
    pub frames: Vec<RawKeypointFrame>,
    pub poses: PoseSequence,
    /// Exact sensor signals, one recording per placement.
    pub imu: BTreeMap<Placement, ImuRecording>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCorpus {
    pub manifest: Manifest,
    pub recordings: Vec<OracleRecording>,
}

pub fn oracle_classes() -> Vec<String> {
    Activity::ALL.iter().map(|a| a.name().to_string()).collect()
}

fn record(
    spec: &OracleSpec,
    id: String,
    user: Option<String>,
    profile: &UserProfile,
    role: Role,
    source: Source,
    motion: MotionKind,
) -> Result<OracleRecording> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &id));
    let config = SceneConfig {
        motion,
        user: *profile,
        duration: if role == Role::Generic {
            spec.generic_duration
        } else {
            spec.scene_duration
        },
        max_zoom_rate: spec.max_zoom_rate,
    };
    let scene = generate_scene(&config, &mut rng)?;
    let noise = RenderNoise {
        pixel_sigma: spec.pixel_sigma,
        dropout: spec.dropout,
    };
    let frames = render_frames(&scene, POSE_RATE, &noise, &mut rng)?;
    let poses = ingest_primary_subject(&frames, POSE_RATE, DEFAULT_MIN_CONFIDENCE, &TrackingConfig::default())?;
    let imu = if source == Source::Real {
        Placement::ALL
            .iter()
            .map(|&pl| Ok((pl, analytic_imu(&scene, pl, POSE_RATE)?)))
            .collect::<Result<_>>()?
    } else {
        BTreeMap::new()
    };
    let labels = scene.class.map(|c| vec![c; poses.len()]).unwrap_or_default();
    Ok(OracleRecording {
        session: Session {
            id,
            user,
            role,
            source,
            video_fps: POSE_RATE,
            poses: None,
            image_size: None,
            imu: BTreeMap::new(),
            labels: None,
            sync_frames: Vec::new(),
        },
        scene,
        frames,
        poses,
        imu,
        labels,
    })
}

fn profile(spec: &OracleSpec, user: &str) -> UserProfile {
    UserProfile::random(&mut ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("user:{user}"))))
}

/// Generates every session. Each one draws from its own seed, so adding
/// users or scenes leaves the existing sessions unchanged.
pub fn generate_oracle(spec: &OracleSpec) -> Result<OracleCorpus> {
    if spec.train_users == 0 || spec.test_users == 0 || spec.scenes_per_class == 0 {
        return Err(Error::Config("oracle needs train users, test users and scenes".into()));
    }
    let mut users = Vec::new();
    let mut recordings = Vec::new();
    let labelled = |prefix: &str, role: Role, count: usize, users: &mut Vec<User>, out: &mut Vec<OracleRecording>| {
        for u in 0..count {
            let uid = format!("{prefix}{u}");
            users.push(User {
                id: uid.clone(),
                rank: (role == Role::Train).then_some(u + 1),
            });
            let prof = profile(spec, &uid);
            for act in Activity::ALL {
                for i in 0..spec.scenes_per_class {
                    let id = format!("{uid}-{}-{i}", act.name());
                    out.push(record(
                        spec,
                        id,
                        Some(uid.clone()),
                        &prof,
                        role,
                        Source::Real,
                        MotionKind::Activity(act),
                    )?);
                }
            }
        }
        Ok::<_, Error>(())
    };
    labelled("train", Role::Train, spec.train_users, &mut users, &mut recordings)?;
    labelled("test", Role::Test, spec.test_users, &mut users, &mut recordings)?;

    if spec.generic_scenes > 0 {
        users.push(User {
            id: "generic".into(),
            rank: None,
        });
    }
    for i in 0..spec.generic_scenes {
        let id = format!("generic-{i}");
        let prof = profile(spec, &id);
        recordings.push(record(
            spec,
            id,
            Some("generic".into()),
            &prof,
            Role::Generic,
            Source::Real,
            MotionKind::Generic(GenericBands::default()),
        )?);
    }
    for act in Activity::ALL {
        for i in 0..spec.external_scenes_per_class {
            let id = format!("external-{}-{i}", act.name());
            let prof = profile(spec, &id);
            recordings.push(record(
                spec,
                id,
                None,
                &prof,
                Role::Train,
                Source::SimulatedExternal,
                MotionKind::Activity(act),
            )?);
        }
    }

    let mut corpus = OracleCorpus {
        manifest: Manifest {
            classes: oracle_classes(),
            users,
            sessions: Vec::new(),
        },
        recordings,
    };
    corpus.assign_paths();
    corpus.manifest.validate()?;
    Ok(corpus)
}

impl OracleCorpus {
    fn assign_paths(&mut self) {
        for r in &mut self.recordings {
            let id = r.session.id.clone();
            r.session.poses = Some(PathBuf::from(format!("poses/{id}.jsonl")));
            r.session.imu = r
                .imu
                .keys()
                .map(|&pl| (pl, PathBuf::from(format!("imu/{id}.{pl}.csv"))))
                .collect();
            if !r.labels.is_empty() {
                r.session.labels = Some(PathBuf::from(format!("labels/{id}.csv")));
            }
        }
        self.manifest.sessions = self.recordings.iter().map(|r| r.session.clone()).collect();
    }

    /// In-memory dataset equivalent to writing the corpus and loading it back.
    pub fn dataset(&self) -> Result<Dataset> {
        let sessions = self
            .recordings
            .iter()
            .map(|r| SessionData::new(&r.session.id, Some(r.poses.clone()), r.imu.clone(), r.labels.clone()))
            .collect::<Result<Vec<_>>>()?;
        Dataset::from_sessions(self.manifest.clone(), sessions)
    }

    /// Writes `manifest.toml` and all session files under `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for sub in ["poses", "imu", "labels"] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let put = |rel: &Path, body: String| {
            let path = dir.join(rel);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        for r in &self.recordings {
            let s = &r.session;
            put(s.poses.as_deref().expect("paths assigned"), write_keypoint_lines(&r.frames))?;
            for (pl, rel) in &s.imu {
                put(rel, write_imu_csv(&r.imu[pl]))?;
            }
            if let Some(rel) = &s.labels {
                put(rel, write_label_intervals(&r.labels, &self.manifest.classes, r.poses.start()))?;
            }
        }
        let path = dir.join("manifest.toml");
        std::fs::write(&path, self.manifest.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
