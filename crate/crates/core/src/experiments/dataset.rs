//! Loads manifest sessions onto a common 50 Hz grid.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::har::ChannelSlot;
use crate::imu_dsp::{
    align_recording, detect_sync_offset, parse_imu_csv, resample_linear, resample_to_pose_grid, Channel,
    ChannelSeries, ImuRecording, SyncConfig,
};
use crate::pose_ingest::{
    grid_len, ingest_primary_subject, parse_keypoint_file, read_keypoint_dir, PoseSequence, TrackingConfig,
    DEFAULT_MIN_CONFIDENCE, POSE_RATE,
};
use crate::skeleton::Placement;

use super::manifest::{parse_label_intervals, Manifest, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignalKind {
    Real,
    Simulated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionData {
    pub id: String,
    /// Video time of grid sample 0.
    pub start: f64,
    pub len: usize,
    pub poses: Option<PoseSequence>,
    /// One class per grid sample; empty for generic sessions.
    pub labels: Vec<usize>,
    /// Measured sensors resampled onto the grid.
    pub real: BTreeMap<Placement, ImuRecording>,
    pub simulated: BTreeMap<ChannelSlot, ChannelSeries>,
}

impl SessionData {
    /// Assembles a session from sensor recordings already on the video clock.
    pub fn new(
        id: &str,
        poses: Option<PoseSequence>,
        imu: BTreeMap<Placement, ImuRecording>,
        labels: Vec<usize>,
    ) -> Result<SessionData> {
        let (start, len) = match &poses {
            Some(p) => (p.start(), p.len()),
            None => sensor_grid(&imu)?,
        };
        let real = imu
            .iter()
            .map(|(&pl, rec)| Ok((pl, resample_to_pose_grid(rec, start, POSE_RATE, len)?)))
            .collect::<Result<_>>()?;
        if !labels.is_empty() && labels.len() != len {
            return Err(Error::shape(format!(
                "session `{id}` has {} labels for {len} samples",
                labels.len()
            )));
        }
        Ok(SessionData {
            id: id.to_string(),
            start,
            len,
            poses,
            labels,
            real,
            simulated: BTreeMap::new(),
        })
    }

    pub fn channel(&self, slot: ChannelSlot, kind: SignalKind) -> Result<ChannelSeries> {
        match kind {
            SignalKind::Real => self
                .real
                .get(&slot.placement)
                .ok_or_else(|| Error::invalid(format!("session `{}` has no {} sensor", self.id, slot.placement)))?
                .series(slot.channel)
                .map(|s| ChannelSeries {
                    rate: POSE_RATE,
                    start: self.start,
                    ..s
                }),
            SignalKind::Simulated => self.simulated.get(&slot).cloned().ok_or_else(|| {
                Error::invalid(format!("session `{}` has no simulated {slot} signal", self.id))
            }),
        }
    }

    pub fn has(&self, kind: SignalKind) -> bool {
        match kind {
            SignalKind::Real => !self.real.is_empty(),
            SignalKind::Simulated => !self.simulated.is_empty(),
        }
    }
}

/// Grid covering the overlap of all sensors when there is no video.
fn sensor_grid(imu: &BTreeMap<Placement, ImuRecording>) -> Result<(f64, usize)> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for rec in imu.values() {
        let (Some(&a), Some(&b)) = (rec.timestamps.first(), rec.timestamps.last()) else {
            return Err(Error::invalid(format!("{} recording is empty", rec.placement)));
        };
        lo = lo.max(a);
        hi = hi.min(b);
    }
    if !(hi > lo) {
        return Err(Error::invalid("sensor recordings do not overlap"));
    }
    let start = (lo * POSE_RATE - 1e-9).ceil() / POSE_RATE;
    Ok((start, grid_len(hi - start, POSE_RATE)))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_session_poses(session: &Session, base: &Path) -> Result<Option<PoseSequence>> {
    let Some(rel) = &session.poses else {
        return Ok(None);
    };
    let path = base.join(rel);
    let frames = if path.is_dir() {
        read_keypoint_dir(&path)?
    } else {
        parse_keypoint_file(&read(&path)?)?
    };
    let tracking = session
        .image_size
        .map(|[w, h]| TrackingConfig::for_image(w, h))
        .unwrap_or_default();
    ingest_primary_subject(&frames, session.video_fps, DEFAULT_MIN_CONFIDENCE, &tracking).map(Some)
}

/// Reads one sensor file and moves it onto the video clock when the session
/// has sync anchors.
pub fn load_sensor(session: &Session, placement: Placement, base: &Path) -> Result<ImuRecording> {
    let path = base.join(&session.imu[&placement]);
    let rec = parse_imu_csv(&read(&path)?, placement)?;
    if session.sync_frames.is_empty() {
        return Ok(rec);
    }
    let uniform = resample_linear(&rec, rec.native_rate().round())?;
    let acc = uniform.series(Channel::AccNorm)?;
    let offset = detect_sync_offset(&acc, &session.sync_frames, session.video_fps, &SyncConfig::default())?;
    log::info!("session {} {placement}: sync offset {offset:.4} s", session.id);
    Ok(align_recording(&rec, offset))
}

pub fn load_session(session: &Session, base: &Path, classes: &[String]) -> Result<SessionData> {
    let poses = load_session_poses(session, base)?;
    let imu = session
        .imu
        .keys()
        .map(|&pl| Ok((pl, load_sensor(session, pl, base)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let mut data = SessionData::new(&session.id, poses, imu, Vec::new())?;
    if let Some(rel) = &session.labels {
        let path = base.join(rel);
        data.labels = parse_label_intervals(&read(&path)?, classes, data.start, POSE_RATE, data.len)?;
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub sessions: BTreeMap<String, SessionData>,
}

impl Dataset {
    pub fn load(manifest: Manifest, base: &Path) -> Result<Dataset> {
        let sessions = manifest
            .sessions
            .iter()
            .map(|s| Ok((s.id.clone(), load_session(s, base, &manifest.classes)?)))
            .collect::<Result<_>>()?;
        Ok(Dataset { manifest, sessions })
    }

    pub fn from_sessions(manifest: Manifest, sessions: Vec<SessionData>) -> Result<Dataset> {
        manifest.validate()?;
        let sessions: BTreeMap<String, SessionData> = sessions.into_iter().map(|s| (s.id.clone(), s)).collect();
        for s in &manifest.sessions {
            if !sessions.contains_key(&s.id) {
                return Err(Error::invalid(format!("no data for session `{}`", s.id)));
            }
        }
        Ok(Dataset { manifest, sessions })
    }

    pub fn get(&self, id: &str) -> Result<&SessionData> {
        self.sessions
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no data for session `{id}`")))
    }

    /// Writes each session's simulated signals to `<dir>/<session>.csv`.
    pub fn save_simulated(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for data in self.sessions.values().filter(|s| !s.simulated.is_empty()) {
            let path = dir.join(format!("{}.csv", data.id));
            std::fs::write(&path, write_simulated_csv(data)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    /// Loads simulated signals for every session that has a file in `dir`.
    pub fn load_simulated(&mut self, dir: &Path) -> Result<()> {
        for data in self.sessions.values_mut() {
            let path = dir.join(format!("{}.csv", data.id));
            if path.is_file() {
                data.simulated = parse_simulated_csv(&read(&path)?, data.start, data.len)?;
            }
        }
        Ok(())
    }
}

pub fn parse_slot(text: &str) -> Result<ChannelSlot> {
    let (p, c) = text
        .split_once('.')
        .ok_or_else(|| Error::invalid(format!("`{text}` is not `placement.channel`")))?;
    Ok(ChannelSlot::new(p.parse()?, c.parse()?))
}

pub fn write_simulated_csv(data: &SessionData) -> String {
    let mut out = String::from("t");
    for slot in data.simulated.keys() {
        out.push_str(&format!(",{slot}"));
    }
    out.push('\n');
    for k in 0..data.len {
        out.push_str(&format!("{}", data.start + k as f64 / POSE_RATE));
        for s in data.simulated.values() {
            out.push_str(&format!(",{}", s.values[k]));
        }
        out.push('\n');
    }
    out
}

pub fn parse_simulated_csv(raw: &[u8], start: f64, len: usize) -> Result<BTreeMap<ChannelSlot, ChannelSeries>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(raw);
    let headers = reader
        .headers()
        .map_err(|e| Error::CsvParse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let slots = headers
        .iter()
        .skip(1)
        .map(parse_slot)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::CsvParse {
            row: 1,
            message: e.to_string(),
        })?;
    let mut columns = vec![Vec::with_capacity(len); slots.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::CsvParse {
            row: i + 2,
            message: e.to_string(),
        })?;
        for (col, field) in columns.iter_mut().zip(record.iter().skip(1)) {
            col.push(field.parse::<f64>().map_err(|e| Error::CsvParse {
                row: i + 2,
                message: e.to_string(),
            })?);
        }
    }
    if let Some(c) = columns.iter().find(|c| c.len() != len) {
        return Err(Error::shape(format!("simulated file has {} rows, session has {len}", c.len())));
    }
    Ok(slots
        .into_iter()
        .zip(columns)
        .map(|(slot, values)| {
            let mut s = ChannelSeries::new(slot.placement, slot.channel, POSE_RATE, values);
            s.start = start;
            (slot, s)
        })
        .collect())
}
