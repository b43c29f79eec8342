//! Keypoint-file ingestion: confidence thresholding, MidHip tracking and
//! gap filling onto a uniform 50 Hz grid.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Joint, NUM_JOINTS};

/// Rate of every [`PoseSequence`] produced by the pipeline.
pub const POSE_RATE: f64 = 50.0;

/// Confidence below which a detected joint is discarded.
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.0002;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// One detected person: a slot per body-25 joint, `None` when undetected.
pub type PersonJoints = [Option<Keypoint>; NUM_JOINTS];

#[derive(Debug, Clone, PartialEq)]
pub struct RawKeypointFrame {
    pub frame_index: usize,
    pub people: Vec<PersonJoints>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackFrame {
    pub frame_index: usize,
    pub joints: PersonJoints,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawPoseTrack {
    pub person_id: usize,
    pub native_fps: f64,
    pub frames: Vec<TrackFrame>,
}

/// Gap-free joint positions in pixels on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    rate: f64,
    /// Video time of sample 0 in seconds.
    start: f64,
    frames: Vec<[Point; NUM_JOINTS]>,
}

impl PoseSequence {
    pub fn new(rate: f64, frames: Vec<[Point; NUM_JOINTS]>) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(Error::invalid(format!("pose rate must be positive, got {rate}")));
        }
        if frames.is_empty() {
            return Err(Error::invalid("pose sequence must contain at least one sample"));
        }
        for (t, frame) in frames.iter().enumerate() {
            if frame.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                return Err(Error::invalid(format!("non-finite joint coordinate at sample {t}")));
            }
        }
        Ok(PoseSequence {
            rate,
            start: 0.0,
            frames,
        })
    }

    pub fn with_start(mut self, start: f64) -> Self {
        self.start = start;
        self
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[[Point; NUM_JOINTS]] {
        &self.frames
    }

    pub fn joint(&self, t: usize, joint: Joint) -> Point {
        self.frames[t][joint.index()]
    }

    /// Applies `f` to every coordinate pair, keeping the grid.
    pub fn map_points(&self, mut f: impl FnMut(Point) -> Point) -> Result<PoseSequence> {
        let frames = self
            .frames
            .iter()
            .map(|frame| frame.map(&mut f))
            .collect();
        Ok(PoseSequence::new(self.rate, frames)?.with_start(self.start))
    }
}

// ---------------------------------------------------------------------------
// keypoint files

#[derive(Debug, Deserialize, Serialize)]
struct FrameDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_index: Option<usize>,
    #[serde(default)]
    people: Vec<PersonDoc>,
}

#[derive(Debug, Deserialize, Serialize)]
struct PersonDoc {
    #[serde(default)]
    pose_keypoints_2d: Vec<Option<f64>>,
}

fn person_from_doc(doc: &PersonDoc, frame: usize) -> Result<PersonJoints> {
    let flat = &doc.pose_keypoints_2d;
    if flat.len() != NUM_JOINTS * 3 {
        return Err(Error::KeypointParse {
            frame,
            message: format!(
                "pose_keypoints_2d has {} values, expected {}",
                flat.len(),
                NUM_JOINTS * 3
            ),
        });
    }
    let mut joints: PersonJoints = [None; NUM_JOINTS];
    for (j, triplet) in flat.chunks_exact(3).enumerate() {
        let (Some(x), Some(y)) = (triplet[0], triplet[1]) else {
            continue;
        };
        let confidence = triplet[2].unwrap_or(0.0);
        // all-zero triplets are the layout's "not detected" marker
        if x == 0.0 && y == 0.0 && confidence == 0.0 {
            continue;
        }
        if !x.is_finite() || !y.is_finite() || !(confidence >= 0.0) {
            return Err(Error::KeypointParse {
                frame,
                message: format!("joint {j} has invalid values ({x}, {y}, {confidence})"),
            });
        }
        joints[j] = Some(Keypoint { x, y, confidence });
    }
    Ok(joints)
}

fn frame_from_doc(doc: FrameDoc, default_index: usize) -> Result<RawKeypointFrame> {
    let frame_index = doc.frame_index.unwrap_or(default_index);
    let people = doc
        .people
        .iter()
        .map(|p| person_from_doc(p, frame_index))
        .collect::<Result<Vec<_>>>()?;
    Ok(RawKeypointFrame {
        frame_index,
        people,
    })
}

/// Parses a keypoint document.
///
/// Accepts a single per-frame object (`{"people": [...]}`), a JSON array of
/// such objects, or JSON Lines with one object per line. A frame's index is
/// its `frame_index` field when present and its position otherwise.
/// All-zero triplets mark undetected joints.
pub fn parse_keypoint_file(raw: &[u8]) -> Result<Vec<RawKeypointFrame>> {
    let text = std::str::from_utf8(raw).map_err(|e| Error::KeypointParse {
        frame: 0,
        message: format!("not utf-8: {e}"),
    })?;
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    if trimmed.starts_with('[') {
        let docs: Vec<serde_json::Value> =
            serde_json::from_str(trimmed).map_err(|e| Error::KeypointParse {
                frame: 0,
                message: e.to_string(),
            })?;
        return docs
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let doc: FrameDoc = serde_json::from_value(v).map_err(|e| Error::KeypointParse {
                    frame: i,
                    message: e.to_string(),
                })?;
                frame_from_doc(doc, i)
            })
            .collect();
    }
    // a pretty-printed single object spans several lines
    if let Ok(doc) = serde_json::from_str::<FrameDoc>(trimmed) {
        return Ok(vec![frame_from_doc(doc, 0)?]);
    }
    trimmed
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let doc: FrameDoc = serde_json::from_str(line).map_err(|e| Error::KeypointParse {
                frame: i,
                message: e.to_string(),
            })?;
            frame_from_doc(doc, i)
        })
        .collect()
}

/// Serializes frames as JSON Lines in the keypoint layout.
pub fn write_keypoint_lines(frames: &[RawKeypointFrame]) -> String {
    let mut out = String::new();
    for frame in frames {
        let doc = FrameDoc {
            frame_index: Some(frame.frame_index),
            people: frame
                .people
                .iter()
                .map(|person| PersonDoc {
                    pose_keypoints_2d: person
                        .iter()
                        .flat_map(|kp| match kp {
                            Some(k) => [Some(k.x), Some(k.y), Some(k.confidence)],
                            None => [Some(0.0), Some(0.0), Some(0.0)],
                        })
                        .collect(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&doc).expect("keypoint frame serializes"));
        out.push('\n');
    }
    out
}

/// Reads a directory of per-frame keypoint files. The frame index is the last
/// run of digits in each file name (`clip_000000000012_keypoints.json` -> 12).
pub fn read_keypoint_dir(dir: &std::path::Path) -> Result<Vec<RawKeypointFrame>> {
    let mut entries = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let index = last_digit_run(name).ok_or_else(|| Error::KeypointParse {
            frame: 0,
            message: format!("no frame number in file name {}", path.display()),
        })?;
        entries.push((index, path));
    }
    entries.sort();
    let mut frames = Vec::with_capacity(entries.len());
    for (index, path) in entries {
        let raw = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let text = std::str::from_utf8(&raw).unwrap_or_default();
        let doc: FrameDoc = serde_json::from_str(text).map_err(|e| Error::KeypointParse {
            frame: index,
            message: e.to_string(),
        })?;
        let mut frame = frame_from_doc(doc, index)?;
        frame.frame_index = index;
        frames.push(frame);
    }
    Ok(frames)
}

fn last_digit_run(name: &str) -> Option<usize> {
    let bytes = name.as_bytes();
    let end = bytes.iter().rposition(u8::is_ascii_digit)? + 1;
    let start = bytes[..end]
        .iter()
        .rposition(|b| !b.is_ascii_digit())
        .map_or(0, |p| p + 1);
    name[start..end].parse().ok()
}

// ---------------------------------------------------------------------------
// thresholding and tracking

/// Marks joints whose confidence is below `min_conf` as absent.
pub fn threshold_joints(frame: &RawKeypointFrame, min_conf: f64) -> RawKeypointFrame {
    let people = frame
        .people
        .iter()
        .map(|person| person.map(|kp| kp.filter(|k| k.confidence >= min_conf)))
        .collect();
    RawKeypointFrame {
        frame_index: frame.frame_index,
        people,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    /// Maximum MidHip jump (pixels) for continuing an existing track.
    pub gate_radius: f64,
}

impl TrackingConfig {
    pub fn for_image(width: f64, height: f64) -> Self {
        TrackingConfig {
            gate_radius: 0.5 * width.hypot(height),
        }
    }
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self::for_image(1920.0, 1080.0)
    }
}

/// MidHip, or the hip midpoint / single hip / Neck when MidHip is missing.
fn anchor(person: &PersonJoints) -> Option<Point> {
    let get = |j: Joint| person[j.index()].map(|k| k.point());
    if let Some(p) = get(Joint::MidHip) {
        return Some(p);
    }
    match (get(Joint::RHip), get(Joint::LHip)) {
        (Some(r), Some(l)) => Some(Point::new(0.5 * (r.x + l.x), 0.5 * (r.y + l.y))),
        (Some(h), None) | (None, Some(h)) => Some(h),
        (None, None) => get(Joint::Neck),
    }
}

/// Total order over people that does not depend on their position in the frame.
fn person_order(a: &PersonJoints, b: &PersonJoints) -> Ordering {
    let key = |p: &PersonJoints| -> Vec<f64> {
        p.iter()
            .flat_map(|k| match k {
                Some(k) => [1.0, k.x, k.y, k.confidence],
                None => [0.0; 4],
            })
            .collect()
    };
    let (ka, kb) = (key(a), key(b));
    ka.iter()
        .zip(&kb)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Associates detections across frames by nearest last-known anchor.
///
/// Pairs within the gating radius are matched globally in order of increasing
/// distance; leftover detections open new tracks.
pub fn track_subjects(
    frames: &[RawKeypointFrame],
    native_fps: f64,
    config: &TrackingConfig,
) -> Result<Vec<RawPoseTrack>> {
    if !(native_fps > 0.0) {
        return Err(Error::invalid(format!("native fps must be positive, got {native_fps}")));
    }
    let mut tracks: Vec<RawPoseTrack> = Vec::new();
    let mut last_anchor: Vec<Point> = Vec::new();
    let mut previous_index: Option<usize> = None;

    for frame in frames {
        if let Some(prev) = previous_index {
            if frame.frame_index <= prev {
                return Err(Error::KeypointParse {
                    frame: frame.frame_index,
                    message: format!("frame index not increasing (previous {prev})"),
                });
            }
        }
        previous_index = Some(frame.frame_index);

        let mut people: Vec<(Point, &PersonJoints)> = Vec::new();
        for person in &frame.people {
            match anchor(person) {
                Some(a) => people.push((a, person)),
                None => log::warn!(
                    "frame {}: person without MidHip or fallback anchor skipped",
                    frame.frame_index
                ),
            }
        }
        people.sort_by(|a, b| person_order(a.1, b.1));

        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (pi, (a, _)) in people.iter().enumerate() {
            for (ti, last) in last_anchor.iter().enumerate() {
                let d = a.distance(*last);
                if d <= config.gate_radius {
                    pairs.push((d, ti, pi));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut track_used = vec![false; tracks.len()];
        let mut person_track: Vec<Option<usize>> = vec![None; people.len()];
        for (_, ti, pi) in pairs {
            if !track_used[ti] && person_track[pi].is_none() {
                track_used[ti] = true;
                person_track[pi] = Some(ti);
            }
        }

        for (pi, (a, person)) in people.iter().enumerate() {
            let ti = match person_track[pi] {
                Some(ti) => ti,
                None => {
                    tracks.push(RawPoseTrack {
                        person_id: tracks.len(),
                        native_fps,
                        frames: Vec::new(),
                    });
                    last_anchor.push(*a);
                    tracks.len() - 1
                }
            };
            tracks[ti].frames.push(TrackFrame {
                frame_index: frame.frame_index,
                joints: **person,
            });
            last_anchor[ti] = *a;
        }
    }
    Ok(tracks)
}

// ---------------------------------------------------------------------------
// gap filling and resampling

/// Piecewise-linear interpolation over `(time, value)` knots with constant
/// extrapolation. `knots` must be non-empty and sorted by time.
pub(crate) fn interp_linear(knots: &[(f64, f64)], t: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if t <= first.0 {
        return first.1;
    }
    if t >= last.0 {
        return last.1;
    }
    let hi = knots.partition_point(|k| k.0 <= t);
    let (t0, v0) = knots[hi - 1];
    if t0 == t {
        return v0;
    }
    let (t1, v1) = knots[hi];
    let w = (t - t0) / (t1 - t0);
    v0 + w * (v1 - v0)
}

/// Number of grid samples covering `[0, duration]` at `rate`, last sample
/// not after `duration`.
pub fn grid_len(duration: f64, rate: f64) -> usize {
    (duration * rate + 1e-9).floor() as usize + 1
}

/// Fills missing joints by linear interpolation in time and resamples the
/// track onto a uniform grid starting at its first frame.
pub fn fill_and_resample(track: &RawPoseTrack, target_rate: f64) -> Result<PoseSequence> {
    if track.frames.is_empty() {
        return Err(Error::invalid(format!("track {} has no frames", track.person_id)));
    }
    if !(track.native_fps > 0.0) || !(target_rate > 0.0) {
        return Err(Error::invalid("frame rates must be positive"));
    }
    let first = track.frames[0].frame_index;
    let time = |idx: usize| (idx - first) as f64 / track.native_fps;
    let duration = time(track.frames[track.frames.len() - 1].frame_index);
    let n = grid_len(duration, target_rate);

    let mut out = vec![[Point::new(0.0, 0.0); NUM_JOINTS]; n];
    for joint in Joint::ALL {
        let j = joint.index();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for f in &track.frames {
            if let Some(k) = f.joints[j] {
                let t = time(f.frame_index);
                xs.push((t, k.x));
                ys.push((t, k.y));
            }
        }
        if xs.is_empty() {
            return Err(Error::JointNeverObserved {
                joint: joint.name(),
            });
        }
        for (k, frame) in out.iter_mut().enumerate() {
            let t = k as f64 / target_rate;
            frame[j] = Point::new(interp_linear(&xs, t), interp_linear(&ys, t));
        }
    }
    Ok(PoseSequence::new(target_rate, out)?.with_start(first as f64 / track.native_fps))
}

/// Threshold, track and resample a whole keypoint document, keeping the
/// longest track.
pub fn ingest_primary_subject(
    frames: &[RawKeypointFrame],
    native_fps: f64,
    min_conf: f64,
    tracking: &TrackingConfig,
) -> Result<PoseSequence> {
    let thresholded: Vec<_> = frames.iter().map(|f| threshold_joints(f, min_conf)).collect();
    let tracks = track_subjects(&thresholded, native_fps, tracking)?;
    let best = tracks
        .iter()
        .max_by(|a, b| a.frames.len().cmp(&b.frames.len()).then(b.person_id.cmp(&a.person_id)))
        .ok_or_else(|| Error::invalid("no person detected in keypoint document"))?;
    fill_and_resample(best, POSE_RATE)
}
