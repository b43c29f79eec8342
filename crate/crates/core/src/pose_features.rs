//! Body-centred, scale-normalised pose representation and the regression
//! windows cut from it.
//!
//! Every joint is expressed relative to MidHip and divided by a per-sample
//! body scale: the median Neck-MidHip pixel distance over a 3 s window
//! centred on the sample. The same scale is used for both axes so the
//! aspect of motions is preserved. Two extra features carry the relative
//! speed of the scale change and its first difference, which stand in for
//! motion towards or away from the camera.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose_ingest::{Point, PoseSequence};
use crate::skeleton::{Joint, Placement, NUM_JOINTS};

/// Samples on each side of the median window (1.5 s at 50 Hz).
pub const SCALE_HALF_WINDOW: usize = 75;

/// Samples per regression window.
pub const REGRESSION_WINDOW: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSeries {
    pub scale: Vec<f64>,
    pub speed: Vec<f64>,
    pub speed_deriv: Vec<f64>,
}

impl ScaleSeries {
    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPoseSequence {
    joints: Vec<[Point; NUM_JOINTS]>,
    speed: Vec<f64>,
    speed_deriv: Vec<f64>,
}

impl NormalizedPoseSequence {
    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joint(&self, t: usize, joint: Joint) -> Point {
        self.joints[t][joint.index()]
    }

    pub fn frames(&self) -> &[[Point; NUM_JOINTS]] {
        &self.joints
    }

    pub fn speed(&self) -> &[f64] {
        &self.speed
    }

    pub fn speed_deriv(&self) -> &[f64] {
        &self.speed_deriv
    }

    /// Writes `sample_index,joint_id,nx,ny,speed,speed_deriv` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
        w.write_record(["sample_index", "joint_id", "nx", "ny", "speed", "speed_deriv"])
            .map_err(err)?;
        for (t, frame) in self.joints.iter().enumerate() {
            for (j, p) in frame.iter().enumerate() {
                w.write_record([
                    t.to_string(),
                    j.to_string(),
                    p.x.to_string(),
                    p.y.to_string(),
                    self.speed[t].to_string(),
                    self.speed_deriv[t].to_string(),
                ])
                .map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::invalid(format!("csv write failed: {e}")))?;
        Ok(())
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Forward relative difference; the last sample repeats its predecessor.
fn forward_diff(values: &[f64], relative: bool) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut out: Vec<f64> = values
        .windows(2)
        .map(|w| {
            if relative {
                (w[1] - w[0]) / w[0]
            } else {
                w[1] - w[0]
            }
        })
        .collect();
    out.push(out[n - 2]);
    out
}

pub fn compute_scale_series(seq: &PoseSequence) -> Result<ScaleSeries> {
    let n = seq.len();
    if n == 0 {
        return Err(Error::invalid("empty pose sequence"));
    }
    let dist: Vec<f64> = (0..n)
        .map(|t| seq.joint(t, Joint::Neck).distance(seq.joint(t, Joint::MidHip)))
        .collect();
    let mut scratch = Vec::with_capacity(2 * SCALE_HALF_WINDOW + 1);
    let mut scale = Vec::with_capacity(n);
    for t in 0..n {
        let lo = t.saturating_sub(SCALE_HALF_WINDOW);
        let hi = (t + SCALE_HALF_WINDOW).min(n - 1);
        scratch.clear();
        scratch.extend_from_slice(&dist[lo..=hi]);
        let m = median(&mut scratch);
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::DegeneratePose(format!(
                "Neck-MidHip distance has median {m} around sample {t}"
            )));
        }
        scale.push(m);
    }
    let speed = forward_diff(&scale, true);
    let speed_deriv = forward_diff(&speed, false);
    Ok(ScaleSeries {
        scale,
        speed,
        speed_deriv,
    })
}

/// Maps a pixel offset to body units: `-1 + 2 * v / scale`.
#[inline]
pub fn scale_value(v: f64, scale: f64) -> f64 {
    -1.0 + v / scale * 2.0
}

pub fn normalize_joints(seq: &PoseSequence, scales: &ScaleSeries) -> Result<NormalizedPoseSequence> {
    if seq.len() != scales.len() {
        return Err(Error::shape(format!(
            "pose length {} != scale length {}",
            seq.len(),
            scales.len()
        )));
    }
    let mut joints = Vec::with_capacity(seq.len());
    for (t, frame) in seq.frames().iter().enumerate() {
        let s = scales.scale[t];
        if !(s > 0.0) {
            return Err(Error::DegeneratePose(format!("scale {s} at sample {t}")));
        }
        let hip = frame[Joint::MidHip.index()];
        let mut out = [Point::new(-1.0, -1.0); NUM_JOINTS];
        for (j, p) in frame.iter().enumerate() {
            if j == Joint::MidHip.index() {
                continue;
            }
            let q = Point::new(scale_value(p.x - hip.x, s), scale_value(p.y - hip.y, s));
            if !q.x.is_finite() || !q.y.is_finite() {
                return Err(Error::invalid(format!("non-finite normalised joint at sample {t}")));
            }
            out[j] = q;
        }
        joints.push(out);
    }
    Ok(NormalizedPoseSequence {
        joints,
        speed: scales.speed.clone(),
        speed_deriv: scales.speed_deriv.clone(),
    })
}

/// Convenience: scale series followed by normalisation.
pub fn normalize_sequence(seq: &PoseSequence) -> Result<NormalizedPoseSequence> {
    let scales = compute_scale_series(seq)?;
    normalize_joints(seq, &scales)
}

/// Input layout of one regression window: 16 rows of
/// `[j0.x, j0.y, j1.x, j1.y, ..., speed, 0, speed_deriv, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionWindow {
    pub joint_count: usize,
    /// Row-major `(16, (joint_count + 2) * 2)`.
    pub values: Vec<f64>,
}

impl RegressionWindow {
    pub fn shape(&self) -> (usize, usize, usize) {
        (REGRESSION_WINDOW, self.joint_count + 2, 2)
    }

    pub fn channels(&self) -> usize {
        (self.joint_count + 2) * 2
    }
}

/// Fills one window's feature rows for `joints`, starting at `start`.
pub fn window_features(
    norm: &NormalizedPoseSequence,
    joints: &[Joint],
    start: usize,
    len: usize,
    out: &mut Vec<f64>,
) {
    for t in start..start + len {
        for &j in joints {
            let p = norm.joints[t][j.index()];
            out.push(p.x);
            out.push(p.y);
        }
        out.push(norm.speed[t]);
        out.push(0.0);
        out.push(norm.speed_deriv[t]);
        out.push(0.0);
    }
}

/// Step-1 windows over `norm` with the given joint subset, paired with
/// their centre sample index.
pub fn make_regression_windows_for<'a>(
    norm: &'a NormalizedPoseSequence,
    joints: &'a [Joint],
) -> impl Iterator<Item = (RegressionWindow, usize)> + 'a {
    let count = norm.len().saturating_sub(REGRESSION_WINDOW - 1);
    if count == 0 {
        log::warn!(
            "sequence of {} samples is shorter than one regression window",
            norm.len()
        );
    }
    (0..count).map(move |start| {
        let mut values = Vec::with_capacity(REGRESSION_WINDOW * (joints.len() + 2) * 2);
        window_features(norm, joints, start, REGRESSION_WINDOW, &mut values);
        (
            RegressionWindow {
                joint_count: joints.len(),
                values,
            },
            start + REGRESSION_WINDOW / 2,
        )
    })
}

/// Regression joint subsets, one per placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JointSets {
    pub left_wrist: Vec<Joint>,
    pub right_wrist: Vec<Joint>,
    pub left_calf: Vec<Joint>,
    pub right_calf: Vec<Joint>,
}

impl Default for JointSets {
    fn default() -> Self {
        JointSets {
            left_wrist: Placement::LeftWrist.default_joints(),
            right_wrist: Placement::RightWrist.default_joints(),
            left_calf: Placement::LeftCalf.default_joints(),
            right_calf: Placement::RightCalf.default_joints(),
        }
    }
}

impl JointSets {
    pub fn get(&self, placement: Placement) -> &[Joint] {
        match placement {
            Placement::LeftWrist => &self.left_wrist,
            Placement::RightWrist => &self.right_wrist,
            Placement::LeftCalf => &self.left_calf,
            Placement::RightCalf => &self.right_calf,
        }
    }
}

pub fn make_regression_windows(
    norm: &NormalizedPoseSequence,
    placement: Placement,
) -> Vec<(RegressionWindow, usize)> {
    let joints = placement.default_joints();
    make_regression_windows_for(norm, &joints).collect()
}
