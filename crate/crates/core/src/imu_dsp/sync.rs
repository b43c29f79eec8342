//! Sensor-to-video alignment from the stacked-sensor up/down gesture.
//!
//! The gesture produces a few sharp acceleration peaks; the matching video
//! frames are marked by hand (anchors). Peaks are paired with anchors in
//! temporal order and the constant offset is their mean time difference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ChannelSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncConfig {
    /// Minimum peak prominence as a multiple of the series' median absolute
    /// deviation.
    pub prominence_mads: f64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig { prominence_mads: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub index: usize,
    /// Sub-sample position from a parabola through the peak and its neighbours.
    pub position: f64,
    pub prominence: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Local maxima with their topographic prominence, in index order.
pub fn find_peaks(x: &[f64]) -> Vec<Peak> {
    let n = x.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            // walk across a flat top
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                let index = (i + j) / 2;
                peaks.push(Peak {
                    index,
                    position: refine(x, index),
                    prominence: prominence(x, i, j),
                });
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

fn refine(x: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= x.len() {
        return i as f64;
    }
    let (a, b, c) = (x[i - 1], x[i], x[i + 1]);
    let denom = a - 2.0 * b + c;
    if denom >= 0.0 {
        return i as f64;
    }
    i as f64 + (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
}

fn prominence(x: &[f64], left: usize, right: usize) -> f64 {
    let top = x[left];
    let mut left_min = top;
    for k in (0..left).rev() {
        if x[k] > top {
            break;
        }
        left_min = left_min.min(x[k]);
    }
    let mut right_min = top;
    for &v in &x[right + 1..] {
        if v > top {
            break;
        }
        right_min = right_min.min(v);
    }
    top - left_min.max(right_min)
}

/// Offset `t_video - t_sensor` in seconds; add it to sensor timestamps to
/// move them onto the video clock.
pub fn detect_sync_offset(
    acc_norm: &ChannelSeries,
    anchor_frames: &[usize],
    video_fps: f64,
    config: &SyncConfig,
) -> Result<f64> {
    if anchor_frames.len() < 3 {
        return Err(Error::invalid(format!(
            "sync needs at least 3 anchor frames, got {}",
            anchor_frames.len()
        )));
    }
    if !(video_fps > 0.0) {
        return Err(Error::invalid("video fps must be positive"));
    }
    let x = &acc_norm.values;
    let centre = median(x);
    let deviations: Vec<f64> = x.iter().map(|v| (v - centre).abs()).collect();
    let threshold = config.prominence_mads * median(&deviations);

    let mut peaks: Vec<Peak> = find_peaks(x)
        .into_iter()
        .filter(|p| p.prominence > threshold)
        .collect();
    let peak_times = |ps: &[Peak]| -> Vec<f64> {
        ps.iter()
            .map(|p| acc_norm.start + p.position / acc_norm.rate)
            .collect()
    };
    if peaks.len() < anchor_frames.len() {
        return Err(Error::Sync {
            anchors: anchor_frames.len(),
            peaks: peak_times(&peaks),
        });
    }
    peaks.sort_by(|a, b| b.prominence.total_cmp(&a.prominence).then(a.index.cmp(&b.index)));
    peaks.truncate(anchor_frames.len());
    peaks.sort_by_key(|p| p.index);

    let mut anchors: Vec<f64> = anchor_frames.iter().map(|&f| f as f64 / video_fps).collect();
    anchors.sort_by(f64::total_cmp);
    let sensor = peak_times(&peaks);
    let offset = anchors.iter().zip(&sensor).map(|(a, s)| a - s).sum::<f64>() / anchors.len() as f64;
    Ok(offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imu_dsp::Channel;
    use crate::skeleton::Placement;

    fn series(values: Vec<f64>) -> ChannelSeries {
        ChannelSeries::new(Placement::LeftWrist, Channel::AccNorm, 50.0, values)
    }

    fn impulses(times: &[f64], len: usize) -> Vec<f64> {
        let mut v = vec![9.81; len];
        for t in times {
            v[(t * 50.0).round() as usize] = 30.0;
        }
        v
    }

    #[test]
    fn constructed_half_second_offset() {
        let s = series(impulses(&[1.0, 2.0, 3.0], 250));
        let offset = detect_sync_offset(&s, &[75, 125, 175], 50.0, &SyncConfig::default()).unwrap();
        assert!((offset - 0.5).abs() < 1e-12, "{offset}");
    }

    #[test]
    fn coincident_anchors_give_zero() {
        let s = series(impulses(&[1.0, 2.0, 3.0], 250));
        let offset = detect_sync_offset(&s, &[50, 100, 150], 50.0, &SyncConfig::default()).unwrap();
        assert!(offset.abs() < 1e-12);
    }

    #[test]
    fn jittered_peaks_average_out() {
        // sensor peaks at the true video times shifted by -0.2 s, each
        // jittered by at most 10 ms through sub-sample bump placement
        let jitter = [0.008, -0.01, 0.004];
        let anchors = [60usize, 110, 170];
        let mut v = vec![9.81; 300];
        for (a, j) in anchors.iter().zip(jitter) {
            let centre = *a as f64 / 50.0 - 0.2 + j;
            for (i, x) in v.iter_mut().enumerate() {
                let dt = i as f64 / 50.0 - centre;
                *x += 20.0 * (-(dt * dt) / (2.0 * 0.03f64.powi(2))).exp();
            }
        }
        let offset = detect_sync_offset(&series(v), &anchors, 50.0, &SyncConfig::default()).unwrap();
        assert!((offset - 0.2).abs() <= 0.01, "{offset}");
    }

    #[test]
    fn too_few_peaks_lists_detected_times() {
        let s = series(impulses(&[1.0, 2.0], 250));
        match detect_sync_offset(&s, &[10, 20, 30], 50.0, &SyncConfig::default()) {
            Err(Error::Sync { anchors, peaks }) => {
                assert_eq!(anchors, 3);
                assert_eq!(peaks, vec![1.0, 2.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn prominence_of_nested_peaks() {
        let x = [0.0, 5.0, 2.0, 3.0, 1.0, 10.0, 0.0];
        let p = find_peaks(&x);
        let proms: Vec<(usize, f64)> = p.iter().map(|p| (p.index, p.prominence)).collect();
        // the left peak's right base stops at the higher peak, so its base is 1
        assert_eq!(proms, vec![(1, 4.0), (3, 1.0), (5, 10.0)]);
    }

    #[test]
    fn flat_top_peak_is_centred() {
        let x = [0.0, 1.0, 4.0, 4.0, 4.0, 1.0, 0.0];
        let p = find_peaks(&x);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].index, 3);
    }
}
