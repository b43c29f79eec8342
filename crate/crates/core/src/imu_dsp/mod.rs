//! IMU recordings: CSV ingestion, resampling to the pose rate, channel
//! norms, low-pass filtering, standard scaling and time alignment.

mod filter;
mod scaler;
mod sync;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose_ingest::{grid_len, interp_linear};
use crate::skeleton::Placement;

pub use filter::{butterworth_lowpass, Biquad, ButterworthLowpass};
pub use scaler::{apply_scaler, fit_scaler, invert_scaler, ScalerParams};
pub use sync::{detect_sync_offset, find_peaks, Peak, SyncConfig};

/// Raw and derived sensor channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Ax,
    Ay,
    Az,
    Gx,
    Gy,
    Gz,
    Lax,
    Lay,
    Laz,
    AccNorm,
    GyrNorm,
    LinNorm,
}

impl Channel {
    pub const RAW: [Channel; 9] = [
        Channel::Ax,
        Channel::Ay,
        Channel::Az,
        Channel::Gx,
        Channel::Gy,
        Channel::Gz,
        Channel::Lax,
        Channel::Lay,
        Channel::Laz,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Ax => "ax",
            Channel::Ay => "ay",
            Channel::Az => "az",
            Channel::Gx => "gx",
            Channel::Gy => "gy",
            Channel::Gz => "gz",
            Channel::Lax => "lax",
            Channel::Lay => "lay",
            Channel::Laz => "laz",
            Channel::AccNorm => "acc_norm",
            Channel::GyrNorm => "gyr_norm",
            Channel::LinNorm => "lin_norm",
        }
    }

    /// Component channels a derived norm is computed from.
    pub fn components(self) -> Option<[Channel; 3]> {
        match self {
            Channel::AccNorm => Some([Channel::Ax, Channel::Ay, Channel::Az]),
            Channel::GyrNorm => Some([Channel::Gx, Channel::Gy, Channel::Gz]),
            Channel::LinNorm => Some([Channel::Lax, Channel::Lay, Channel::Laz]),
            _ => None,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Channel::RAW
            .into_iter()
            .chain([Channel::AccNorm, Channel::GyrNorm, Channel::LinNorm])
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown channel `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImuRecording {
    pub placement: Placement,
    pub timestamps: Vec<f64>,
    pub channels: BTreeMap<Channel, Vec<f64>>,
}

impl ImuRecording {
    pub fn new(
        placement: Placement,
        timestamps: Vec<f64>,
        channels: BTreeMap<Channel, Vec<f64>>,
    ) -> Result<Self> {
        for (i, w) in timestamps.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::CsvParse {
                    row: i + 2,
                    message: format!("timestamp {} does not increase after {}", w[1], w[0]),
                });
            }
        }
        for (c, v) in &channels {
            if v.len() != timestamps.len() {
                return Err(Error::shape(format!(
                    "channel {c} has {} samples for {} timestamps",
                    v.len(),
                    timestamps.len()
                )));
            }
        }
        Ok(ImuRecording {
            placement,
            timestamps,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Mean sampling rate over the recording.
    pub fn native_rate(&self) -> f64 {
        let n = self.timestamps.len();
        if n < 2 {
            return 0.0;
        }
        (n - 1) as f64 / (self.timestamps[n - 1] - self.timestamps[0])
    }

    /// Extracts a channel, computing derived norms from their components.
    ///
    /// Only valid on uniformly sampled recordings; the series starts at the
    /// first timestamp.
    pub fn series(&self, channel: Channel) -> Result<ChannelSeries> {
        let values = match (self.channels.get(&channel), channel.components()) {
            (Some(v), _) => v.clone(),
            (None, Some([x, y, z])) => {
                let get = |c: Channel| {
                    self.channels
                        .get(&c)
                        .ok_or_else(|| Error::invalid(format!("{channel} needs missing channel {c}")))
                };
                let (x, y, z) = (get(x)?, get(y)?, get(z)?);
                x.iter()
                    .zip(y)
                    .zip(z)
                    .map(|((a, b), c)| (a * a + b * b + c * c).sqrt())
                    .collect()
            }
            (None, None) => {
                return Err(Error::invalid(format!(
                    "channel {channel} missing from {} recording",
                    self.placement
                )))
            }
        };
        Ok(ChannelSeries {
            placement: self.placement,
            channel,
            rate: self.native_rate(),
            start: self.timestamps.first().copied().unwrap_or(0.0),
            values,
        })
    }
}

/// One uniformly sampled channel; sample `i` is at `start + i / rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSeries {
    pub placement: Placement,
    pub channel: Channel,
    pub rate: f64,
    pub start: f64,
    pub values: Vec<f64>,
}

impl ChannelSeries {
    pub fn new(placement: Placement, channel: Channel, rate: f64, values: Vec<f64>) -> Self {
        ChannelSeries {
            placement,
            channel,
            rate,
            start: 0.0,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.start + i as f64 / self.rate
    }

    pub fn with_values(&self, values: Vec<f64>) -> ChannelSeries {
        ChannelSeries {
            values,
            ..self.clone()
        }
    }
}

/// Parses the IMU CSV layout: header `t,ax,ay,az[,gx,gy,gz][,lax,lay,laz]`.
pub fn parse_imu_csv(raw: &[u8], placement: Placement) -> Result<ImuRecording> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(raw);
    let headers = reader
        .headers()
        .map_err(|e| Error::CsvParse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.get(0) != Some("t") {
        return Err(Error::CsvParse {
            row: 1,
            message: "first column must be `t`".into(),
        });
    }
    let mut columns = Vec::new();
    for name in headers.iter().skip(1) {
        let channel: Channel = name.parse().map_err(|_| Error::CsvParse {
            row: 1,
            message: format!("unknown column `{name}`"),
        })?;
        if channel.components().is_some() || columns.contains(&channel) {
            return Err(Error::CsvParse {
                row: 1,
                message: format!("column `{name}` not allowed or duplicated"),
            });
        }
        columns.push(channel);
    }
    let mut timestamps = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::CsvParse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != columns.len() + 1 {
            return Err(Error::CsvParse {
                row,
                message: format!("expected {} fields, found {}", columns.len() + 1, record.len()),
            });
        }
        let mut fields = record.iter().map(|f| {
            f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::CsvParse {
                row,
                message: format!("invalid number `{f}`"),
            })
        });
        let t = fields.next().expect("row has a timestamp")?;
        if let Some(&prev) = timestamps.last() {
            if !(t > prev) {
                return Err(Error::CsvParse {
                    row,
                    message: format!("timestamp {t} does not increase after {prev}"),
                });
            }
        }
        timestamps.push(t);
        for (col, v) in values.iter_mut().zip(fields) {
            col.push(v?);
        }
    }
    let channels = columns.into_iter().zip(values).collect();
    ImuRecording::new(placement, timestamps, channels)
}

/// Writes a recording in the CSV layout accepted by [`parse_imu_csv`].
pub fn write_imu_csv(rec: &ImuRecording) -> String {
    let cols: Vec<_> = rec
        .channels
        .keys()
        .filter(|c| c.components().is_none())
        .copied()
        .collect();
    let mut out = String::from("t");
    for c in &cols {
        out.push(',');
        out.push_str(c.name());
    }
    out.push('\n');
    for (i, t) in rec.timestamps.iter().enumerate() {
        out.push_str(&t.to_string());
        for c in &cols {
            out.push(',');
            out.push_str(&rec.channels[c][i].to_string());
        }
        out.push('\n');
    }
    out
}

fn resample_onto(rec: &ImuRecording, times: Vec<f64>) -> Result<ImuRecording> {
    let channels = rec
        .channels
        .iter()
        .map(|(c, v)| {
            let knots: Vec<(f64, f64)> = rec.timestamps.iter().copied().zip(v.iter().copied()).collect();
            (*c, times.iter().map(|&t| interp_linear(&knots, t)).collect())
        })
        .collect();
    ImuRecording::new(rec.placement, times, channels)
}

/// Linear interpolation onto a uniform grid starting at the first timestamp.
pub fn resample_linear(rec: &ImuRecording, target_rate: f64) -> Result<ImuRecording> {
    if rec.len() < 2 {
        return Err(Error::invalid("resampling needs at least two samples"));
    }
    let t0 = rec.timestamps[0];
    let n = grid_len(rec.timestamps[rec.len() - 1] - t0, target_rate);
    let times = (0..n).map(|k| t0 + k as f64 / target_rate).collect();
    resample_onto(rec, times)
}

/// Linear interpolation onto the absolute grid `k / rate` (video sample
/// times), restricted to the recording's time span. Returns the index of
/// the first grid sample.
pub fn resample_to_video_grid(rec: &ImuRecording, rate: f64) -> Result<(usize, ImuRecording)> {
    if rec.len() < 2 {
        return Err(Error::invalid("resampling needs at least two samples"));
    }
    let first = (rec.timestamps[0] * rate - 1e-9).ceil().max(0.0) as i64;
    let last = (rec.timestamps[rec.len() - 1] * rate + 1e-9).floor() as i64;
    if last < first {
        return Err(Error::invalid("recording does not overlap the video time axis"));
    }
    let times = (first..=last).map(|k| k as f64 / rate).collect();
    Ok((first as usize, resample_onto(rec, times)?))
}

/// Resamples onto the `n`-sample grid `start + k / rate` of a pose
/// sequence. Grid points up to one sample beyond the recording take the
/// nearest edge value; anything further out is an error.
pub fn resample_to_pose_grid(rec: &ImuRecording, start: f64, rate: f64, n: usize) -> Result<ImuRecording> {
    if rec.len() < 2 {
        return Err(Error::invalid("resampling needs at least two samples"));
    }
    let (t0, t1) = (rec.timestamps[0], rec.timestamps[rec.len() - 1]);
    let end = start + (n.max(1) - 1) as f64 / rate;
    let slack = 1.0 / rate + 1e-9;
    if start < t0 - slack || end > t1 + slack {
        return Err(Error::invalid(format!(
            "{} sensor covers [{t0:.3}, {t1:.3}] s, video needs [{start:.3}, {end:.3}] s",
            rec.placement
        )));
    }
    resample_onto(rec, (0..n).map(|k| start + k as f64 / rate).collect())
}

/// Per-sample Euclidean norm of three equally long series.
pub fn channel_norm(x: &[f64], y: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() || x.len() != z.len() {
        return Err(Error::shape(format!(
            "norm components have lengths {}, {}, {}",
            x.len(),
            y.len(),
            z.len()
        )));
    }
    Ok(x.iter()
        .zip(y)
        .zip(z)
        .map(|((a, b), c)| (a * a + b * b + c * c).sqrt())
        .collect())
}

/// Shifts sensor timestamps onto the video clock: `t_video = t_sensor + offset`.
pub fn align_recording(rec: &ImuRecording, offset: f64) -> ImuRecording {
    ImuRecording {
        placement: rec.placement,
        timestamps: rec.timestamps.iter().map(|t| t + offset).collect(),
        channels: rec.channels.clone(),
    }
}


/// Low-pass stage applied to sensor signals before training or windowing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum FilterPolicy {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "8hz")]
    Lowpass8,
    #[serde(rename = "12hz")]
    Lowpass12,
}

/// Order of every low-pass stage in the pipeline.
pub const FILTER_ORDER: usize = 6;

impl FilterPolicy {
    pub fn cutoff(self) -> Option<f64> {
        match self {
            FilterPolicy::None => None,
            FilterPolicy::Lowpass8 => Some(8.0),
            FilterPolicy::Lowpass12 => Some(12.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FilterPolicy::None => "none",
            FilterPolicy::Lowpass8 => "8hz",
            FilterPolicy::Lowpass12 => "12hz",
        }
    }

    pub fn apply(self, s: &ChannelSeries) -> Result<ChannelSeries> {
        match self.cutoff() {
            None => Ok(s.clone()),
            Some(fc) => butterworth_lowpass(s, fc, FILTER_ORDER),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerPolicy {
    None,
    #[default]
    Standard,
}
