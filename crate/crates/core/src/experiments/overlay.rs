use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu_dsp::ChannelSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlaySummary {
    pub samples: usize,
    pub mse: f64,
    /// `None` when either series is constant.
    pub pearson: Option<f64>,
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let denom = (saa * sbb).sqrt();
    (denom > 0.0).then(|| (sab / denom).clamp(-1.0, 1.0))
}

pub fn compare(real: &ChannelSeries, simulated: &ChannelSeries) -> Result<OverlaySummary> {
    if real.len() != simulated.len() {
        return Err(Error::shape(format!(
            "real series has {} samples, simulated {}",
            real.len(),
            simulated.len()
        )));
    }
    if real.is_empty() {
        return Err(Error::invalid("nothing to compare"));
    }
    Ok(OverlaySummary {
        samples: real.len(),
        mse: mse(&real.values, &simulated.values),
        pearson: pearson(&real.values, &simulated.values),
    })
}

fn polyline(values: &[f64], lo: f64, hi: f64, w: f64, h: f64, margin: f64, colour: &str) -> String {
    let n = values.len().max(2) - 1;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut pts = String::new();
    for (i, v) in values.iter().enumerate() {
        let x = margin + w * i as f64 / n as f64;
        let y = margin + h * (1.0 - (v - lo) / span);
        let _ = write!(pts, "{x:.2},{y:.2} ");
    }
    format!(
        "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.2\" points=\"{}\"/>\n",
        pts.trim_end()
    )
}

/// Line plot of both series, real in red and simulated in blue.
pub fn overlay_svg(real: &ChannelSeries, simulated: &ChannelSeries) -> String {
    let (w, h, m) = (900.0, 300.0, 40.0);
    let all = real.values.iter().chain(&simulated.values);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        w + 2.0 * m,
        h + 2.0 * m,
        w + 2.0 * m,
        h + 2.0 * m
    );
    let _ = writeln!(
        svg,
        "<rect x=\"{m}\" y=\"{m}\" width=\"{w}\" height=\"{h}\" fill=\"white\" stroke=\"#888\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{m}\" y=\"{:.0}\" font-size=\"12\">{}.{}: real (red) vs simulated (blue), range [{lo:.3}, {hi:.3}]</text>",
        m - 10.0,
        real.placement,
        real.channel
    );
    svg.push_str(&polyline(&real.values, lo, hi, w, h, m, "#d62728"));
    svg.push_str(&polyline(&simulated.values, lo, hi, w, h, m, "#1f77b4"));
    svg.push_str("</svg>\n");
    svg
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `<stem>.csv`, `<stem>.svg` and `<stem>.json` into `dir`.
pub fn emit_signal_overlay(
    real: &ChannelSeries,
    simulated: &ChannelSeries,
    dir: &Path,
    stem: &str,
) -> Result<(OverlaySummary, Vec<PathBuf>)> {
    let summary = compare(real, simulated)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from("t,real,simulated\n");
    for (i, (a, b)) in real.values.iter().zip(&simulated.values).enumerate() {
        let _ = writeln!(csv, "{},{a},{b}", real.time(i));
    }
    let paths = [
        dir.join(format!("{stem}.csv")),
        dir.join(format!("{stem}.svg")),
        dir.join(format!("{stem}.json")),
    ];
    write(&paths[0], csv.as_bytes())?;
    write(&paths[1], overlay_svg(real, simulated).as_bytes())?;
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::invalid(e.to_string()))?;
    write(&paths[2], json.as_bytes())?;
    Ok((summary, paths.to_vec()))
}
