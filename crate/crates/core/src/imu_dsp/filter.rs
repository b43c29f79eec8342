use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::ChannelSeries;

/// Second-order section in transposed direct form II, `a0` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Runs the section over `x` in place, starting from the steady state
    /// of a constant input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let dc = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let y0 = dc * x0;
        let mut s2 = b2 * x0 - a2 * y0;
        let mut s1 = b1 * x0 - a1 * y0 + s2;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + s1;
            s1 = b1 * input - a1 * y + s2;
            s2 = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Digital Butterworth low-pass as a cascade of biquads (plus one first-order
/// section for odd orders), obtained by the prewarped bilinear transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ButterworthLowpass {
    pub sections: Vec<Biquad>,
}

impl ButterworthLowpass {
    pub fn design(order: usize, cutoff: f64, rate: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("filter order must be at least 1"));
        }
        if !(cutoff > 0.0) || !(cutoff < rate / 2.0) {
            return Err(Error::invalid(format!(
                "cutoff {cutoff} Hz must lie in (0, {}) Hz at rate {rate} Hz",
                rate / 2.0
            )));
        }
        let k = (PI * cutoff / rate).tan();
        let k2 = k * k;
        let mut sections = Vec::new();
        for i in 0..order / 2 {
            // analog pole pair at angle theta from the negative real axis
            let theta = PI * (2 * i + 1) as f64 / (2 * order) as f64;
            let q = 1.0 / (2.0 * theta.cos());
            let norm = 1.0 / (1.0 + k / q + k2);
            let b0 = k2 * norm;
            sections.push(Biquad {
                b: [b0, 2.0 * b0, b0],
                a: [2.0 * (k2 - 1.0) * norm, (1.0 - k / q + k2) * norm],
            });
        }
        if order % 2 == 1 {
            let norm = 1.0 / (1.0 + k);
            sections.push(Biquad {
                b: [k * norm, k * norm, 0.0],
                a: [(k - 1.0) * norm, 0.0],
            });
        }
        Ok(ButterworthLowpass { sections })
    }

    /// Causal single pass; output length equals input length.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.run(&mut y);
        }
        y
    }
}

pub fn butterworth_lowpass(s: &ChannelSeries, cutoff: f64, order: usize) -> Result<ChannelSeries> {
    let filter = ButterworthLowpass::design(order, cutoff, s.rate)?;
    Ok(s.with_values(filter.apply(&s.values)))
}
