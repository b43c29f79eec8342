use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, shapes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|n| (vec![T::ZERO; n], vec![T::ZERO; n]))
            .unzip();
        AdamState { config, m, v, step: 0 }
    }

    /// Bias-corrected update of every parameter tensor in place.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam state has {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let c = &self.config;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one_b1 = T::from_f64(1.0 - c.beta1);
        let one_b2 = T::from_f64(1.0 - c.beta2);
        let corr1 = T::from_f64(1.0 / (1.0 - c.beta1.powi(self.step as i32)));
        let corr2 = T::from_f64(1.0 / (1.0 - c.beta2.powi(self.step as i32)));
        let lr = T::from_f64(c.lr);
        let eps = T::from_f64(c.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::shape("adam tensor size mismatch"));
            }
            for (((w, &gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi * corr1;
                let v_hat = *vi * corr2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_on_square() {
        let mut w = vec![1.0f64];
        let mut state = AdamState::new(AdamConfig::default(), [1]);
        let g = vec![2.0 * w[0]];
        state.step(&mut [w.as_mut_slice()], &[g.as_slice()]).unwrap();
        // m_hat = 2, v_hat = 4: step of lr * 2 / (2 + eps)
        let expected = 1.0 - 0.001 * (2.0 / (2.0 + 1e-8));
        assert!((w[0] - expected).abs() < 1e-15);
        assert!((w[0] - 0.999).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut w = vec![0.5f64, -0.25];
        let mut state = AdamState::new(AdamConfig::default(), [2]);
        state.step(&mut [w.as_mut_slice()], &[&[1.0, -1.0]]).unwrap();
        let after_first = w.clone();
        let (m0, v0) = (state.m[0].clone(), state.v[0].clone());
        // a zero gradient still moves the weights by the decaying momentum;
        // with fresh state it must not move them at all
        let mut fresh = AdamState::new(AdamConfig::default(), [2]);
        let mut w2 = after_first.clone();
        fresh.step(&mut [w2.as_mut_slice()], &[&[0.0, 0.0]]).unwrap();
        assert_eq!(w2, after_first);
        state.step(&mut [w.as_mut_slice()], &[&[0.0, 0.0]]).unwrap();
        for i in 0..2 {
            assert_eq!(state.m[0][i], 0.9 * m0[i]);
            assert_eq!(state.v[0][i], 0.999 * v0[i]);
        }
    }

    #[test]
    fn identical_runs_replay_bitwise() {
        let run = || {
            let mut w = vec![1.0f32, -2.0, 3.0];
            let mut state = AdamState::new(AdamConfig::default(), [3]);
            let mut trace = Vec::new();
            for step in 0..50 {
                let g: Vec<f32> = w.iter().map(|x| 2.0 * x + (step as f32 * 0.1).sin()).collect();
                state.step(&mut [w.as_mut_slice()], &[g.as_slice()]).unwrap();
                trace.extend(w.iter().map(|v| v.to_bits()));
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_tensors_rejected() {
        let mut w = vec![1.0f64];
        let mut state = AdamState::<f64>::new(AdamConfig::default(), [2]);
        assert!(state.step(&mut [w.as_mut_slice()], &[&[1.0]]).is_err());
    }
}
