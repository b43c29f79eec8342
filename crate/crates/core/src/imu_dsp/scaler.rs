use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard-scaling statistics of a training pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: f64,
    pub std: f64,
}

/// Population mean and standard deviation over all pooled samples.
pub fn fit_scaler<'a>(pool: impl IntoIterator<Item = &'a [f64]>) -> Result<ScalerParams> {
    let mut n = 0usize;
    let mut sum = 0.0;
    let slices: Vec<&[f64]> = pool.into_iter().collect();
    for s in &slices {
        n += s.len();
        sum += s.iter().sum::<f64>();
    }
    if n < 2 {
        return Err(Error::invalid(format!("scaler needs at least 2 samples, got {n}")));
    }
    let mean = sum / n as f64;
    let var = slices
        .iter()
        .flat_map(|s| s.iter())
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::invalid("scaler pool has zero variance"));
    }
    Ok(ScalerParams { mean, std })
}

pub fn apply_scaler(values: &[f64], params: &ScalerParams) -> Vec<f64> {
    values.iter().map(|v| (v - params.mean) / params.std).collect()
}

pub fn invert_scaler(values: &[f64], params: &ScalerParams) -> Vec<f64> {
    values.iter().map(|v| v * params.std + params.mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_pool() {
        let p = fit_scaler([&[0.0, 2.0][..]]).unwrap();
        assert_eq!(p, ScalerParams { mean: 1.0, std: 1.0 });
        assert_eq!(apply_scaler(&[2.0], &p), vec![1.0]);
    }

    #[test]
    fn zero_variance_rejected() {
        assert!(fit_scaler([&[3.0, 3.0, 3.0][..]]).is_err());
        assert!(fit_scaler([&[3.0][..]]).is_err());
    }

    #[test]
    fn scaled_pool_has_unit_moments() {
        let a = [1.0, 5.0, 2.5, -3.0];
        let b = [10.0, 0.25];
        let p = fit_scaler([&a[..], &b[..]]).unwrap();
        let scaled: Vec<f64> = apply_scaler(&a, &p).into_iter().chain(apply_scaler(&b, &p)).collect();
        let n = scaled.len() as f64;
        let mean = scaled.iter().sum::<f64>() / n;
        let var = scaled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var.sqrt() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn roundtrip_is_identity(xs in prop::collection::vec(-1e3f64..1e3, 2..64), mean in -50.0f64..50.0, std in 0.01f64..100.0) {
            let p = ScalerParams { mean, std };
            let back = invert_scaler(&apply_scaler(&xs, &p), &p);
            for (x, y) in xs.iter().zip(&back) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }

        #[test]
        fn extrema_positions_survive_scaling(xs in prop::collection::vec(-1e3f64..1e3, 2..64), mean in -50.0f64..50.0, std in 0.01f64..100.0) {
            let p = ScalerParams { mean, std };
            let ys = apply_scaler(&xs, &p);
            let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).unwrap().0;
            let argmin = |v: &[f64]| v.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0))).unwrap().0;
            prop_assert_eq!(argmax(&xs), argmax(&ys));
            prop_assert_eq!(argmin(&xs), argmin(&ys));
        }
    }
}
