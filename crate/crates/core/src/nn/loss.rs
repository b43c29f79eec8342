use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Scalar, ValueBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// Mean squared error over all elements, with its gradient.
pub fn mse_loss<T: Scalar>(pred: &ValueBlock<T>, target: &[T]) -> Result<(f64, ValueBlock<T>)> {
    if pred.data.is_empty() {
        return Err(Error::invalid("mse of empty input"));
    }
    if pred.data.len() != target.len() {
        return Err(Error::shape(format!(
            "prediction has {} values, target {}",
            pred.data.len(),
            target.len()
        )));
    }
    let n = pred.data.len() as f64;
    let scale = T::from_f64(2.0 / n);
    let mut sum = 0.0;
    let mut grad = pred.clone();
    for (g, (p, t)) in grad.data.iter_mut().zip(pred.data.iter().zip(target)) {
        let d = *p - *t;
        sum += d.to_f64() * d.to_f64();
        *g = d * scale;
    }
    Ok((sum / n, grad))
}

/// Softmax cross-entropy averaged over every `(batch, time)` position.
/// `labels` holds one class index per position.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &ValueBlock<T>,
    labels: &[usize],
) -> Result<(f64, ValueBlock<T>)> {
    let rows = logits.rows();
    if rows == 0 || logits.channels == 0 {
        return Err(Error::invalid("cross-entropy of empty input"));
    }
    if labels.len() != rows {
        return Err(Error::shape(format!("{} labels for {rows} positions", labels.len())));
    }
    let c = logits.channels;
    let inv_rows = T::from_f64(1.0 / rows as f64);
    let mut grad = logits.clone();
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::invalid(format!("label {label} outside {c} classes")));
        }
        let row = &logits.data[r * c..(r + 1) * c];
        let max = row.iter().copied().fold(row[0], |m, v| if v > m { v } else { m });
        let mut denom = T::ZERO;
        let g = &mut grad.data[r * c..(r + 1) * c];
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - max).exp();
            denom += *gi;
        }
        total += -((row[label] - max).to_f64() - denom.to_f64().ln());
        for gi in g.iter_mut() {
            *gi = *gi / denom * inv_rows;
        }
        g[label] -= inv_rows;
    }
    Ok((total / rows as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let pred = ValueBlock::from_vec(1, 3, 1, vec![1.0f64, 2.0, 3.0]).unwrap();
        assert_eq!(mse_loss(&pred, &[1.0, 2.0, 3.0]).unwrap().0, 0.0);
        assert_eq!(mse_loss(&pred, &[-1.0, 0.0, 1.0]).unwrap().0, 4.0);
        assert!(mse_loss(&pred, &[1.0]).is_err());
        let empty = ValueBlock::<f64>::zeros(0, 0, 1);
        assert!(mse_loss(&empty, &[]).is_err());
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = ValueBlock::from_vec(2, 3, 10, vec![0.7f64; 60]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 1, 2, 3, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - 2.302585).abs() < 1e-6);
        // gradient rows sum to zero
        for r in 0..6 {
            let s: f64 = grad.data[r * 10..(r + 1) * 10].iter().sum();
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let logits = ValueBlock::from_vec(1, 1, 2, vec![0.0f64, 0.0]).unwrap();
        assert!(softmax_cross_entropy(&logits, &[2]).is_err());
        assert!(softmax_cross_entropy(&logits, &[0, 1]).is_err());
    }

    #[test]
    fn cross_entropy_is_stable_for_large_logits() {
        let logits = ValueBlock::from_vec(1, 1, 2, vec![1000.0f32, -1000.0]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-6);
        let (loss, _) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!((loss - 2000.0).abs() < 1e-3);
    }
}
