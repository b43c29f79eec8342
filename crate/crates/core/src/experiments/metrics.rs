use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Window-level classification scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    /// `confusion[truth][predicted]` window counts.
    pub confusion: Vec<Vec<usize>>,
    /// F1 per class, 0 when precision and recall are both 0.
    pub per_class: Vec<f64>,
    /// Classes occurring in the ground truth.
    pub present: Vec<bool>,
    /// Unweighted mean of `per_class` over present classes.
    pub macro_f1: f64,
}

pub fn confusion_matrix(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut m = vec![vec![0usize; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::invalid(format!("label outside {classes} classes")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Per-class F1 and macro mean from a confusion matrix.
pub fn f1_from_confusion(confusion: &[Vec<usize>]) -> F1Report {
    let k = confusion.len();
    let mut per_class = Vec::with_capacity(k);
    let mut present = Vec::with_capacity(k);
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(f1);
        present.push(support > 0);
    }
    let scored: Vec<f64> = per_class.iter().zip(&present).filter(|(_, p)| **p).map(|(f, _)| *f).collect();
    let macro_f1 = if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    F1Report {
        confusion: confusion.to_vec(),
        per_class,
        present,
        macro_f1,
    }
}

/// Macro F1 over the classes present in `truth`.
pub fn mean_f1(pred: &[usize], truth: &[usize], classes: usize) -> Result<F1Report> {
    if truth.is_empty() {
        return Err(Error::invalid("no windows to score"));
    }
    Ok(f1_from_confusion(&confusion_matrix(pred, truth, classes)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let t = [0, 1, 2, 2, 1];
        assert_eq!(mean_f1(&t, &t, 3).unwrap().macro_f1, 1.0);
    }

    #[test]
    fn single_predicted_class_over_ten_balanced() {
        let truth: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let r = mean_f1(&[0; 100], &truth, 10).unwrap();
        // class 0: precision 0.1, recall 1
        let expect = (2.0 * 0.1 / 1.1) / 10.0;
        assert!((r.macro_f1 - expect).abs() < 1e-12);
        assert!((r.macro_f1 - 0.0182).abs() < 1e-4);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let r = mean_f1(&[0, 1, 1], &[0, 1, 1], 5).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.present, vec![true, true, false, false, false]);
        // predicted but never true: scores 0 and stays out of the mean
        let r = mean_f1(&[0, 3], &[0, 0], 4).unwrap();
        assert_eq!(r.per_class[3], 0.0);
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(mean_f1(&[], &[], 2).is_err());
        assert!(mean_f1(&[0], &[0, 1], 2).is_err());
    }
}
