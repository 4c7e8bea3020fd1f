use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self { n_classes, counts: vec![0; n_classes * n_classes] }
    }

    pub fn from_rows(rows: &[&[u64]]) -> Self {
        let c = rows.len();
        assert!(rows.iter().all(|r| r.len() == c), "confusion matrix must be square");
        Self { n_classes: c, counts: rows.concat() }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.n_classes).map(|c| self.get(c, c)).sum();
        ratio(diag as f64, self.total() as f64)
    }

    /// Elementwise sum.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.n_classes, other.n_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Tally unmasked `(label, pred)` pairs.
pub fn confusion(preds: &[usize], labels: &[usize], mask: &[bool], n_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() || preds.len() != mask.len() {
        return Err(Error::Format(format!("{} predictions, {} labels, {} mask entries", preds.len(), labels.len(), mask.len())));
    }
    let mut cm = ConfusionMatrix::new(n_classes);
    for ((&p, &y), &m) in preds.iter().zip(labels).zip(mask) {
        if m {
            continue;
        }
        for index in [p, y] {
            if index >= n_classes {
                return Err(Error::IndexOutOfRange { index, classes: n_classes });
            }
        }
        cm.counts[y * n_classes + p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Per-class precision, recall and F1; zero denominators give 0.
pub fn prf(cm: &ConfusionMatrix) -> Vec<Prf> {
    let c = cm.n_classes;
    (0..c)
        .map(|k| {
            let tp = cm.get(k, k) as f64;
            let predicted: u64 = (0..c).map(|t| cm.get(t, k)).sum();
            let actual: u64 = (0..c).map(|p| cm.get(k, p)).sum();
            let precision = ratio(tp, predicted as f64);
            let recall = ratio(tp, actual as f64);
            Prf { precision, recall, f1: ratio(2.0 * precision * recall, precision + recall) }
        })
        .collect()
}

/// Unweighted mean over classes.
pub fn macro_avg(per_class: &[Prf]) -> Prf {
    let n = per_class.len().max(1) as f64;
    Prf {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / n,
    }
}

pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    macro_avg(&prf(cm)).f1
}

/// Per-class means of per-fold metrics.
pub fn fold_mean(per_fold: &[Vec<Prf>]) -> Vec<Prf> {
    let Some(first) = per_fold.first() else { return Vec::new() };
    let n = per_fold.len() as f64;
    (0..first.len())
        .map(|c| Prf {
            precision: per_fold.iter().map(|f| f[c].precision).sum::<f64>() / n,
            recall: per_fold.iter().map(|f| f[c].recall).sum::<f64>() / n,
            f1: per_fold.iter().map(|f| f[c].f1).sum::<f64>() / n,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_values() {
        let cm = ConfusionMatrix::from_rows(&[&[8, 2], &[3, 7]]);
        let m = prf(&cm);
        assert!((m[0].precision - 8.0 / 11.0).abs() < 1e-15);
        assert!((m[0].recall - 0.8).abs() < 1e-15);
        assert!((m[0].f1 - 16.0 / 21.0).abs() < 1e-15);
        assert!((m[1].precision - 7.0 / 9.0).abs() < 1e-15);
        assert!((m[1].recall - 0.7).abs() < 1e-15);
        assert!((cm.accuracy() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cases() {
        let cm = confusion(&[0, 1, 1], &[0, 1, 1], &[false; 3], 3).unwrap();
        let m = prf(&cm);
        assert_eq!((m[0].f1, m[1].f1), (1.0, 1.0));
        assert_eq!(m[2], Prf::default());
        let cm = confusion(&[0, 1], &[1, 0], &[true, true], 2).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(matches!(confusion(&[3], &[0], &[false], 3), Err(Error::IndexOutOfRange { index: 3, .. })));
    }

    #[test]
    fn macro_means() {
        let m = |f1| Prf { precision: 0.0, recall: 0.0, f1 };
        assert!((macro_avg(&[m(0.8), m(0.6)]).f1 - 0.7).abs() < 1e-15);
        assert!((macro_avg(&[m(0.93), m(0.82), m(0.89)]).f1 - 0.88).abs() < 0.005);
    }
}
