use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of ranked lists whose positive sits in the first `k` places.
pub fn hit_rate_at_k(ranked: &[Vec<usize>], positives: &[usize], k: usize) -> Result<f64> {
    if ranked.len() != positives.len() {
        return Err(Error::InvalidArgument(format!(
            "{} ranked lists but {} positives",
            ranked.len(),
            positives.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if ranked.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (list, &pos) in ranked.iter().zip(positives) {
        if k > list.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} exceeds list length {}",
                list.len()
            )));
        }
        if list[..k].contains(&pos) {
            hits += 1;
        }
    }
    Ok(hits as f64 / ranked.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a zero denominator forced a metric to zero.
    pub degenerate: bool,
}

pub fn precision_recall_f1(predictions: &[bool], labels: &[bool]) -> Result<Classification> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let mut degenerate = false;
    let mut ratio = |num: usize, den: usize| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate = true;
        0.0
    };
    Ok(Classification {
        precision,
        recall,
        f1,
        degenerate,
    })
}

/// Sample mean and (n - 1) standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_rate_by_hand() {
        // positive ranked 1st, 3rd, 2nd
        let ranked = vec![vec![7, 1, 2], vec![1, 2, 7], vec![1, 7, 2]];
        let pos = [7, 7, 7];
        assert!((hit_rate_at_k(&ranked, &pos, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((hit_rate_at_k(&ranked, &pos, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(hit_rate_at_k(&ranked, &pos, 3).unwrap(), 1.0);
        assert!(hit_rate_at_k(&ranked, &pos, 4).is_err());
        assert!(hit_rate_at_k(&ranked, &pos, 0).is_err());
        assert!(hit_rate_at_k(&ranked, &pos[..2], 1).is_err());
    }

    #[test]
    fn classification_by_hand() {
        let c =
            precision_recall_f1(&[true, true, false, false], &[true, false, true, false]).unwrap();
        assert_eq!(
            (c.precision, c.recall, c.f1, c.degenerate),
            (0.5, 0.5, 0.5, false)
        );
        let labels = [true, false, true];
        let perfect = precision_recall_f1(&labels, &labels).unwrap();
        assert_eq!(
            (perfect.precision, perfect.recall, perfect.f1),
            (1.0, 1.0, 1.0)
        );
        let none = precision_recall_f1(&[false, false, false], &labels).unwrap();
        assert_eq!((none.recall, none.f1), (0.0, 0.0));
        assert!(none.degenerate);
        assert!(precision_recall_f1(&[true], &labels).is_err());
    }

    #[test]
    fn mean_sd_cases() {
        assert_eq!(mean_sd(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
