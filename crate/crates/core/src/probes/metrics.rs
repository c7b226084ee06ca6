use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Per-class F1 averaged with weights equal to each class's share of
/// `y_true`. A class whose precision or recall is undefined scores 0.
pub fn weighted_f1<T: Ord>(y_true: &[T], y_pred: &[T]) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::Empty("weighted_f1 labels"));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len().to_string(),
            got: y_pred.len().to_string(),
        });
    }

    #[derive(Default)]
    struct Tally {
        tp: usize,
        fp: usize,
        fn_: usize,
        support: usize,
    }

    let mut tallies: BTreeMap<&T, Tally> = BTreeMap::new();
    for (t, p) in y_true.iter().zip(y_pred) {
        tallies.entry(t).or_default().support += 1;
        if t == p {
            tallies.entry(t).or_default().tp += 1;
        } else {
            tallies.entry(t).or_default().fn_ += 1;
            tallies.entry(p).or_default().fp += 1;
        }
    }

    let n = y_true.len() as f64;
    let score = tallies
        .values()
        .filter(|c| c.support > 0)
        .map(|c| {
            let f1 = if c.tp == 0 {
                0.0
            } else {
                2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64
            };
            f1 * c.support as f64 / n
        })
        .sum::<f64>();
    Ok(score.clamp(0.0, 1.0))
}

/// Fraction of predictions that round (half away from zero) to the truth.
pub fn rounded_accuracy(y_true: &[i64], y_pred: &[f64]) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::Empty("rounded_accuracy labels"));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len().to_string(),
            got: y_pred.len().to_string(),
        });
    }
    let hits = y_true
        .iter()
        .zip(y_pred)
        .filter(|(&t, &p)| p.is_finite() && p.round() == t as f64)
        .count();
    Ok(hits as f64 / y_true.len() as f64)
}

pub fn accuracy<T: PartialEq>(y_true: &[T], y_pred: &[T]) -> f64 {
    if y_true.is_empty() {
        return 0.0;
    }
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    hits as f64 / y_true.len() as f64
}

pub(crate) fn distinct<T: Ord + Copy>(xs: &[T]) -> Vec<T> {
    xs.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}
