//! Exact cosine nearest-neighbour retrieval scored as Precision@k.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub p_at_1: f64,
    pub p_at_k: BTreeMap<usize, f64>,
    /// 1-based rank of each query's target among the candidates.
    pub per_item_rank: Vec<usize>,
}

impl RetrievalResult {
    pub fn from_ranks(per_item_rank: Vec<usize>, ks: &[usize]) -> Self {
        let n = per_item_rank.len().max(1) as f64;
        let frac = |k: usize| per_item_rank.iter().filter(|&&r| r <= k).count() as f64 / n;
        let p_at_k = ks.iter().map(|&k| (k, frac(k))).collect();
        Self {
            p_at_1: frac(1),
            p_at_k,
            per_item_rank,
        }
    }

    /// Precision@1 restricted to the queries selected by `mask`.
    pub fn p_at_1_over(&self, mask: &[bool]) -> f64 {
        let (hits, total) = self
            .per_item_rank
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .fold((0usize, 0usize), |(h, t), (&r, _)| (h + usize::from(r == 1), t + 1));
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    }
}

fn row_norms(m: &DMatrix<f64>) -> Vec<f64> {
    m.row_iter().map(|r| r.norm()).collect()
}

/// Ranks `targets[i]` among all rows of `candidates` by cosine similarity to
/// query row `i`. Ties go to the lower candidate index. A zero query scores
/// the worst rank, `candidates.nrows()`.
pub fn rank_targets(queries: &DMatrix<f64>, candidates: &DMatrix<f64>, targets: &[usize]) -> Result<Vec<usize>> {
    if queries.ncols() != candidates.ncols() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} columns", candidates.ncols()),
            got: format!("{} columns", queries.ncols()),
        });
    }
    if queries.nrows() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} targets", queries.nrows()),
            got: targets.len().to_string(),
        });
    }
    let m = candidates.nrows();
    if m == 0 {
        return Err(Error::Empty("retrieval candidate set"));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= m) {
        return Err(Error::InvalidArgument(format!("target index {t} outside {m} candidates")));
    }
    if queries.iter().chain(candidates.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("retrieval input".into()));
    }
    let cand_norms = row_norms(candidates);
    if let Some(j) = cand_norms.iter().position(|&n| n == 0.0) {
        return Err(Error::InvalidArgument(format!("candidate row {j} has zero norm")));
    }
    let query_norms = row_norms(queries);
    let zero_queries = query_norms.iter().filter(|&&n| n == 0.0).count();
    if zero_queries > 0 {
        log::warn!("{zero_queries} zero-norm queries scored with the worst rank {m}");
    }

    // Plain sequential dot products: identical candidate rows must score
    // identically for the tie rule to hold, which blocked matrix products
    // do not guarantee. Query norms are dropped: they scale every
    // similarity of a query equally.
    let cand_rows: Vec<Vec<f64>> = candidates.row_iter().map(|r| r.iter().copied().collect()).collect();
    let ranks = (0..queries.nrows())
        .into_par_iter()
        .map(|i| {
            if query_norms[i] == 0.0 {
                return m;
            }
            let q: Vec<f64> = queries.row(i).iter().copied().collect();
            let sims: Vec<f64> = cand_rows
                .iter()
                .zip(&cand_norms)
                .map(|(c, n)| c.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / n)
                .collect();
            let target = targets[i];
            let t_sim = sims[target];
            1 + sims
                .iter()
                .enumerate()
                .filter(|&(j, &s)| s > t_sim || (s == t_sim && j < target))
                .count()
        })
        .collect();
    Ok(ranks)
}

/// Precision@k of `mapped_x` retrieving `y`, where row `i` of `y` is the
/// target of query `i` and all rows of `y` are candidates.
pub fn precision_at_k(mapped_x: &DMatrix<f64>, y: &DMatrix<f64>, ks: &[usize]) -> Result<RetrievalResult> {
    if mapped_x.shape() != y.shape() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", y.nrows(), y.ncols()),
            got: format!("{}x{}", mapped_x.nrows(), mapped_x.ncols()),
        });
    }
    let targets: Vec<usize> = (0..y.nrows()).collect();
    let ranks = rank_targets(mapped_x, y, &targets)?;
    Ok(RetrievalResult::from_ranks(ranks, ks))
}
