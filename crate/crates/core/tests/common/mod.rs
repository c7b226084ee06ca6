//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use subcomp::synthetic::{write_synthetic, SyntheticOutput, SyntheticSpec};
use subcomp::{ExperimentConfig, ModelSpec};

pub fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`. Both determinants occur.
pub fn random_orthogonal<R: Rng>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let qr = gaussian(rng, d, d).qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn synthetic(dir: &Path, spec: &SyntheticSpec) -> SyntheticOutput {
    write_synthetic(spec, dir).expect("synthetic store")
}

pub fn config_for(out: &SyntheticOutput) -> ExperimentConfig {
    let model = ModelSpec {
        name: "synthetic".into(),
        store: out.store_path.clone(),
        pair_store: Some(out.pair_store_path.clone()),
    };
    ExperimentConfig::new(vec![model], &out.dataset_path)
}

/// Brute-force 1-based rank of `target` among `candidates` by cosine to
/// `query`, ties to the lower index.
pub fn brute_force_rank(query: &[f64], candidates: &[Vec<f64>], target: usize) -> usize {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let qn = norm(query);
    if qn == 0.0 {
        return candidates.len();
    }
    let cos: Vec<f64> = candidates
        .iter()
        .map(|c| c.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() / norm(c))
        .collect();
    let t = cos[target];
    1 + cos
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count()
}
