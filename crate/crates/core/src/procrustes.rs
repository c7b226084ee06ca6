//! Orthogonal Procrustes alignment between composed and whole-word spaces.
//!
//! Rows are examples. For `n x d` matrices `X` (composed) and `Y` (whole
//! word) the fitted map `W` minimizes `||X W - Y||_F` over orthogonal `W`.
//! With the cross-covariance `X^T Y = U S V^T`, the minimizer is
//! `W = U V^T`. No centering or scaling is applied.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tag written next to serialized maps so readers know how to apply them.
pub const CONVENTION: &str = "row-vector: mapped = X * W; W = U V^T with X^T Y = U S V^T";

#[derive(Debug, Clone, PartialEq)]
pub struct ProcrustesMap {
    /// `d x d`, orthogonal.
    pub w: DMatrix<f64>,
    /// Singular values of the cross-covariance, descending.
    pub singular_values: Vec<f64>,
    /// `||X W - Y||_F` on the fitting data.
    pub train_residual: f64,
    /// Set when the cross-covariance is rank deficient and the minimizer is
    /// not unique.
    pub degenerate: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct MapSidecar {
    convention: String,
    degenerate: bool,
    dim: usize,
    singular_values: Vec<f64>,
    train_residual: f64,
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<ProcrustesMap> {
    if x.shape() != y.shape() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", x.nrows(), x.ncols()),
            got: format!("{}x{}", y.nrows(), y.ncols()),
        });
    }
    let (n, d) = x.shape();
    if d == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
    }
    if n == 0 {
        return Err(Error::Empty("procrustes fit needs at least one row"));
    }
    check_finite(x, "composed matrix")?;
    check_finite(y, "whole-word matrix")?;

    let cross = x.transpose() * y;
    let svd = cross.svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let w = u * v_t;

    let mut singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let top = singular_values.first().copied().unwrap_or(0.0);
    let tol = top * d as f64 * f64::EPSILON;
    let degenerate = singular_values.iter().any(|&s| s <= tol);
    let train_residual = residual(&w, x, y);

    Ok(ProcrustesMap {
        w,
        singular_values,
        train_residual,
        degenerate,
    })
}

/// `||X W - Y||_F`.
pub fn residual(w: &DMatrix<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    (x * w - y).norm()
}

/// Largest absolute entry of `W^T W - I`.
pub fn orthogonality_error(w: &DMatrix<f64>) -> f64 {
    let d = w.ncols();
    (w.transpose() * w - DMatrix::<f64>::identity(d, d)).amax()
}

impl ProcrustesMap {
    pub fn identity(d: usize) -> Self {
        Self {
            w: DMatrix::identity(d, d),
            singular_values: vec![1.0; d],
            train_residual: 0.0,
            degenerate: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} columns", self.dim()),
                got: format!("{} columns", x.ncols()),
            });
        }
        Ok(x * &self.w)
    }

    /// Writes `W` as row-major little-endian f64 (`map.bin`) plus a JSON
    /// sidecar (`map.json`) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bytes = Vec::with_capacity(self.w.len() * 8);
        for row in self.w.row_iter() {
            for v in row.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let bin = dir.join("map.bin");
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let sidecar = MapSidecar {
            convention: CONVENTION.into(),
            degenerate: self.degenerate,
            dim: self.dim(),
            singular_values: self.singular_values.clone(),
            train_residual: self.train_residual,
        };
        let json = dir.join("map.json");
        fs::write(&json, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&json, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let json = dir.join("map.json");
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let sidecar: MapSidecar = serde_json::from_str(&text)?;
        let bin = dir.join("map.bin");
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let d = sidecar.dim;
        if bytes.len() != d * d * 8 {
            return Err(Error::Validation(format!("map.bin holds {} bytes, expected {}", bytes.len(), d * d * 8)));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self {
            w: DMatrix::from_row_slice(d, d, &values),
            singular_values: sidecar.singular_values,
            train_residual: sidecar.train_residual,
            degenerate: sidecar.degenerate,
        })
    }
}
