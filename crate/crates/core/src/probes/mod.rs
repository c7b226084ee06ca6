//! Linear probes over frozen representations.
//!
//! The word-type probe is a logistic regression trained with binary
//! cross-entropy; the word-length probe is a linear regression trained with
//! mean squared error. Both start from zero parameters and are optimized
//! with minibatch Adam over seed-shuffled data. Features are used raw.

pub mod adam;
pub mod metrics;

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use metrics::{rounded_accuracy, weighted_f1};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Logistic,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    WeightedF1,
    RoundedAccuracy,
}

impl ProbeKind {
    pub fn metric(self) -> Metric {
        match self {
            ProbeKind::Logistic => Metric::WeightedF1,
            ProbeKind::Linear => Metric::RoundedAccuracy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeScore {
    pub metric: Metric,
    pub value: f64,
}

/// Serialized flat, with the Adam settings alongside the loop settings.
/// Omitted fields take their defaults; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "FlatTrainConfig")]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub shuffle_seed: u64,
}

// `flatten` and `deny_unknown_fields` do not combine, so parsing goes
// through this flat mirror.
#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FlatTrainConfig {
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    shuffle_seed: u64,
}

impl Default for FlatTrainConfig {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.adam.learning_rate,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            epsilon: d.adam.epsilon,
            shuffle_seed: d.shuffle_seed,
        }
    }
}

impl From<FlatTrainConfig> for TrainConfig {
    fn from(f: FlatTrainConfig) -> Self {
        Self {
            epochs: f.epochs,
            batch_size: f.batch_size,
            adam: AdamConfig {
                learning_rate: f.learning_rate,
                beta1: f.beta1,
                beta2: f.beta2,
                epsilon: f.epsilon,
            },
            shuffle_seed: f.shuffle_seed,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 8,
            adam: AdamConfig::default(),
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.shuffle_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub kind: ProbeKind,
    pub weights: DVector<f64>,
    pub bias: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProbeSidecar {
    dim: usize,
    kind: ProbeKind,
    layout: String,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl ProbeModel {
    pub fn zeros(kind: ProbeKind, dim: usize) -> Self {
        Self {
            kind,
            weights: DVector::zeros(dim),
            bias: 0.0,
        }
    }

    fn from_params(kind: ProbeKind, params: &[f64]) -> Self {
        let (w, b) = params.split_at(params.len() - 1);
        Self {
            kind,
            weights: DVector::from_column_slice(w),
            bias: b[0],
        }
    }

    fn params(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.weights.iter().copied().collect();
        p.push(self.bias);
        p
    }

    /// Linear scores `X w + b`.
    pub fn decision(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} features", self.weights.len()),
                got: format!("{} features", x.ncols()),
            });
        }
        Ok((x * &self.weights).add_scalar(self.bias))
    }

    /// Class labels (0/1) for logistic probes, raw regression outputs for
    /// linear probes.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let z = self.decision(x)?;
        Ok(match self.kind {
            ProbeKind::Logistic => z.iter().map(|&v| if sigmoid(v) >= 0.5 { 1.0 } else { 0.0 }).collect(),
            ProbeKind::Linear => z.iter().copied().collect(),
        })
    }

    pub fn score(&self, x: &DMatrix<f64>, labels: &[i64]) -> Result<ProbeScore> {
        let pred = self.predict(x)?;
        let value = match self.kind {
            ProbeKind::Logistic => {
                let pred: Vec<i64> = pred.iter().map(|&p| p as i64).collect();
                weighted_f1(labels, &pred)?
            }
            ProbeKind::Linear => rounded_accuracy(labels, &pred)?,
        };
        Ok(ProbeScore {
            metric: self.kind.metric(),
            value,
        })
    }

    /// Writes `probe.bin` (weights then bias, little-endian f64) and
    /// `probe.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bytes: Vec<u8> = self.params().iter().flat_map(|v| v.to_le_bytes()).collect();
        let bin = dir.join("probe.bin");
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        let sidecar = ProbeSidecar {
            dim: self.weights.len(),
            kind: self.kind,
            layout: "f64 little-endian: weights[0..dim], bias".into(),
        };
        let json = dir.join("probe.json");
        fs::write(&json, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&json, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let json = dir.join("probe.json");
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let sidecar: ProbeSidecar = serde_json::from_str(&text)?;
        let bin = dir.join("probe.bin");
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        if bytes.len() != (sidecar.dim + 1) * 8 {
            return Err(Error::Validation(format!("probe.bin holds {} bytes", bytes.len())));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self::from_params(sidecar.kind, &params))
    }
}

/// Mean loss over the rows `idx` and its gradient with respect to
/// `params = [weights..., bias]`.
pub fn loss_and_grad(
    kind: ProbeKind,
    params: &[f64],
    x: &DMatrix<f64>,
    y: &[f64],
    idx: &[usize],
) -> (f64, Vec<f64>) {
    let d = x.ncols();
    debug_assert_eq!(params.len(), d + 1);
    let (w, b) = (&params[..d], params[d]);
    let mut grad = vec![0.0; d + 1];
    let mut loss = 0.0;
    for &i in idx {
        let row = x.row(i);
        let z = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        let residual = match kind {
            ProbeKind::Logistic => {
                loss += softplus(z) - y[i] * z;
                sigmoid(z) - y[i]
            }
            ProbeKind::Linear => {
                let r = z - y[i];
                loss += r * r;
                2.0 * r
            }
        };
        for (g, a) in grad.iter_mut().zip(row.iter()) {
            *g += residual * a;
        }
        grad[d] += residual;
    }
    let m = idx.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= m);
    (loss / m, grad)
}

fn check_labels(kind: ProbeKind, labels: &[i64]) -> Result<()> {
    let bad = match kind {
        ProbeKind::Logistic => labels.iter().find(|&&l| l != 0 && l != 1),
        ProbeKind::Linear => labels.iter().find(|&&l| l < 1),
    };
    match bad {
        Some(l) => Err(Error::LabelDomain(format!("label {l} invalid for {kind:?} probe"))),
        None => Ok(()),
    }
}

/// Trains a probe for exactly `epochs * ceil(n / batch_size)` Adam steps.
/// The data order is reshuffled every epoch; the final partial batch is kept.
pub fn train_probe(kind: ProbeKind, x: &DMatrix<f64>, labels: &[i64], config: &TrainConfig) -> Result<ProbeModel> {
    config.validate()?;
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} labels", x.nrows()),
            got: labels.len().to_string(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("probe training data"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("probe features".into()));
    }
    check_labels(kind, labels)?;
    if labels.len() < config.batch_size {
        log::warn!("training set of {} rows is smaller than one batch", labels.len());
    }

    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let mut params = vec![0.0; x.ncols() + 1];
    let mut state = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let (_, grad) = loss_and_grad(kind, &params, x, &y, batch);
            adam_step(&mut params, &grad, &mut state, &config.adam)?;
        }
    }
    Ok(ProbeModel::from_params(kind, &params))
}

/// Number of resamples averaged by [`random_baseline`] unless overridden.
pub const BASELINE_RESAMPLES: usize = 100;

/// Score of label-only guessing. The logistic baseline samples predictions
/// from the train-split class prior; the linear baseline samples uniformly
/// from the distinct train-split values. Averaged over `resamples` draws.
pub fn random_baseline(
    kind: ProbeKind,
    train_labels: &[i64],
    test_labels: &[i64],
    seed: u64,
    resamples: usize,
) -> Result<ProbeScore> {
    if train_labels.is_empty() || test_labels.is_empty() {
        return Err(Error::Empty("baseline labels"));
    }
    let resamples = resamples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<i64> = match kind {
        ProbeKind::Logistic => train_labels.to_vec(),
        ProbeKind::Linear => metrics::distinct(train_labels),
    };
    let mut total = 0.0;
    for _ in 0..resamples {
        let pred: Vec<i64> = (0..test_labels.len())
            .map(|_| *pool.choose(&mut rng).expect("non-empty pool"))
            .collect();
        total += match kind {
            ProbeKind::Logistic => weighted_f1(test_labels, &pred)?,
            ProbeKind::Linear => metrics::accuracy(test_labels, &pred),
        };
    }
    Ok(ProbeScore {
        metric: kind.metric(),
        value: total / resamples as f64,
    })
}
