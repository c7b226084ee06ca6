//! Grid orchestration: models x layers x ops x runs, aggregated into
//! per-layer curves with mean and population standard deviation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compose::{compose_contextual_in_view, compose_in_view, whole_word_matrix, CompositionOp};
use crate::error::{Error, Result};
use crate::lexicon::{Category, DatasetSplit, LexiconEntry};
use crate::probes::{random_baseline, train_probe, ProbeKind, TrainConfig, BASELINE_RESAMPLES};
use crate::procrustes;
use crate::retrieval::{rank_targets, RetrievalResult};
use crate::store::{EmbeddingStore, LayerView, StoreKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryFilter {
    #[default]
    All,
    RootOnly,
    NonRootOnly,
}

impl CategoryFilter {
    pub fn name(self) -> &'static str {
        match self {
            CategoryFilter::All => "all",
            CategoryFilter::RootOnly => "root",
            CategoryFilter::NonRootOnly => "nonroot",
        }
    }

    pub fn admits(self, category: Category) -> bool {
        match self {
            CategoryFilter::All => true,
            CategoryFilter::RootOnly => category == Category::Root,
            CategoryFilter::NonRootOnly => category == Category::NonRoot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Isolated,
    Contextual,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Isolated => "isolated",
            Mode::Contextual => "contextual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Geometry,
    WordType,
    WordLength,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Geometry => "geometry",
            Task::WordType => "word_type",
            Task::WordLength => "word_length",
        }
    }

    fn probe_kind(self) -> Option<ProbeKind> {
        match self {
            Task::Geometry => None,
            Task::WordType => Some(ProbeKind::Logistic),
            Task::WordLength => Some(ProbeKind::Linear),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which whole-word vectors compete as retrieval candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalPool {
    #[default]
    Test,
    TrainAndTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Isolated store holding whole words and subwords.
    pub store: PathBuf,
    /// Pair store, required in contextual mode.
    #[serde(default)]
    pub pair_store: Option<PathBuf>,
}

fn default_ops() -> Vec<CompositionOp> {
    CompositionOp::ALL.to_vec()
}
fn default_runs() -> usize {
    3
}
fn default_resamples() -> usize {
    BASELINE_RESAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub models: Vec<ModelSpec>,
    pub dataset: PathBuf,
    #[serde(default = "default_ops")]
    pub ops: Vec<CompositionOp>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Defaults to `0..runs`.
    #[serde(default)]
    pub run_seeds: Vec<u64>,
    #[serde(default)]
    pub category_filter: CategoryFilter,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub task: Option<Task>,
    #[serde(default)]
    pub retrieval_pool: RetrievalPool,
    /// Fit one Procrustes map per category instead of filtering at scoring time.
    #[serde(default)]
    pub refit_per_category: bool,
    #[serde(default)]
    pub probe: TrainConfig,
    #[serde(default = "default_resamples")]
    pub baseline_resamples: usize,
    /// Restrict to these layers; all layers when absent.
    #[serde(default)]
    pub layers: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn new(models: Vec<ModelSpec>, dataset: impl Into<PathBuf>) -> Self {
        Self {
            models,
            dataset: dataset.into(),
            ops: default_ops(),
            runs: default_runs(),
            run_seeds: (0..default_runs() as u64).collect(),
            category_filter: CategoryFilter::All,
            mode: Mode::Isolated,
            task: None,
            retrieval_pool: RetrievalPool::Test,
            refit_per_category: false,
            probe: TrainConfig::default(),
            baseline_resamples: BASELINE_RESAMPLES,
            layers: None,
        }
    }

    /// Reads a JSON config. Relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = serde_json::from_str(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.fill_defaults();
        Ok(config)
    }

    pub(crate) fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        for m in &mut self.models {
            fix(&mut m.store);
            if let Some(p) = m.pair_store.as_mut() {
                fix(p);
            }
        }
    }

    pub(crate) fn fill_defaults(&mut self) {
        if self.run_seeds.is_empty() {
            self.run_seeds = (0..self.runs as u64).collect();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.models.is_empty() {
            return fail("at least one model is required".into());
        }
        if self.runs == 0 || self.runs != self.run_seeds.len() {
            return fail(format!("runs = {} but {} run seeds given", self.runs, self.run_seeds.len()));
        }
        if !self.dataset.exists() {
            return fail(format!("dataset {} does not exist", self.dataset.display()));
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.models {
            if !names.insert(&m.name) {
                return fail(format!("duplicate model name {:?}", m.name));
            }
            if !m.store.exists() {
                return fail(format!("store {} does not exist", m.store.display()));
            }
            if self.mode == Mode::Contextual {
                match &m.pair_store {
                    Some(p) if p.exists() => {}
                    Some(p) => return fail(format!("pair store {} does not exist", p.display())),
                    None => return fail(format!("model {:?} needs a pair_store in contextual mode", m.name)),
                }
            }
        }
        if self.task == Some(Task::Geometry) {
            if self.ops.is_empty() {
                return fail("geometry needs at least one composition op".into());
            }
            if self.mode == Mode::Contextual && self.ops.iter().any(|&op| op != CompositionOp::Add) {
                return fail("contextual mode only supports the add op".into());
            }
        }
        self.probe.validate().map_err(|e| Error::Config(e.to_string()))
    }

    fn task_or(&self, expected: &[Task]) -> Result<Task> {
        match self.task {
            Some(t) if expected.contains(&t) => Ok(t),
            Some(t) => Err(Error::Config(format!("config task {t} not valid here (expected one of {expected:?})"))),
            None if expected.len() == 1 => Ok(expected[0]),
            None => Err(Error::Config("config must name a probe task".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPoint {
    pub layer: usize,
    pub samples: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl LayerPoint {
    pub fn from_samples(layer: usize, samples: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&samples);
        Self {
            layer,
            samples,
            mean,
            std,
        }
    }
}

/// Mean and population standard deviation. The mean is clamped into the
/// sample range to absorb summation rounding.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = samples.len() as f64;
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = (samples.iter().sum::<f64>() / n).clamp(lo, hi);
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCurve {
    pub label: String,
    pub points: Vec<LayerPoint>,
}

impl LayerCurve {
    pub fn layers(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.layer).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean).collect()
    }

    pub fn at(&self, layer: usize) -> Option<&LayerPoint> {
        self.points.iter().find(|p| p.layer == layer)
    }
}

/// Hash of the parameters produced by one fit, recorded so tests can check
/// what a fit depended on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitRecord {
    pub layer: usize,
    pub label: String,
    pub run: usize,
    pub digest: String,
}

/// Curves of one model for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub model: String,
    pub task: Task,
    pub mode: Mode,
    pub filter: CategoryFilter,
    pub curves: Vec<LayerCurve>,
    #[serde(skip)]
    pub fits: Vec<FitRecord>,
}

impl CurveSet {
    pub fn curve(&self, label: &str) -> Option<&LayerCurve> {
        self.curves.iter().find(|c| c.label == label)
    }
}

fn digest_f64s<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

struct ModelInputs {
    store: EmbeddingStore,
    pairs: Option<EmbeddingStore>,
    layers: Vec<usize>,
}

fn open_model(config: &ExperimentConfig, spec: &ModelSpec) -> Result<ModelInputs> {
    let store = EmbeddingStore::open(&spec.store)?;
    if store.kind() != StoreKind::Isolated {
        return Err(Error::Config(format!("store for {:?} must be isolated", spec.name)));
    }
    let pairs = match (config.mode, &spec.pair_store) {
        (Mode::Contextual, Some(p)) => {
            let pairs = EmbeddingStore::open(p)?;
            if pairs.kind() != StoreKind::ContextualPair {
                return Err(Error::Config(format!("pair store for {:?} has the wrong kind", spec.name)));
            }
            if pairs.num_layers() != store.num_layers() || pairs.dim() != store.dim() {
                return Err(Error::Config(format!(
                    "pair store for {:?} disagrees with the isolated store on layers or dim",
                    spec.name
                )));
            }
            Some(pairs)
        }
        (Mode::Contextual, None) => {
            return Err(Error::Config(format!("model {:?} needs a pair_store", spec.name)));
        }
        (Mode::Isolated, _) => None,
    };
    let all: Vec<usize> = (0..=store.num_layers()).collect();
    let layers = match &config.layers {
        None => all,
        Some(ls) => {
            if let Some(&bad) = ls.iter().find(|&&l| l > store.num_layers()) {
                return Err(Error::BadLayer {
                    layer: bad,
                    max: store.num_layers(),
                });
            }
            ls.clone()
        }
    };
    Ok(ModelInputs { store, pairs, layers })
}

fn filtered(entries: &[LexiconEntry], filter: CategoryFilter) -> Vec<LexiconEntry> {
    entries.iter().filter(|e| filter.admits(e.category)).cloned().collect()
}

struct LayerViews<'a> {
    words: LayerView<'a>,
    pairs: Option<LayerView<'a>>,
}

impl LayerViews<'_> {
    fn composed(&self, op: CompositionOp, entries: &[LexiconEntry], run_seed: u64) -> Result<DMatrix<f64>> {
        let (x, _) = match &self.pairs {
            Some(pairs) => compose_contextual_in_view(entries, pairs, run_seed)?,
            None => compose_in_view(op, entries, &self.words, run_seed)?,
        };
        Ok(x)
    }
}

fn load_views<'a>(inputs: &'a ModelInputs, layer: usize) -> Result<LayerViews<'a>> {
    Ok(LayerViews {
        words: inputs.store.layer_view(layer)?,
        pairs: inputs.pairs.as_ref().map(|p| p.layer_view(layer)).transpose()?,
    })
}

/// Per-layer sample values keyed by curve label, plus fit records.
type LayerOutcome = (BTreeMap<String, Vec<f64>>, Vec<FitRecord>);

fn assemble(
    model: &str,
    task: Task,
    config: &ExperimentConfig,
    labels: &[String],
    layers: &[usize],
    per_layer: Vec<LayerOutcome>,
) -> CurveSet {
    let mut fits = Vec::new();
    let mut curves: Vec<LayerCurve> = labels
        .iter()
        .map(|l| LayerCurve {
            label: l.clone(),
            points: Vec::with_capacity(layers.len()),
        })
        .collect();
    for (&layer, (mut samples, layer_fits)) in layers.iter().zip(per_layer) {
        for curve in &mut curves {
            let s = samples.remove(&curve.label).unwrap_or_default();
            curve.points.push(LayerPoint::from_samples(layer, s));
        }
        fits.extend(layer_fits);
    }
    CurveSet {
        model: model.to_string(),
        task,
        mode: config.mode,
        filter: config.category_filter,
        curves,
        fits,
    }
}

/// Fits Procrustes on composed train vectors against whole-word train
/// vectors and scores P@1 of the mapped test vectors, per layer, op and run.
pub fn run_geometry(config: &ExperimentConfig) -> Result<Vec<CurveSet>> {
    let task = config.task_or(&[Task::Geometry])?;
    let mut config = config.clone();
    config.task = Some(task);
    config.validate()?;
    let dataset = DatasetSplit::load(&config.dataset)?;
    let ops = if config.mode == Mode::Contextual {
        vec![CompositionOp::Add]
    } else {
        config.ops.clone()
    };
    let labels: Vec<String> = ops.iter().map(|op| op.name().to_string()).collect();

    config
        .models
        .iter()
        .map(|spec| {
            let inputs = open_model(&config, spec)?;
            let per_layer = inputs
                .layers
                .par_iter()
                .map(|&layer| geometry_layer(&config, &dataset, &inputs, layer, &ops))
                .collect::<Result<Vec<_>>>()?;
            Ok(assemble(&spec.name, task, &config, &labels, &inputs.layers, per_layer))
        })
        .collect()
}

fn geometry_layer(
    config: &ExperimentConfig,
    dataset: &DatasetSplit,
    inputs: &ModelInputs,
    layer: usize,
    ops: &[CompositionOp],
) -> Result<LayerOutcome> {
    let views = load_views(inputs, layer)?;
    let filter = config.category_filter;
    let refit = config.refit_per_category && filter != CategoryFilter::All;
    let (train, test) = if refit {
        (filtered(&dataset.train, filter), filtered(&dataset.test, filter))
    } else {
        (dataset.train.clone(), dataset.test.clone())
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "category filter {} leaves an empty train or test split",
            filter.name()
        )));
    }
    let y_train = whole_word_matrix(&train, &views.words)?;
    let y_test = whole_word_matrix(&test, &views.words)?;
    let candidates = match config.retrieval_pool {
        RetrievalPool::Test => y_test.clone(),
        RetrievalPool::TrainAndTest => stack_rows(&y_test, &y_train),
    };
    let targets: Vec<usize> = (0..test.len()).collect();
    let mask: Vec<bool> = test.iter().map(|e| filter.admits(e.category)).collect();

    let mut samples = BTreeMap::new();
    let mut fits = Vec::new();
    for &op in ops {
        let mut values = Vec::with_capacity(config.run_seeds.len());
        for (run, &seed) in config.run_seeds.iter().enumerate() {
            let x_train = views.composed(op, &train, seed)?;
            let x_test = views.composed(op, &test, seed)?;
            let map = procrustes::fit(&x_train, &y_train)?;
            if map.degenerate {
                log::debug!("layer {layer} op {op} run {run}: rank-deficient cross-covariance");
            }
            let mapped = map.apply(&x_test)?;
            let ranks = rank_targets(&mapped, &candidates, &targets)?;
            let result = RetrievalResult::from_ranks(ranks, &[1]);
            values.push(result.p_at_1_over(&mask));
            fits.push(FitRecord {
                layer,
                label: op.name().to_string(),
                run,
                digest: digest_f64s(map.w.iter()),
            });
        }
        samples.insert(op.name().to_string(), values);
    }
    Ok((samples, fits))
}

fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

pub const CURVE_ORIGINAL: &str = "original";
pub const CURVE_COMPOSED: &str = "composed";
pub const CURVE_BASELINE: &str = "baseline";

fn labels_for(task: Task, entries: &[LexiconEntry]) -> Vec<i64> {
    entries
        .iter()
        .map(|e| match task {
            Task::WordType => e.category.as_binary() as i64,
            _ => e.length as i64,
        })
        .collect()
}

/// Trains probes on whole-word and on additively composed features per
/// layer and run, alongside the label-only random baseline.
pub fn run_probe(config: &ExperimentConfig) -> Result<Vec<CurveSet>> {
    let task = config.task_or(&[Task::WordType, Task::WordLength])?;
    config.validate()?;
    let dataset = DatasetSplit::load(&config.dataset)?;
    let labels = [CURVE_ORIGINAL, CURVE_COMPOSED, CURVE_BASELINE].map(String::from);
    config
        .models
        .iter()
        .map(|spec| {
            let inputs = open_model(config, spec)?;
            let per_layer = inputs
                .layers
                .par_iter()
                .map(|&layer| probe_layer(config, task, &dataset, &inputs, layer))
                .collect::<Result<Vec<_>>>()?;
            Ok(assemble(&spec.name, task, config, &labels, &inputs.layers, per_layer))
        })
        .collect()
}

fn probe_layer(
    config: &ExperimentConfig,
    task: Task,
    dataset: &DatasetSplit,
    inputs: &ModelInputs,
    layer: usize,
) -> Result<LayerOutcome> {
    let kind = task.probe_kind().expect("probe task");
    let views = load_views(inputs, layer)?;
    let train = filtered(&dataset.train, config.category_filter);
    let test = filtered(&dataset.test, config.category_filter);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "category filter {} leaves an empty train or test split",
            config.category_filter.name()
        )));
    }
    let y_train = labels_for(task, &train);
    let y_test = labels_for(task, &test);
    let orig_train = whole_word_matrix(&train, &views.words)?;
    let orig_test = whole_word_matrix(&test, &views.words)?;

    let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut fits = Vec::new();
    for (run, &seed) in config.run_seeds.iter().enumerate() {
        let train_cfg = config.probe.clone().with_seed(seed);
        let comp_train = views.composed(CompositionOp::Add, &train, seed)?;
        let comp_test = views.composed(CompositionOp::Add, &test, seed)?;

        for (label, x_train, x_test) in [
            (CURVE_ORIGINAL, &orig_train, &orig_test),
            (CURVE_COMPOSED, &comp_train, &comp_test),
        ] {
            let model = train_probe(kind, x_train, &y_train, &train_cfg)?;
            let score = model.score(x_test, &y_test)?;
            samples.entry(label.to_string()).or_default().push(score.value);
            fits.push(FitRecord {
                layer,
                label: label.to_string(),
                run,
                digest: digest_f64s(model.weights.iter().chain(std::iter::once(&model.bias))),
            });
        }
        let baseline = random_baseline(kind, &y_train, &y_test, seed, config.baseline_resamples)?;
        samples.entry(CURVE_BASELINE.to_string()).or_default().push(baseline.value);
    }
    Ok((samples, fits))
}

/// Runs the configured task, dispatching on `config.task`.
pub fn run(config: &ExperimentConfig) -> Result<Vec<CurveSet>> {
    match config.task {
        None | Some(Task::Geometry) => run_geometry(config),
        Some(_) => run_probe(config),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "default_label_a")]
    pub label_a: String,
    #[serde(default = "default_label_b")]
    pub label_b: String,
    pub a: ExperimentConfig,
    pub b: ExperimentConfig,
}

fn default_label_a() -> String {
    "a".into()
}
fn default_label_b() -> String {
    "b".into()
}

impl CompareConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for c in [&mut config.a, &mut config.b] {
            c.resolve_paths(base);
            c.fill_defaults();
        }
        Ok(config)
    }
}

/// Two variants of one experiment, aligned layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub label_a: String,
    pub label_b: String,
    pub a: Vec<CurveSet>,
    pub b: Vec<CurveSet>,
}

fn comparable(a: &ExperimentConfig, b: &ExperimentConfig) -> Result<()> {
    let strip = |c: &ExperimentConfig| {
        let mut c = c.clone();
        c.mode = Mode::Isolated;
        for m in &mut c.models {
            m.store = PathBuf::new();
            m.pair_store = None;
        }
        c
    };
    if strip(a) != strip(b) {
        return Err(Error::Config(
            "compared configs may differ only in store paths or mode".into(),
        ));
    }
    Ok(())
}

/// Runs both configs and pairs their curves for side-by-side reporting.
pub fn compare_variants(config: &CompareConfig) -> Result<Comparison> {
    let (a, b) = (&config.a, &config.b);
    comparable(a, b)?;
    for (ma, mb) in a.models.iter().zip(&b.models) {
        let la = EmbeddingStore::open(&ma.store)?.num_layers();
        let lb = EmbeddingStore::open(&mb.store)?.num_layers();
        if la != lb {
            return Err(Error::Config(format!(
                "model {:?}: variant layer counts differ ({la} vs {lb})",
                ma.name
            )));
        }
    }
    Ok(Comparison {
        label_a: config.label_a.clone(),
        label_b: config.label_b.clone(),
        a: run(a)?,
        b: run(b)?,
    })
}

impl Comparison {
    /// Curve sets of both variants with model names suffixed by the variant
    /// label, A before B for each model.
    pub fn merged(&self) -> Vec<CurveSet> {
        let tag = |sets: &[CurveSet], label: &str| -> Vec<CurveSet> {
            sets.iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.model = format!("{}@{label}", s.model);
                    s
                })
                .collect()
        };
        let a = tag(&self.a, &self.label_a);
        let b = tag(&self.b, &self.label_b);
        a.into_iter().zip(b).flat_map(|(x, y)| [x, y]).collect()
    }
}
