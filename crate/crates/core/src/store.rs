//! On-disk embedding stores.
//!
//! A store is a directory holding `manifest.json` and one raw float32 file
//! per layer (`layer_000.bin` .. `layer_{L:03}.bin`), little-endian and
//! row-major with no header. Pair stores hold two files per layer,
//! `layer_NNN.left.bin` and `layer_NNN.right.bin`. Layer 0 is the
//! embedding-layer output; layers 1..=L are block outputs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Isolated,
    ContextualPair,
}

/// Row key: a single vocabulary item, or a `(left, right)` pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemKey {
    Token(String),
    Pair(String, String),
}

impl ItemKey {
    pub fn pair(left: impl Into<String>, right: impl Into<String>) -> Self {
        ItemKey::Pair(left.into(), right.into())
    }
}

impl std::fmt::Display for ItemKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ItemKey::Token(t) => f.write_str(t),
            ItemKey::Pair(l, r) => write!(f, "({l}, {r})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub dim: usize,
    pub items: Vec<ItemKey>,
    pub kind: StoreKind,
    /// Free-form extractor notes, e.g. the layer-norm convention.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub model_id: String,
    /// Number of transformer blocks; the store holds layers `0..=num_layers`.
    pub num_layers: usize,
}

impl StoreManifest {
    pub fn layer_count(&self) -> usize {
        self.num_layers + 1
    }

    fn check(&self) -> Result<()> {
        if self.num_layers < 1 {
            return Err(Error::Validation("num_layers must be >= 1".into()));
        }
        if self.dim < 1 {
            return Err(Error::Validation("dim must be >= 1".into()));
        }
        let mut seen = HashSet::new();
        for item in &self.items {
            if !seen.insert(item) {
                return Err(Error::Validation(format!("duplicate item key {item}")));
            }
            let ok = matches!(
                (self.kind, item),
                (StoreKind::Isolated, ItemKey::Token(_)) | (StoreKind::ContextualPair, ItemKey::Pair(..))
            );
            if !ok {
                return Err(Error::Validation(format!(
                    "item {item} does not match store kind {:?}",
                    self.kind
                )));
            }
        }
        Ok(())
    }
}

/// Per-layer data handed to [`write_store`]. Pair stores carry a right-hand
/// matrix as well; isolated stores leave it `None`.
#[derive(Debug, Clone)]
pub struct LayerMatrix {
    pub layer: usize,
    pub data: DMatrix<f32>,
    pub right: Option<DMatrix<f32>>,
}

impl LayerMatrix {
    pub fn isolated(layer: usize, data: DMatrix<f32>) -> Self {
        Self { layer, data, right: None }
    }

    pub fn pair(layer: usize, left: DMatrix<f32>, right: DMatrix<f32>) -> Self {
        Self {
            layer,
            data: left,
            right: Some(right),
        }
    }
}

fn layer_files(kind: StoreKind, layer: usize) -> Vec<String> {
    match kind {
        StoreKind::Isolated => vec![format!("layer_{layer:03}.bin")],
        StoreKind::ContextualPair => vec![
            format!("layer_{layer:03}.left.bin"),
            format!("layer_{layer:03}.right.bin"),
        ],
    }
}

fn encode_rows(m: &DMatrix<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.len() * 4);
    for row in m.row_iter() {
        for v in row.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_rows(bytes: &[u8], n: usize, d: usize) -> DMatrix<f32> {
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    DMatrix::from_row_slice(n, d, &values)
}

fn manifest_json(manifest: &StoreManifest) -> Result<String> {
    // Round-trip through Value so every nested map is emitted with sorted keys.
    let value = serde_json::to_value(manifest)?;
    Ok(serde_json::to_string_pretty(&value)?)
}

/// Writes `manifest` and `matrices` under `path`, creating the directory.
pub fn write_store(manifest: &StoreManifest, matrices: &[LayerMatrix], path: &Path) -> Result<()> {
    manifest.check()?;
    let n = manifest.items.len();
    if matrices.len() != manifest.layer_count() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} layer matrices", manifest.layer_count()),
            got: format!("{}", matrices.len()),
        });
    }
    for (expected_layer, m) in matrices.iter().enumerate() {
        if m.layer != expected_layer {
            return Err(Error::Validation(format!(
                "layer matrices must be ordered 0..={}, found layer {} at position {expected_layer}",
                manifest.num_layers, m.layer
            )));
        }
        let parts: Vec<&DMatrix<f32>> = match (manifest.kind, &m.right) {
            (StoreKind::Isolated, None) => vec![&m.data],
            (StoreKind::ContextualPair, Some(r)) => vec![&m.data, r],
            _ => {
                return Err(Error::Validation(format!(
                    "layer {} matrix shape does not match store kind {:?}",
                    m.layer, manifest.kind
                )))
            }
        };
        for part in parts {
            if part.shape() != (n, manifest.dim) {
                return Err(Error::DimensionMismatch {
                    expected: format!("{n}x{} at layer {}", manifest.dim, m.layer),
                    got: format!("{}x{}", part.nrows(), part.ncols()),
                });
            }
            if part.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("non-finite entry in layer {}", m.layer)));
            }
        }
    }

    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    let manifest_path = path.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest_json(manifest)?).map_err(|e| Error::io(&manifest_path, e))?;
    for m in matrices {
        let files = layer_files(manifest.kind, m.layer);
        let mut parts = vec![&m.data];
        parts.extend(m.right.as_ref());
        for (name, part) in files.iter().zip(parts) {
            let file = path.join(name);
            fs::write(&file, encode_rows(part)).map_err(|e| Error::io(&file, e))?;
        }
    }
    Ok(())
}

/// Read handle over a store directory. Layers are loaded on demand.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    root: PathBuf,
    manifest: StoreManifest,
    index: HashMap<ItemKey, usize>,
}

impl EmbeddingStore {
    pub fn open(path: &Path) -> Result<Self> {
        let manifest_path = path.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: StoreManifest = serde_json::from_str(&text)?;
        manifest.check()?;
        let index = manifest
            .items
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        Ok(Self {
            root: path.to_path_buf(),
            manifest,
            index,
        })
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn kind(&self) -> StoreKind {
        self.manifest.kind
    }

    pub fn num_layers(&self) -> usize {
        self.manifest.num_layers
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn contains(&self, key: &ItemKey) -> bool {
        self.index.contains_key(key)
    }

    pub fn contains_token(&self, token: &str) -> bool {
        self.contains(&ItemKey::Token(token.to_string()))
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer > self.manifest.num_layers {
            return Err(Error::BadLayer {
                layer,
                max: self.manifest.num_layers,
            });
        }
        Ok(())
    }

    fn load_file(&self, name: &str, layer: usize) -> Result<DMatrix<f32>> {
        let file = self.root.join(name);
        let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        let (n, d) = (self.manifest.items.len(), self.manifest.dim);
        if bytes.len() != n * d * 4 {
            return Err(Error::Validation(format!("size mismatch layer {layer}")));
        }
        let m = decode_rows(&bytes, n, d);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("layer {layer}")));
        }
        Ok(m)
    }

    /// Full matrices of one layer: one for isolated stores, `[left, right]`
    /// for pair stores.
    pub fn load_layer(&self, layer: usize) -> Result<Vec<DMatrix<f32>>> {
        self.check_layer(layer)?;
        layer_files(self.manifest.kind, layer)
            .iter()
            .map(|name| self.load_file(name, layer))
            .collect()
    }

    fn rows_for<'a>(&self, keys: impl IntoIterator<Item = &'a ItemKey>) -> Result<Vec<usize>> {
        keys.into_iter()
            .map(|k| {
                self.index
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::MissingKey(k.to_string()))
            })
            .collect()
    }

    /// Loads one layer into memory for repeated row lookups.
    pub fn layer_view(&self, layer: usize) -> Result<LayerView<'_>> {
        Ok(LayerView {
            store: self,
            layer,
            parts: self.load_layer(layer)?,
        })
    }

    /// Rows for `keys` at `layer`, in the order of `keys`.
    pub fn read_vectors(&self, layer: usize, keys: &[ItemKey]) -> Result<DMatrix<f32>> {
        self.check_layer(layer)?;
        self.layer_view(layer)?.read_vectors(keys)
    }

    /// Token convenience wrapper over [`read_vectors`](Self::read_vectors).
    pub fn read_tokens<S: AsRef<str>>(&self, layer: usize, tokens: &[S]) -> Result<DMatrix<f32>> {
        self.read_vectors(layer, &token_keys(tokens))
    }

    /// Left- and right-position vectors for each pair key at `layer`.
    pub fn read_pair_vectors(&self, layer: usize, keys: &[ItemKey]) -> Result<(DMatrix<f32>, DMatrix<f32>)> {
        self.check_layer(layer)?;
        self.layer_view(layer)?.read_pair_vectors(keys)
    }
}

fn token_keys<S: AsRef<str>>(tokens: &[S]) -> Vec<ItemKey> {
    tokens.iter().map(|t| ItemKey::Token(t.as_ref().to_string())).collect()
}

/// One fully loaded layer of a store.
#[derive(Debug)]
pub struct LayerView<'a> {
    store: &'a EmbeddingStore,
    layer: usize,
    parts: Vec<DMatrix<f32>>,
}

impl LayerView<'_> {
    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn store(&self) -> &EmbeddingStore {
        self.store
    }

    pub fn read_vectors(&self, keys: &[ItemKey]) -> Result<DMatrix<f32>> {
        if self.store.kind() != StoreKind::Isolated {
            return Err(Error::InvalidArgument(
                "read_vectors requires an isolated store; use read_pair_vectors".into(),
            ));
        }
        let rows = self.store.rows_for(keys)?;
        Ok(self.parts[0].select_rows(&rows))
    }

    pub fn read_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<DMatrix<f32>> {
        self.read_vectors(&token_keys(tokens))
    }

    pub fn read_pair_vectors(&self, keys: &[ItemKey]) -> Result<(DMatrix<f32>, DMatrix<f32>)> {
        if self.store.kind() != StoreKind::ContextualPair {
            return Err(Error::InvalidArgument("read_pair_vectors requires a pair store".into()));
        }
        let rows = self.store.rows_for(keys)?;
        Ok((self.parts[0].select_rows(&rows), self.parts[1].select_rows(&rows)))
    }
}

/// Outcome of [`validate_store`]; an empty finding list means pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.findings.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.passed() {
            return writeln!(f, "pass");
        }
        writeln!(f, "fail")?;
        for finding in &self.findings {
            writeln!(f, "  - {finding}")?;
        }
        Ok(())
    }
}

/// Checks manifest/file consistency, file sizes and finiteness. Problems are
/// reported as findings rather than errors.
pub fn validate_store(path: &Path) -> ValidationReport {
    let mut report = ValidationReport::default();
    let manifest_path = path.join(MANIFEST_FILE);
    let manifest: StoreManifest = match fs::read_to_string(&manifest_path)
        .map_err(|e| e.to_string())
        .and_then(|t| serde_json::from_str(&t).map_err(|e| e.to_string()))
    {
        Ok(m) => m,
        Err(e) => {
            report.findings.push(format!("unreadable manifest: {e}"));
            return report;
        }
    };
    if let Err(e) = manifest.check() {
        report.findings.push(e.to_string());
    }

    let expected_bytes = manifest.items.len() * manifest.dim * 4;
    let mut expected_files = HashSet::new();
    for layer in 0..manifest.layer_count() {
        for name in layer_files(manifest.kind, layer) {
            let file = path.join(&name);
            expected_files.insert(name.clone());
            match fs::read(&file) {
                Err(_) => report.findings.push(format!("missing file {name} for layer {layer}")),
                Ok(bytes) if bytes.len() != expected_bytes => {
                    report.findings.push(format!("size mismatch layer {layer} ({name})"));
                }
                Ok(bytes) => {
                    let bad = bytes
                        .chunks_exact(4)
                        .filter(|c| !f32::from_le_bytes([c[0], c[1], c[2], c[3]]).is_finite())
                        .count();
                    if bad > 0 {
                        report
                            .findings
                            .push(format!("{bad} non-finite values in layer {layer} ({name})"));
                    }
                }
            }
        }
    }

    if let Ok(dir) = fs::read_dir(path) {
        let mut extra: Vec<String> = dir
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|name| name.starts_with("layer_") && !expected_files.contains(name))
            .collect();
        extra.sort();
        for name in extra {
            report.findings.push(format!(
                "unexpected layer file {name} (manifest declares layers 0..={})",
                manifest.num_layers
            ));
        }
    }
    report
}
