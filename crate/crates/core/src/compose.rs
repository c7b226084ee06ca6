//! Elementwise composition of subword vectors.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{pick_split_per_run, LexiconEntry};
use crate::store::{EmbeddingStore, ItemKey, LayerView, StoreKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionOp {
    Add,
    Multiply,
    AbsDiff,
}

impl CompositionOp {
    pub const ALL: [CompositionOp; 3] = [CompositionOp::Add, CompositionOp::Multiply, CompositionOp::AbsDiff];

    pub fn name(self) -> &'static str {
        match self {
            CompositionOp::Add => "add",
            CompositionOp::Multiply => "multiply",
            CompositionOp::AbsDiff => "absdiff",
        }
    }

    #[inline]
    pub fn apply_scalar(self, u: f64, v: f64) -> f64 {
        match self {
            CompositionOp::Add => u + v,
            CompositionOp::Multiply => u * v,
            CompositionOp::AbsDiff => (u - v).abs(),
        }
    }
}

impl fmt::Display for CompositionOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CompositionOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CompositionOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown composition op {s:?}")))
    }
}

pub fn compose(op: CompositionOp, u: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len().to_string(),
            got: v.len().to_string(),
        });
    }
    if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("composition input".into()));
    }
    Ok(u.zip_map(v, |a, b| op.apply_scalar(a, b)))
}

fn compose_rows(op: CompositionOp, left: &DMatrix<f32>, right: &DMatrix<f32>) -> DMatrix<f64> {
    DMatrix::from_fn(left.nrows(), left.ncols(), |i, j| {
        op.apply_scalar(left[(i, j)] as f64, right[(i, j)] as f64)
    })
}

/// Composed matrix for `entries` at `layer`. Row `i` composes the isolated
/// vectors of the split picked for entry `i` under `run_seed`.
pub fn compose_batch(
    op: CompositionOp,
    entries: &[LexiconEntry],
    store: &EmbeddingStore,
    layer: usize,
    run_seed: u64,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    compose_in_view(op, entries, &store.layer_view(layer)?, run_seed)
}

/// [`compose_batch`] against an already loaded layer.
pub fn compose_in_view(
    op: CompositionOp,
    entries: &[LexiconEntry],
    view: &LayerView<'_>,
    run_seed: u64,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let store = view.store();
    if store.kind() != StoreKind::Isolated {
        return Err(Error::InvalidArgument("compose_batch requires an isolated store".into()));
    }
    let mut lefts = Vec::with_capacity(entries.len());
    let mut rights = Vec::with_capacity(entries.len());
    for entry in entries {
        let (l, r) = pick_split_per_run(entry, run_seed);
        let (lk, rk) = (ItemKey::Token(l.clone()), ItemKey::Token(r.clone()));
        if !store.contains(&lk) || !store.contains(&rk) {
            return Err(Error::MissingSubword {
                word: entry.word.clone(),
                left: l.clone(),
                right: r.clone(),
            });
        }
        lefts.push(lk);
        rights.push(rk);
    }
    let left = view.read_vectors(&lefts)?;
    let right = view.read_vectors(&rights)?;
    let keys = entries.iter().map(|e| e.word.clone()).collect();
    Ok((compose_rows(op, &left, &right), keys))
}

/// Sums the left- and right-position vectors recorded when both subwords
/// were fed together.
pub fn compose_contextual(
    entries: &[LexiconEntry],
    store: &EmbeddingStore,
    layer: usize,
    run_seed: u64,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    compose_contextual_in_view(entries, &store.layer_view(layer)?, run_seed)
}

pub fn compose_contextual_in_view(
    entries: &[LexiconEntry],
    view: &LayerView<'_>,
    run_seed: u64,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let store = view.store();
    if store.kind() != StoreKind::ContextualPair {
        return Err(Error::InvalidArgument("compose_contextual requires a pair store".into()));
    }
    let mut keys = Vec::with_capacity(entries.len());
    for entry in entries {
        let (l, r) = pick_split_per_run(entry, run_seed);
        let key = ItemKey::pair(l.clone(), r.clone());
        if !store.contains(&key) {
            return Err(Error::MissingSubword {
                word: entry.word.clone(),
                left: l.clone(),
                right: r.clone(),
            });
        }
        keys.push(key);
    }
    let (left, right) = view.read_pair_vectors(&keys)?;
    let words = entries.iter().map(|e| e.word.clone()).collect();
    Ok((compose_rows(CompositionOp::Add, &left, &right), words))
}

/// Whole-word vectors for `entries`, promoted to f64.
pub fn whole_word_matrix(entries: &[LexiconEntry], view: &LayerView<'_>) -> Result<DMatrix<f64>> {
    let words: Vec<&str> = entries.iter().map(|e| e.word.as_str()).collect();
    Ok(view.read_tokens(&words)?.map(|v| v as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::Category;
    use crate::store::{write_store, LayerMatrix, StoreManifest};
    use std::collections::BTreeMap;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn add_identity() {
        let u = v(&[1.5, -2.0, 3.0]);
        assert_eq!(compose(CompositionOp::Add, &u, &v(&[0.0, 0.0, 0.0])).unwrap(), u);
    }

    #[test]
    fn multiply_elementwise() {
        assert_eq!(
            compose(CompositionOp::Multiply, &v(&[1.0, 2.0]), &v(&[3.0, 4.0])).unwrap(),
            v(&[3.0, 8.0])
        );
    }

    #[test]
    fn absdiff_symmetric() {
        let (a, b) = (v(&[1.0, 5.0]), v(&[4.0, 2.0]));
        let ab = compose(CompositionOp::AbsDiff, &a, &b).unwrap();
        assert_eq!(ab, v(&[3.0, 3.0]));
        assert_eq!(ab, compose(CompositionOp::AbsDiff, &b, &a).unwrap());
    }

    #[test]
    fn dimension_mismatch() {
        assert!(compose(CompositionOp::Add, &v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn op_names_round_trip() {
        for op in CompositionOp::ALL {
            assert_eq!(op.name().parse::<CompositionOp>().unwrap(), op);
        }
        assert!("mean".parse::<CompositionOp>().is_err());
    }

    fn entry(word: &str, splits: &[(&str, &str)]) -> LexiconEntry {
        LexiconEntry {
            category: Category::Root,
            length: word.chars().count(),
            splits: splits.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            word: word.into(),
        }
    }

    fn toy_store(dir: &std::path::Path) -> EmbeddingStore {
        let items = ["ab", "a", "b"];
        let m = StoreManifest {
            dim: 2,
            items: items.iter().map(|s| ItemKey::Token(s.to_string())).collect(),
            kind: StoreKind::Isolated,
            metadata: BTreeMap::new(),
            model_id: "toy".into(),
            num_layers: 1,
        };
        let data = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        write_store(&m, &[LayerMatrix::isolated(0, data.clone()), LayerMatrix::isolated(1, data)], dir).unwrap();
        EmbeddingStore::open(dir).unwrap()
    }

    #[test]
    fn batch_adds_picked_split() {
        let dir = tempfile::tempdir().unwrap();
        let store = toy_store(dir.path());
        let entries = [entry("ab", &[("a", "b")])];
        let (x, keys) = compose_batch(CompositionOp::Add, &entries, &store, 0, 9).unwrap();
        assert_eq!(keys, ["ab"]);
        assert_eq!(x.row(0).iter().copied().collect::<Vec<_>>(), [1.0, 1.0]);
        let again = compose_batch(CompositionOp::Add, &entries, &store, 0, 9).unwrap();
        assert_eq!(x, again.0);
    }

    #[test]
    fn batch_missing_subword_names_split() {
        let dir = tempfile::tempdir().unwrap();
        let store = toy_store(dir.path());
        let entries = [entry("ab", &[("a", "q")])];
        match compose_batch(CompositionOp::Add, &entries, &store, 0, 1).unwrap_err() {
            Error::MissingSubword { word, right, .. } => {
                assert_eq!(word, "ab");
                assert_eq!(right, "q");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn contextual_sums_positions() {
        let dir = tempfile::tempdir().unwrap();
        let m = StoreManifest {
            dim: 2,
            items: vec![ItemKey::pair("a", "b")],
            kind: StoreKind::ContextualPair,
            metadata: BTreeMap::new(),
            model_id: "toy".into(),
            num_layers: 1,
        };
        let mats: Vec<_> = (0..=1)
            .map(|l| {
                LayerMatrix::pair(
                    l,
                    DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
                    DMatrix::from_row_slice(1, 2, &[3.0, 4.0]),
                )
            })
            .collect();
        write_store(&m, &mats, dir.path()).unwrap();
        let store = EmbeddingStore::open(dir.path()).unwrap();
        let entries = [entry("ab", &[("a", "b")])];
        let (x, _) = compose_contextual(&entries, &store, 1, 5).unwrap();
        assert_eq!(x.as_slice(), &[4.0, 6.0]);
        assert_eq!(x, compose_contextual(&entries, &store, 1, 5).unwrap().0);
        assert!(compose_batch(CompositionOp::Add, &entries, &store, 1, 5).is_err());
    }
}
