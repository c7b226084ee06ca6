//! Synthetic lexicons and stores with planted structure.
//!
//! Words are strings of syllables drawn from a fixed inventory. Every
//! syllable ends in a vowel and contains no other vowel, so any string of
//! syllables parses uniquely and every vocabulary cut falls on a syllable
//! boundary. A token's vector is the sum of its syllables' vectors, hence
//! for every listed split the whole-word vector equals the sum of the two
//! subword vectors at every layer. Values sit on a 1/16 grid, which keeps
//! all sums exact in f32.
//!
//! Two coordinate blocks are planted in every layer: a length block where
//! each syllable contributes its character count, and a category block set
//! by the non-root marker syllables. The remaining coordinates are
//! independent symmetric noise per syllable and layer, which leaves
//! elementwise products of subwords without a linear relation to the
//! whole word.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::lexicon::{build_dataset, Category, DatasetSplit, RawLexiconRecord, VocabFile};
use crate::store::{write_store, ItemKey, LayerMatrix, StoreKind, StoreManifest};

/// Letter that starts every non-root marker syllable.
pub const NONROOT_MARKER: char = 'z';

const VOWELS: &str = "aeiou";
const CONSONANTS: &str = "bcdfghjklmnpqrstvwxy";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Probes train for a fixed number of epochs, so the planted signal is
    /// only learned reliably with on the order of ten thousand words.
    pub n_words: usize,
    pub num_layers: usize,
    pub dim: usize,
    /// Size of the regular syllable inventory.
    pub syllables: usize,
    pub min_syllables: usize,
    pub max_syllables: usize,
    /// Width of each planted block (length, category).
    pub planted_width: usize,
    /// Planted value per character (length block) or per marker
    /// (category block), in 1/16 units.
    pub planted_sixteenths: i32,
    /// Noise coordinates are uniform on `[-n, n] / 16`.
    pub noise_sixteenths: i32,
    pub nonroot_fraction: f64,
    pub seed: u64,
    /// Replace every vector with independent noise; no additive structure.
    pub pure_noise: bool,
    /// For pair stores: layers at or above this index get a perturbation of
    /// the left-position vector; below it pair vectors equal isolated ones.
    pub contextual_diverge_from: Option<usize>,
    pub train_ratio: f64,
    pub dataset_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_words: 500,
            num_layers: 3,
            dim: 16,
            syllables: 2000,
            min_syllables: 2,
            max_syllables: 4,
            planted_width: 1,
            planted_sixteenths: 48,
            noise_sixteenths: 16,
            nonroot_fraction: 0.325,
            seed: 7,
            pure_noise: false,
            contextual_diverge_from: None,
            train_ratio: 0.8,
            dataset_seed: 11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub records: Vec<RawLexiconRecord>,
    pub vocab: VocabFile,
    pub tokens: BTreeSet<String>,
    pub dataset: DatasetSplit,
}

fn is_vowel(c: char) -> bool {
    VOWELS.contains(c)
}

/// Splits a token after every vowel.
fn parse_syllables(token: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in token.char_indices() {
        if is_vowel(c) {
            let end = i + c.len_utf8();
            out.push(&token[start..end]);
            start = end;
        }
    }
    debug_assert_eq!(start, token.len(), "token {token:?} does not end in a vowel");
    out
}

fn marker_syllables() -> Vec<String> {
    VOWELS.chars().map(|v| format!("{NONROOT_MARKER}{v}")).collect()
}

/// Regular syllables: zero to two consonants followed by one vowel.
fn syllable_inventory(spec: &SyntheticSpec) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let consonants: Vec<char> = CONSONANTS.chars().collect();
    let vowels: Vec<char> = VOWELS.chars().collect();
    let capacity = vowels.len() * (1 + consonants.len() + consonants.len() * consonants.len());
    let target = spec.syllables.min(capacity);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(target);
    while out.len() < target {
        let onset = rng.random_range(0..=2);
        let mut s: String = (0..onset).map(|_| *consonants.choose(&mut rng).expect("consonants")).collect();
        s.push(*vowels.choose(&mut rng).expect("vowels"));
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Syllable counts scaled to their smallest integer multiple; words sharing
/// a key have parallel vectors.
fn direction_key(sylls: &[&str]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in sylls {
        *counts.entry(s).or_default() += 1;
    }
    let g = counts.values().copied().fold(0, gcd);
    counts.into_iter().map(|(s, n)| (s.to_string(), n / g)).collect()
}

/// Draws words with distinct syllable-count directions, a random subset of
/// syllable boundaries as vocabulary cuts per word, and builds the dataset
/// through the regular vocabulary-intersection path.
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    if spec.min_syllables < 2 || spec.max_syllables < spec.min_syllables {
        return Err(crate::error::Error::InvalidArgument(format!(
            "syllable range {}..={} must start at 2 or more",
            spec.min_syllables, spec.max_syllables
        )));
    }
    let inventory = syllable_inventory(spec);
    let markers = marker_syllables();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let mut words = Vec::with_capacity(spec.n_words);
    let mut seen_dirs = HashSet::new();
    while words.len() < spec.n_words {
        let n = rng.random_range(spec.min_syllables..=spec.max_syllables);
        let mut sylls: Vec<&str> = (0..n).map(|_| inventory.choose(&mut rng).expect("inventory").as_str()).collect();
        let category = if rng.random_bool(spec.nonroot_fraction) {
            let at = rng.random_range(0..=sylls.len());
            sylls.insert(at, markers.choose(&mut rng).expect("markers"));
            Category::NonRoot
        } else {
            Category::Root
        };
        if !seen_dirs.insert(direction_key(&sylls)) {
            continue;
        }
        words.push((sylls.concat(), category));
    }

    let mut tokens = BTreeSet::new();
    let mut records = Vec::with_capacity(words.len());
    for (word, category) in &words {
        let sylls = parse_syllables(word);
        let cuts = rng.random_range(1..=3.min(sylls.len() - 1));
        for _ in 0..cuts {
            let at = rng.random_range(1..sylls.len());
            tokens.insert(sylls[..at].concat());
            tokens.insert(sylls[at..].concat());
        }
        tokens.insert(word.clone());
        records.push(RawLexiconRecord::new(word.clone(), *category)?);
    }
    let vocab = VocabFile::new("synthetic", None, tokens.iter())?;
    let dataset = build_dataset(&records, std::slice::from_ref(&vocab), spec.train_ratio, spec.dataset_seed)?;
    Ok(SyntheticCorpus {
        records,
        vocab,
        tokens,
        dataset,
    })
}

/// Per-layer syllable embedding table on a 1/16 grid.
fn syllable_table(spec: &SyntheticSpec, layer: usize) -> BTreeMap<String, Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(layer as u64 + 1)));
    let w = spec.planted_width;
    let unit = spec.planted_sixteenths as f32 / 16.0;
    let noise = spec.noise_sixteenths;
    let mut table = BTreeMap::new();
    for s in syllable_inventory(spec).into_iter().chain(marker_syllables()) {
        let mut v = vec![0.0f32; spec.dim];
        let chars = s.chars().count() as f32;
        for x in v.iter_mut().take(w) {
            *x = unit * chars;
        }
        if s.starts_with(NONROOT_MARKER) {
            for x in v.iter_mut().skip(w).take(w) {
                *x = unit;
            }
        }
        for x in v.iter_mut().skip(2 * w) {
            *x = rng.random_range(-noise..=noise) as f32 / 16.0;
        }
        table.insert(s, v);
    }
    table
}

fn token_vector(token: &str, table: &BTreeMap<String, Vec<f32>>, dim: usize) -> Vec<f32> {
    let mut v = vec![0.0f32; dim];
    for s in parse_syllables(token) {
        for (a, b) in v.iter_mut().zip(&table[s]) {
            *a += b;
        }
    }
    v
}

fn noise_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.random_range(-16i32..=16) as f32 / 16.0).collect()
}

/// Layer matrices for `items` (row order preserved).
fn token_layers(spec: &SyntheticSpec, items: &[String]) -> Vec<DMatrix<f32>> {
    (0..=spec.num_layers)
        .map(|layer| {
            let table = syllable_table(spec, layer);
            let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1000 + layer as u64));
            let rows: Vec<f32> = items
                .iter()
                .flat_map(|t| {
                    let mut v = if spec.pure_noise {
                        noise_vector(&mut noise_rng, spec.dim)
                    } else {
                        token_vector(t, &table, spec.dim)
                    };
                    // Keep every row nonzero so cosine retrieval stays defined.
                    if v.iter().all(|&x| x == 0.0) {
                        v[0] = 1.0;
                    }
                    v
                })
                .collect();
            DMatrix::from_row_slice(items.len(), spec.dim, &rows)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub corpus: SyntheticCorpus,
    pub dataset_path: PathBuf,
    pub store_path: PathBuf,
    pub pair_store_path: PathBuf,
    pub lexicon_path: PathBuf,
    pub vocab_path: PathBuf,
}

/// Writes lexicon, vocabulary, dataset, an isolated store and a pair store
/// under `dir`.
pub fn write_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<SyntheticOutput> {
    let corpus = generate_corpus(spec)?;
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;

    let lexicon_path = dir.join("lexicon.tsv");
    let lexicon: String = corpus
        .records
        .iter()
        .map(|r| format!("{}\t{}\n", r.word, r.category))
        .collect();
    std::fs::write(&lexicon_path, lexicon).map_err(|e| crate::error::Error::io(&lexicon_path, e))?;

    let vocab_path = dir.join("vocab.txt");
    let vocab: String = corpus.tokens.iter().map(|t| format!("{t}\n")).collect();
    std::fs::write(&vocab_path, vocab).map_err(|e| crate::error::Error::io(&vocab_path, e))?;

    let dataset_path = dir.join("dataset.json");
    corpus.dataset.save(&dataset_path)?;

    let items: Vec<String> = corpus.tokens.iter().cloned().collect();
    let mut metadata = BTreeMap::new();
    metadata.insert("generator".to_string(), "synthetic syllable sums".to_string());
    let manifest = StoreManifest {
        dim: spec.dim,
        items: items.iter().cloned().map(ItemKey::Token).collect(),
        kind: StoreKind::Isolated,
        metadata: metadata.clone(),
        model_id: "synthetic".into(),
        num_layers: spec.num_layers,
    };
    let layers = token_layers(spec, &items);
    let matrices: Vec<LayerMatrix> = layers
        .iter()
        .enumerate()
        .map(|(l, m)| LayerMatrix::isolated(l, m.clone()))
        .collect();
    let store_path = dir.join("store");
    write_store(&manifest, &matrices, &store_path)?;

    // Pair store over every listed split.
    let pairs: BTreeSet<(String, String)> = corpus
        .dataset
        .train
        .iter()
        .chain(&corpus.dataset.test)
        .flat_map(|e| e.splits.iter().cloned())
        .collect();
    let pairs: Vec<(String, String)> = pairs.into_iter().collect();
    let row_of: BTreeMap<&str, usize> = items.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let pick = |m: &DMatrix<f32>, side: &dyn Fn(&(String, String)) -> &str| -> DMatrix<f32> {
        let rows: Vec<usize> = pairs.iter().map(|p| row_of[side(p)]).collect();
        m.select_rows(&rows)
    };
    let pair_matrices: Vec<LayerMatrix> = layers
        .iter()
        .enumerate()
        .map(|(l, m)| {
            let mut left = pick(m, &|p| p.0.as_str());
            let right = pick(m, &|p| p.1.as_str());
            if spec.contextual_diverge_from.is_some_and(|from| l >= from) {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(5000 + l as u64));
                for v in left.iter_mut() {
                    *v += rng.random_range(-32i32..=32) as f32 / 16.0;
                }
            }
            LayerMatrix::pair(l, left, right)
        })
        .collect();
    let pair_manifest = StoreManifest {
        dim: spec.dim,
        items: pairs.iter().map(|(l, r)| ItemKey::pair(l.clone(), r.clone())).collect(),
        kind: StoreKind::ContextualPair,
        metadata,
        model_id: "synthetic".into(),
        num_layers: spec.num_layers,
    };
    let pair_store_path = dir.join("pairs");
    write_store(&pair_manifest, &pair_matrices, &pair_store_path)?;

    Ok(SyntheticOutput {
        corpus,
        dataset_path,
        store_path,
        pair_store_path,
        lexicon_path,
        vocab_path,
    })
}
