//! Parallel word/subword dataset construction.
//!
//! A word survives when the whole word and both halves of at least one
//! two-way cut are present in every supplied tokenizer vocabulary.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Fraction of surviving words assigned to the train split.
pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Root,
    NonRoot,
}

impl Category {
    pub fn label(self) -> &'static str {
        match self {
            Category::Root => "root",
            Category::NonRoot => "nonroot",
        }
    }

    /// Binary probe target: non-root words are the positive class.
    pub fn as_binary(self) -> u8 {
        match self {
            Category::Root => 0,
            Category::NonRoot => 1,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "root" => Ok(Category::Root),
            "nonroot" => Ok(Category::NonRoot),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLexiconRecord {
    pub word: String,
    pub category: Category,
}

impl RawLexiconRecord {
    pub fn new(word: impl Into<String>, category: Category) -> Result<Self> {
        let word = word.into();
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "lexicon word must be non-empty without whitespace: {word:?}"
            )));
        }
        Ok(Self { word, category })
    }
}

/// A tokenizer vocabulary with its word-initial marker already stripped.
#[derive(Debug, Clone)]
pub struct VocabFile {
    pub model_id: String,
    pub marker: Option<char>,
    tokens: HashSet<String>,
}

impl VocabFile {
    /// Builds a vocabulary from raw tokens. A single leading `marker`
    /// codepoint is stripped from each token before insertion.
    pub fn new<I, S>(model_id: impl Into<String>, marker: Option<char>, tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let tokens: HashSet<String> = tokens
            .into_iter()
            .map(|t| normalize_token(t.as_ref(), marker).to_string())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("vocabulary has no tokens".into()));
        }
        Ok(Self {
            model_id: model_id.into(),
            marker,
            tokens,
        })
    }

    /// Reads a one-token-per-line file with an optional `#marker=` header.
    ///
    /// The marker may be written as the glyph itself or as `U+XXXX`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().peekable();
        let mut marker = None;
        if let Some(first) = lines.peek() {
            if let Some(spec) = first.strip_prefix("#marker=") {
                marker = Some(parse_marker(spec).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    reason: format!("bad marker header {spec:?}"),
                })?);
                lines.next();
            }
        }
        let model_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::new(model_id, marker, lines.filter(|l| !l.is_empty()))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.contains(token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn parse_marker(spec: &str) -> Option<char> {
    let spec = spec.trim();
    if let Some(hex) = spec.strip_prefix("U+").or_else(|| spec.strip_prefix("u+")) {
        return u32::from_str_radix(hex, 16).ok().and_then(char::from_u32);
    }
    let mut chars = spec.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Some(c),
        _ => None,
    }
}

fn normalize_token(token: &str, marker: Option<char>) -> &str {
    match marker {
        Some(m) => token.strip_prefix(m).unwrap_or(token),
        None => token,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub category: Category,
    pub length: usize,
    pub splits: Vec<(String, String)>,
    pub word: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub ratio: f64,
    pub seed: u64,
    pub test: Vec<LexiconEntry>,
    pub train: Vec<LexiconEntry>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn counts(&self) -> DatasetCounts {
        let tally = |part: &[LexiconEntry], cat| part.iter().filter(|e| e.category == cat).count();
        DatasetCounts {
            train_root: tally(&self.train, Category::Root),
            train_nonroot: tally(&self.train, Category::NonRoot),
            test_root: tally(&self.test, Category::Root),
            test_nonroot: tally(&self.test, Category::NonRoot),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetCounts {
    pub train_root: usize,
    pub train_nonroot: usize,
    pub test_root: usize,
    pub test_nonroot: usize,
}

impl DatasetCounts {
    pub fn root(&self) -> usize {
        self.train_root + self.test_root
    }
    pub fn nonroot(&self) -> usize {
        self.train_nonroot + self.test_nonroot
    }
    pub fn train(&self) -> usize {
        self.train_root + self.train_nonroot
    }
    pub fn test(&self) -> usize {
        self.test_root + self.test_nonroot
    }
    pub fn total(&self) -> usize {
        self.train() + self.test()
    }
}

/// Parses a `word<TAB>category` lexicon file.
pub fn parse_lexicon(path: &Path) -> Result<Vec<RawLexiconRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_lexicon_str(&text, path)
}

pub(crate) fn parse_lexicon_str(text: &str, path: &Path) -> Result<Vec<RawLexiconRecord>> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut fields = raw.split('\t');
        let (word, label) = match (fields.next(), fields.next(), fields.next()) {
            (Some(w), Some(c), None) => (w, c),
            _ => return Err(parse_err("expected `word<TAB>category`".into())),
        };
        let category = label
            .trim()
            .parse::<Category>()
            .map_err(|label| Error::UnknownCategory { label, line })?;
        let record = RawLexiconRecord::new(word, category).map_err(|e| parse_err(e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}

/// Every two-way cut of `word` whose halves, and the word itself, are in
/// every vocabulary. Cuts fall on Unicode scalar boundaries.
pub fn enumerate_splits(word: &str, vocabs: &[VocabFile]) -> Vec<(String, String)> {
    let in_all = |s: &str| vocabs.iter().all(|v| v.contains(s));
    if word.is_empty() || !in_all(word) {
        return Vec::new();
    }
    word.char_indices()
        .skip(1)
        .map(|(i, _)| word.split_at(i))
        .filter(|(left, right)| in_all(left) && in_all(right))
        .map(|(l, r)| (l.to_string(), r.to_string()))
        .collect()
}

/// Filters `records` to words with at least one valid split, shuffles them
/// with `seed` and cuts `floor(ratio * n)` words into train.
pub fn build_dataset(
    records: &[RawLexiconRecord],
    vocabs: &[VocabFile],
    ratio: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if vocabs.is_empty() {
        return Err(Error::InvalidArgument("at least one vocabulary is required".into()));
    }

    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for record in records {
        if !seen.insert(record.word.as_str()) {
            log::warn!("duplicate lexicon word {:?}; keeping first occurrence", record.word);
            continue;
        }
        let splits = enumerate_splits(&record.word, vocabs);
        if splits.is_empty() {
            continue;
        }
        entries.push(LexiconEntry {
            category: record.category,
            length: record.word.chars().count(),
            splits,
            word: record.word.clone(),
        });
    }
    if entries.is_empty() {
        return Err(Error::EmptyIntersection);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    entries.shuffle(&mut rng);
    let n_train = train_size(entries.len(), ratio);
    let test = entries.split_off(n_train);
    Ok(DatasetSplit {
        ratio,
        seed,
        test,
        train: entries,
    })
}

fn train_size(n: usize, ratio: f64) -> usize {
    // Tolerate representation error in products like 0.8 * 10.
    let raw = ratio * n as f64;
    ((raw + 1e-9).floor() as usize).min(n)
}

/// Deterministic uniform choice among `entry.splits`, keyed by the word and
/// the run seed.
pub fn pick_split_per_run(entry: &LexiconEntry, run_seed: u64) -> &(String, String) {
    assert!(!entry.splits.is_empty(), "entry {:?} has no splits", entry.word);
    let mut hasher = Sha256::new();
    hasher.update(run_seed.to_le_bytes());
    hasher.update(entry.word.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    entry
        .splits
        .choose(&mut rng)
        .expect("non-empty splits")
}

/// Distinct words across a dataset, sorted, together with every subword
/// referenced by any split. Used to decide which items a store must hold.
pub fn required_items(dataset: &DatasetSplit) -> BTreeSet<String> {
    let mut items = BTreeSet::new();
    for entry in dataset.train.iter().chain(&dataset.test) {
        items.insert(entry.word.clone());
        for (l, r) in &entry.splits {
            items.insert(l.clone());
            items.insert(r.clone());
        }
    }
    items
}
