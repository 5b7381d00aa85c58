//! Pre-trained word vectors from text files, plus character n-gram
//! composition for out-of-vocabulary forms.
//!
//! Vector files are plain text: `form v1 v2 ... vdim` per line, optionally
//! preceded by a `count dim` header line. A subword table uses the same
//! syntax with n-gram keys that include the `<`/`>` boundary markers.

use std::collections::HashMap;
use std::io::BufRead;
use std::sync::Mutex;

use unicode_normalization::UnicodeNormalization;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Parameter;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_NGRAM_MIN: usize = 3;
pub const DEFAULT_NGRAM_MAX: usize = 6;

/// How to produce a vector for a form absent from the table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OovPolicy {
    /// Sum of the known character n-gram vectors (plus the word vector,
    /// which is zero for a truly unseen form).
    Subword,
    /// Deterministic seeded uniform(-0.05, 0.05) vector per form.
    Random,
    Zero,
}

/// Character n-gram vectors keyed by the marked gram string.
#[derive(Debug)]
pub struct SubwordTable {
    pub n_min: usize,
    pub n_max: usize,
    grams: HashMap<String, Vec<f64>>,
}

impl SubwordTable {
    pub fn new(n_min: usize, n_max: usize) -> Self {
        SubwordTable {
            n_min,
            n_max,
            grams: HashMap::new(),
        }
    }

    pub fn insert(&mut self, gram: String, vector: Vec<f64>) {
        self.grams.insert(gram, vector);
    }

    pub fn get(&self, gram: &str) -> Option<&Vec<f64>> {
        self.grams.get(gram)
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }
}

/// All contiguous character n-grams of the boundary-marked form
/// `<form>`, enumerated length by length and left to right within each
/// length. The marked whole word appears when it is short enough.
pub fn extract_ngrams_range(form: &str, n_min: usize, n_max: usize) -> Vec<String> {
    assert!(!form.is_empty(), "n-grams of an empty form");
    let wrapped: Vec<char> = format!("<{form}>").chars().collect();
    let len = wrapped.len();
    let mut grams = Vec::new();
    for n in n_min..=n_max.min(len) {
        for start in 0..=(len - n) {
            grams.push(wrapped[start..start + n].iter().collect());
        }
    }
    grams
}

/// [`extract_ngrams_range`] with the standard 3..6 range.
pub fn extract_ngrams(form: &str) -> Vec<String> {
    extract_ngrams_range(form, DEFAULT_NGRAM_MIN, DEFAULT_NGRAM_MAX)
}

/// Vocabulary-to-vector map with an optional subword table and a policy
/// for forms missing from both. Immutable after loading; safe to share
/// across training runs.
#[derive(Debug)]
pub struct EmbeddingStore {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
    subword: Option<SubwordTable>,
    oov_policy: OovPolicy,
    oov_seed: u64,
    duplicates: usize,
    random_cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl EmbeddingStore {
    /// An empty store: every lookup goes through the OOV policy.
    pub fn empty(dim: usize, oov_policy: OovPolicy, oov_seed: u64) -> Self {
        assert!(dim > 0);
        EmbeddingStore {
            dim,
            table: HashMap::new(),
            subword: None,
            oov_policy,
            oov_seed,
            duplicates: 0,
            random_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// How many duplicate forms the loader overwrote (last occurrence wins).
    pub fn duplicate_count(&self) -> usize {
        self.duplicates
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov_policy
    }

    pub fn set_oov_policy(&mut self, policy: OovPolicy) -> Result<()> {
        if policy == OovPolicy::Subword && self.subword.is_none() {
            return Err(Error::Data(
                "subword OOV policy requires a subword table".into(),
            ));
        }
        self.oov_policy = policy;
        Ok(())
    }

    pub fn set_oov_seed(&mut self, seed: u64) {
        self.oov_seed = seed;
        self.random_cache.lock().unwrap().clear();
    }

    pub fn subword(&self) -> Option<&SubwordTable> {
        self.subword.as_ref()
    }

    /// Attaches a subword table and switches the OOV policy to subword
    /// composition.
    pub fn attach_subword(&mut self, table: SubwordTable) -> Result<()> {
        if let Some(v) = table.grams.values().next() {
            if v.len() != self.dim {
                return Err(Error::Data(format!(
                    "subword table dimension {} does not match store dimension {}",
                    v.len(),
                    self.dim
                )));
            }
        }
        self.subword = Some(table);
        self.oov_policy = OovPolicy::Subword;
        Ok(())
    }

    pub fn contains(&self, form: &str) -> bool {
        self.table.contains_key(&nfc(form))
    }

    /// Total lookup: stored vector for known forms (case-sensitively after
    /// NFC normalization, falling back to lowercase), otherwise whatever
    /// the OOV policy produces. Deterministic for a given store and form.
    pub fn lookup(&self, form: &str) -> Vec<f64> {
        let normalized = nfc(form);
        if let Some(v) = self.table.get(&normalized) {
            return v.clone();
        }
        let lowered = normalized.to_lowercase();
        if lowered != normalized {
            if let Some(v) = self.table.get(&lowered) {
                return v.clone();
            }
        }
        match self.oov_policy {
            OovPolicy::Subword => self.compose_subword(&normalized),
            OovPolicy::Random => self.random_vector(&normalized),
            OovPolicy::Zero => vec![0.0; self.dim],
        }
    }

    /// Bag-of-n-grams composition: the sum of every known gram vector of
    /// the form plus its word vector (zero when the word is absent).
    fn compose_subword(&self, normalized: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if let Some(word) = self.table.get(normalized) {
            for (o, v) in out.iter_mut().zip(word) {
                *o += v;
            }
        }
        if let Some(table) = &self.subword {
            for gram in extract_ngrams_range(normalized, table.n_min, table.n_max) {
                if let Some(v) = table.get(&gram) {
                    for (o, g) in out.iter_mut().zip(v) {
                        *o += g;
                    }
                }
            }
        }
        out
    }

    fn random_vector(&self, normalized: &str) -> Vec<f64> {
        if let Some(v) = self.random_cache.lock().unwrap().get(normalized) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.oov_seed ^ fnv1a(normalized));
        let v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-0.05..0.05)).collect();
        self.random_cache
            .lock()
            .unwrap()
            .insert(normalized.to_string(), v.clone());
        v
    }
}

fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// FNV-1a over the UTF-8 bytes; stable across runs and platforms.
fn fnv1a(s: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

struct ParsedLines {
    dim: usize,
    entries: Vec<(String, Vec<f64>)>,
    duplicates: usize,
}

fn parse_vector_lines(reader: impl BufRead) -> Result<ParsedLines> {
    let mut dim = 0usize;
    let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut duplicates = 0usize;
    let mut saw_data = false;

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        // An all-numeric two-field first line is the `count dim` header.
        if !saw_data
            && fields.len() == 2
            && fields[0].parse::<usize>().is_ok()
            && fields[1].parse::<usize>().is_ok()
        {
            saw_data = true;
            continue;
        }
        saw_data = true;
        if fields.len() < 2 {
            return Err(Error::EmbeddingFormat {
                line: line_no,
                message: "expected a form followed by vector components".into(),
            });
        }
        let form = nfc(fields[0]);
        let values: Vec<f64> = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::EmbeddingFormat {
                    line: line_no,
                    message: format!("bad vector component {f:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if dim == 0 {
            dim = values.len();
        } else if values.len() != dim {
            return Err(Error::EmbeddingFormat {
                line: line_no,
                message: format!("expected {dim} components, found {}", values.len()),
            });
        }
        match index.get(&form) {
            Some(&pos) => {
                entries[pos] = (form, values);
                duplicates += 1;
            }
            None => {
                index.insert(form.clone(), entries.len());
                entries.push((form, values));
            }
        }
    }
    if dim == 0 {
        return Err(Error::EmbeddingFormat {
            line: 0,
            message: "no vector lines found".into(),
        });
    }
    Ok(ParsedLines {
        dim,
        entries,
        duplicates,
    })
}

/// Loads a word-vector text file. Dimensionality is inferred from the
/// first data line; duplicate forms keep only their last occurrence and
/// bump [`EmbeddingStore::duplicate_count`].
pub fn load_text_vectors(reader: impl BufRead) -> Result<EmbeddingStore> {
    let parsed = parse_vector_lines(reader)?;
    let mut store = EmbeddingStore::empty(parsed.dim, OovPolicy::Random, 0);
    store.duplicates = parsed.duplicates;
    store.table = parsed.entries.into_iter().collect();
    Ok(store)
}

/// Loads a subword gram file (same line syntax; keys carry the boundary
/// markers). Gram keys outside the 3..6 marked length range are rejected.
pub fn load_subword_table(reader: impl BufRead) -> Result<SubwordTable> {
    let parsed = parse_vector_lines(reader)?;
    let mut table = SubwordTable::new(DEFAULT_NGRAM_MIN, DEFAULT_NGRAM_MAX);
    for (gram, vector) in parsed.entries {
        let chars = gram.chars().count();
        if chars < table.n_min || chars > table.n_max {
            return Err(Error::EmbeddingFormat {
                line: 0,
                message: format!(
                    "gram {gram:?} has length {chars}, outside {}..={}",
                    table.n_min, table.n_max
                ),
            });
        }
        table.insert(gram, vector);
    }
    Ok(table)
}

/// Materializes the trainable embedding matrix for a vocabulary: row `i`
/// holds `store.lookup(vocab[i])`. Returns the parameter and the
/// form-to-row map. Whether the matrix actually trains is decided by the
/// optimizer's embedding learning rate.
pub fn build_embedding_layer<T: Scalar>(
    store: &EmbeddingStore,
    vocab: &[String],
    name: &str,
) -> (Parameter<T>, HashMap<String, usize>) {
    let dim = store.dim();
    let mut data = Vec::with_capacity(vocab.len() * dim);
    let mut index = HashMap::with_capacity(vocab.len());
    for (i, form) in vocab.iter().enumerate() {
        let row = store.lookup(form);
        data.extend(row.into_iter().map(T::from_f64));
        index.insert(form.clone(), i);
    }
    let tensor = Tensor::new(vec![vocab.len(), dim], data).expect("row-per-form matrix");
    (Parameter::new(name, tensor), index)
}
