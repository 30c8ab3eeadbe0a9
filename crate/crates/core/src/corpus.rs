//! Corpus ingestion, byte-level tokenization, fixed-length windowing and the
//! member / non-member / shadow-partition split used by the audit protocol.

use std::collections::HashSet;
use std::fs;
use std::hash::Hasher;
use std::io;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Byte-level vocabulary size.
pub const BYTE_VOCAB: usize = 256;

/// Default sample length in tokens.
pub const DEFAULT_WINDOW_LEN: usize = 126;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus file not found: {0}")]
    NotFound(PathBuf),
    #[error("empty corpus: {0}")]
    Empty(PathBuf),
    #[error("cannot read corpus {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("window length must be at least 2 and stride at least 1 (got window {window_len}, stride {stride})")]
    BadWindowing { window_len: usize, stride: usize },
    #[error("corpus of {len} tokens is shorter than one window of {window_len}")]
    TooShort { len: usize, window_len: usize },
    #[error("member fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("shadow partition count must be at least 1")]
    NoPartitions,
    #[error("split of {windows} distinct windows leaves an empty side ({members} members)")]
    EmptySide { windows: usize, members: usize },
    #[error("{partitions} shadow partitions requested but only {members} members")]
    TooManyPartitions { partitions: usize, members: usize },
    #[error("split plan does not match corpus: {0}")]
    PlanMismatch(String),
}

/// 64-bit FNV-1a digest, used for corpus and checkpoint payload hashes.
pub fn digest64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    raw_bytes: Vec<u8>,
    source_id: String,
    content_hash: u64,
}

impl Corpus {
    /// Builds a corpus from in-memory bytes. Line endings are normalized.
    pub fn from_bytes(source_id: impl Into<String>, bytes: &[u8]) -> Self {
        let raw_bytes = normalize_newlines(bytes);
        let content_hash = digest64(&raw_bytes);
        Self {
            raw_bytes,
            source_id: source_id.into(),
            content_hash,
        }
    }

    pub fn raw_bytes(&self) -> &[u8] {
        &self.raw_bytes
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn content_hash(&self) -> u64 {
        self.content_hash
    }

    pub fn len(&self) -> usize {
        self.raw_bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_bytes.is_empty()
    }
}

/// `\r\n` and lone `\r` both become `\n`.
fn normalize_newlines(bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\r' => {
                out.push(b'\n');
                if bytes.get(i + 1) == Some(&b'\n') {
                    i += 1;
                }
            }
            b => out.push(b),
        }
        i += 1;
    }
    out
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| match source.kind() {
        io::ErrorKind::NotFound => CorpusError::NotFound(path.to_path_buf()),
        _ => CorpusError::Unreadable {
            path: path.to_path_buf(),
            source,
        },
    })?;
    if bytes.is_empty() {
        return Err(CorpusError::Empty(path.to_path_buf()));
    }
    Ok(Corpus::from_bytes(path.display().to_string(), &bytes))
}

/// A fixed-length run of token ids: the unit sample scored by the attack.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_token(&self) -> Option<u32> {
        self.0.iter().copied().max()
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(v: Vec<u32>) -> Self {
        Self(v)
    }
}

impl From<&[u8]> for TokenSequence {
    fn from(bytes: &[u8]) -> Self {
        Self(bytes.iter().map(|&b| u32::from(b)).collect())
    }
}

/// A window together with its position in the corpus window list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: u64,
    pub tokens: TokenSequence,
}

/// Byte-level tokenization: one id per byte, vocabulary of 256.
pub fn tokenize(corpus: &Corpus) -> Vec<u32> {
    corpus.raw_bytes.iter().map(|&b| u32::from(b)).collect()
}

/// Cuts `ids` into windows of `window_len` taken every `stride` tokens. The
/// trailing remainder shorter than a window is dropped.
pub fn make_windows(
    ids: &[u32],
    window_len: usize,
    stride: usize,
) -> Result<Vec<TokenSequence>, CorpusError> {
    if window_len < 2 || stride == 0 {
        return Err(CorpusError::BadWindowing { window_len, stride });
    }
    if ids.len() < window_len {
        return Err(CorpusError::TooShort {
            len: ids.len(),
            window_len,
        });
    }
    Ok((0..=ids.len() - window_len)
        .step_by(stride)
        .map(|start| TokenSequence(ids[start..start + window_len].to_vec()))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub member_samples: Vec<Sample>,
    pub nonmember_samples: Vec<Sample>,
    /// Disjoint index sets over `member_samples`.
    pub shadow_partitions: Vec<Vec<usize>>,
    pub seed: u64,
    pub member_fraction: f64,
}

impl SplitPlan {
    pub fn shadow_k(&self) -> usize {
        self.shadow_partitions.len()
    }

    /// Training set for shadow model `index`.
    pub fn shadow_train_set(&self, index: usize) -> Vec<TokenSequence> {
        self.shadow_partitions[index]
            .iter()
            .map(|&i| self.member_samples[i].tokens.clone())
            .collect()
    }

    pub fn member_tokens(&self) -> Vec<TokenSequence> {
        self.member_samples
            .iter()
            .map(|s| s.tokens.clone())
            .collect()
    }

    /// The serializable form: parameters and window indices, no token content.
    pub fn document(&self, corpus_hash: u64, window_len: usize, stride: usize) -> SplitDocument {
        SplitDocument {
            corpus_hash: format!("{corpus_hash:016x}"),
            window_len,
            stride,
            member_fraction: self.member_fraction,
            shadow_k: self.shadow_k(),
            seed: self.seed,
            member_windows: self.member_samples.iter().map(|s| s.id).collect(),
            nonmember_windows: self.nonmember_samples.iter().map(|s| s.id).collect(),
            shadow_partitions: self.shadow_partitions.clone(),
        }
    }
}

/// JSON form of a [`SplitPlan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitDocument {
    pub corpus_hash: String,
    pub window_len: usize,
    pub stride: usize,
    pub member_fraction: f64,
    pub shadow_k: usize,
    pub seed: u64,
    pub member_windows: Vec<u64>,
    pub nonmember_windows: Vec<u64>,
    pub shadow_partitions: Vec<Vec<usize>>,
}

impl SplitDocument {
    /// Re-derives the plan against `corpus`, checking the recorded hash.
    pub fn resolve(&self, corpus: &Corpus) -> Result<SplitPlan, CorpusError> {
        let actual = format!("{:016x}", corpus.content_hash());
        if actual != self.corpus_hash {
            return Err(CorpusError::PlanMismatch(format!(
                "corpus hash {actual} != recorded {}",
                self.corpus_hash
            )));
        }
        let windows = make_windows(&tokenize(corpus), self.window_len, self.stride)?;
        let pick = |ids: &[u64]| -> Result<Vec<Sample>, CorpusError> {
            ids.iter()
                .map(|&id| {
                    windows
                        .get(id as usize)
                        .map(|w| Sample {
                            id,
                            tokens: w.clone(),
                        })
                        .ok_or_else(|| {
                            CorpusError::PlanMismatch(format!("window index {id} out of range"))
                        })
                })
                .collect()
        };
        Ok(SplitPlan {
            member_samples: pick(&self.member_windows)?,
            nonmember_samples: pick(&self.nonmember_windows)?,
            shadow_partitions: self.shadow_partitions.clone(),
            seed: self.seed,
            member_fraction: self.member_fraction,
        })
    }
}

/// Deduplicates, shuffles with `seed`, takes the first `floor(fraction * N)`
/// windows as members and deals them round-robin into `shadow_k` partitions.
/// Sample ids are indices into `windows`.
pub fn split(
    windows: &[TokenSequence],
    member_fraction: f64,
    shadow_k: usize,
    seed: u64,
) -> Result<SplitPlan, CorpusError> {
    if !(member_fraction > 0.0 && member_fraction < 1.0) {
        return Err(CorpusError::BadFraction(member_fraction));
    }
    if shadow_k == 0 {
        return Err(CorpusError::NoPartitions);
    }

    let mut seen = HashSet::with_capacity(windows.len());
    let mut order: Vec<usize> = (0..windows.len())
        .filter(|&i| seen.insert(windows[i].tokens()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n = order.len();
    let n_members = (member_fraction * n as f64).floor() as usize;
    if n_members == 0 || n_members == n {
        return Err(CorpusError::EmptySide {
            windows: n,
            members: n_members,
        });
    }
    if shadow_k > n_members {
        return Err(CorpusError::TooManyPartitions {
            partitions: shadow_k,
            members: n_members,
        });
    }

    let to_sample = |&i: &usize| Sample {
        id: i as u64,
        tokens: windows[i].clone(),
    };
    let member_samples: Vec<Sample> = order[..n_members].iter().map(to_sample).collect();
    let nonmember_samples: Vec<Sample> = order[n_members..].iter().map(to_sample).collect();

    let mut shadow_partitions = vec![Vec::new(); shadow_k];
    for i in 0..n_members {
        shadow_partitions[i % shadow_k].push(i);
    }

    Ok(SplitPlan {
        member_samples,
        nonmember_samples,
        shadow_partitions,
        seed,
        member_fraction,
    })
}
