//! A small autoregressive transformer language model.
//!
//! The model is factored as `f(x) = g(e(x))`: [`embed`] is the token plus
//! learned-position lookup `e`, and [`forward_from_embeddings`] runs the rest
//! of the network `g`. Exposing the embedding output lets callers score
//! perturbed inputs against the original tokens.

mod checkpoint;
pub(crate) mod kernels;
mod layout;
pub(crate) mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenSequence;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CheckpointError,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use layout::TensorSlot;
pub use model::Transformer;
pub use train::{grad_check, grad_check_with, train, train_with_progress, GradCheckReport};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of {len} tokens exceeds context length {context_len}")]
    TooLong { len: usize, context_len: usize },
    #[error("token id {token} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("perplexity needs at least 2 tokens, got {0}")]
    TooShort(usize),
    #[error("embedding has {rows} rows but {labels} labels were given")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("embedding width {got} does not match d_model {want}")]
    WidthMismatch { got: usize, want: usize },
    #[error("non-finite value in input embeddings")]
    NonFinite,
    #[error("empty training set")]
    EmptyTrainSet,
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub vocab_size: usize,
    /// Embedding width `n`.
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_len: usize,
    pub learning_rate: f64,
    pub train_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            context_len: 128,
            learning_rate: 3e-4,
            train_steps: 1000,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::InvalidConfig(m.to_string()));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return bad("vocab_size, d_model, n_layers and n_heads must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.context_len < 2 {
            return bad("context_len must be at least 2");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive and finite");
        }
        Ok(())
    }
}

/// The model `f` used for training, scoring and checkpoints.
pub type LmModel = Transformer<f32>;

impl LmModel {
    /// Freshly initialized model, seeded.
    pub fn new(config: LmConfig, seed: u64) -> Result<Self, LmError> {
        config.validate()?;
        Ok(Self::init(config, seed, 0.02))
    }

    /// A model whose every parameter is zero. Its layer-norm gains are zero
    /// too, so every prediction is uniform.
    pub fn zeroed(config: LmConfig) -> Result<Self, LmError> {
        config.validate()?;
        let n = layout::Layout::new(&config).total;
        Ok(Self::from_params(config, vec![0.0; n]))
    }
}

impl<F: kernels::Real> Transformer<F> {
    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Named tensors in storage order.
    pub fn tensors(&self) -> &[TensorSlot] {
        &self.layout.slots
    }

    /// Slice of one named tensor.
    pub fn tensor(&self, name: &str) -> Option<&[F]> {
        self.layout
            .slots
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.params[s.offset..s.offset + s.numel()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [F]> {
        let slot = self.layout.slots.iter().find(|s| s.name == name)?.clone();
        Some(&mut self.params[slot.offset..slot.offset + slot.numel()])
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), LmError> {
        if tokens.len() > self.config.context_len {
            return Err(LmError::TooLong {
                len: tokens.len(),
                context_len: self.config.context_len,
            });
        }
        if let Some(&token) = tokens
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(LmError::TokenOutOfRange {
                token,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }
}

/// `e(x)`: a `T x d_model` matrix of token plus position embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSeq {
    rows: usize,
    width: usize,
    data: Vec<f32>,
}

impl EmbeddingSeq {
    pub fn new(rows: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * width, data.len(), "embedding shape mismatch");
        Self { rows, width, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Next-token distributions; row `t` conditions on tokens `0..=t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbSeq {
    rows: usize,
    vocab: usize,
    data: Vec<f32>,
}

impl ProbSeq {
    pub fn new(rows: usize, vocab: usize, data: Vec<f32>) -> Self {
        assert_eq!(rows * vocab, data.len(), "probability shape mismatch");
        Self { rows, vocab, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.vocab..(t + 1) * self.vocab]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

pub fn embed(model: &LmModel, x: &TokenSequence) -> Result<EmbeddingSeq, LmError> {
    model.check_tokens(x.tokens())?;
    Ok(EmbeddingSeq::new(
        x.len(),
        model.config.d_model,
        model.embed_tokens(x.tokens()),
    ))
}

/// `g(h)`: causal transformer body and softmax head.
pub fn forward_from_embeddings(model: &LmModel, h: &EmbeddingSeq) -> Result<ProbSeq, LmError> {
    if h.width != model.config.d_model {
        return Err(LmError::WidthMismatch {
            got: h.width,
            want: model.config.d_model,
        });
    }
    if h.rows > model.config.context_len {
        return Err(LmError::TooLong {
            len: h.rows,
            context_len: model.config.context_len,
        });
    }
    if h.data.iter().any(|v| !v.is_finite()) {
        return Err(LmError::NonFinite);
    }
    let cache = model.forward(&h.data, h.rows);
    Ok(ProbSeq {
        rows: h.rows,
        vocab: model.config.vocab_size,
        data: cache.probs,
    })
}

pub fn next_token_probs(model: &LmModel, x: &TokenSequence) -> Result<ProbSeq, LmError> {
    forward_from_embeddings(model, &embed(model, x)?)
}

/// Mean negative log-likelihood (natural log) of `labels[1..]` under `probs`,
/// with probabilities floored at [`PROB_FLOOR`].
pub fn perplexity_of(probs: &ProbSeq, labels: &[u32]) -> Result<f64, LmError> {
    if labels.len() < 2 {
        return Err(LmError::TooShort(labels.len()));
    }
    if probs.rows != labels.len() {
        return Err(LmError::LengthMismatch {
            rows: probs.rows,
            labels: labels.len(),
        });
    }
    let nll: f64 = labels[1..]
        .iter()
        .enumerate()
        .map(|(t, &tok)| -(f64::from(probs.row(t)[tok as usize])).max(PROB_FLOOR).ln())
        .sum();
    Ok(nll / (labels.len() - 1) as f64)
}

/// Average negative log-likelihood of `x` over positions 2..=|x|.
pub fn perplexity(model: &LmModel, x: &TokenSequence) -> Result<f64, LmError> {
    if x.len() < 2 {
        return Err(LmError::TooShort(x.len()));
    }
    perplexity_of(&next_token_probs(model, x)?, x.tokens())
}

/// Perplexity of the true `labels` when the network is fed `h` in place of
/// `e(labels)`.
pub fn perplexity_from_embeddings(
    model: &LmModel,
    h: &EmbeddingSeq,
    labels: &TokenSequence,
) -> Result<f64, LmError> {
    if h.rows != labels.len() {
        return Err(LmError::LengthMismatch {
            rows: h.rows,
            labels: labels.len(),
        });
    }
    if labels.len() < 2 {
        return Err(LmError::TooShort(labels.len()));
    }
    model.check_tokens(labels.tokens())?;
    perplexity_of(&forward_from_embeddings(model, h)?, labels.tokens())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(len: usize, salt: u32) -> TokenSequence {
        TokenSequence::new(
            (0..len as u32)
                .map(|i| (i * 37 + salt * 11) % 256)
                .collect(),
        )
    }

    fn small() -> LmConfig {
        LmConfig {
            d_model: 32,
            n_heads: 4,
            context_len: 64,
            ..LmConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(LmConfig::default().validate().is_ok());
        let bad = LmConfig {
            n_heads: 3,
            ..LmConfig::default()
        };
        assert!(matches!(bad.validate(), Err(LmError::InvalidConfig(_))));
        let bad = LmConfig {
            context_len: 1,
            ..LmConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_tables_embed_to_zero() {
        let model = LmModel::zeroed(LmConfig::default()).unwrap();
        let h = embed(&model, &seq(126, 1)).unwrap();
        assert_eq!((h.rows(), h.width()), (126, 64));
        assert!(h.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_is_lookup_sum() {
        let model = LmModel::new(small(), 3).unwrap();
        let x = seq(10, 2);
        let h = embed(&model, &x).unwrap();
        let wte = model.tensor("wte").unwrap();
        let wpe = model.tensor("wpe").unwrap();
        let d = 32;
        for t in 0..10 {
            let tok = x.tokens()[t] as usize;
            for j in 0..d {
                assert_eq!(h.row(t)[j], wte[tok * d + j] + wpe[t * d + j]);
            }
        }
        assert_eq!(h, embed(&model, &x).unwrap());
    }

    #[test]
    fn embed_rejects_bad_input() {
        let model = LmModel::new(small(), 3).unwrap();
        assert!(matches!(
            embed(&model, &seq(65, 0)),
            Err(LmError::TooLong { .. })
        ));
        let x = TokenSequence::new(vec![1, 256]);
        assert!(matches!(
            embed(&model, &x),
            Err(LmError::TokenOutOfRange { token: 256, .. })
        ));
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = LmModel::zeroed(LmConfig::default()).unwrap();
        let x = seq(126, 5);
        let probs = next_token_probs(&model, &x).unwrap();
        assert_eq!((probs.rows(), probs.vocab()), (126, 256));
        assert!(probs.as_slice().iter().all(|&p| p == 1.0 / 256.0));
        let ppx = perplexity(&model, &x).unwrap();
        assert!((ppx - 256f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn rows_are_distributions() {
        let model = LmModel::new(LmConfig::default(), 9).unwrap();
        let probs = next_token_probs(&model, &seq(126, 3)).unwrap();
        for t in 0..probs.rows() {
            let row = probs.row(t);
            assert!(row.iter().all(|&p| p >= 0.0));
            let s: f64 = row.iter().map(|&p| f64::from(p)).sum();
            assert!((s - 1.0).abs() < 1e-5, "row {t} sums to {s}");
        }
    }

    #[test]
    fn factorization_is_exact() {
        let model = LmModel::new(LmConfig::default(), 4).unwrap();
        let x = seq(126, 8);
        let direct = next_token_probs(&model, &x).unwrap();
        let via = forward_from_embeddings(&model, &embed(&model, &x).unwrap()).unwrap();
        assert_eq!(direct, via);
        assert_eq!(direct, next_token_probs(&model, &x).unwrap());
    }

    #[test]
    fn future_rows_do_not_leak() {
        let model = LmModel::new(LmConfig::default(), 5).unwrap();
        let x = seq(40, 1);
        let h = embed(&model, &x).unwrap();
        let base = forward_from_embeddings(&model, &h).unwrap();
        let cut = 17;
        let mut h2 = h.clone();
        let d = h.width();
        // reverse the rows after `cut`
        let tail: Vec<f32> = (cut + 1..40)
            .rev()
            .flat_map(|t| h.row(t).to_vec())
            .collect();
        h2.as_mut_slice()[(cut + 1) * d..].copy_from_slice(&tail);
        let out = forward_from_embeddings(&model, &h2).unwrap();
        for t in 0..=cut {
            assert_eq!(base.row(t), out.row(t), "row {t}");
        }
        assert_ne!(base.row(cut + 1), out.row(cut + 1));
    }

    #[test]
    fn forward_rejects_non_finite() {
        let model = LmModel::new(small(), 1).unwrap();
        let mut h = embed(&model, &seq(5, 0)).unwrap();
        h.as_mut_slice()[3] = f32::NAN;
        assert!(matches!(
            forward_from_embeddings(&model, &h),
            Err(LmError::NonFinite)
        ));
    }

    #[test]
    fn perplexity_of_known_probabilities() {
        // three scored positions with probabilities 1/2, 1/4, 1/8 of the truth
        let labels = [0u32, 1, 2, 3];
        let mut data = vec![0.0f32; 4 * 4];
        for (t, &p) in [0.5f32, 0.25, 0.125].iter().enumerate() {
            let target = labels[t + 1] as usize;
            for j in 0..4 {
                data[t * 4 + j] = if j == target { p } else { (1.0 - p) / 3.0 };
            }
        }
        let probs = ProbSeq {
            rows: 4,
            vocab: 4,
            data,
        };
        let oracle = -(0.5f64.ln() + 0.25f64.ln() + 0.125f64.ln()) / 3.0;
        let got = perplexity_of(&probs, &labels).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn perplexity_of_perfect_and_impossible_predictions() {
        let labels = [2u32, 0, 1];
        let mut data = vec![0.0f32; 3 * 3];
        data[0] = 1.0; // row 0 predicts token 0
        data[3 + 1] = 1.0; // row 1 predicts token 1
        data[6] = 1.0;
        let probs = ProbSeq {
            rows: 3,
            vocab: 3,
            data: data.clone(),
        };
        assert_eq!(perplexity_of(&probs, &labels).unwrap(), 0.0);
        let wrong = [2u32, 2, 2];
        let ppx = perplexity_of(&probs, &wrong).unwrap();
        assert!((ppx + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn perplexity_needs_two_tokens() {
        let model = LmModel::new(small(), 1).unwrap();
        assert!(matches!(
            perplexity(&model, &TokenSequence::new(vec![4])),
            Err(LmError::TooShort(1))
        ));
    }

    #[test]
    fn perplexity_from_clean_embeddings_matches() {
        let model = LmModel::new(LmConfig::default(), 6).unwrap();
        let x = seq(126, 4);
        let h = embed(&model, &x).unwrap();
        assert_eq!(
            perplexity_from_embeddings(&model, &h, &x).unwrap(),
            perplexity(&model, &x).unwrap()
        );
        let mut noisy = h.clone();
        noisy.as_mut_slice().iter_mut().for_each(|v| *v += 0.0);
        assert_eq!(
            perplexity_from_embeddings(&model, &noisy, &x).unwrap(),
            perplexity(&model, &x).unwrap()
        );
        let short = TokenSequence::new(x.tokens()[..100].to_vec());
        assert!(matches!(
            perplexity_from_embeddings(&model, &h, &short),
            Err(LmError::LengthMismatch { .. })
        ));
    }
}
