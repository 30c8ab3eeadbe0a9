//! Membership scores under three strategies and the noise-scale search.
//!
//! Every strategy produces a calibrated score where lower means more
//! member-like: raw perplexity (`loss`), perplexity minus the mean perplexity
//! of shadow models (`shadow`), and perplexity minus the mean perplexity of
//! noisy neighbors (`noisy`). A noisy neighbor feeds `e(x) + rho` with
//! `rho ~ N(0, sigma^2 I)` through the network and scores it against the
//! original tokens.

use std::collections::HashSet;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Sample, TokenSequence};
use crate::lm::{self, EmbeddingSeq, LmError, LmModel};
use crate::metrics::{self, MetricsError};

pub const DEFAULT_NEIGHBORS: usize = 10;
pub const DEFAULT_SHADOWS: usize = 10;
/// Points in the coarse geometric grid of the sigma search.
pub const GRID_POINTS: usize = 8;

const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("sigma must be finite and non-negative, got {0}")]
    BadSigma(f64),
    #[error("neighbor count must be at least 1")]
    NoNeighbors,
    #[error("shadow strategy needs at least one shadow model")]
    NoShadows,
    #[error("strategy expects {expected} shadow models, got {got}")]
    ShadowCount { expected: usize, got: usize },
    #[error("shadow model vocabulary {got} differs from the target's {want}")]
    ShadowVocab { got: usize, want: usize },
    #[error("invalid sigma bracket [{lo}, {hi}]: need 0 < lo < hi")]
    InvalidBracket { lo: f64, hi: f64 },
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("calibration sample {0} also appears in the evaluation set")]
    CalibrationOverlap(u64),
    #[error("calibration sets must both be non-empty")]
    EmptyCalibration,
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StrategySpec {
    Loss,
    Shadow {
        shadow_count: usize,
    },
    Noisy {
        sigma: f64,
        neighbors: usize,
        seed: u64,
    },
}

impl StrategySpec {
    pub fn name(&self) -> &'static str {
        match self {
            StrategySpec::Loss => "loss",
            StrategySpec::Shadow { .. } => "shadow",
            StrategySpec::Noisy { .. } => "noisy",
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        match *self {
            StrategySpec::Loss => Ok(()),
            StrategySpec::Shadow { shadow_count } if shadow_count == 0 => {
                Err(AttackError::NoShadows)
            }
            StrategySpec::Shadow { .. } => Ok(()),
            StrategySpec::Noisy {
                sigma, neighbors, ..
            } => {
                check_sigma(sigma)?;
                if neighbors == 0 {
                    return Err(AttackError::NoNeighbors);
                }
                Ok(())
            }
        }
    }
}

fn check_sigma(sigma: f64) -> Result<(), AttackError> {
    if sigma.is_finite() && sigma >= 0.0 {
        Ok(())
    } else {
        Err(AttackError::BadSigma(sigma))
    }
}

/// Per-sample audit result. Serializes as one flat row (see [`ScoreRow`]),
/// identical in CSV and JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ScoreRow", try_from = "ScoreRow")]
pub struct ScoreRecord {
    pub sample_id: u64,
    pub is_member: bool,
    pub raw_ppx: f64,
    pub calibrated_score: f64,
    pub neighbor_ppx_mean: Option<f64>,
    pub neighbor_ppx_std: Option<f64>,
    pub strategy: StrategySpec,
}

/// Flat serialized form. `K` holds the neighbor count for `noisy` and the
/// number of shadow models for `shadow`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sample_id: u64,
    pub is_member: bool,
    pub raw_ppx: f64,
    pub calibrated_score: f64,
    pub neighbor_ppx_mean: Option<f64>,
    pub neighbor_ppx_std: Option<f64>,
    pub strategy: String,
    pub sigma: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub seed: Option<u64>,
}

impl From<ScoreRecord> for ScoreRow {
    fn from(r: ScoreRecord) -> Self {
        let (sigma, k, seed) = match r.strategy {
            StrategySpec::Loss => (None, None, None),
            StrategySpec::Shadow { shadow_count } => (None, Some(shadow_count), None),
            StrategySpec::Noisy {
                sigma,
                neighbors,
                seed,
            } => (Some(sigma), Some(neighbors), Some(seed)),
        };
        ScoreRow {
            sample_id: r.sample_id,
            is_member: r.is_member,
            raw_ppx: r.raw_ppx,
            calibrated_score: r.calibrated_score,
            neighbor_ppx_mean: r.neighbor_ppx_mean,
            neighbor_ppx_std: r.neighbor_ppx_std,
            strategy: r.strategy.name().to_string(),
            sigma,
            k,
            seed,
        }
    }
}

impl TryFrom<ScoreRow> for ScoreRecord {
    type Error = String;

    fn try_from(r: ScoreRow) -> Result<Self, String> {
        let strategy = match (r.strategy.as_str(), r.sigma, r.k, r.seed) {
            ("loss", None, None, None) => StrategySpec::Loss,
            ("shadow", None, Some(shadow_count), None) => StrategySpec::Shadow { shadow_count },
            ("noisy", Some(sigma), Some(neighbors), Some(seed)) => StrategySpec::Noisy {
                sigma,
                neighbors,
                seed,
            },
            (s, ..) => return Err(format!("inconsistent strategy columns for {s:?}")),
        };
        Ok(ScoreRecord {
            sample_id: r.sample_id,
            is_member: r.is_member,
            raw_ppx: r.raw_ppx,
            calibrated_score: r.calibrated_score,
            neighbor_ppx_mean: r.neighbor_ppx_mean,
            neighbor_ppx_std: r.neighbor_ppx_std,
            strategy,
        })
    }
}

/// Mean taken as an offset from the first value, so equal inputs give that
/// value back exactly.
fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values[0] + values.iter().map(|v| v - values[0]).sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn score_loss(model: &LmModel, x: &TokenSequence) -> Result<ScoreRecord, AttackError> {
    let raw = lm::perplexity(model, x)?;
    Ok(ScoreRecord {
        sample_id: 0,
        is_member: false,
        raw_ppx: raw,
        calibrated_score: raw,
        neighbor_ppx_mean: None,
        neighbor_ppx_std: None,
        strategy: StrategySpec::Loss,
    })
}

pub fn score_shadow(
    model: &LmModel,
    shadows: &[LmModel],
    x: &TokenSequence,
) -> Result<ScoreRecord, AttackError> {
    if shadows.is_empty() {
        return Err(AttackError::NoShadows);
    }
    let raw = lm::perplexity(model, x)?;
    let ppx = shadows
        .iter()
        .map(|s| lm::perplexity(s, x))
        .collect::<Result<Vec<_>, _>>()?;
    let (mean, std) = mean_and_std(&ppx);
    Ok(ScoreRecord {
        sample_id: 0,
        is_member: false,
        raw_ppx: raw,
        calibrated_score: raw - mean,
        neighbor_ppx_mean: Some(mean),
        neighbor_ppx_std: Some(std),
        strategy: StrategySpec::Shadow {
            shadow_count: shadows.len(),
        },
    })
}

fn perturb<R: Rng + ?Sized>(e: &EmbeddingSeq, sigma: f64, rng: &mut R) -> EmbeddingSeq {
    let mut out = e.clone();
    for v in out.as_mut_slice() {
        let z: f64 = rng.sample(StandardNormal);
        *v += (sigma * z) as f32;
    }
    out
}

/// `e(x) + rho`, one fresh i.i.d. Gaussian draw per entry.
pub fn make_noisy_neighbor<R: Rng + ?Sized>(
    model: &LmModel,
    x: &TokenSequence,
    sigma: f64,
    rng: &mut R,
) -> Result<EmbeddingSeq, AttackError> {
    check_sigma(sigma)?;
    Ok(perturb(&lm::embed(model, x)?, sigma, rng))
}

fn neighbor_ppx<R: Rng + ?Sized>(
    model: &LmModel,
    e: &EmbeddingSeq,
    x: &TokenSequence,
    sigma: f64,
    k: usize,
    rng: &mut R,
) -> Result<Vec<f64>, AttackError> {
    (0..k)
        .map(|_| {
            Ok(lm::perplexity_from_embeddings(
                model,
                &perturb(e, sigma, rng),
                x,
            )?)
        })
        .collect()
}

fn noisy_record<R: Rng + ?Sized>(
    model: &LmModel,
    x: &TokenSequence,
    raw: f64,
    e: &EmbeddingSeq,
    sigma: f64,
    k: usize,
    seed: u64,
    rng: &mut R,
) -> Result<ScoreRecord, AttackError> {
    let ppx = neighbor_ppx(model, e, x, sigma, k, rng)?;
    let (mean, std) = mean_and_std(&ppx);
    Ok(ScoreRecord {
        sample_id: 0,
        is_member: false,
        raw_ppx: raw,
        calibrated_score: raw - mean,
        neighbor_ppx_mean: Some(mean),
        neighbor_ppx_std: Some(std),
        strategy: StrategySpec::Noisy {
            sigma,
            neighbors: k,
            seed,
        },
    })
}

/// Noisy-neighbor score of `x`. The record's `seed` field is left at 0;
/// [`audit`] fills it with the strategy seed.
pub fn score_noisy<R: Rng + ?Sized>(
    model: &LmModel,
    x: &TokenSequence,
    sigma: f64,
    k: usize,
    rng: &mut R,
) -> Result<ScoreRecord, AttackError> {
    check_sigma(sigma)?;
    if k == 0 {
        return Err(AttackError::NoNeighbors);
    }
    let e = lm::embed(model, x)?;
    let raw = lm::perplexity_from_embeddings(model, &e, x)?;
    noisy_record(model, x, raw, &e, sigma, k, 0, rng)
}

/// RNG stream for one sample, independent of scoring order.
pub fn sample_rng(seed: u64, sample_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ sample_id)
}

/// Scores members then non-members, in input order.
pub fn audit(
    model: &LmModel,
    strategy: &StrategySpec,
    members: &[Sample],
    nonmembers: &[Sample],
    shadows: &[LmModel],
) -> Result<Vec<ScoreRecord>, AttackError> {
    strategy.validate()?;
    if let StrategySpec::Shadow { shadow_count } = *strategy {
        if shadows.len() != shadow_count {
            return Err(AttackError::ShadowCount {
                expected: shadow_count,
                got: shadows.len(),
            });
        }
        let want = model.config().vocab_size;
        if let Some(s) = shadows.iter().find(|s| s.config().vocab_size != want) {
            return Err(AttackError::ShadowVocab {
                got: s.config().vocab_size,
                want,
            });
        }
    }
    let labeled: Vec<(&Sample, bool)> = members
        .iter()
        .map(|s| (s, true))
        .chain(nonmembers.iter().map(|s| (s, false)))
        .collect();
    labeled
        .par_iter()
        .map(|&(s, is_member)| {
            let mut record = match *strategy {
                StrategySpec::Loss => score_loss(model, &s.tokens)?,
                StrategySpec::Shadow { .. } => score_shadow(model, shadows, &s.tokens)?,
                StrategySpec::Noisy {
                    sigma,
                    neighbors,
                    seed,
                } => {
                    let mut rng = sample_rng(seed, s.id);
                    let mut r = score_noisy(model, &s.tokens, sigma, neighbors, &mut rng)?;
                    r.strategy = strategy.clone();
                    r
                }
            };
            record.sample_id = s.id;
            record.is_member = is_member;
            Ok(record)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub sigma: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSearchResult {
    pub sigma_star: f64,
    /// Objective evaluations in the order they were made.
    pub probe_log: Vec<Probe>,
    /// Final bracket around the maximum.
    pub bracket: (f64, f64),
}

impl SigmaSearchResult {
    pub fn best_auc(&self) -> f64 {
        self.probe_log
            .iter()
            .find(|p| p.sigma == self.sigma_star)
            .map_or(f64::NAN, |p| p.auc)
    }
}

/// Maximizes a unimodal objective over `[lo, hi]`: an 8-point geometric grid
/// locates the peak, then golden-section search in `ln sigma` shrinks the
/// bracketing triple until its width in sigma units is below `tol`.
/// `sigma_star` is the best probe inside the final bracket.
pub fn golden_section_search<E>(
    lo: f64,
    hi: f64,
    tol: f64,
    mut objective: impl FnMut(f64) -> Result<f64, E>,
) -> Result<SigmaSearchResult, E>
where
    E: From<AttackError>,
{
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(AttackError::InvalidBracket { lo, hi }.into());
    }
    if !(tol > 0.0) {
        return Err(AttackError::BadTolerance(tol).into());
    }
    let mut log = Vec::new();
    let mut eval = |sigma: f64, log: &mut Vec<Probe>| -> Result<f64, E> {
        let auc = objective(sigma)?;
        log.push(Probe { sigma, auc });
        Ok(auc)
    };

    let (ulo, uhi) = (lo.ln(), hi.ln());
    let step = (uhi - ulo) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| match i {
            0 => lo,
            i if i == GRID_POINTS - 1 => hi,
            i => (ulo + step * i as f64).exp(),
        })
        .collect();
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &s) in grid.iter().enumerate() {
        let v = eval(s, &mut log)?;
        if v > best_val {
            best = i;
            best_val = v;
        }
    }

    let mut a = grid[best.saturating_sub(1)].ln();
    let mut b = grid[(best + 1).min(GRID_POINTS - 1)].ln();
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = eval(x1.exp(), &mut log)?;
    let mut f2 = eval(x2.exp(), &mut log)?;
    while b.exp() - a.exp() >= tol {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = eval(x1.exp(), &mut log)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = eval(x2.exp(), &mut log)?;
        }
    }

    let bracket = (a.exp(), b.exp());
    let star = log
        .iter()
        .filter(|p| p.sigma >= bracket.0 && p.sigma <= bracket.1)
        .fold(None, |acc: Option<Probe>, p| match acc {
            Some(q) if q.auc >= p.auc => Some(q),
            _ => Some(*p),
        })
        .expect("golden-section probes lie inside the bracket");
    Ok(SigmaSearchResult {
        sigma_star: star.sigma,
        probe_log: log,
        bracket,
    })
}

/// Fits sigma on calibration samples: the objective is the noisy-strategy
/// AUC with per-sample streams keyed by `seed`, so it is deterministic in
/// sigma and equals what [`audit`] reports for the same spec.
#[allow(clippy::too_many_arguments)]
pub fn sigma_search(
    model: &LmModel,
    cal_members: &[Sample],
    cal_nonmembers: &[Sample],
    eval_ids: &[u64],
    lo: f64,
    hi: f64,
    k: usize,
    tol: f64,
    seed: u64,
) -> Result<SigmaSearchResult, AttackError> {
    if cal_members.is_empty() || cal_nonmembers.is_empty() {
        return Err(AttackError::EmptyCalibration);
    }
    if k == 0 {
        return Err(AttackError::NoNeighbors);
    }
    let held_out: HashSet<u64> = eval_ids.iter().copied().collect();
    if let Some(s) = cal_members
        .iter()
        .chain(cal_nonmembers)
        .find(|s| held_out.contains(&s.id))
    {
        return Err(AttackError::CalibrationOverlap(s.id));
    }

    let labeled: Vec<(&Sample, bool)> = cal_members
        .iter()
        .map(|s| (s, true))
        .chain(cal_nonmembers.iter().map(|s| (s, false)))
        .collect();
    let base: Vec<(EmbeddingSeq, f64)> = labeled
        .par_iter()
        .map(|(s, _)| {
            let e = lm::embed(model, &s.tokens)?;
            let raw = lm::perplexity_from_embeddings(model, &e, &s.tokens)?;
            Ok((e, raw))
        })
        .collect::<Result<_, AttackError>>()?;

    golden_section_search(lo, hi, tol, |sigma| {
        let scores = labeled
            .par_iter()
            .zip(&base)
            .map(|(&(s, is_member), (e, raw))| {
                let mut rng = sample_rng(seed, s.id);
                let r = noisy_record(model, &s.tokens, *raw, e, sigma, k, seed, &mut rng)?;
                Ok((r.calibrated_score, is_member))
            })
            .collect::<Result<Vec<_>, AttackError>>()?;
        Ok(metrics::auc(&metrics::roc_from_scores(&scores)?))
    })
}

/// Local maxima of the probe log ordered by sigma, counting only peaks that
/// rise more than `noise` above the deeper of the two valleys separating
/// them from higher ground (topographic prominence). Edge probes count.
pub fn count_prominent_peaks(probes: &[Probe], noise: f64) -> usize {
    let mut pts = probes.to_vec();
    pts.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
    pts.dedup_by(|a, b| a.sigma == b.sigma);
    let y: Vec<f64> = pts.iter().map(|p| p.auc).collect();
    let n = y.len();
    // lowest point passed on the way to the nearest higher probe; an equal
    // probe to the left also counts, so a flat maximum is counted once
    let col = |i: usize, step: isize| -> Option<f64> {
        let mut low = y[i];
        let mut j = i as isize + step;
        while j >= 0 && (j as usize) < n {
            let v = y[j as usize];
            if v > y[i] || (step < 0 && v == y[i]) {
                return Some(low);
            }
            low = low.min(v);
            j += step;
        }
        None
    };
    (0..n)
        .filter(|&i| (i == 0 || y[i] > y[i - 1]) && (i == n - 1 || y[i] >= y[i + 1]))
        .filter(|&i| {
            let prominence = match (col(i, -1), col(i, 1)) {
                (None, None) => f64::INFINITY,
                (Some(c), None) | (None, Some(c)) => y[i] - c,
                (Some(l), Some(r)) => y[i] - l.max(r),
            };
            prominence > noise
        })
        .count()
}

pub fn write_scores_csv<W: io::Write>(records: &[ScoreRecord], w: W) -> Result<(), AttackError> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_scores_csv<R: io::Read>(r: R) -> Result<Vec<ScoreRecord>, AttackError> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(AttackError::from))
        .collect()
}
