//! ROC analysis of membership scores: threshold sweep, AUC, TPR at low FPR
//! with exact binomial intervals, and empirical epsilon lower bounds
//! `e^eps >= TPR / FPR`.
//!
//! Scores follow the attack convention: lower means more member-like, and a
//! threshold `gamma` predicts "member" for every score strictly below it.

use std::cmp::Ordering;
use std::io;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::attack::ScoreRecord;

/// Confidence level used for every reported interval.
pub const DEFAULT_CONFIDENCE: f64 = 0.95;

/// FPR operating points reported by audits.
pub const LOW_FPR_TARGETS: [f64; 3] = [1e-3, 1e-2, 1e-1];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("ROC needs at least one member and one non-member ({members} members, {nonmembers} non-members)")]
    SingleClass { members: usize, nonmembers: usize },
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("invalid binomial parameters k={k}, n={n}, confidence={confidence}")]
    InvalidBinomial { k: u64, n: u64, confidence: f64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse::<f64>().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Ascending threshold, hence non-decreasing FPR and TPR.
    pub points: Vec<RocPoint>,
    pub n_members: u64,
    pub n_nonmembers: u64,
}

/// `(score, is_member)` pairs to ROC curve.
pub fn roc_from_scores(scores: &[(f64, bool)]) -> Result<RocCurve, MetricsError> {
    if let Some(&(s, _)) = scores.iter().find(|(s, _)| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(s));
    }
    let n_members = scores.iter().filter(|(_, m)| *m).count() as u64;
    let n_nonmembers = scores.len() as u64 - n_members;
    if n_members == 0 || n_nonmembers == 0 {
        return Err(MetricsError::SingleClass {
            members: n_members as usize,
            nonmembers: n_nonmembers as usize,
        });
    }

    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let point = |threshold: f64, tp: u64, fp: u64| RocPoint {
        threshold,
        tp,
        fp,
        fn_: n_members - tp,
        tn: n_nonmembers - fp,
        tpr: tp as f64 / n_members as f64,
        fpr: fp as f64 / n_nonmembers as f64,
    };

    let mut points = vec![point(f64::NEG_INFINITY, 0, 0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        // every score equal to sorted[i].0 flips at once
        let value = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == value {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let threshold = match sorted.get(i) {
            Some(&(next, _)) => {
                let mid = value + (next - value) / 2.0;
                if mid > value {
                    mid
                } else {
                    next
                }
            }
            None => f64::INFINITY,
        };
        points.push(point(threshold, tp, fp));
    }
    Ok(RocCurve {
        points,
        n_members,
        n_nonmembers,
    })
}

pub fn roc(records: &[ScoreRecord]) -> Result<RocCurve, MetricsError> {
    let scores: Vec<(f64, bool)> = records
        .iter()
        .map(|r| (r.calibrated_score, r.is_member))
        .collect();
    roc_from_scores(&scores)
}

/// Trapezoidal area under the curve, accumulated in integer counts.
pub fn auc(curve: &RocCurve) -> f64 {
    let twice_area: u128 = curve
        .points
        .windows(2)
        .map(|w| u128::from(w[1].fp - w[0].fp) * u128::from(w[0].tp + w[1].tp))
        .sum();
    twice_area as f64 / (2.0 * curve.n_members as f64 * curve.n_nonmembers as f64)
}

/// Mann-Whitney pair counts: members scoring strictly below a non-member
/// (`wins`) and exact ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub wins: u64,
    pub ties: u64,
    pub pairs: u64,
}

impl PairCounts {
    pub fn auc(&self) -> f64 {
        (self.wins as f64 + 0.5 * self.ties as f64) / self.pairs as f64
    }
}

pub fn pair_counts(scores: &[(f64, bool)]) -> PairCounts {
    let mut nonmembers: Vec<f64> = scores.iter().filter(|s| !s.1).map(|s| s.0).collect();
    nonmembers.sort_by(f64::total_cmp);
    let n = nonmembers.len() as u64;
    let mut wins = 0;
    let mut ties = 0;
    let mut members = 0;
    for &(s, m) in scores {
        if !m {
            continue;
        }
        members += 1;
        let below_or_eq = nonmembers.partition_point(|&v| v <= s) as u64;
        let below = nonmembers.partition_point(|&v| v < s) as u64;
        wins += n - below_or_eq;
        ties += below_or_eq - below;
    }
    PairCounts {
        wins,
        ties,
        pairs: members * n,
    }
}

/// Hanley-McNeil standard error of an AUC estimate.
pub fn auc_standard_error(auc: f64, n_members: u64, n_nonmembers: u64) -> f64 {
    let (np, nn) = (n_members as f64, n_nonmembers as f64);
    let q1 = auc / (2.0 - auc);
    let q2 = 2.0 * auc * auc / (1.0 + auc);
    let var = (auc * (1.0 - auc) + (np - 1.0) * (q1 - auc * auc) + (nn - 1.0) * (q2 - auc * auc))
        / (np * nn);
    var.max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialInterval {
    pub k: u64,
    pub n: u64,
    pub confidence: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Quantile of Beta(a, b) by bisection on the regularized incomplete beta.
fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Clopper-Pearson exact interval for `k` successes in `n` trials.
pub fn clopper_pearson(k: u64, n: u64, confidence: f64) -> Result<BinomialInterval, MetricsError> {
    if n == 0 || k > n || !(confidence > 0.0 && confidence < 1.0) {
        return Err(MetricsError::InvalidBinomial { k, n, confidence });
    }
    let alpha = 1.0 - confidence;
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 {
        0.0
    } else {
        beta_quantile(alpha / 2.0, kf, nf - kf + 1.0)
    };
    let hi = if k == n {
        1.0
    } else {
        beta_quantile(1.0 - alpha / 2.0, kf + 1.0, nf - kf)
    };
    Ok(BinomialInterval {
        k,
        n,
        confidence,
        lo: lo.min(kf / nf),
        hi: hi.max(kf / nf),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TprAtFpr {
    pub fpr_target: f64,
    pub fpr_achieved: f64,
    pub tpr: f64,
    pub tpr_interval: BinomialInterval,
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
}

/// TPR at the achievable operating point with the largest FPR not above
/// `fpr_target`. No interpolation between points.
pub fn tpr_at_fpr(curve: &RocCurve, fpr_target: f64) -> TprAtFpr {
    let best = curve
        .points
        .iter()
        .filter(|p| p.fpr <= fpr_target)
        .max_by(|a, b| {
            a.fpr
                .partial_cmp(&b.fpr)
                .unwrap_or(Ordering::Equal)
                .then(a.tp.cmp(&b.tp))
        })
        .unwrap_or(&curve.points[0]);
    TprAtFpr {
        fpr_target,
        fpr_achieved: best.fpr,
        tpr: best.tpr,
        tpr_interval: clopper_pearson(best.tp, curve.n_members, DEFAULT_CONFIDENCE)
            .expect("curve counts are valid"),
        threshold: best.threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// `ln(tpr / fpr)` of the ROC point.
    pub eps_lower: f64,
    /// `ln(tpr_lo / fpr_hi)` from the Clopper-Pearson bounds, when defined.
    pub eps_interval_lo: Option<f64>,
    /// `ln(tpr_hi / fpr_lo)`, when defined.
    pub eps_interval_hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsCurve {
    pub points: Vec<EpsPoint>,
    /// ROC points dropped because FPR or TPR was zero.
    pub skipped: usize,
}

impl EpsCurve {
    /// Largest point estimate among points with `fpr >= min_fpr`.
    pub fn max_eps(&self, min_fpr: f64) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.fpr >= min_fpr)
            .map(|p| p.eps_lower)
            .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
    }
}

fn eps_curve(curve: &RocCurve, confidence: Option<f64>) -> EpsCurve {
    let mut points = Vec::new();
    let mut skipped = 0;
    for p in &curve.points {
        if p.fpr <= 0.0 || p.tpr <= 0.0 {
            skipped += 1;
            continue;
        }
        let (lo, hi) = match confidence {
            Some(c) => {
                let t = clopper_pearson(p.tp, curve.n_members, c).expect("valid counts");
                let f = clopper_pearson(p.fp, curve.n_nonmembers, c).expect("valid counts");
                let lo = (t.lo > 0.0).then(|| (t.lo / f.hi).ln());
                let hi = (f.lo > 0.0).then(|| (t.hi / f.lo).ln());
                (lo, hi)
            }
            None => (None, None),
        };
        points.push(EpsPoint {
            fpr: p.fpr,
            tpr: p.tpr,
            eps_lower: (p.tpr / p.fpr).ln(),
            eps_interval_lo: lo,
            eps_interval_hi: hi,
        });
    }
    points.sort_by(|a, b| a.fpr.total_cmp(&b.fpr));
    EpsCurve { points, skipped }
}

/// Point-estimate epsilon lower bound at every ROC point with positive FPR
/// and TPR.
pub fn empirical_epsilon(curve: &RocCurve) -> EpsCurve {
    eps_curve(curve, None)
}

/// As [`empirical_epsilon`], also bounding the ratio with Clopper-Pearson
/// limits of TPR and FPR.
pub fn empirical_epsilon_with_intervals(curve: &RocCurve, confidence: f64) -> EpsCurve {
    eps_curve(curve, Some(confidence))
}

/// One-sided Welch t-test of `mean(a) < mean(b)`; returns the p-value.
pub fn welch_t_test_less(a: &[f64], b: &[f64]) -> f64 {
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (n, mean, var)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    StudentsT::new(0.0, 1.0, df)
        .expect("positive degrees of freedom")
        .cdf(t)
}

pub fn write_roc_csv<W: io::Write>(curve: &RocCurve, w: W) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    for p in &curve.points {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_eps_csv<W: io::Write>(curve: &EpsCurve, w: W) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    for p in &curve.points {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_auc(scores: &[(f64, bool)]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for &(m, _) in scores.iter().filter(|s| s.1) {
            for &(n, _) in scores.iter().filter(|s| !s.1) {
                pairs += 1.0;
                total += match m.partial_cmp(&n).unwrap() {
                    Ordering::Less => 1.0,
                    Ordering::Equal => 0.5,
                    Ordering::Greater => 0.0,
                };
            }
        }
        total / pairs
    }

    #[test]
    fn four_point_example() {
        let scores = [(1.0, true), (3.0, true), (2.0, false), (4.0, false)];
        let curve = roc_from_scores(&scores).unwrap();
        assert_eq!(brute_force_auc(&scores), 0.75);
        assert_eq!(auc(&curve), 0.75);
        let fprs: Vec<f64> = curve.points.iter().map(|p| p.fpr).collect();
        let tprs: Vec<f64> = curve.points.iter().map(|p| p.tpr).collect();
        assert_eq!(fprs, vec![0.0, 0.0, 0.5, 0.5, 1.0]);
        assert_eq!(tprs, vec![0.0, 0.5, 0.5, 1.0, 1.0]);
        assert_eq!(curve.points[1].threshold, 1.5);
    }

    #[test]
    fn perfect_separation_reaches_corner() {
        let scores = [(0.1, true), (0.2, true), (0.5, false), (0.9, false)];
        let curve = roc_from_scores(&scores).unwrap();
        assert!(curve.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(auc(&curve), 1.0);
    }

    #[test]
    fn constant_scores_are_uninformative() {
        let scores = [(2.0, true), (2.0, false), (2.0, true), (2.0, false)];
        let curve = roc_from_scores(&scores).unwrap();
        assert_eq!(curve.points.len(), 2);
        assert_eq!((curve.points[0].fpr, curve.points[0].tpr), (0.0, 0.0));
        assert_eq!((curve.points[1].fpr, curve.points[1].tpr), (1.0, 1.0));
        assert_eq!(auc(&curve), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(
            roc_from_scores(&[(1.0, true), (2.0, true)]),
            Err(MetricsError::SingleClass { .. })
        ));
        assert!(matches!(
            roc_from_scores(&[(f64::NAN, true), (2.0, false)]),
            Err(MetricsError::NonFiniteScore(_))
        ));
    }

    #[test]
    fn adjacent_floats_get_a_separating_threshold() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let curve = roc_from_scores(&[(a, true), (b, false)]).unwrap();
        let mid = &curve.points[1];
        assert!(a < mid.threshold && !(b < mid.threshold));
        assert_eq!((mid.tp, mid.fp), (1, 0));
    }

    #[test]
    fn tpr_at_fpr_endpoints() {
        let scores = [(1.0, true), (3.0, true), (2.0, false), (4.0, false)];
        let curve = roc_from_scores(&scores).unwrap();
        assert_eq!(tpr_at_fpr(&curve, 1.0).tpr, 1.0);
        let zero = tpr_at_fpr(&curve, 0.0);
        assert_eq!((zero.tpr, zero.fpr_achieved), (0.5, 0.0));
        // lowest member score is above a non-member: nothing separable at FPR 0
        let scores = [(5.0, true), (3.0, false), (6.0, false)];
        let curve = roc_from_scores(&scores).unwrap();
        let r = tpr_at_fpr(&curve, 0.1);
        assert_eq!(r.tpr, 0.0);
        assert_eq!(r.tpr_interval.lo, 0.0);
    }

    #[test]
    fn clopper_pearson_closed_forms() {
        let upper = 1.0 - 0.025f64.powf(0.1);
        let i = clopper_pearson(0, 10, 0.95).unwrap();
        assert_eq!(i.lo, 0.0);
        assert!((i.hi - upper).abs() < 1e-9);
        assert!((i.hi - 0.3085).abs() < 1e-3);
        let j = clopper_pearson(10, 10, 0.95).unwrap();
        assert!((j.lo - 0.025f64.powf(0.1)).abs() < 1e-9);
        assert_eq!(j.hi, 1.0);
        let h = clopper_pearson(5, 10, 0.95).unwrap();
        assert!((h.lo - 0.187).abs() < 1e-3 && (h.hi - 0.813).abs() < 1e-3);
    }

    #[test]
    fn clopper_pearson_rejects_bad_input() {
        assert!(clopper_pearson(3, 2, 0.95).is_err());
        assert!(clopper_pearson(0, 0, 0.95).is_err());
        assert!(clopper_pearson(1, 2, 1.0).is_err());
    }

    #[test]
    fn clopper_pearson_monte_carlo_tail_masses() {
        // the limits for k=5, n=10 are where the binomial tails reach 2.5%
        use rand::{Rng, SeedableRng};
        let i = clopper_pearson(5, 10, 0.95).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let draws = 1_000_000;
        let tail = |p: f64, rng: &mut rand_chacha::ChaCha8Rng, upper: bool| {
            let mut hits = 0;
            for _ in 0..draws {
                let k = (0..10).filter(|_| rng.random::<f64>() < p).count();
                if (upper && k >= 5) || (!upper && k <= 5) {
                    hits += 1;
                }
            }
            hits as f64 / draws as f64
        };
        assert!((tail(i.lo, &mut rng, true) - 0.025).abs() < 1e-3);
        assert!((tail(i.hi, &mut rng, false) - 0.025).abs() < 1e-3);
    }

    #[test]
    fn epsilon_arithmetic() {
        // five members below every non-member but one: tpr 0.5 at fpr 0.1
        let mut s2: Vec<(f64, bool)> = (0..10).map(|i| (i as f64, true)).collect();
        s2[5..].iter_mut().for_each(|s| s.0 += 50.0);
        s2.extend((0..10).map(|i| (if i == 0 { 4.5 } else { 60.0 + i as f64 }, false)));
        let curve = roc_from_scores(&s2).unwrap();
        let eps = empirical_epsilon(&curve);
        let at = eps
            .points
            .iter()
            .find(|p| p.fpr == 0.1 && p.tpr == 0.5)
            .unwrap();
        assert!((at.eps_lower - 5f64.ln()).abs() < 1e-12);
        assert!(eps.skipped >= 1);
        for p in &eps.points {
            assert_eq!(p.eps_lower, (p.tpr / p.fpr).ln());
        }
        let diag =
            roc_from_scores(&[(1.0, true), (1.0, false), (2.0, true), (2.0, false)]).unwrap();
        let e = empirical_epsilon(&diag);
        assert!(e.points.iter().all(|p| p.eps_lower == 0.0));
    }

    #[test]
    fn epsilon_intervals_bracket_point_estimate() {
        let scores: Vec<(f64, bool)> = (0..200)
            .map(|i| {
                (
                    ((i * 7919) % 200) as f64 + if i % 2 == 0 { -20.0 } else { 0.0 },
                    i % 2 == 0,
                )
            })
            .collect();
        let curve = roc_from_scores(&scores).unwrap();
        let eps = empirical_epsilon_with_intervals(&curve, 0.95);
        for p in &eps.points {
            if let Some(lo) = p.eps_interval_lo {
                assert!(lo <= p.eps_lower);
            }
            if let Some(hi) = p.eps_interval_hi {
                assert!(hi >= p.eps_lower);
            }
        }
    }

    #[test]
    fn continuous_random_classifier_has_small_epsilon() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let scores: Vec<(f64, bool)> = (0..20_000)
            .map(|i| (rng.random::<f64>(), i % 2 == 0))
            .collect();
        let eps = empirical_epsilon(&roc_from_scores(&scores).unwrap());
        let max = eps.max_eps(1e-2).unwrap();
        assert!(max < 0.3, "max eps {max}");
    }

    #[test]
    fn welch_detects_shift() {
        let a: Vec<f64> = (0..50).map(|i| (i % 10) as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| (i % 10) as f64 + 3.0).collect();
        assert!(welch_t_test_less(&a, &b) < 1e-6);
        assert!(welch_t_test_less(&b, &a) > 0.99);
    }

    #[test]
    fn threshold_json_keeps_infinities() {
        let curve = roc_from_scores(&[(1.0, true), (2.0, false)]).unwrap();
        let json = serde_json::to_string(&curve).unwrap();
        assert!(json.contains("\"-inf\"") && json.contains("\"inf\""));
        let back: RocCurve = serde_json::from_str(&json).unwrap();
        assert_eq!(back, curve);
    }

    fn scored_sets() -> impl Strategy<Value = Vec<(f64, bool)>> {
        (1usize..=100, 1usize..=100).prop_flat_map(|(m, n)| {
            (
                proptest::collection::vec(0u8..20, m),
                proptest::collection::vec(0u8..20, n),
            )
                .prop_map(|(ms, ns)| {
                    ms.into_iter()
                        .map(|s| (f64::from(s) * 0.25, true))
                        .chain(ns.into_iter().map(|s| (f64::from(s) * 0.25, false)))
                        .collect()
                })
        })
    }

    proptest! {
        #[test]
        fn trapezoid_equals_pairwise(scores in scored_sets()) {
            let curve = roc_from_scores(&scores).unwrap();
            let a = auc(&curve);
            prop_assert!((a - brute_force_auc(&scores)).abs() < 1e-12);
            prop_assert!((a - pair_counts(&scores).auc()).abs() < 1e-12);
        }

        #[test]
        fn curve_is_monotone_with_consistent_counts(scores in scored_sets()) {
            let curve = roc_from_scores(&scores).unwrap();
            let first = &curve.points[0];
            let last = curve.points.last().unwrap();
            prop_assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            for w in curve.points.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
            for p in &curve.points {
                prop_assert_eq!(p.tp + p.fn_, curve.n_members);
                prop_assert_eq!(p.fp + p.tn, curve.n_nonmembers);
            }
        }

        #[test]
        fn increasing_transform_preserves_analysis(scores in scored_sets()) {
            let mapped: Vec<(f64, bool)> = scores.iter().map(|&(s, m)| (s.exp() * 3.0 - 1.0, m)).collect();
            let a = roc_from_scores(&scores).unwrap();
            let b = roc_from_scores(&mapped).unwrap();
            let strip = |c: &RocCurve| c.points.iter().map(|p| (p.tp, p.fp)).collect::<Vec<_>>();
            prop_assert_eq!(strip(&a), strip(&b));
            prop_assert_eq!(auc(&a), auc(&b));
            prop_assert_eq!(empirical_epsilon(&a), empirical_epsilon(&b));
        }
    }
}
