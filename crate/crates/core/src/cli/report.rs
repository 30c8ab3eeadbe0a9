use std::collections::BTreeMap;
use std::fmt::Write;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Seeds;
use super::plot::{Chart, Scale, Series};
use super::{sha256_hex, CliError};
use crate::attack::{ScoreRecord, StrategySpec};
use crate::metrics::{
    self, EpsCurve, PairCounts, RocCurve, TprAtFpr, DEFAULT_CONFIDENCE, LOW_FPR_TARGETS,
};

/// Smallest FPR considered when reporting the maximum epsilon.
pub const EPS_MIN_FPR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaInfo {
    pub value: f64,
    /// `config` or the sigma search file it came from.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSet {
    pub members: usize,
    pub nonmembers: usize,
    pub sample_ids_sha256: String,
    pub shared_across_strategies: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyReport {
    pub name: String,
    pub spec: StrategySpec,
    pub scores_csv: String,
    pub scores_csv_sha256: String,
    pub roc_csv: String,
    pub eps_csv: String,
    pub auc: f64,
    pub pairs: PairCounts,
    pub auc_standard_error: f64,
    pub tpr_at_fpr: Vec<TprAtFpr>,
    pub max_eps: Option<f64>,
    pub max_eps_min_fpr: f64,
    pub roc: RocCurve,
    pub eps: EpsCurve,
}

impl StrategyReport {
    pub fn build(
        name: &str,
        spec: StrategySpec,
        records: &[ScoreRecord],
        scores_csv: &str,
        csv_bytes: &[u8],
    ) -> Result<Self, CliError> {
        let roc = metrics::roc(records)?;
        let auc = metrics::auc(&roc);
        let scores: Vec<(f64, bool)> = records
            .iter()
            .map(|r| (r.calibrated_score, r.is_member))
            .collect();
        let eps = metrics::empirical_epsilon_with_intervals(&roc, DEFAULT_CONFIDENCE);
        Ok(Self {
            name: name.to_string(),
            spec,
            scores_csv: scores_csv.to_string(),
            scores_csv_sha256: sha256_hex(csv_bytes),
            roc_csv: format!("roc_{name}.csv"),
            eps_csv: format!("eps_{name}.csv"),
            auc,
            pairs: metrics::pair_counts(&scores),
            auc_standard_error: metrics::auc_standard_error(auc, roc.n_members, roc.n_nonmembers),
            tpr_at_fpr: LOW_FPR_TARGETS
                .iter()
                .map(|&t| metrics::tpr_at_fpr(&roc, t))
                .collect(),
            max_eps: eps.max_eps(EPS_MIN_FPR),
            max_eps_min_fpr: EPS_MIN_FPR,
            roc,
            eps,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditReport {
    pub config_hash: String,
    pub corpus_hash: String,
    pub seeds: Seeds,
    pub checkpoints: BTreeMap<String, String>,
    pub evaluation: EvaluationSet,
    pub sigma: Option<SigmaInfo>,
    pub strategies: Vec<StrategyReport>,
    /// Wall-clock seconds per strategy. The only non-reproducible field.
    pub timings: BTreeMap<String, f64>,
}

impl AuditReport {
    pub fn strategy(&self, name: &str) -> Option<&StrategyReport> {
        self.strategies.iter().find(|s| s.name == name)
    }

    /// Figure files and their charts: ROC, low-FPR ROC with intervals, and
    /// epsilon against FPR.
    pub fn charts(&self) -> Vec<(&'static str, Chart)> {
        let roc = Chart {
            title: "ROC".into(),
            x_label: "false positive rate".into(),
            y_label: "true positive rate".into(),
            x_scale: Scale::Linear,
            y_scale: Scale::Linear,
            x_range: (0.0, 1.0),
            y_range: (0.0, 1.0),
            series: self
                .strategies
                .iter()
                .map(|s| {
                    Series::line(
                        &s.name,
                        s.roc.points.iter().map(|p| (p.fpr, p.tpr)).collect(),
                    )
                })
                .collect(),
            diagonal: true,
        };

        let floor = self
            .strategies
            .iter()
            .map(|s| 1.0 / s.roc.n_nonmembers as f64)
            .fold(1.0, f64::min)
            .min(1e-3);
        let low = Chart {
            title: "ROC at low FPR (95% Clopper-Pearson band on TPR)".into(),
            x_scale: Scale::Log,
            y_scale: Scale::Log,
            x_range: (floor, 1.0),
            y_range: (floor, 1.0),
            series: self
                .strategies
                .iter()
                .map(|s| {
                    let kept: Vec<_> = s
                        .roc
                        .points
                        .iter()
                        .filter(|p| p.fpr > 0.0 && p.tpr > 0.0)
                        .collect();
                    let band = kept
                        .iter()
                        .map(|p| {
                            let i =
                                metrics::clopper_pearson(p.tp, s.roc.n_members, DEFAULT_CONFIDENCE)
                                    .expect("curve counts are valid");
                            (p.fpr, i.lo.max(floor), i.hi)
                        })
                        .collect();
                    Series {
                        band,
                        ..Series::line(&s.name, kept.iter().map(|p| (p.fpr, p.tpr)).collect())
                    }
                })
                .collect(),
            ..roc.clone()
        };

        let eps_hi = self
            .strategies
            .iter()
            .flat_map(|s| s.eps.points.iter().map(|p| p.eps_lower))
            .fold(1.0f64, f64::max);
        let eps = Chart {
            title: "Empirical epsilon lower bound".into(),
            x_label: "false positive rate".into(),
            y_label: "epsilon >= ln(TPR / FPR)".into(),
            x_scale: Scale::Log,
            y_scale: Scale::Linear,
            x_range: (floor, 1.0),
            y_range: (0.0, eps_hi.ceil()),
            series: self
                .strategies
                .iter()
                .map(|s| {
                    Series::line(
                        &s.name,
                        s.eps.points.iter().map(|p| (p.fpr, p.eps_lower)).collect(),
                    )
                })
                .collect(),
            diagonal: false,
        };
        vec![
            ("fig2a_roc.svg", roc),
            ("fig2b_low_fpr.svg", low),
            ("fig3_epsilon.svg", eps),
        ]
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "evaluation: {} members, {} non-members",
            self.evaluation.members, self.evaluation.nonmembers
        );
        if let Some(sigma) = &self.sigma {
            let _ = writeln!(s, "sigma: {} (from {})", sigma.value, sigma.source);
        }
        let _ = writeln!(s, "\n{:<8} {:>8} {:>8}", "strategy", "AUC", "+/-SE");
        for r in &self.strategies {
            let _ = writeln!(
                s,
                "{:<8} {:>8.4} {:>8.4}",
                r.name, r.auc, r.auc_standard_error
            );
        }
        let _ = writeln!(
            s,
            "\n{:<8} {:>8} {:>8} {:>20}",
            "strategy", "FPR<=", "TPR", "95% interval"
        );
        for r in &self.strategies {
            for t in &r.tpr_at_fpr {
                let _ = writeln!(
                    s,
                    "{:<8} {:>8} {:>8.4} {:>20}",
                    r.name,
                    format!("{:.0e}", t.fpr_target),
                    t.tpr,
                    format!("[{:.4}, {:.4}]", t.tpr_interval.lo, t.tpr_interval.hi)
                );
            }
        }
        let _ = writeln!(s, "\n{:<8} {:>10} {:>8}", "strategy", "max eps", "skipped");
        for r in &self.strategies {
            let eps = r.max_eps.map_or("-".to_string(), |e| format!("{e:.4}"));
            let _ = writeln!(s, "{:<8} {:>10} {:>8}", r.name, eps, r.eps.skipped);
        }
        let _ = writeln!(s, "(max eps over FPR >= {:.0e})", EPS_MIN_FPR);
        s
    }
}

/// Reads report files and renders their summaries.
pub fn cmd_report(paths: &[impl AsRef<Path>]) -> Result<String, CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage(
            "report needs at least one report.json path".into(),
        ));
    }
    let mut out = String::new();
    for path in paths {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| super::io_error(path, e))?;
        let report: AuditReport = serde_json::from_str(&text).map_err(|e| {
            CliError::Data(format!(
                "{}: malformed report at line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        let _ = writeln!(out, "== {}", path.display());
        out.push_str(&report.summary());
    }
    Ok(out)
}
