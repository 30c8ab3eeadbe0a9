use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, SigmaSetting};
use super::plot::{Chart, Scale, Series};
use super::report::{AuditReport, EvaluationSet, SigmaInfo, StrategyReport};
use super::{sha256_hex, write_json, CliError, Manifest};
use crate::attack::{self, count_prominent_peaks, Probe, SigmaSearchResult, StrategySpec};
use crate::corpus::{
    load_corpus, make_windows, split, tokenize, Corpus, Sample, SplitDocument, SplitPlan,
};
use crate::lm::{self, checkpoint_bytes, parse_checkpoint, LmConfig, LmModel};
use crate::metrics;

pub const SPLIT_FILE: &str = "split.json";
pub const TARGET_FILE: &str = "target.ckpt";
pub const SIGMA_FILE: &str = "sigma_search.json";
pub const PROBES_FILE: &str = "sigma_probes.csv";
pub const REPORT_FILE: &str = "report.json";

/// Probe noise used when judging the sigma curve for a single peak.
pub const PEAK_NOISE: f64 = 0.01;

pub fn shadow_file(index: usize) -> String {
    format!("shadows/shadow_{index:02}.ckpt")
}

fn progress(label: &str, total: usize) -> impl FnMut(usize, f64) + '_ {
    let every = (total / 10).max(1);
    move |step, loss| {
        if (step + 1) % every == 0 || step + 1 == total {
            eprintln!("{label}: step {}/{total} loss {loss:.4}", step + 1);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub split: PathBuf,
    pub target: PathBuf,
    pub manifest: PathBuf,
}

/// Builds the split, trains the target on the members and records both.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutput, CliError> {
    config.validate()?;
    let corpus = load_corpus(&config.corpus)?;
    let windows = make_windows(&tokenize(&corpus), config.window_len, config.stride())?;
    let seeds = config.seeds();
    let plan = split(
        &windows,
        config.member_fraction,
        config.shadow_k,
        seeds.split,
    )?;
    eprintln!(
        "split: {} windows, {} members, {} non-members",
        windows.len(),
        plan.member_samples.len(),
        plan.nonmember_samples.len()
    );
    let doc = plan.document(corpus.content_hash(), config.window_len, config.stride());

    let lm_config = config.lm.clone();
    let steps = lm_config.train_steps;
    let model = lm::train_with_progress(
        &lm_config,
        &plan.member_tokens(),
        seeds.target,
        progress("target", steps),
    )?;

    let out = &config.out_dir;
    let mut manifest = Manifest {
        config_hash: config.hash(),
        corpus_hash: format!("{:016x}", corpus.content_hash()),
        seeds,
        files: BTreeMap::new(),
    };
    let mut split_bytes = serde_json::to_vec_pretty(&doc).expect("split serializes");
    split_bytes.push(b'\n');
    manifest.put(out, SPLIT_FILE, &split_bytes)?;
    manifest.put(out, TARGET_FILE, &checkpoint_bytes(&model))?;
    manifest.save(out)?;
    Ok(TrainOutput {
        split: out.join(SPLIT_FILE),
        target: out.join(TARGET_FILE),
        manifest: out.join(super::MANIFEST_FILE),
    })
}

/// A trained run reopened from its output directory.
struct Run {
    manifest: Manifest,
    plan: SplitPlan,
    target: LmModel,
}

fn open_run(config: &RunConfig) -> Result<Run, CliError> {
    config.validate()?;
    let out = &config.out_dir;
    let manifest = Manifest::load(out)?;
    if manifest.config_hash != config.hash() {
        return Err(CliError::Data(format!(
            "configuration differs from the one {} was trained with",
            out.display()
        )));
    }
    let corpus: Corpus = load_corpus(&config.corpus)?;
    let doc: SplitDocument = serde_json::from_slice(&manifest.read_verified(out, SPLIT_FILE)?)
        .map_err(|e| CliError::Data(format!("{SPLIT_FILE}: {e}")))?;
    let plan = doc.resolve(&corpus)?;
    let target = parse_checkpoint(&manifest.read_verified(out, TARGET_FILE)?)?;
    Ok(Run {
        manifest,
        plan,
        target,
    })
}

fn shadow_config(config: &RunConfig, partition: usize, members: usize) -> LmConfig {
    let steps = config
        .shadow_steps
        .unwrap_or_else(|| (config.lm.train_steps * partition).div_ceil(members));
    LmConfig {
        train_steps: steps,
        ..config.lm.clone()
    }
}

#[derive(Debug, Clone)]
pub struct ShadowsOutput {
    pub paths: Vec<PathBuf>,
    pub trained: Vec<usize>,
    pub skipped: Vec<usize>,
}

/// Trains one shadow per member partition, skipping those already recorded.
pub fn cmd_shadows(config: &RunConfig) -> Result<ShadowsOutput, CliError> {
    let Run {
        mut manifest, plan, ..
    } = open_run(config)?;
    let out = &config.out_dir;
    let mut result = ShadowsOutput {
        paths: Vec::new(),
        trained: Vec::new(),
        skipped: Vec::new(),
    };
    for i in 0..plan.shadow_k() {
        let name = shadow_file(i);
        result.paths.push(out.join(&name));
        if manifest.is_current(out, &name) {
            result.skipped.push(i);
            continue;
        }
        let data = plan.shadow_train_set(i);
        let cfg = shadow_config(config, data.len(), plan.member_samples.len());
        let label = format!("shadow {i}");
        let model = lm::train_with_progress(
            &cfg,
            &data,
            manifest.seeds.shadows[i],
            progress(&label, cfg.train_steps),
        )?;
        manifest.put(out, &name, &checkpoint_bytes(&model))?;
        manifest.save(out)?;
        result.trained.push(i);
    }
    Ok(result)
}

/// Calibration and evaluation halves of the member and non-member pools.
#[derive(Debug, Clone, PartialEq)]
pub struct Pools {
    pub cal_members: Vec<Sample>,
    pub cal_nonmembers: Vec<Sample>,
    pub eval_members: Vec<Sample>,
    pub eval_nonmembers: Vec<Sample>,
}

impl Pools {
    pub fn eval_ids(&self) -> Vec<u64> {
        self.eval_members
            .iter()
            .chain(&self.eval_nonmembers)
            .map(|s| s.id)
            .collect()
    }
}

/// Splits each pool in half by a seeded shuffle, then applies the per-class
/// caps. Each part is returned sorted by sample id.
pub fn evaluation_pools(plan: &SplitPlan, config: &RunConfig) -> Pools {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seeds().calibration);
    let mut halve = |pool: &[Sample]| {
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng);
        let (cal, eval) = order.split_at(pool.len() / 2);
        let take = |idx: &[usize], cap: Option<usize>| {
            let mut v: Vec<Sample> = idx
                .iter()
                .take(cap.unwrap_or(usize::MAX))
                .map(|&i| pool[i].clone())
                .collect();
            v.sort_by_key(|s| s.id);
            v
        };
        (
            take(cal, config.calibration_cap),
            take(eval, config.eval_cap),
        )
    };
    let (cal_members, eval_members) = halve(&plan.member_samples);
    let (cal_nonmembers, eval_nonmembers) = halve(&plan.nonmember_samples);
    Pools {
        cal_members,
        cal_nonmembers,
        eval_members,
        eval_nonmembers,
    }
}

/// Contents of `sigma_search.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSearchFile {
    pub result: SigmaSearchResult,
    pub best_auc: f64,
    pub neighbor_k: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub calibration_members: usize,
    pub calibration_nonmembers: usize,
    pub prominent_peaks: usize,
    pub peak_noise: f64,
}

fn probes_csv(probes: &[Probe]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["order", "sigma", "auc"])
        .expect("in-memory write");
    for (i, p) in probes.iter().enumerate() {
        w.write_record([i.to_string(), p.sigma.to_string(), p.auc.to_string()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn sigma_chart(result: &SigmaSearchResult, bracket: (f64, f64)) -> Chart {
    let mut pts: Vec<(f64, f64)> = result.probe_log.iter().map(|p| (p.sigma, p.auc)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (lo, hi) = pts
        .iter()
        .fold((1.0f64, 0.0f64), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let pad = ((hi - lo) * 0.1).max(0.01);
    Chart {
        title: format!(
            "Calibration AUC vs noise scale (sigma* = {:.4})",
            result.sigma_star
        ),
        x_label: "sigma".into(),
        y_label: "AUC".into(),
        x_scale: Scale::Log,
        y_scale: Scale::Linear,
        x_range: bracket,
        y_range: ((lo - pad).max(0.0), (hi + pad).min(1.0)),
        series: vec![Series {
            markers: true,
            ..Series::line("noisy", pts)
        }],
        diagonal: false,
    }
}

/// Fits sigma on the calibration halves; refuses when sigma is fixed.
pub fn cmd_sigma_search(config: &RunConfig) -> Result<SigmaSearchFile, CliError> {
    if let SigmaSetting::Fixed(v) = config.sigma {
        return Err(CliError::Usage(format!(
            "sigma is fixed at {v} in the configuration; set \"sigma\": \"auto\" to search"
        )));
    }
    let Run {
        mut manifest,
        plan,
        target,
    } = open_run(config)?;
    let pools = evaluation_pools(&plan, config);
    let (lo, hi) = config.sigma_bracket;
    let seed = manifest.seeds.noise;
    let result = attack::sigma_search(
        &target,
        &pools.cal_members,
        &pools.cal_nonmembers,
        &pools.eval_ids(),
        lo,
        hi,
        config.neighbor_k,
        config.sigma_tol,
        seed,
    )?;
    eprintln!(
        "sigma search: sigma* = {} after {} probes",
        result.sigma_star,
        result.probe_log.len()
    );
    let file = SigmaSearchFile {
        best_auc: result.best_auc(),
        neighbor_k: config.neighbor_k,
        seed,
        tolerance: config.sigma_tol,
        calibration_members: pools.cal_members.len(),
        calibration_nonmembers: pools.cal_nonmembers.len(),
        prominent_peaks: count_prominent_peaks(&result.probe_log, PEAK_NOISE),
        peak_noise: PEAK_NOISE,
        result,
    };
    let out = &config.out_dir;
    let mut bytes = serde_json::to_vec_pretty(&file).expect("serializes");
    bytes.push(b'\n');
    manifest.put(out, SIGMA_FILE, &bytes)?;
    manifest.put(out, PROBES_FILE, &probes_csv(&file.result.probe_log))?;
    manifest.put(
        out,
        "fig1_sigma_auc.svg",
        sigma_chart(&file.result, config.sigma_bracket)
            .render()
            .as_bytes(),
    )?;
    manifest.save(out)?;
    Ok(file)
}

fn parse_strategies(names: &[String]) -> Result<Vec<String>, CliError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for n in names {
        let n = n.trim();
        if !matches!(n, "loss" | "shadow" | "noisy") {
            return Err(CliError::Usage(format!(
                "unknown strategy {n:?} (expected loss, shadow or noisy)"
            )));
        }
        if seen.insert(n.to_string()) {
            out.push(n.to_string());
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no strategies requested".into()));
    }
    Ok(out)
}

fn resolve_sigma(config: &RunConfig, manifest: &Manifest) -> Result<SigmaInfo, CliError> {
    match config.sigma {
        SigmaSetting::Fixed(value) => Ok(SigmaInfo {
            value,
            source: "config".into(),
        }),
        SigmaSetting::Auto => {
            if !manifest.files.contains_key(SIGMA_FILE) {
                return Err(CliError::Data(
                    "sigma is \"auto\" but no sigma search output exists; run `sigma-search` first"
                        .into(),
                ));
            }
            let bytes = manifest.read_verified(&config.out_dir, SIGMA_FILE)?;
            let file: SigmaSearchFile = serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Data(format!("{SIGMA_FILE}: {e}")))?;
            Ok(SigmaInfo {
                value: file.result.sigma_star,
                source: SIGMA_FILE.into(),
            })
        }
    }
}

fn load_shadows(
    config: &RunConfig,
    manifest: &Manifest,
    k: usize,
) -> Result<Vec<LmModel>, CliError> {
    (0..k)
        .map(|i| {
            let name = shadow_file(i);
            if !manifest.files.contains_key(&name) {
                return Err(CliError::Data(format!(
                    "shadow checkpoint {name} missing; run `shadows` first"
                )));
            }
            Ok(parse_checkpoint(
                &manifest.read_verified(&config.out_dir, &name)?,
            )?)
        })
        .collect()
}

/// Scores the evaluation halves under each strategy and writes per-strategy
/// CSV/JSON files, `report.json` and the three figures.
pub fn cmd_audit(config: &RunConfig, strategies: &[String]) -> Result<AuditReport, CliError> {
    let strategies = parse_strategies(strategies)?;
    let Run {
        mut manifest,
        plan,
        target,
    } = open_run(config)?;
    let out = config.out_dir.clone();
    let pools = evaluation_pools(&plan, config);

    let sigma = if strategies.iter().any(|s| s == "noisy") {
        Some(resolve_sigma(config, &manifest)?)
    } else {
        None
    };
    let shadows = if strategies.iter().any(|s| s == "shadow") {
        load_shadows(config, &manifest, plan.shadow_k())?
    } else {
        Vec::new()
    };

    let mut reports = Vec::new();
    let mut timings = BTreeMap::new();
    let mut id_sets = Vec::new();
    for name in &strategies {
        let spec = match name.as_str() {
            "loss" => StrategySpec::Loss,
            "shadow" => StrategySpec::Shadow {
                shadow_count: shadows.len(),
            },
            _ => StrategySpec::Noisy {
                sigma: sigma.as_ref().expect("resolved above").value,
                neighbors: config.neighbor_k,
                seed: manifest.seeds.noise,
            },
        };
        let started = Instant::now();
        let records = attack::audit(
            &target,
            &spec,
            &pools.eval_members,
            &pools.eval_nonmembers,
            &shadows,
        )?;
        timings.insert(name.clone(), started.elapsed().as_secs_f64());
        id_sets.push(records.iter().map(|r| r.sample_id).collect::<Vec<_>>());

        let mut csv_bytes = Vec::new();
        attack::write_scores_csv(&records, &mut csv_bytes)?;
        let scores_csv = format!("scores_{name}.csv");
        manifest.put(&out, &scores_csv, &csv_bytes)?;
        let mut json_bytes = serde_json::to_vec_pretty(&records).expect("serializes");
        json_bytes.push(b'\n');
        manifest.put(&out, &format!("scores_{name}.json"), &json_bytes)?;

        let report = StrategyReport::build(name, spec, &records, &scores_csv, &csv_bytes)?;
        let mut roc_bytes = Vec::new();
        metrics::write_roc_csv(&report.roc, &mut roc_bytes)?;
        manifest.put(&out, &report.roc_csv, &roc_bytes)?;
        let mut eps_bytes = Vec::new();
        metrics::write_eps_csv(&report.eps, &mut eps_bytes)?;
        manifest.put(&out, &report.eps_csv, &eps_bytes)?;
        eprintln!("{name}: AUC {:.4}", report.auc);
        reports.push(report);
    }

    let shared = id_sets.windows(2).all(|w| {
        let a: HashSet<&u64> = w[0].iter().collect();
        let b: HashSet<&u64> = w[1].iter().collect();
        a == b
    });
    let ids = pools.eval_ids();
    let id_text: Vec<String> = ids.iter().map(u64::to_string).collect();
    let mut checkpoints = BTreeMap::new();
    for (name, hash) in &manifest.files {
        if name.ends_with(".ckpt") {
            checkpoints.insert(name.clone(), hash.clone());
        }
    }

    let report = AuditReport {
        config_hash: manifest.config_hash.clone(),
        corpus_hash: manifest.corpus_hash.clone(),
        seeds: manifest.seeds.clone(),
        checkpoints,
        evaluation: EvaluationSet {
            members: pools.eval_members.len(),
            nonmembers: pools.eval_nonmembers.len(),
            sample_ids_sha256: sha256_hex(id_text.join(",").as_bytes()),
            shared_across_strategies: shared,
        },
        sigma,
        strategies: reports,
        timings,
    };
    for (file, chart) in report.charts() {
        manifest.put(&out, file, chart.render().as_bytes())?;
    }
    write_json(&out.join(REPORT_FILE), &report)?;
    manifest.save(&out)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_are_checked() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(
            parse_strategies(&s(&["noisy", "loss", "noisy"])).unwrap(),
            s(&["noisy", "loss"])
        );
        assert!(matches!(
            parse_strategies(&s(&["lira"])),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(parse_strategies(&[]), Err(CliError::Usage(_))));
    }

    #[test]
    fn shadow_steps_match_epochs() {
        let c = RunConfig::default();
        let cfg = shadow_config(&c, 130, 1302);
        assert_eq!(cfg.train_steps, (1700usize * 130).div_ceil(1302));
        let fixed = RunConfig {
            shadow_steps: Some(7),
            ..RunConfig::default()
        };
        assert_eq!(shadow_config(&fixed, 130, 1302).train_steps, 7);
    }

    #[test]
    fn pools_are_disjoint_halves() {
        let windows: Vec<_> = (0..100u32)
            .map(|i| crate::corpus::TokenSequence::new(vec![i, i + 1, i + 2]))
            .collect();
        let plan = split(&windows, 0.6, 3, 5).unwrap();
        let config = RunConfig {
            calibration_cap: None,
            ..RunConfig::default()
        };
        let p = evaluation_pools(&plan, &config);
        assert_eq!((p.cal_members.len(), p.eval_members.len()), (30, 30));
        assert_eq!((p.cal_nonmembers.len(), p.eval_nonmembers.len()), (20, 20));
        let eval: HashSet<u64> = p.eval_ids().into_iter().collect();
        assert!(p
            .cal_members
            .iter()
            .chain(&p.cal_nonmembers)
            .all(|s| !eval.contains(&s.id)));
        assert_eq!(p, evaluation_pools(&plan, &config));
        let capped = RunConfig {
            calibration_cap: Some(4),
            ..RunConfig::default()
        };
        let q = evaluation_pools(&plan, &capped);
        assert_eq!(q.cal_members.len(), 4);
        assert_eq!(q.eval_members, p.eval_members);
    }
}
