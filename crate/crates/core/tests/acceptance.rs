//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use mia_audit::attack::{self, golden_section_search, AttackError};
use mia_audit::cli::{self, RunConfig};
use mia_audit::corpus::TokenSequence;
use mia_audit::lm::{self, grad_check_with, LmConfig, LmModel, ProbSeq, Transformer};
use mia_audit::metrics;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(label: &str, limit_s: Option<f64>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut o = f();
    let secs = start.elapsed().as_secs_f64();
    if let Some(limit) = limit_s {
        if secs >= limit {
            o.pass = false;
            o.detail.push_str(&format!("; over {limit} s budget"));
        }
    }
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("{tag} {label}: {} ({secs:.1} s)", o.detail);
    o.pass
}

fn noise_norm() -> Outcome {
    let model = LmModel::new(LmConfig::default(), 5).unwrap();
    let x = TokenSequence::new(vec![65]);
    let e = lm::embed(&model, &x).unwrap();
    let n = e.width();
    let mut worst: f64 = 0.0;
    for (i, sigma) in [0.05, 0.1, 0.5].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let draws = 10_000;
        let total: f64 = (0..draws)
            .map(|_| {
                let h = attack::make_noisy_neighbor(&model, &x, sigma, &mut rng).unwrap();
                h.as_slice()
                    .iter()
                    .zip(e.as_slice())
                    .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum();
        let rel = (total / draws as f64 / (sigma * (n as f64).sqrt()) - 1.0).abs();
        worst = worst.max(rel);
    }
    outcome(
        worst < 0.02,
        format!("n = {n}, worst relative gap {worst:.4} < 0.02"),
    )
}

fn perplexity_oracle() -> Outcome {
    let model = LmModel::zeroed(LmConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.random_range(2..=126);
        let x = TokenSequence::new((0..len).map(|_| rng.random_range(0..256)).collect());
        worst = worst.max((lm::perplexity(&model, &x).unwrap() - 256f64.ln()).abs());
    }
    let labels: Vec<u32> = (0..126).map(|_| rng.random_range(0..256)).collect();
    let mut data = vec![0.0f32; 126 * 256];
    for t in 0..125 {
        data[t * 256 + labels[t + 1] as usize] = 1.0;
    }
    data[125 * 256] = 1.0;
    let perfect = lm::perplexity_of(&ProbSeq::new(126, 256, data), &labels).unwrap();
    outcome(
        worst < 1e-6 && perfect < 1e-6,
        format!(
            "uniform max |ppx - ln 256| = {worst:.2e}, perfect ppx = {:.2e}",
            perfect.abs()
        ),
    )
}

fn auc_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let m = rng.random_range(1..=100);
        let n = rng.random_range(1..=100);
        let levels = rng.random_range(2..=20);
        let scores: Vec<(f64, bool)> = (0..m + n)
            .map(|i| {
                // a coarse grid injects ties
                let s = if rng.random_bool(0.5) {
                    f64::from(rng.random_range(0..levels)) / f64::from(levels)
                } else {
                    rng.random::<f64>()
                };
                (s - if i < m { 0.1 } else { 0.0 }, i < m)
            })
            .collect();
        let trapezoid = metrics::auc(&metrics::roc_from_scores(&scores).unwrap());
        let mut wins = 0.0;
        for &(a, _) in scores.iter().filter(|s| s.1) {
            for &(b, _) in scores.iter().filter(|s| !s.1) {
                // members score lower
                wins += if a < b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        worst = worst.max((trapezoid - wins / (m * n) as f64).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("200 sets, max |trapezoid - Mann-Whitney| = {worst:.1e}"),
    )
}

fn clopper_pearson() -> Outcome {
    let upper = metrics::clopper_pearson(0, 10, 0.95).unwrap().hi;
    let closed = 1.0 - 0.025f64.powf(0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 50u64;
    let intervals: Vec<_> = (0..=n)
        .map(|k| metrics::clopper_pearson(k, n, 0.95).unwrap())
        .collect();
    let mut coverage = Vec::new();
    for p in [0.05, 0.5, 0.95] {
        let dist = Binomial::new(n, p).unwrap();
        let hits = (0..10_000)
            .filter(|_| {
                let i = &intervals[dist.sample(&mut rng) as usize];
                i.lo <= p && p <= i.hi
            })
            .count();
        coverage.push(hits as f64 / 10_000.0);
    }
    let pass = (upper - 0.3085).abs() < 1e-3
        && (upper - closed).abs() < 1e-9
        && coverage.iter().all(|&c| c >= 0.95);
    outcome(
        pass,
        format!("k=0 n=10 upper {upper:.5} (closed form {closed:.5}); coverage at p=0.05/0.5/0.95: {coverage:?}"),
    )
}

fn epsilon() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let coin: Vec<(f64, bool)> = (0..10_000)
        .map(|_| {
            (
                f64::from(u8::from(rng.random_bool(0.5))),
                rng.random_bool(0.5),
            )
        })
        .collect();
    let continuous: Vec<(f64, bool)> = (0..2_000)
        .map(|_| (rng.random::<f64>(), rng.random_bool(0.5)))
        .collect();
    let mut exact = true;
    let mut emitted = 0;
    for scores in [&coin, &continuous] {
        let roc = metrics::roc_from_scores(scores).unwrap();
        let eps = metrics::empirical_epsilon_with_intervals(&roc, 0.95);
        for p in &eps.points {
            emitted += 1;
            exact &= roc
                .points
                .iter()
                .any(|q| q.fpr == p.fpr && q.tpr == p.tpr && p.eps_lower == (q.tpr / q.fpr).ln());
        }
    }
    let roc = metrics::roc_from_scores(&coin).unwrap();
    let max_eps = metrics::empirical_epsilon(&roc)
        .max_eps(1e-2)
        .unwrap_or(0.0);
    outcome(
        exact && max_eps < 0.3,
        format!("{emitted} emitted points equal ln(tpr/fpr): {exact}; coin-flip max eps over FPR >= 1e-2 = {max_eps:.4} < 0.3"),
    )
}

fn gradient_check() -> Outcome {
    let config = LmConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        context_len: 32,
        ..LmConfig::default()
    };
    let model = Transformer::<f64>::init(config, 6, 0.2);
    let x = TokenSequence::from(&b"the quick brown fox jumps over"[..]);
    let r = grad_check_with(&model, &x, 1e-4, 128, 6).unwrap();
    outcome(
        r.max_rel_error < 1e-3 && r.indices.len() >= 100,
        format!(
            "{} parameters, max relative error {:.2e} < 1e-3",
            r.indices.len(),
            r.max_rel_error
        ),
    )
}

fn golden_section() -> Outcome {
    let mut calls = 0;
    let r = golden_section_search::<AttackError>(1e-3, 10.0, 1e-2, |s| {
        calls += 1;
        Ok(0.5 + 0.3 * (-(s.ln() - 0.3f64.ln()).powi(2)).exp())
    })
    .unwrap();
    outcome(
        (r.sigma_star - 0.3).abs() < 1e-2 && calls <= 40,
        format!("sigma* = {:.5}, {calls} evaluations", r.sigma_star),
    )
}

const STRATEGIES: [&str; 3] = ["loss", "shadow", "noisy"];

struct SeedRun {
    dir: PathBuf,
    auc: BTreeMap<&'static str, f64>,
    peaks: usize,
    sigma_star: f64,
}

fn run_seed(corpus: &Path, root: &Path, seed: u64, tag: &str) -> Result<SeedRun, cli::CliError> {
    let dir = root.join(format!("seed{seed}{tag}"));
    let _ = fs::remove_dir_all(&dir);
    let config = RunConfig {
        corpus: corpus.to_path_buf(),
        seed,
        out_dir: dir.clone(),
        ..RunConfig::default()
    };
    cli::cmd_train(&config)?;
    cli::cmd_shadows(&config)?;
    let search = cli::cmd_sigma_search(&config)?;
    let names: Vec<String> = STRATEGIES.iter().map(|s| s.to_string()).collect();
    let report = cli::cmd_audit(&config, &names)?;
    let auc = STRATEGIES
        .iter()
        .map(|&s| (s, report.strategy(s).expect("strategy was audited").auc))
        .collect();
    Ok(SeedRun {
        dir,
        auc,
        peaks: search.prominent_peaks,
        sigma_star: search.result.sigma_star,
    })
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn end_to_end(ok: &mut bool) {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus.txt");
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let start = Instant::now();
    let mut runs = Vec::new();
    for seed in 1..=3 {
        match run_seed(&corpus, &root, seed, "") {
            Ok(r) => {
                println!(
                    "     seed {seed}: loss {:.4} shadow {:.4} noisy {:.4}, sigma* {:.4}, {} prominent peak(s)",
                    r.auc["loss"], r.auc["shadow"], r.auc["noisy"], r.sigma_star, r.peaks
                );
                runs.push(r);
            }
            Err(e) => {
                println!("FAIL 8 end-to-end audit: seed {seed} failed: {e}");
                *ok = false;
                return;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let mean = |s: &str| runs.iter().map(|r| r.auc[s]).sum::<f64>() / runs.len() as f64;
    let (loss, shadow, noisy) = (mean("loss"), mean("shadow"), mean("noisy"));
    let line = |pass: bool, text: String| {
        println!("{} {text}", if pass { "PASS" } else { "FAIL" });
        pass
    };
    *ok &= line(loss > 0.55, format!("8a loss AUC mean {loss:.4} > 0.55"));
    *ok &= line(
        noisy >= loss,
        format!("8b noisy AUC mean {noisy:.4} >= loss AUC mean {loss:.4}"),
    );
    *ok &= line(
        (noisy - shadow).abs() <= 0.08,
        format!(
            "8c |noisy - shadow| = {:.4} <= 0.08 (shadow mean {shadow:.4})",
            (noisy - shadow).abs()
        ),
    );
    let peaks: Vec<usize> = runs.iter().map(|r| r.peaks).collect();
    *ok &= line(
        peaks.iter().all(|&p| p == 1),
        format!(
            "8d single prominent peak in every sigma probe log (noise {}): {peaks:?}",
            cli::PEAK_NOISE
        ),
    );
    let per = |s: &str| runs.iter().map(|r| r.auc[s]).collect::<Vec<_>>();
    println!(
        "     info: one-sided Welch p(noisy < loss) = {:.3}; 3 seeds in {:.0} s on {} thread(s)",
        metrics::welch_t_test_less(&per("noisy"), &per("loss")),
        secs,
        rayon::current_num_threads()
    );

    let start = Instant::now();
    let rerun = match run_seed(&corpus, &root, 1, "_rerun") {
        Ok(r) => r,
        Err(e) => {
            println!("FAIL 9 determinism: rerun failed: {e}");
            *ok = false;
            return;
        }
    };
    let a = csv_files(&runs[0].dir);
    let b = csv_files(&rerun.dir);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let pass = a.len() == b.len() && !a.is_empty() && differing.is_empty();
    *ok &= line(
        pass,
        format!(
            "9 rerun of seed 1 reproduces {} CSV files byte-for-byte, differing: {differing:?} ({:.0} s)",
            a.len(),
            start.elapsed().as_secs_f64()
        ),
    );
}

fn main() {
    let mut ok = true;
    ok &= timed(
        "1 noise norm mean within 2% of sigma sqrt(n)",
        Some(10.0),
        noise_norm,
    );
    ok &= timed("2 perplexity oracle", Some(5.0), perplexity_oracle);
    ok &= timed(
        "3 trapezoid AUC equals Mann-Whitney",
        Some(10.0),
        auc_equivalence,
    );
    ok &= timed(
        "4 Clopper-Pearson limit and coverage",
        Some(30.0),
        clopper_pearson,
    );
    ok &= timed("5 empirical epsilon", Some(10.0), epsilon);
    ok &= timed("6 gradient check", Some(60.0), gradient_check);
    ok &= timed("7 golden-section search", Some(1.0), golden_section);
    end_to_end(&mut ok);
    if !ok {
        std::process::exit(1);
    }
}
