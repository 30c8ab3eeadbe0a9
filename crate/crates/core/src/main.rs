use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mia_audit::cli::{self, CliError, RunConfig, SigmaSetting};

#[derive(Parser)]
#[command(
    name = "mia-audit",
    version,
    about = "Membership-inference audits for small language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Noise scale: a number or "auto" (overrides the config)
    #[arg(long)]
    sigma: Option<SigmaSetting>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(sigma) = self.sigma {
            config.sigma = sigma;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Split the corpus and train the target model
    Train(Common),
    /// Train one shadow model per member partition
    Shadows(Common),
    /// Fit the noise scale on the calibration halves
    SigmaSearch(Common),
    /// Score the evaluation halves and write the report
    Audit {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of loss, shadow, noisy
        #[arg(long, value_delimiter = ',', default_value = "loss,shadow,noisy")]
        strategies: Vec<String>,
    },
    /// Print a summary of one or more report files
    Report {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(c) => {
            let out = cli::cmd_train(&c.resolve()?)?;
            println!(
                "wrote {}, {}, {}",
                out.split.display(),
                out.target.display(),
                out.manifest.display()
            );
        }
        Command::Shadows(c) => {
            let out = cli::cmd_shadows(&c.resolve()?)?;
            println!(
                "{} shadow checkpoints ({} trained, {} already present)",
                out.paths.len(),
                out.trained.len(),
                out.skipped.len()
            );
        }
        Command::SigmaSearch(c) => {
            let file = cli::cmd_sigma_search(&c.resolve()?)?;
            println!(
                "sigma* = {} (calibration AUC {:.4}, {} probes)",
                file.result.sigma_star,
                file.best_auc,
                file.result.probe_log.len()
            );
        }
        Command::Audit { common, strategies } => {
            let report = cli::cmd_audit(&common.resolve()?, &strategies)?;
            print!("{}", report.summary());
        }
        Command::Report { paths } => print!("{}", cli::cmd_report(&paths)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Cli::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
