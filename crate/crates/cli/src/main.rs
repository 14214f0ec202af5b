//! `privcal`: generate synthetic data, run calibration experiments and the
//! beta ablation, or run the built-in self-check.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use privcal::harness::{self, selfcheck, ExperimentConfig, ReportRow};
use privcal::synth::write_dataset_csv;
use privcal::Error;

#[derive(Parser)]
#[command(
    name = "privcal",
    version,
    about = "Conformal calibration with privileged information"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one corrupted synthetic dataset as CSV.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Trial index whose data to write.
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Run every configured method over repeated random splits.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Repeat the experiment for several PCP betas with shared seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated betas, each in (0, alpha).
        #[arg(long)]
        betas: String,
    },
    /// Run the property suites; exits with status 2 on any failure.
    Selfcheck,
}

/// Config file, output path and per-key overrides.
#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

macro_rules! overrides {
    ($($key:ident),* $(,)?) => {
        /// Flags that override config-file keys of the same name.
        #[derive(Args)]
        struct Overrides {
            $(
                #[arg(long = stringify!($key), value_name = "VALUE")]
                $key: Option<String>,
            )*
        }

        impl Overrides {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$key {
                        out.push((stringify!($key), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

overrides!(
    preset,
    scarce_mode,
    corruption_mode,
    methods,
    alpha,
    beta_pcp,
    beta_two_staged,
    n_trials,
    n_samples,
    seed,
    weight_source,
    split_fractions,
    target_corruption_mean,
    epochs,
    learning_rate,
    patience,
    grid_size,
    loo_cap,
);

/// Every error exits with status 1 except a failed self-check.
enum Failure {
    Error(String),
    Selfcheck,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e.to_string())
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let text = match &common.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| Failure::Error(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut config = ExperimentConfig::parse(&text)?;
    config.apply(common.overrides.pairs())?;
    config.validate()?;
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Error(format!("cannot create {}: {e}", path.display())))
}

fn print_summary(rows: &[ReportRow]) {
    for s in harness::summarize(rows) {
        eprintln!(
            "{:<24} beta={:<6} trials={:<4} coverage={:.4} (se {:.4})  avg_size={:.4} (se {:.4})",
            s.method, s.beta, s.trials, s.mean_coverage, s.se_coverage, s.mean_size, s.se_size
        );
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { common, trial } => {
            let config = load_config(&common)?;
            let (synth, corrupted) = harness::trial_data(&config, trial)?;
            write_dataset_csv(create(&common.out)?, &corrupted, Some(&synth.probs))?;
            eprintln!(
                "wrote {} samples to {}",
                corrupted.len(),
                common.out.display()
            );
        }
        Command::Run { common } => {
            let config = load_config(&common)?;
            let rows = harness::run_experiment(&config)?;
            harness::write_report(create(&common.out)?, &rows)?;
            print_summary(&rows);
        }
        Command::Ablate { common, betas } => {
            let config = load_config(&common)?;
            let betas = harness::parse_list("betas", &betas)?;
            let rows = harness::ablate_beta(&config, &betas)?;
            harness::write_report(create(&common.out)?, &rows)?;
            print_summary(&rows);
        }
        Command::Selfcheck => {
            let results = selfcheck::run_selfcheck();
            for r in &results {
                let status = if r.passed() { "PASS" } else { "FAIL" };
                println!(
                    "{status} {:<28} {} cases, {} failures",
                    r.name, r.cases, r.failures
                );
                if let Some(detail) = &r.detail {
                    println!("     first failure: {detail}");
                }
            }
            if results.iter().any(|r| !r.passed()) {
                return Err(Failure::Selfcheck);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Selfcheck) => ExitCode::from(2),
    }
}
