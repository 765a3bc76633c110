use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spn_core::pipeline::{self, RunConfig};
use spn_core::Result;

#[derive(Parser)]
#[command(name = "spn", version, about = "Stochastic Petri net simulator and parameter-inference surrogate")]
struct Cli {
    /// JSON run configuration; defaults are used for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for generation and evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override a config value, e.g. `--set dataset.n=64`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the daily basis-function cache from weather data.
    Covariates {
        /// Station CSV (otherwise `paths.weather_csv`, otherwise synthetic weather).
        #[arg(long)]
        weather: Option<PathBuf>,
    },
    /// Simulate the training dataset.
    Generate,
    /// Train the surrogate network.
    Train,
    /// Posterior for one observed trajectory.
    Infer {
        /// CSV with a `day` column and one column per place.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Metrics and calibration on the test split.
    Evaluate,
    /// SVG figures and tables from evaluation outputs.
    Report,
    /// Print the resolved configuration.
    Config,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Command::Covariates { weather: Some(w) } = &cli.command {
        cfg.paths.weather_csv = Some(w.clone());
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Covariates { .. } => {
            let s = pipeline::cmd_covariates(&cfg)?;
            println!(
                "{} days × {} patches, biting activity on {:.1}% of patch-days -> {}",
                s.days,
                s.patches,
                100.0 * s.biting_fraction,
                cfg.paths.covariates_dir.display()
            );
        }
        Command::Generate => {
            let s = pipeline::cmd_generate(&cfg)?;
            println!(
                "{} records in {:.1} s ({} failed samples) -> {}",
                s.records,
                s.seconds,
                s.failed,
                cfg.paths.dataset_dir.display()
            );
        }
        Command::Train => {
            let s = pipeline::cmd_train(&cfg)?;
            println!(
                "{} epochs, best epoch {} (val loss {:.5}) -> {}",
                s.epochs,
                s.best_epoch,
                s.best_val_loss,
                cfg.paths.checkpoint.display()
            );
        }
        Command::Infer { input, output } => {
            for r in pipeline::cmd_infer(&cfg, input, output.as_deref())? {
                println!("{:<9} {:.6} ± {:.6}", r.parameter, r.mean, r.std);
            }
        }
        Command::Evaluate => {
            let report = pipeline::cmd_evaluate(&cfg)?;
            println!("overall RMSE (normalised) {:.4}", report.overall_rmse);
        }
        Command::Report => {
            let s = pipeline::cmd_report(&cfg)?;
            println!("{} files -> {}", s.files.len(), cfg.paths.report_dir.display());
        }
        Command::Config => {
            cfg.validate()?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}
