use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bae_core::data::{make_synthetic_2d, save_csv, DEFAULT_LABEL_COLUMN};
use bae_core::experiment::{
    prepare_data, run_experiment, run_with_models, train_model, write_outputs, ExperimentConfig,
    ExperimentResults,
};
use bae_core::models::{load_snapshot, save_snapshot, Method};
use clap::{Args, Parser, Subcommand};

/// Bayesian autoencoder anomaly detection with uncertainty-based rejection.
#[derive(Parser)]
#[command(name = "bae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's output_dir, then ./bae-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel (seed, model) jobs.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (seed, model) and store snapshots under <out>/models.
    Train(RunArgs),
    /// Evaluate snapshots written by `train` and emit reports.
    Evaluate(RunArgs),
    /// Train and evaluate in one pass and emit reports.
    Sweep(RunArgs),
    /// Write the two-blob synthetic dataset as CSV.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        n_inliers: usize,
        #[arg(long, default_value_t = 100)]
        n_anomalies: usize,
    },
}

fn load_config(args: &RunArgs) -> bae_core::Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("bae-out"));
    Ok((config, out))
}

fn snapshot_path(out: &Path, method: Method, seed: u64) -> PathBuf {
    out.join("models").join(format!("{method}_s{seed}.bae"))
}

fn report(results: &ExperimentResults, out: &Path) -> bae_core::Result<bool> {
    let summary = write_outputs(results, out)?;
    for a in &summary.aggregates {
        println!(
            "{:<13} {:<10} W_GSS {:.4} ± {:.4}  Gain {:+.4} ± {:.4}  positive {:.0}%",
            a.model.to_string(),
            a.uncertainty.to_string(),
            a.mean_w_gss,
            a.stderr_w_gss,
            a.mean_gain_gss,
            a.stderr_gain_gss,
            100.0 * a.positive_gain_fraction
        );
    }
    for f in &results.failures {
        eprintln!("failed: seed {} {}: {}", f.seed, f.model, f.error);
    }
    println!("outputs written to {}", out.display());
    Ok(results.failures.is_empty())
}

fn train_cmd(args: &RunArgs) -> bae_core::Result<bool> {
    let (config, out) = load_config(args)?;
    config.validate()?;
    std::fs::create_dir_all(out.join("models"))?;
    let mut ok = true;
    for &seed in &config.seeds {
        let data = prepare_data(&config, seed)?;
        for &method in &config.models {
            let path = snapshot_path(&out, method, seed);
            match train_model(&config, seed, method, &data).and_then(|e| save_snapshot(&e, &path)) {
                Ok(()) => println!("trained {method} seed {seed} -> {}", path.display()),
                Err(e) => {
                    eprintln!("failed: seed {seed} {method}: {e}");
                    ok = false;
                }
            }
        }
    }
    Ok(ok)
}

fn run() -> bae_core::Result<bool> {
    match Cli::parse().command {
        Command::Train(args) => train_cmd(&args),
        Command::Evaluate(args) => {
            let (config, out) = load_config(&args)?;
            let results = run_with_models(&config, args.workers, |seed, method, _| {
                load_snapshot(snapshot_path(&out, method, seed))
            })?;
            report(&results, &out)
        }
        Command::Sweep(args) => {
            let (config, out) = load_config(&args)?;
            let results = run_experiment(&config, args.workers)?;
            report(&results, &out)
        }
        Command::Synth {
            out,
            seed,
            n_inliers,
            n_anomalies,
        } => {
            let table = make_synthetic_2d(seed, n_inliers, n_anomalies)?;
            save_csv(&table, &out, DEFAULT_LABEL_COLUMN)?;
            println!("wrote {} rows to {}", table.rows(), out.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BAE_LOG", "warn")).init();
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
