use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use waic_flow::harness::{
    cmd_score, cmd_simulate, cmd_train, run_ensemble_sweep, run_insilico_experiment, run_scene_change_experiment,
    Config,
};
use waic_flow::{Error, Result};

#[derive(Parser)]
#[command(name = "waic-flow", version, about = "WAIC out-of-distribution scoring with flow ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    members: Option<usize>,
    /// Run single-threaded; outputs are bitwise reproducible.
    #[arg(long, global = true)]
    serial: bool,
    /// Override a configuration key, e.g. `--set rows=1000`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labeled dataset with a train/test split.
    Simulate,
    /// Train an ensemble on the training rows of a dataset.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score every row of a dataset with a trained ensemble.
    Score {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Restricted-support superset experiment.
    ExpInsilico,
    /// Illuminant switch in a synthetic video stream.
    ExpScenechange,
    /// Mean WAIC against ensemble size.
    ExpSweep,
}

fn build_config(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for o in &cli.overrides {
        config.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(m) = cli.members {
        config.members = m;
    }
    Ok(config)
}

fn required(flag: Option<&PathBuf>, fallback: Option<&PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or(fallback)
        .cloned()
        .ok_or_else(|| Error::Usage(format!("--{name} is required")))
}

fn run(cli: &Cli) -> Result<()> {
    let config = build_config(cli)?;
    let parallel = !cli.serial;
    let out: &Path = &cli.out;
    match &cli.command {
        Command::Simulate => {
            let s = cmd_simulate(&config, out, parallel)?;
            println!("train rows: {}", s.train_rows);
            println!("test rows: {}", s.test_rows);
            println!("dataset: {}", s.dataset.display());
            println!("camera table: {}", s.camera_table.display());
        }
        Command::Train { dataset } => {
            let dataset = required(dataset.as_ref(), config.dataset.as_ref(), "dataset")?;
            let manifest = cmd_train(&config, &dataset, out, parallel)?;
            println!("manifest: {}", manifest.display());
        }
        Command::Score { manifest, dataset } => {
            let manifest = required(manifest.as_ref(), config.manifest.as_ref(), "manifest")?;
            let dataset = required(dataset.as_ref(), config.dataset.as_ref(), "dataset")?;
            let scores = cmd_score(&manifest, &dataset, out, parallel)?;
            println!("scored rows: {}", scores.len());
        }
        Command::ExpInsilico => {
            let report = run_insilico_experiment(&config, out, parallel)?;
            for s in &report.summaries {
                println!("{}: n = {} median WAIC = {:.4}", s.split, s.n, s.median);
            }
            println!("median gap (sup_r - tr_s): {:.4}", report.median_gap);
            println!("AUROC outside vs sup_r: {:.4}", report.auroc);
            println!("worst 2% outside fraction: {:.4}", report.worst_outside_fraction);
        }
        Command::ExpScenechange => {
            let s = run_scene_change_experiment(&config, out, parallel)?;
            match s.detected {
                Some(d) => println!("detected switch: frame {d} (true {})", s.true_switch),
                None => println!("detected switch: none (true {})", s.true_switch),
            }
            println!("mean WAIC mismatched: {:.4}", s.mismatched_mean);
            println!("mean WAIC matched: {:.4}", s.matched_mean);
        }
        Command::ExpSweep => {
            for r in run_ensemble_sweep(&config, out, parallel)? {
                println!("m = {:2}: in {:.4} out {:.4}", r.members, r.mean_waic_in, r.mean_waic_out);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.serial {
        // A single worker keeps any parallel iterator on the calling thread's order.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
