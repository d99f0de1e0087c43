use std::path::PathBuf;

use alr_core::eval::Metric;
use alr_core::harness::{
    format_summary, generate_synthetic, read_curves, realize_labels, run_experiment, summarize,
    write_csv, ExperimentConfig,
};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "alr", version, about = "Active logistic regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic pool with one realized label per point.
    GenSynth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Labels needed per strategy to reach a target, from a curves table.
    Summarize {
        #[arg(long)]
        curves: PathBuf,
        /// `metric=value`, e.g. `train_acc=0.7` or `l2_to_truth=0.1`.
        #[arg(long)]
        target: String,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenSynth { n, d, seed, out } => {
            let (data, oracle) = generate_synthetic(n, d, seed)?;
            let truth = oracle.truth().expect("synthetic oracle has a truth");
            let labels = realize_labels(truth, &data, seed)?;
            write_csv(&out, &data, Some(&labels))
                .with_context(|| format!("writing {}", out.display()))?;
            let theta: Vec<String> = truth.theta.iter().map(f64::to_string).collect();
            println!("truth = [{}]", theta.join(", "));
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_file(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let report = run_experiment(&cfg)?;
            print!("{}", report.summary);
            eprintln!("wrote {}", cfg.output_dir.display());
        }
        Command::Summarize { curves, target } => {
            let Some((metric, value)) = target.split_once('=') else {
                bail!("target must look like metric=value");
            };
            let m: Metric = metric.trim().parse()?;
            let v: f64 = value.trim().parse().context("target value is not a number")?;
            let records = read_curves(&curves).with_context(|| format!("reading {}", curves.display()))?;
            print!("{}", format_summary(&summarize(&records, m, v), metric.trim(), v));
        }
    }
    Ok(())
}
