//! `keyrel`: simulate, train, evaluate and serve keyphrase relevance models.

mod commands;
mod config;
mod exit;
mod manifest;
mod world;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use keyrel::experiment::{LabelSource, ModelFamily};

use crate::commands::BenchArgs;
use crate::config::RunConfig;

/// Settings in the config file can be overridden with dotted flags that
/// mirror config keys, e.g. `--sim.search-noise 0.2`.
#[derive(Debug, Parser)]
#[command(name = "keyrel", version, about)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; required here or in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a world directory: catalog, click log and judgments.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a world's click or judgment labels.
    Train {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, value_parser = parse_family)]
        model: ModelFamily,
        #[arg(long, value_parser = parse_labels, default_value = "judgments")]
        labels: LabelSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score held-out judgments and print precision / recall / F1.
    Eval {
        #[arg(long)]
        world: PathBuf,
        /// Model directories or checkpoint files; `jaccard` for the baseline.
        #[arg(long, required = true, num_args = 1..)]
        model: Vec<String>,
        /// Fail with the gate exit code if any model is below this F1.
        #[arg(long)]
        min_f1: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print candidate pairs that pass the filter as JSON lines.
    Filter {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        model: String,
        /// Restrict to these items.
        #[arg(long)]
        item: Vec<u64>,
        /// Also print failing pairs.
        #[arg(long)]
        all: bool,
    },
    /// Score every candidate pair into a fresh score store.
    Batch {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply catalog changes to a batch directory, rescoring only what they touch.
    Diff {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        batch: PathBuf,
        /// JSON-lines change files.
        #[arg(long, required = true, num_args = 1..)]
        changes: Vec<PathBuf>,
    },
    /// Serve a batch directory over HTTP with near-real-time updates.
    Serve {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        batch: PathBuf,
        /// JSON-lines change files that seed the feature store.
        #[arg(long)]
        features: Vec<PathBuf>,
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        window_ms: Option<u64>,
    },
    /// Measure scoring throughput on a synthetic workload.
    Bench {
        #[arg(long, value_parser = parse_family)]
        family: ModelFamily,
        #[arg(long, default_value_t = 400)]
        n_items: usize,
        #[arg(long, default_value_t = 250)]
        n_keyphrases: usize,
        #[arg(long, default_value_t = 1000)]
        n_pairs: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the click-vs-judgment bias study and write a comparison report.
    Experiment {
        #[arg(long)]
        out: PathBuf,
        /// Fail with the gate exit code if judgment-trained F1 does not beat
        /// click-trained F1 by this much.
        #[arg(long)]
        min_gap: Option<f64>,
    },
}

fn parse_family(s: &str) -> Result<ModelFamily, String> {
    s.parse().map_err(|e: keyrel::Error| e.to_string())
}

fn parse_labels(s: &str) -> Result<LabelSource, String> {
    match s {
        "judgments" => Ok(LabelSource::Judgments),
        "clicks" => Ok(LabelSource::Clicks),
        _ => Err(format!("unknown label source {s:?} (judgments|clicks)")),
    }
}

fn init_logging(verbose: bool) {
    let level = if verbose { "info" } else { "warn" };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into());
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), overrides, cli.seed)?;
    match cli.command {
        Command::Simulate { out } => commands::simulate(&cfg, &out),
        Command::Train {
            world,
            model,
            labels,
            out,
        } => commands::train(&cfg, &world, model, labels, &out),
        Command::Eval {
            world,
            model,
            min_f1,
            out,
        } => commands::eval(&cfg, &world, &model, min_f1, out.as_deref()),
        Command::Filter { world, model, item, all } => commands::filter(&cfg, &world, &model, &item, all),
        Command::Batch { world, model, out } => commands::batch(&cfg, &world, &model, &out),
        Command::Diff {
            world,
            model,
            batch,
            changes,
        } => commands::diff(&cfg, &world, &model, &batch, &changes),
        Command::Serve {
            world,
            model,
            batch,
            features,
            addr,
            window_ms,
        } => commands::serve(&cfg, &world, &model, &batch, &features, addr.as_deref(), window_ms),
        Command::Bench {
            family,
            n_items,
            n_keyphrases,
            n_pairs,
            repeats,
            out,
        } => commands::bench(
            &cfg,
            &BenchArgs {
                family,
                n_items,
                n_keyphrases,
                n_pairs,
                repeats,
            },
            out.as_deref(),
        ),
        Command::Experiment { out, min_gap } => commands::experiment(&cfg, &out, min_gap),
    }
}

fn main() -> ExitCode {
    let (args, overrides) = match config::extract_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit::CONFIG);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG } else { exit::OK });
        }
    };
    init_logging(cli.verbose);
    match run(cli, &overrides) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
