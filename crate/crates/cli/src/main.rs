use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;

use backhaul_cli::config::{load_config, parse_schemes, ExperimentConfig};
use backhaul_cli::experiment::run_experiment;
use backhaul_cli::output::emit_results;

/// Runs seeded routing experiments over generated backhaul topologies and
/// writes figure-shaped CSV tables plus a reproducible JSON summary.
#[derive(Parser)]
#[command(name = "backhaul", version, about)]
struct Args {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for result files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed; every run seed derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated list: emma, no-power-saving, optimal-snapshot.
    #[arg(long, default_value = "emma,no-power-saving")]
    schemes: String,
    /// Parallel replication workers.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Also write per-run power samples and event logs.
    #[arg(long)]
    verbose: bool,
}

fn main() -> Result<()> {
    let args = Args::parse();
    let mut cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.seed = args.seed;
    cfg.schemes = parse_schemes(&args.schemes)?;
    cfg.workers = args.workers.max(1);
    cfg.verbose = args.verbose;

    let result = run_experiment(&cfg)?;
    let files = emit_results(&result, &args.out)?;
    eprintln!("wrote {} file(s) under {}", files.len(), args.out.display());
    Ok(())
}
