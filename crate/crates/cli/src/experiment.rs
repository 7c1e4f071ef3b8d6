//! Sweep orchestration: one job per (cell, replication) so every scheme in
//! a cell replays the identical topology and trace, replications fanned out
//! across a worker pool, aggregation independent of completion order.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use backhaul_core::seed;
use backhaul_core::sim::{gain_switchable, run, RunParams, RunResult, Scheme, SimError};
use backhaul_core::topology::generate_topology;
use backhaul_core::workload::generate_workload;

use crate::config::ExperimentConfig;

const TAG_TOPOLOGY: u64 = 0x544f_504f;
const TAG_WORKLOAD: u64 = 0x574b_4c44;
const TAG_RUN: u64 = 0x5255_4e31;

/// Seeds for one replication of one cell. Derived from the master seed and
/// the cell's coordinate values, so adding sweep points elsewhere never
/// changes them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CellSeeds {
    pub replication: usize,
    pub topology: u64,
    pub workload: u64,
    pub run: u64,
}

pub fn derive_seeds(master: u64, arrival_rate: f64, n_core: usize, rep: usize) -> CellSeeds {
    let coord = [arrival_rate.to_bits(), n_core as u64, rep as u64];
    let tagged = |tag: u64| {
        let mut tags = vec![tag];
        tags.extend_from_slice(&coord);
        seed::mix(master, &tags)
    };
    CellSeeds {
        replication: rep,
        topology: tagged(TAG_TOPOLOGY),
        workload: tagged(TAG_WORKLOAD),
        run: tagged(TAG_RUN),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GainStats {
    pub mean: f64,
    pub std: f64,
    pub per_replication: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellScheme {
    /// One result per replication; empty when the scheme was skipped.
    pub runs: Vec<RunResult>,
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellResult {
    pub arrival_rate: f64,
    pub n_core: usize,
    pub n_edge: usize,
    pub seeds: Vec<CellSeeds>,
    pub schemes: BTreeMap<Scheme, CellScheme>,
    /// Per-replication power saving of each scheme against the baseline,
    /// measured on switchable power (edge layer factored out).
    pub gains: BTreeMap<Scheme, GainStats>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1); zero for fewer than two samples.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

enum SchemeOutcome {
    Ran(Box<RunResult>),
    Skipped(String),
}

struct JobOutput {
    cell: usize,
    rep: usize,
    per_scheme: Vec<(Scheme, SchemeOutcome)>,
}

fn run_job(cfg: &ExperimentConfig, cell: usize, rate: f64, n_core: usize, rep: usize) -> Result<JobOutput> {
    let at = || format!("cell arrival_rate={rate} n_core={n_core} replication={rep}");
    let seeds = derive_seeds(cfg.seed, rate, n_core, rep);
    let g = generate_topology(&cfg.topology_config(n_core), seeds.topology)
        .with_context(|| format!("topology generation failed at {}", at()))?;
    let trace = generate_workload(&cfg.workload_config(rate), &g, seeds.workload)
        .with_context(|| format!("workload generation failed at {}", at()))?;
    let params = RunParams {
        model: cfg.power_model(),
        hysteresis_s: cfg.hysteresis_s,
        eligibility: cfg.eligibility_policy,
        horizon_s: cfg.horizon_s,
        solver_budget: cfg.solver_budget,
        ..Default::default()
    };
    let mut per_scheme = Vec::with_capacity(cfg.schemes.len());
    for &scheme in &cfg.schemes {
        match run(&g, &trace, scheme, &params, seeds.run) {
            Ok(r) => per_scheme.push((scheme, SchemeOutcome::Ran(Box::new(r)))),
            Err(SimError::Solver(e)) if scheme == Scheme::OptimalSnapshot => {
                per_scheme.push((scheme, SchemeOutcome::Skipped(e.to_string())));
            }
            Err(e) => return Err(e).with_context(|| format!("run failed at {}", at())),
        }
    }
    if cfg.verbose {
        eprintln!("done {}", at());
    }
    Ok(JobOutput { cell, rep, per_scheme })
}

/// Runs the full sweep grid. Within each cell every scheme consumes the
/// identical topology and trace per replication; rerunning with the same
/// config reproduces every number.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SweepResult> {
    if cfg.schemes.is_empty() {
        bail!("no schemes selected");
    }
    let cells = cfg.cells();
    let jobs: Vec<(usize, f64, usize, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, &(rate, n_core))| {
            (0..cfg.replications).map(move |rep| (i, rate, n_core, rep))
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .context("worker pool")?;
    let outputs: Vec<JobOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|&(cell, rate, n_core, rep)| run_job(cfg, cell, rate, n_core, rep))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut results: Vec<CellResult> = cells
        .iter()
        .map(|&(rate, n_core)| CellResult {
            arrival_rate: rate,
            n_core,
            n_edge: cfg.edge_count_for(n_core),
            seeds: (0..cfg.replications)
                .map(|rep| derive_seeds(cfg.seed, rate, n_core, rep))
                .collect(),
            schemes: cfg
                .schemes
                .iter()
                .map(|&s| (s, CellScheme { runs: Vec::new(), skipped: None }))
                .collect(),
            gains: BTreeMap::new(),
        })
        .collect();

    let mut sorted = outputs;
    sorted.sort_by_key(|o| (o.cell, o.rep));
    for out in sorted {
        for (scheme, outcome) in out.per_scheme {
            let slot = results[out.cell].schemes.get_mut(&scheme).expect("scheme slot");
            match outcome {
                SchemeOutcome::Ran(r) => slot.runs.push(*r),
                SchemeOutcome::Skipped(why) => slot.skipped = Some(why),
            }
        }
    }

    for cell in &mut results {
        // A budget skip in any replication disqualifies the whole cell for
        // that scheme; partial aggregates would not be comparable.
        for slot in cell.schemes.values_mut() {
            if slot.skipped.is_some() {
                slot.runs.clear();
            }
        }
        let baseline = match cell.schemes.get(&Scheme::NoPowerSaving) {
            Some(b) if b.skipped.is_none() && !b.runs.is_empty() => b.runs.clone(),
            _ => continue,
        };
        let mut gains = BTreeMap::new();
        for (&scheme, slot) in &cell.schemes {
            if scheme == Scheme::NoPowerSaving || slot.runs.len() != baseline.len() {
                continue;
            }
            let per: Result<Vec<f64>, _> = baseline
                .iter()
                .zip(&slot.runs)
                .map(|(n, o)| gain_switchable(n, o))
                .collect();
            let per = per.with_context(|| {
                format!(
                    "gain pairing broke at cell arrival_rate={} n_core={}",
                    cell.arrival_rate, cell.n_core
                )
            })?;
            gains.insert(
                scheme,
                GainStats { mean: mean(&per), std: sample_std(&per), per_replication: per },
            );
        }
        cell.gains = gains;
        eprintln!(
            "cell arrival_rate={} n_core={}: {} scheme(s) x {} replication(s) done",
            cell.arrival_rate,
            cell.n_core,
            cell.schemes.len(),
            cfg.replications
        );
    }

    Ok(SweepResult { config: cfg.clone(), cells: results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = parse_config(
            "n_core = 3\nn_edge = 2\nhosts_per_edge = 2\nhorizon_s = 60.0\nreplications = 3\n",
        )
        .unwrap();
        cfg.seed = 11;
        cfg
    }

    #[test]
    fn seeds_depend_on_every_coordinate() {
        let base = derive_seeds(1, 0.1, 12, 0);
        assert_ne!(base.topology, base.workload);
        assert_ne!(base.workload, base.run);
        assert_ne!(derive_seeds(2, 0.1, 12, 0).topology, base.topology);
        assert_ne!(derive_seeds(1, 0.2, 12, 0).topology, base.topology);
        assert_ne!(derive_seeds(1, 0.1, 13, 0).topology, base.topology);
        assert_ne!(derive_seeds(1, 0.1, 12, 1).topology, base.topology);
        // Stable across calls and unaffected by other sweep points.
        assert_eq!(derive_seeds(1, 0.1, 12, 0), base);
    }

    #[test]
    fn schemes_share_topology_and_trace_within_a_replication() {
        let cfg = tiny_config();
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.cells.len(), 1);
        let cell = &r.cells[0];
        let emma = &cell.schemes[&Scheme::Emma];
        let nops = &cell.schemes[&Scheme::NoPowerSaving];
        assert_eq!(emma.runs.len(), 3);
        assert_eq!(nops.runs.len(), 3);
        for rep in 0..3 {
            assert_eq!(emma.runs[rep].topology_digest, nops.runs[rep].topology_digest);
            assert_eq!(emma.runs[rep].trace_digest, nops.runs[rep].trace_digest);
        }
        // Replications differ from each other.
        assert_ne!(emma.runs[0].trace_digest, emma.runs[1].trace_digest);
        assert!(cell.gains.contains_key(&Scheme::Emma));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut one = tiny_config();
        one.replications = 4;
        let mut four = one.clone();
        one.workers = 1;
        four.workers = 4;
        let a = run_experiment(&one).unwrap();
        let b = run_experiment(&four).unwrap();
        for (ca, cb) in a.cells.iter().zip(&b.cells) {
            for (sa, sb) in ca.schemes.iter().zip(&cb.schemes) {
                assert_eq!(sa.0, sb.0);
                assert_eq!(sa.1.runs, sb.1.runs);
            }
            assert_eq!(ca.gains, cb.gains);
        }
    }

    #[test]
    fn statistics_helpers() {
        assert_eq!(mean(&[]), 0.0);
        assert_eq!(mean(&[2.0, 4.0]), 3.0);
        assert_eq!(sample_std(&[5.0]), 0.0);
        let s = sample_std(&[2.0, 4.0, 6.0]);
        assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_solver_runs_within_budget_on_tiny_cells() {
        let mut cfg = tiny_config();
        cfg.replications = 1;
        cfg.schemes = vec![Scheme::Emma, Scheme::NoPowerSaving, Scheme::OptimalSnapshot];
        let r = run_experiment(&cfg).unwrap();
        let opt = &r.cells[0].schemes[&Scheme::OptimalSnapshot];
        assert!(opt.skipped.is_none());
        assert_eq!(opt.runs.len(), 1);
        assert!(r.cells[0].gains.contains_key(&Scheme::OptimalSnapshot));
    }

    #[test]
    fn budget_starved_solver_is_skipped_not_fatal() {
        let mut cfg = tiny_config();
        cfg.replications = 1;
        cfg.arrival_rate_flows_per_s = 0.5;
        cfg.schemes = vec![Scheme::Emma, Scheme::NoPowerSaving, Scheme::OptimalSnapshot];
        cfg.solver_budget = 1;
        let r = run_experiment(&cfg).unwrap();
        let opt = &r.cells[0].schemes[&Scheme::OptimalSnapshot];
        assert!(opt.skipped.as_deref().unwrap_or("").contains("budget"));
        assert!(opt.runs.is_empty());
        // The other schemes in the cell are unaffected.
        assert_eq!(r.cells[0].schemes[&Scheme::Emma].runs.len(), 1);
        assert!(!r.cells[0].gains.contains_key(&Scheme::OptimalSnapshot));
    }
}
