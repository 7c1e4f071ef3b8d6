//! Result files: a JSON summary carrying the full config echo and every
//! derived seed, plus CSV tables. Numbers are written with Rust's shortest
//! round-trip float formatting, so identical results give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use backhaul_core::sim::{RunResult, Scheme};

use crate::experiment::{mean, sample_std, CellResult, SweepResult};

/// Writes every result file into `out_dir` and returns the paths written,
/// in a fixed order.
pub fn emit_results(r: &SweepResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let mut written = Vec::new();

    let summary = out_dir.join("summary.json");
    let json = serde_json::to_string_pretty(r).context("serializing summary")?;
    fs::write(&summary, json + "\n").with_context(|| format!("writing {}", summary.display()))?;
    written.push(summary);

    written.push(write_metrics(r, &out_dir.join("metrics.csv"))?);
    written.push(write_gain(r, &out_dir.join("gain.csv"))?);

    let rate_axis = r.config.sweep_arrival_rate.is_some();
    let core_axis = r.config.sweep_n_core.is_some();
    if rate_axis && !core_axis {
        written.push(write_per_flow_view(r, &out_dir.join("fig2.csv"), Axis::ArrivalRate)?);
    }
    if core_axis && !rate_axis {
        written.push(write_per_flow_view(r, &out_dir.join("fig3.csv"), Axis::CoreCount)?);
    }

    if r.config.verbose {
        let runs_dir = out_dir.join("runs");
        fs::create_dir_all(&runs_dir)
            .with_context(|| format!("creating {}", runs_dir.display()))?;
        for cell in &r.cells {
            for (scheme, slot) in &cell.schemes {
                for run in &slot.runs {
                    written.push(write_samples(&runs_dir, cell, *scheme, run)?);
                    written.push(write_events(&runs_dir, cell, *scheme, run)?);
                }
            }
        }
    }
    Ok(written)
}

enum Axis {
    ArrivalRate,
    CoreCount,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("opening {}", path.display()))
}

fn write_metrics(r: &SweepResult, path: &Path) -> Result<PathBuf> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "n_core",
        "arrival_rate_flows_per_s",
        "scheme",
        "replications",
        "mean_avg_power_per_flow_w",
        "std_avg_power_per_flow_w",
        "mean_network_power_w",
        "std_network_power_w",
        "mean_switchable_power_w",
        "std_switchable_power_w",
        "mean_total_energy_j",
        "std_total_energy_j",
        "mean_blocked_fraction",
        "mean_active_core_switches",
        "skipped",
    ])?;
    for cell in &r.cells {
        for (scheme, slot) in &cell.schemes {
            if let Some(why) = &slot.skipped {
                w.write_record([
                    cell.n_core.to_string(),
                    cell.arrival_rate.to_string(),
                    scheme.to_string(),
                    "0".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    why.clone(),
                ])?;
                continue;
            }
            let col = |f: fn(&RunResult) -> f64| -> Vec<f64> {
                slot.runs.iter().map(f).collect()
            };
            let per_flow = col(|x| x.avg_power_per_flow_w);
            let power = col(|x| x.mean_network_power_w);
            let switchable = col(|x| x.mean_switchable_power_w);
            let energy = col(|x| x.total_energy_j);
            let blocked = col(|x| x.blocked_fraction);
            let cores = col(|x| x.mean_active_core_switches);
            w.write_record([
                cell.n_core.to_string(),
                cell.arrival_rate.to_string(),
                scheme.to_string(),
                slot.runs.len().to_string(),
                mean(&per_flow).to_string(),
                sample_std(&per_flow).to_string(),
                mean(&power).to_string(),
                sample_std(&power).to_string(),
                mean(&switchable).to_string(),
                sample_std(&switchable).to_string(),
                mean(&energy).to_string(),
                sample_std(&energy).to_string(),
                mean(&blocked).to_string(),
                mean(&cores).to_string(),
                String::new(),
            ])?;
        }
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

/// Power saving of the adaptive scheme against the always-on baseline,
/// one row per sweep cell.
fn write_gain(r: &SweepResult, path: &Path) -> Result<PathBuf> {
    let mut w = csv_writer(path)?;
    w.write_record(["n_core", "arrival_rate", "gain_mean", "gain_std"])?;
    for cell in &r.cells {
        if let Some(g) = cell.gains.get(&Scheme::Emma) {
            w.write_record([
                cell.n_core.to_string(),
                cell.arrival_rate.to_string(),
                g.mean.to_string(),
                g.std.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

fn write_per_flow_view(r: &SweepResult, path: &Path, axis: Axis) -> Result<PathBuf> {
    let mut w = csv_writer(path)?;
    let axis_name = match axis {
        Axis::ArrivalRate => "arrival_rate",
        Axis::CoreCount => "n_core",
    };
    w.write_record([
        axis_name,
        "scheme",
        "mean_avg_power_per_flow_w",
        "std_w",
        "replications",
    ])?;
    for cell in &r.cells {
        let axis_value = match axis {
            Axis::ArrivalRate => cell.arrival_rate.to_string(),
            Axis::CoreCount => cell.n_core.to_string(),
        };
        for (scheme, slot) in &cell.schemes {
            if slot.skipped.is_some() {
                continue;
            }
            let per_flow: Vec<f64> =
                slot.runs.iter().map(|x| x.avg_power_per_flow_w).collect();
            w.write_record([
                axis_value.clone(),
                scheme.to_string(),
                mean(&per_flow).to_string(),
                sample_std(&per_flow).to_string(),
                slot.runs.len().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

fn run_file_stem(cell: &CellResult, scheme: Scheme, run: &RunResult) -> String {
    format!(
        "n{}_l{}_rep{}_{}",
        cell.n_core,
        cell.arrival_rate,
        cell.seeds
            .iter()
            .position(|s| s.run == run.seed)
            .map(|i| i.to_string())
            .unwrap_or_else(|| run.seed.to_string()),
        scheme
    )
}

fn write_samples(dir: &Path, cell: &CellResult, scheme: Scheme, run: &RunResult) -> Result<PathBuf> {
    let path = dir.join(format!("{}_samples.csv", run_file_stem(cell, scheme, run)));
    let mut w = csv_writer(&path)?;
    w.write_record(["time_s", "power_w", "active_core_count", "concurrent_flows"])?;
    for s in &run.samples {
        w.write_record([
            s.time_s.to_string(),
            s.power_w.to_string(),
            s.active_core_switches.to_string(),
            s.concurrent_flows.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(path)
}

fn write_events(dir: &Path, cell: &CellResult, scheme: Scheme, run: &RunResult) -> Result<PathBuf> {
    let path = dir.join(format!("{}_events.csv", run_file_stem(cell, scheme, run)));
    let mut w = csv_writer(&path)?;
    w.write_record([
        "time_s",
        "action",
        "flow_id",
        "path",
        "power_before_w",
        "power_after_w",
    ])?;
    for e in &run.events {
        let path_str = e
            .path
            .iter()
            .map(|n| n.0.to_string())
            .collect::<Vec<_>>()
            .join("-");
        w.write_record([
            e.time_s.to_string(),
            e.action.to_string(),
            e.flow_id.to_string(),
            path_str,
            e.power_before_w.to_string(),
            e.power_after_w.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(path)
}
