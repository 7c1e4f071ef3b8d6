//! Experiment configuration: TOML file with a fixed key set, every key
//! optional, unknown keys rejected so typos fail loudly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use backhaul_core::power::PowerModel;
use backhaul_core::routing::EligibilityPolicy;
use backhaul_core::sim::Scheme;
use backhaul_core::topology::TopologyConfig;
use backhaul_core::workload::WorkloadConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("eligibility_policy must be \"fixed-hysteresis\" or \"half-duration\", got {0:?}")]
    Policy(String),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("no schemes selected")]
    NoSchemes,
}

/// File keys, all optional. `deny_unknown_fields` turns a misspelled key
/// into an error naming it.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    arrival_rate_flows_per_s: Option<f64>,
    mean_duration_s: Option<f64>,
    n_core: Option<usize>,
    n_edge: Option<usize>,
    hosts_per_edge: Option<usize>,
    link_capacity_bytes_per_s: Option<u64>,
    hysteresis_s: Option<f64>,
    p_idle_w: Option<f64>,
    e_lookup_nj: Option<f64>,
    e_rx_nj: Option<f64>,
    e_xfer_nj: Option<f64>,
    e_tx_nj: Option<f64>,
    p_link: Option<f64>,
    packet_size_bytes: Option<u64>,
    horizon_s: Option<f64>,
    flow_rate_bps: Option<u64>,
    replications: Option<usize>,
    edge_uplinks: Option<usize>,
    eligibility_policy: Option<String>,
    sweep_arrival_rate: Option<Vec<f64>>,
    sweep_n_core: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub arrival_rate_flows_per_s: f64,
    pub mean_duration_s: f64,
    pub n_core: usize,
    /// Explicit edge switch count; when absent each sweep cell derives
    /// max(1, n_core / 2).
    pub n_edge: Option<usize>,
    pub hosts_per_edge: usize,
    pub link_capacity_bytes_per_s: u64,
    pub hysteresis_s: f64,
    pub p_idle_w: f64,
    pub e_lookup_nj: f64,
    pub e_rx_nj: f64,
    pub e_xfer_nj: f64,
    pub e_tx_nj: f64,
    pub p_link: f64,
    /// Accepted and echoed for the record; the fluid model does not use it.
    pub packet_size_bytes: u64,
    pub horizon_s: f64,
    pub flow_rate_bps: u64,
    pub replications: usize,
    pub edge_uplinks: usize,
    pub eligibility_policy: EligibilityPolicy,
    pub sweep_arrival_rate: Option<Vec<f64>>,
    pub sweep_n_core: Option<Vec<usize>>,
    /// Runtime knobs, set from command-line flags rather than file keys.
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub workers: usize,
    pub verbose: bool,
    /// Node budget for the snapshot solver; cells that exceed it skip the
    /// snapshot scheme with a marker instead of failing.
    pub solver_budget: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            arrival_rate_flows_per_s: 0.1,
            mean_duration_s: 20.0,
            n_core: 12,
            n_edge: None,
            hosts_per_edge: 10,
            link_capacity_bytes_per_s: 10_000_000,
            hysteresis_s: 10.0,
            p_idle_w: 90.0,
            e_lookup_nj: 0.034,
            e_rx_nj: 0.2,
            e_xfer_nj: 0.21,
            e_tx_nj: 0.2,
            p_link: 0.5,
            packet_size_bytes: 1500,
            horizon_s: 500.0,
            flow_rate_bps: 8_000_000,
            replications: 20,
            edge_uplinks: 2,
            eligibility_policy: EligibilityPolicy::FixedHysteresis,
            sweep_arrival_rate: None,
            sweep_n_core: None,
            seed: 0,
            schemes: vec![Scheme::Emma, Scheme::NoPowerSaving],
            workers: 1,
            verbose: false,
            solver_budget: backhaul_core::optimal::DEFAULT_BUDGET,
        }
    }
}

impl ExperimentConfig {
    pub fn edge_count_for(&self, n_core: usize) -> usize {
        self.n_edge.unwrap_or_else(|| (n_core / 2).max(1))
    }

    pub fn link_capacity_bps(&self) -> u64 {
        self.link_capacity_bytes_per_s * 8
    }

    pub fn power_model(&self) -> PowerModel {
        PowerModel {
            e_lookup_nj: self.e_lookup_nj,
            e_rx_nj: self.e_rx_nj,
            e_xfer_nj: self.e_xfer_nj,
            e_tx_nj: self.e_tx_nj,
            p_idle_w: self.p_idle_w,
        }
    }

    pub fn topology_config(&self, n_core: usize) -> TopologyConfig {
        TopologyConfig {
            n_core,
            n_edge: self.edge_count_for(n_core),
            hosts_per_edge: self.hosts_per_edge,
            p_link: self.p_link,
            capacity_bps: self.link_capacity_bps(),
            edge_uplinks: self.edge_uplinks,
        }
    }

    pub fn workload_config(&self, arrival_rate: f64) -> WorkloadConfig {
        WorkloadConfig {
            arrival_rate_flows_per_s: arrival_rate,
            mean_duration_s: self.mean_duration_s,
            flow_rate_bps: self.flow_rate_bps,
            horizon_s: self.horizon_s,
        }
    }

    /// The sweep grid; a missing axis collapses to the scalar setting.
    pub fn cells(&self) -> Vec<(f64, usize)> {
        let rates = self
            .sweep_arrival_rate
            .clone()
            .unwrap_or_else(|| vec![self.arrival_rate_flows_per_s]);
        let cores = self.sweep_n_core.clone().unwrap_or_else(|| vec![self.n_core]);
        let mut cells = Vec::with_capacity(rates.len() * cores.len());
        for &n in &cores {
            for &r in &rates {
                cells.push((r, n));
            }
        }
        cells
    }

    fn validate(self) -> Result<Self, ConfigError> {
        if self.arrival_rate_flows_per_s <= 0.0 || self.arrival_rate_flows_per_s.is_nan() {
            return Err(ConfigError::NonPositive("arrival_rate_flows_per_s"));
        }
        if self.mean_duration_s <= 0.0 || self.mean_duration_s.is_nan() {
            return Err(ConfigError::NonPositive("mean_duration_s"));
        }
        if self.horizon_s <= 0.0 || self.horizon_s.is_nan() {
            return Err(ConfigError::NonPositive("horizon_s"));
        }
        if self.n_core == 0 {
            return Err(ConfigError::NonPositive("n_core"));
        }
        if self.replications == 0 {
            return Err(ConfigError::NonPositive("replications"));
        }
        if self.link_capacity_bytes_per_s == 0 {
            return Err(ConfigError::NonPositive("link_capacity_bytes_per_s"));
        }
        if let Some(rates) = &self.sweep_arrival_rate {
            if rates.is_empty() || rates.iter().any(|r| *r <= 0.0 || r.is_nan()) {
                return Err(ConfigError::NonPositive("sweep_arrival_rate entries"));
            }
        }
        if let Some(cores) = &self.sweep_n_core {
            if cores.is_empty() || cores.contains(&0) {
                return Err(ConfigError::NonPositive("sweep_n_core entries"));
            }
        }
        Ok(self)
    }
}

fn resolve(raw: RawConfig) -> Result<ExperimentConfig, ConfigError> {
    let d = ExperimentConfig::default();
    let eligibility_policy = match raw.eligibility_policy.as_deref() {
        None => d.eligibility_policy,
        Some("fixed-hysteresis") => EligibilityPolicy::FixedHysteresis,
        Some("half-duration") => EligibilityPolicy::HalfDuration,
        Some(other) => return Err(ConfigError::Policy(other.to_string())),
    };
    ExperimentConfig {
        arrival_rate_flows_per_s: raw
            .arrival_rate_flows_per_s
            .unwrap_or(d.arrival_rate_flows_per_s),
        mean_duration_s: raw.mean_duration_s.unwrap_or(d.mean_duration_s),
        n_core: raw.n_core.unwrap_or(d.n_core),
        n_edge: raw.n_edge,
        hosts_per_edge: raw.hosts_per_edge.unwrap_or(d.hosts_per_edge),
        link_capacity_bytes_per_s: raw
            .link_capacity_bytes_per_s
            .unwrap_or(d.link_capacity_bytes_per_s),
        hysteresis_s: raw.hysteresis_s.unwrap_or(d.hysteresis_s),
        p_idle_w: raw.p_idle_w.unwrap_or(d.p_idle_w),
        e_lookup_nj: raw.e_lookup_nj.unwrap_or(d.e_lookup_nj),
        e_rx_nj: raw.e_rx_nj.unwrap_or(d.e_rx_nj),
        e_xfer_nj: raw.e_xfer_nj.unwrap_or(d.e_xfer_nj),
        e_tx_nj: raw.e_tx_nj.unwrap_or(d.e_tx_nj),
        p_link: raw.p_link.unwrap_or(d.p_link),
        packet_size_bytes: raw.packet_size_bytes.unwrap_or(d.packet_size_bytes),
        horizon_s: raw.horizon_s.unwrap_or(d.horizon_s),
        flow_rate_bps: raw.flow_rate_bps.unwrap_or(d.flow_rate_bps),
        replications: raw.replications.unwrap_or(d.replications),
        edge_uplinks: raw.edge_uplinks.unwrap_or(d.edge_uplinks),
        eligibility_policy,
        sweep_arrival_rate: raw.sweep_arrival_rate,
        sweep_n_core: raw.sweep_n_core,
        seed: d.seed,
        schemes: d.schemes,
        workers: d.workers,
        verbose: d.verbose,
        solver_budget: d.solver_budget,
    }
    .validate()
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text)?;
    resolve(raw)
}

pub fn parse_schemes(list: &str) -> Result<Vec<Scheme>, ConfigError> {
    let mut schemes = Vec::new();
    for part in list.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let s: Scheme = part
            .parse()
            .map_err(|_| ConfigError::Policy(format!("unknown scheme {part:?}")))?;
        if !schemes.contains(&s) {
            schemes.push(s);
        }
    }
    if schemes.is_empty() {
        return Err(ConfigError::NoSchemes);
    }
    Ok(schemes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_full_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.edge_count_for(cfg.n_core), 6);
        assert_eq!(cfg.link_capacity_bps(), 80_000_000);
        assert_eq!(cfg.replications, 20);
    }

    #[test]
    fn single_override_keeps_other_defaults() {
        let cfg = parse_config("arrival_rate_flows_per_s = 0.5\n").unwrap();
        assert_eq!(cfg.arrival_rate_flows_per_s, 0.5);
        assert_eq!(cfg.n_core, 12);
        assert_eq!(cfg.horizon_s, 500.0);
    }

    #[test]
    fn misspelled_key_is_named_in_the_error() {
        let err = parse_config("arival_rate_flows_per_s = 0.5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("arival_rate_flows_per_s"), "{msg}");
    }

    #[test]
    fn derived_edge_count_floors_at_one() {
        let cfg = parse_config("n_core = 1\n").unwrap();
        assert_eq!(cfg.edge_count_for(1), 1);
        let explicit = parse_config("n_edge = 4\n").unwrap();
        assert_eq!(explicit.edge_count_for(40), 4);
    }

    #[test]
    fn sweep_axes_cross() {
        let cfg = parse_config(
            "sweep_arrival_rate = [0.05, 0.1]\nsweep_n_core = [10, 20]\n",
        )
        .unwrap();
        assert_eq!(
            cfg.cells(),
            vec![(0.05, 10), (0.1, 10), (0.05, 20), (0.1, 20)]
        );
        let flat = parse_config("").unwrap();
        assert_eq!(flat.cells(), vec![(0.1, 12)]);
    }

    #[test]
    fn policy_strings_parse() {
        let cfg = parse_config("eligibility_policy = \"half-duration\"\n").unwrap();
        assert_eq!(cfg.eligibility_policy, EligibilityPolicy::HalfDuration);
        assert!(parse_config("eligibility_policy = \"sometimes\"\n").is_err());
    }

    #[test]
    fn invalid_numbers_are_rejected() {
        assert!(parse_config("replications = 0\n").is_err());
        assert!(parse_config("horizon_s = -1.0\n").is_err());
        assert!(parse_config("sweep_n_core = []\n").is_err());
    }

    #[test]
    fn scheme_lists_parse() {
        assert_eq!(
            parse_schemes("emma, no-power-saving").unwrap(),
            vec![Scheme::Emma, Scheme::NoPowerSaving]
        );
        assert_eq!(
            parse_schemes("optimal").unwrap(),
            vec![Scheme::OptimalSnapshot]
        );
        assert!(parse_schemes("").is_err());
        assert!(parse_schemes("emmma").is_err());
    }
}
