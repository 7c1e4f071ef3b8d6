//! Poisson flow workloads between random host pairs.
//!
//! Arrivals are a Poisson process truncated at the horizon, durations are
//! exponential, and endpoints are uniform over ordered host pairs. The three
//! random streams are independent substreams of one master seed, so changing
//! the parameters of one does not perturb the draws of the others.

use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{NetworkGraph, NodeId};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct FlowId(pub u64);

impl std::fmt::Display for FlowId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One traffic demand between two hosts at a constant rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub flow_id: FlowId,
    pub src: NodeId,
    pub dst: NodeId,
    pub rate_bps: u64,
    pub arrival_s: f64,
    pub duration_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub arrival_rate_flows_per_s: f64,
    pub mean_duration_s: f64,
    pub flow_rate_bps: u64,
    pub horizon_s: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            arrival_rate_flows_per_s: 0.1,
            mean_duration_s: 20.0,
            flow_rate_bps: 8_000_000,
            horizon_s: 500.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("need at least two hosts, topology has {0}")]
    TooFewHosts(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("trace io: {0}")]
    Io(#[from] io::Error),
    #[error("trace format: {0}")]
    Csv(#[from] csv::Error),
}

const ARRIVAL_STREAM: u64 = 1;
const DURATION_STREAM: u64 = 2;
const ENDPOINT_STREAM: u64 = 3;

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws the flow trace for one run, sorted by arrival time, flow ids
/// numbered from zero in arrival order.
pub fn generate_workload(
    cfg: &WorkloadConfig,
    g: &NetworkGraph,
    seed: u64,
) -> Result<Vec<FlowSpec>, WorkloadError> {
    if cfg.arrival_rate_flows_per_s <= 0.0 || cfg.arrival_rate_flows_per_s.is_nan() {
        return Err(WorkloadError::InvalidParameter("arrival_rate must be positive"));
    }
    if cfg.mean_duration_s <= 0.0 || cfg.mean_duration_s.is_nan() {
        return Err(WorkloadError::InvalidParameter("mean_duration must be positive"));
    }
    if cfg.flow_rate_bps == 0 {
        return Err(WorkloadError::InvalidParameter("flow_rate must be positive"));
    }
    if cfg.horizon_s < 0.0 || cfg.horizon_s.is_nan() {
        return Err(WorkloadError::InvalidParameter("horizon must be nonnegative"));
    }
    let hosts: Vec<NodeId> = g.hosts().collect();
    if hosts.len() < 2 {
        return Err(WorkloadError::TooFewHosts(hosts.len()));
    }

    let mut arrivals = substream(seed, ARRIVAL_STREAM);
    let mut durations = substream(seed, DURATION_STREAM);
    let mut endpoints = substream(seed, ENDPOINT_STREAM);
    let inter_arrival = Exp::new(cfg.arrival_rate_flows_per_s).expect("validated rate");
    let duration = Exp::new(1.0 / cfg.mean_duration_s).expect("validated mean");

    let mut flows = Vec::new();
    let mut t = 0.0f64;
    loop {
        t += inter_arrival.sample(&mut arrivals);
        if t > cfg.horizon_s {
            break;
        }
        let src_i = endpoints.random_range(0..hosts.len());
        let mut dst_i = endpoints.random_range(0..hosts.len() - 1);
        if dst_i >= src_i {
            dst_i += 1;
        }
        flows.push(FlowSpec {
            flow_id: FlowId(flows.len() as u64),
            src: hosts[src_i],
            dst: hosts[dst_i],
            rate_bps: cfg.flow_rate_bps,
            arrival_s: t,
            duration_s: duration.sample(&mut durations),
        });
    }
    Ok(flows)
}

/// Writes a trace as CSV with columns
/// `flow_id,src,dst,rate_bps,arrival_s,duration_s`.
pub fn write_trace(path: &Path, flows: &[FlowSpec]) -> Result<(), WorkloadError> {
    let mut w = csv::Writer::from_path(path)?;
    for f in flows {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace written by [`write_trace`]. Values round-trip exactly.
pub fn read_trace(path: &Path) -> Result<Vec<FlowSpec>, WorkloadError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut flows = Vec::new();
    for rec in r.deserialize() {
        flows.push(rec?);
    }
    Ok(flows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{generate_topology, TopologyConfig};

    fn small_graph() -> NetworkGraph {
        let cfg = TopologyConfig { n_core: 4, n_edge: 2, hosts_per_edge: 5, ..TopologyConfig::default() };
        generate_topology(&cfg, 1).unwrap()
    }

    #[test]
    fn zero_horizon_is_empty() {
        let g = small_graph();
        let cfg = WorkloadConfig { horizon_s: 0.0, ..WorkloadConfig::default() };
        assert!(generate_workload(&cfg, &g, 0).unwrap().is_empty());
    }

    #[test]
    fn needs_two_hosts() {
        let mut g = NetworkGraph::new();
        let e = g.add_node(crate::topology::NodeKind::Edge);
        let h = g.add_node(crate::topology::NodeKind::Host);
        g.add_link_pair(h, e, 1000);
        assert!(matches!(
            generate_workload(&WorkloadConfig::default(), &g, 0),
            Err(WorkloadError::TooFewHosts(1))
        ));
    }

    #[test]
    fn deterministic_and_sorted() {
        let g = small_graph();
        let cfg = WorkloadConfig::default();
        let a = generate_workload(&cfg, &g, 9).unwrap();
        let b = generate_workload(&cfg, &g, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].arrival_s <= w[1].arrival_s));
        assert!(a.iter().all(|f| f.src != f.dst && f.duration_s > 0.0));
        assert!(a.iter().enumerate().all(|(i, f)| f.flow_id == FlowId(i as u64)));
        let c = generate_workload(&cfg, &g, 10).unwrap();
        assert_ne!(a, c);
    }

    /// Flow count is Poisson(arrival_rate x horizon) in the mean; check the
    /// sample mean over many seeds at three standard errors.
    #[test]
    fn arrival_count_matches_poisson_mean() {
        let g = small_graph();
        let cfg = WorkloadConfig::default();
        let trials = 1000u64;
        let mut total = 0usize;
        for seed in 0..trials {
            total += generate_workload(&cfg, &g, seed).unwrap().len();
        }
        let mean = total as f64 / trials as f64;
        let expected = 0.1 * 500.0;
        let sigma = (expected / trials as f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * sigma,
            "mean {mean} vs {expected} (3 sigma = {})",
            3.0 * sigma
        );
    }

    /// Mean inter-arrival and duration over pooled samples, three sigma.
    #[test]
    fn exponential_moments() {
        let g = small_graph();
        let cfg = WorkloadConfig {
            arrival_rate_flows_per_s: 1.0,
            horizon_s: 2000.0,
            ..WorkloadConfig::default()
        };
        let mut gaps = Vec::new();
        let mut durations = Vec::new();
        for seed in 0..10 {
            let flows = generate_workload(&cfg, &g, seed).unwrap();
            let mut prev = 0.0;
            for f in &flows {
                gaps.push(f.arrival_s - prev);
                prev = f.arrival_s;
                durations.push(f.duration_s);
            }
        }
        assert!(gaps.len() > 10_000);
        let gap_mean: f64 = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let gap_sigma = 1.0 / (gaps.len() as f64).sqrt();
        assert!((gap_mean - 1.0).abs() <= 3.0 * gap_sigma, "gap mean {gap_mean}");
        let dur_mean: f64 = durations.iter().sum::<f64>() / durations.len() as f64;
        let dur_sigma = 20.0 / (durations.len() as f64).sqrt();
        assert!((dur_mean - 20.0).abs() <= 3.0 * dur_sigma, "duration mean {dur_mean}");
    }

    /// Endpoint substream is independent of the duration parameters: the
    /// same flow index gets the same endpoints whatever the mean duration.
    #[test]
    fn substreams_are_independent()  {
        let g = small_graph();
        let base = WorkloadConfig { arrival_rate_flows_per_s: 0.5, ..WorkloadConfig::default() };
        let alt = WorkloadConfig { mean_duration_s: 77.0, ..base };
        let a = generate_workload(&base, &g, 4).unwrap();
        let b = generate_workload(&alt, &g, 4).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.arrival_s, y.arrival_s);
            assert_eq!((x.src, x.dst), (y.src, y.dst));
            assert_ne!(x.duration_s, y.duration_s);
        }
    }

    #[test]
    fn trace_round_trips_exactly() {
        let g = small_graph();
        let flows = generate_workload(&WorkloadConfig::default(), &g, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_trace(&path, &flows).unwrap();
        let back = read_trace(&path).unwrap();
        assert_eq!(flows, back);
    }
}
