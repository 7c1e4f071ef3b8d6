//! Discrete-event replay of a flow trace against a routing scheme.
//!
//! Power is piecewise constant between events, so energy and the other
//! time averages are exact sums over inter-event intervals, cut off at the
//! run horizon. Departures sort before arrivals at equal timestamps, ties
//! beyond that by ascending flow id, which frees capacity before it is
//! asked for and pins the event order for reproducibility.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::optimal::{
    apply_solution, solve_optimal_with_budget, OptimalSolution, Snapshot, SolveError, SolveStatus,
    DEFAULT_BUDGET,
};
use crate::power::{network_power, PowerModel};
use crate::routing::{
    AllocationOutcome, EligibilityPolicy, MoveRecord, NetworkState, RoutingError,
};
use crate::seed;
use crate::topology::{NetworkGraph, NodeId, NodeKind};
use crate::workload::{FlowId, FlowSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Emma,
    NoPowerSaving,
    OptimalSnapshot,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scheme::Emma => "emma",
            Scheme::NoPowerSaving => "no-power-saving",
            Scheme::OptimalSnapshot => "optimal-snapshot",
        };
        f.write_str(s)
    }
}

impl FromStr for Scheme {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "emma" => Ok(Scheme::Emma),
            "no-power-saving" | "no_power_saving" | "nops" => Ok(Scheme::NoPowerSaving),
            "optimal-snapshot" | "optimal_snapshot" | "optimal" => Ok(Scheme::OptimalSnapshot),
            other => Err(SimError::UnknownScheme(other.to_string())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunParams {
    pub model: PowerModel,
    pub hysteresis_s: f64,
    pub eligibility: EligibilityPolicy,
    pub horizon_s: f64,
    pub solver_budget: u64,
    /// Hop bound for the snapshot solver; defaults to the switch count,
    /// which admits every simple switch-level route.
    pub solver_max_hops: Option<usize>,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            model: PowerModel::default(),
            hysteresis_s: 10.0,
            eligibility: EligibilityPolicy::FixedHysteresis,
            horizon_s: 500.0,
            solver_budget: DEFAULT_BUDGET,
            solver_max_hops: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerSample {
    pub time_s: f64,
    pub power_w: f64,
    pub active_core_switches: u32,
    pub concurrent_flows: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EventAction {
    Allocated,
    Blocked,
    Moved,
    Departed,
}

impl std::fmt::Display for EventAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EventAction::Allocated => "allocated",
            EventAction::Blocked => "blocked",
            EventAction::Moved => "moved",
            EventAction::Departed => "departed",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EventRecord {
    pub time_s: f64,
    pub action: EventAction,
    pub flow_id: u64,
    /// Node sequence of the path taken (new path for moves); empty when
    /// blocked or departed.
    pub path: Vec<NodeId>,
    pub power_before_w: f64,
    pub power_after_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub scheme: Scheme,
    pub seed: u64,
    pub horizon_s: f64,
    pub hysteresis_s: f64,
    pub topology_digest: u64,
    pub trace_digest: u64,
    pub edge_switches: u32,
    pub arrivals: u32,
    pub completed: u32,
    pub blocked: u32,
    pub blocked_fraction: f64,
    pub total_energy_j: f64,
    pub mean_network_power_w: f64,
    /// Mean power minus the always-on edge layer's idle draw: the part a
    /// power-saving scheme can actually influence.
    pub mean_switchable_power_w: f64,
    pub avg_power_per_flow_w: f64,
    pub mean_active_core_switches: f64,
    pub mean_concurrent_flows: f64,
    #[serde(skip)]
    pub samples: Vec<PowerSample>,
    #[serde(skip)]
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trace is not sorted by arrival time")]
    UnsortedTrace,
    #[error("unknown scheme {0:?}")]
    UnknownScheme(String),
    #[error("routing: {0}")]
    Routing(#[from] RoutingError),
    #[error("snapshot solver: {0}")]
    Solver(#[from] SolveError),
    #[error("gain baseline must be a no-power-saving run")]
    GainBaseline,
    #[error("gain inputs come from different experiments: {0}")]
    GainMismatch(&'static str),
}

/// Digest of the wiring, kinds, and capacities; used to refuse comparisons
/// between runs of different topologies.
pub fn topology_digest(g: &NetworkGraph) -> u64 {
    let mut tags: Vec<u64> = Vec::with_capacity(1 + g.node_count() + 3 * g.link_count() / 2);
    tags.push(g.node_count() as u64);
    for n in g.nodes() {
        tags.push(match n.kind {
            NodeKind::Core => 0,
            NodeKind::Edge => 1,
            NodeKind::Host => 2,
        });
    }
    for pair in g.link_pairs() {
        let l = g.link(pair);
        tags.push(l.src.0 as u64);
        tags.push(l.dst.0 as u64);
        tags.push(l.capacity_bps);
    }
    seed::mix(0x746f_706f, &tags)
}

/// Digest of a flow trace, order and full field values included.
pub fn trace_digest(trace: &[FlowSpec]) -> u64 {
    let mut tags: Vec<u64> = Vec::with_capacity(1 + 6 * trace.len());
    tags.push(trace.len() as u64);
    for f in trace {
        tags.push(f.flow_id.0);
        tags.push(f.src.0 as u64);
        tags.push(f.dst.0 as u64);
        tags.push(f.rate_bps);
        tags.push(f.arrival_s.to_bits());
        tags.push(f.duration_s.to_bits());
    }
    seed::mix(0x7472_6163, &tags)
}

struct ArrivalEffect {
    blocked: bool,
    path: Vec<NodeId>,
    moves: Vec<MoveRecord>,
}

enum Driver {
    Emma { state: NetworkState, m: PowerModel },
    Nops { state: NetworkState, m: PowerModel },
    Opt {
        base: NetworkGraph,
        flows: BTreeMap<FlowId, FlowSpec>,
        adopted: NetworkGraph,
        m: PowerModel,
        budget: u64,
        max_hops: usize,
    },
}

impl Driver {
    fn new(g: &NetworkGraph, scheme: Scheme, params: &RunParams) -> Result<Driver, SimError> {
        let m = params.model;
        Ok(match scheme {
            Scheme::Emma => {
                let mut state = NetworkState::new(
                    g.clone(),
                    params.hysteresis_s,
                    params.eligibility,
                );
                // The controller consolidates what it finds at boot: with no
                // flows placed yet this is a pure idle-element shutdown.
                state.reroute(0.0, &m);
                Driver::Emma { state, m }
            }
            Scheme::NoPowerSaving => Driver::Nops {
                state: NetworkState::new(
                    g.pristine_copy(),
                    params.hysteresis_s,
                    params.eligibility,
                ),
                m,
            },
            Scheme::OptimalSnapshot => {
                let base = g.pristine_copy();
                let max_hops = params.solver_max_hops.unwrap_or_else(|| {
                    g.nodes().filter(|n| n.kind != NodeKind::Host).count()
                });
                let s = Snapshot { graph: base.clone(), flows: Vec::new() };
                let sol = solve_optimal_with_budget(&s, &m, max_hops, params.solver_budget)?;
                let adopted = apply_solution(&s, &sol);
                Driver::Opt {
                    base,
                    flows: BTreeMap::new(),
                    adopted,
                    m,
                    budget: params.solver_budget,
                    max_hops,
                }
            }
        })
    }

    fn arrive(
        &mut self,
        spec: &FlowSpec,
        now: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<ArrivalEffect, SimError> {
        match self {
            Driver::Emma { state, m } => match state.allocate(*spec, now, m, rng)? {
                AllocationOutcome::Allocated { path, moves, .. } => Ok(ArrivalEffect {
                    blocked: false,
                    path: path.nodes(&state.graph),
                    moves,
                }),
                AllocationOutcome::Blocked => {
                    Ok(ArrivalEffect { blocked: true, path: Vec::new(), moves: Vec::new() })
                }
            },
            Driver::Nops { state, .. } => {
                let placed = state.allocate_static(*spec, now, rng)?;
                Ok(match placed {
                    Some(path) => ArrivalEffect {
                        blocked: false,
                        path: path.nodes(&state.graph),
                        moves: Vec::new(),
                    },
                    None => ArrivalEffect { blocked: true, path: Vec::new(), moves: Vec::new() },
                })
            }
            Driver::Opt { base, flows, adopted, m, budget, max_hops } => {
                if flows.contains_key(&spec.flow_id) {
                    return Err(RoutingError::DuplicateFlow(spec.flow_id).into());
                }
                flows.insert(spec.flow_id, *spec);
                let s = Snapshot {
                    graph: base.clone(),
                    flows: flows.values().cloned().collect(),
                };
                let sol = solve_optimal_with_budget(&s, m, *max_hops, *budget)?;
                if sol.status == SolveStatus::Infeasible {
                    // The flow fits nowhere; the previous solution is still
                    // the optimum of the remaining set.
                    flows.remove(&spec.flow_id);
                    return Ok(ArrivalEffect { blocked: true, path: Vec::new(), moves: Vec::new() });
                }
                let path = path_nodes(&sol, spec.flow_id, base);
                *adopted = apply_solution(&s, &sol);
                Ok(ArrivalEffect { blocked: false, path, moves: Vec::new() })
            }
        }
    }

    fn depart(&mut self, id: FlowId, now: f64) -> Result<Vec<MoveRecord>, SimError> {
        match self {
            Driver::Emma { state, m } => Ok(state.deallocate(id, now, m)?),
            Driver::Nops { state, .. } => {
                state.deallocate_static(id)?;
                Ok(Vec::new())
            }
            Driver::Opt { base, flows, adopted, m, budget, max_hops } => {
                if flows.remove(&id).is_none() {
                    return Err(RoutingError::UnknownFlow(id).into());
                }
                let s = Snapshot {
                    graph: base.clone(),
                    flows: flows.values().cloned().collect(),
                };
                let sol = solve_optimal_with_budget(&s, m, *max_hops, *budget)?;
                assert_eq!(
                    sol.status,
                    SolveStatus::Optimal,
                    "a subset of a feasible flow set stays feasible"
                );
                *adopted = apply_solution(&s, &sol);
                Ok(Vec::new())
            }
        }
    }

    fn power_w(&self) -> f64 {
        match self {
            Driver::Emma { state, m } => network_power(&state.graph, m),
            Driver::Nops { state, m } => network_power(&state.graph, m),
            Driver::Opt { adopted, m, .. } => network_power(adopted, m),
        }
    }

    fn active_cores(&self) -> u32 {
        let g = match self {
            Driver::Emma { state, .. } => &state.graph,
            Driver::Nops { state, .. } => &state.graph,
            Driver::Opt { adopted, .. } => adopted,
        };
        g.nodes().filter(|n| n.kind == NodeKind::Core && n.active).count() as u32
    }
}

fn path_nodes(sol: &OptimalSolution, id: FlowId, g: &NetworkGraph) -> Vec<NodeId> {
    sol.assignment.get(&id).map(|p| p.nodes(g)).unwrap_or_default()
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct EventEntry {
    time: f64,
    /// 0 for departures, 1 for arrivals: departures first at equal times.
    rank: u8,
    flow_id: u64,
    trace_idx: usize,
}

impl Eq for EventEntry {}

impl Ord for EventEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.rank.cmp(&other.rank))
            .then(self.flow_id.cmp(&other.flow_id))
    }
}

impl PartialOrd for EventEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Replays `trace` against `scheme` on `g` and integrates power over
/// `[0, horizon]`. The graph is taken as the run's starting state for the
/// adaptive scheme and reset to all-on for the baseline; identical inputs
/// produce identical results bit for bit.
pub fn run(
    g: &NetworkGraph,
    trace: &[FlowSpec],
    scheme: Scheme,
    params: &RunParams,
    seed: u64,
) -> Result<RunResult, SimError> {
    if trace.windows(2).any(|w| w[0].arrival_s > w[1].arrival_s) {
        return Err(SimError::UnsortedTrace);
    }
    let horizon = params.horizon_s;
    let mut driver = Driver::new(g, scheme, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut heap: BinaryHeap<std::cmp::Reverse<EventEntry>> = BinaryHeap::new();
    for (i, f) in trace.iter().enumerate() {
        if f.arrival_s <= horizon {
            heap.push(std::cmp::Reverse(EventEntry {
                time: f.arrival_s,
                rank: 1,
                flow_id: f.flow_id.0,
                trace_idx: i,
            }));
        }
    }

    let mut now = 0.0f64;
    let mut energy = 0.0f64;
    let mut flow_time = 0.0f64;
    let mut core_time = 0.0f64;
    let mut cur_power = driver.power_w();
    let mut cur_cores = driver.active_cores();
    let mut cur_flows: u32 = 0;
    let mut arrivals: u32 = 0;
    let mut completed: u32 = 0;
    let mut blocked: u32 = 0;
    let mut samples = vec![PowerSample {
        time_s: 0.0,
        power_w: cur_power,
        active_core_switches: cur_cores,
        concurrent_flows: 0,
    }];
    let mut events: Vec<EventRecord> = Vec::new();

    while let Some(std::cmp::Reverse(e)) = heap.pop() {
        if e.time > horizon {
            break;
        }
        let dt = e.time - now;
        energy += cur_power * dt;
        flow_time += cur_flows as f64 * dt;
        core_time += cur_cores as f64 * dt;
        now = e.time;
        let power_before = cur_power;

        let (action, flow_id, path, moves) = if e.rank == 0 {
            let id = FlowId(e.flow_id);
            let moves = driver.depart(id, now)?;
            completed += 1;
            cur_flows -= 1;
            (EventAction::Departed, id, Vec::new(), moves)
        } else {
            let spec = &trace[e.trace_idx];
            arrivals += 1;
            let effect = driver.arrive(spec, now, &mut rng)?;
            if effect.blocked {
                blocked += 1;
                (EventAction::Blocked, spec.flow_id, Vec::new(), Vec::new())
            } else {
                cur_flows += 1;
                heap.push(std::cmp::Reverse(EventEntry {
                    time: spec.arrival_s + spec.duration_s,
                    rank: 0,
                    flow_id: spec.flow_id.0,
                    trace_idx: e.trace_idx,
                }));
                (EventAction::Allocated, spec.flow_id, effect.path, effect.moves)
            }
        };

        cur_power = driver.power_w();
        cur_cores = driver.active_cores();
        events.push(EventRecord {
            time_s: now,
            action,
            flow_id: flow_id.0,
            path,
            power_before_w: power_before,
            power_after_w: cur_power,
        });
        for mv in moves {
            events.push(EventRecord {
                time_s: now,
                action: EventAction::Moved,
                flow_id: mv.flow_id.0,
                path: mv.to.nodes(match &driver {
                    Driver::Emma { state, .. } => &state.graph,
                    Driver::Nops { state, .. } => &state.graph,
                    Driver::Opt { adopted, .. } => adopted,
                }),
                power_before_w: mv.power_before_w,
                power_after_w: mv.power_after_w,
            });
        }
        samples.push(PowerSample {
            time_s: now,
            power_w: cur_power,
            active_core_switches: cur_cores,
            concurrent_flows: cur_flows,
        });
    }

    let dt = horizon - now;
    energy += cur_power * dt;
    flow_time += cur_flows as f64 * dt;
    core_time += cur_cores as f64 * dt;

    let mean_power = energy / horizon;
    let mean_flows = flow_time / horizon;
    let edge_switches = g.nodes().filter(|n| n.kind == NodeKind::Edge).count() as u32;
    let avg_power_per_flow = if flow_time == 0.0 { mean_power } else { mean_power / mean_flows };
    Ok(RunResult {
        scheme,
        seed,
        horizon_s: horizon,
        hysteresis_s: params.hysteresis_s,
        topology_digest: topology_digest(g),
        trace_digest: trace_digest(trace),
        edge_switches,
        arrivals,
        completed,
        blocked,
        blocked_fraction: if arrivals == 0 { 0.0 } else { blocked as f64 / arrivals as f64 },
        total_energy_j: energy,
        mean_network_power_w: mean_power,
        mean_switchable_power_w: mean_power - edge_switches as f64 * params.model.p_idle_w,
        avg_power_per_flow_w: avg_power_per_flow,
        mean_active_core_switches: core_time / horizon,
        mean_concurrent_flows: mean_flows,
        samples,
        events,
    })
}

/// Fraction of the baseline's mean power that the other scheme saves.
/// Refuses runs taken from different topologies, traces, or horizons.
pub fn gain(nops: &RunResult, other: &RunResult) -> Result<f64, SimError> {
    check_comparable(nops, other)?;
    Ok((nops.mean_network_power_w - other.mean_network_power_w) / nops.mean_network_power_w)
}

/// Same fraction computed on switchable power, factoring out the always-on
/// edge layer both schemes pay identically.
pub fn gain_switchable(nops: &RunResult, other: &RunResult) -> Result<f64, SimError> {
    check_comparable(nops, other)?;
    Ok((nops.mean_switchable_power_w - other.mean_switchable_power_w)
        / nops.mean_switchable_power_w)
}

fn check_comparable(nops: &RunResult, other: &RunResult) -> Result<(), SimError> {
    if nops.scheme != Scheme::NoPowerSaving {
        return Err(SimError::GainBaseline);
    }
    if nops.topology_digest != other.topology_digest {
        return Err(SimError::GainMismatch("topology differs"));
    }
    if nops.trace_digest != other.trace_digest {
        return Err(SimError::GainMismatch("trace differs"));
    }
    if nops.horizon_s != other.horizon_s {
        return Err(SimError::GainMismatch("horizon differs"));
    }
    Ok(())
}
