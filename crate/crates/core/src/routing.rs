//! Power-aware flow placement.
//!
//! New flows take a fewest-hop capacity-feasible path, searched first over
//! the currently active elements and only then over the whole network;
//! whatever the second search activates is paid for by the arriving flow.
//! Whenever the active topology grows, and after every departure, flows that
//! have stayed put long enough are offered a cheaper active path, and any
//! element left idle is switched off. Cost is incremental network power: the
//! per-bit forwarding term for every path link plus the idle draw of every
//! core switch the placement alone keeps on.
//!
//! All load bookkeeping is integer bit/s, so feasibility checks and the
//! load-consistency invariant are exact.

use std::collections::BTreeMap;

use rand::Rng;

use crate::power::{network_power, PowerModel};
use crate::topology::{LinkId, NetworkGraph, NodeId, NodeKind};
use crate::workload::{FlowId, FlowSpec};
use thiserror::Error;

/// Directed links from the flow's source to its destination, contiguous.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    pub links: Vec<LinkId>,
}

impl Path {
    pub fn hop_count(&self) -> usize {
        self.links.len()
    }

    /// Node sequence visited by the path, endpoints included.
    pub fn nodes(&self, g: &NetworkGraph) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.links.len() + 1);
        if let Some(&first) = self.links.first() {
            out.push(g.link(first).src);
        }
        for &l in &self.links {
            out.push(g.link(l).dst);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowRecord {
    pub spec: FlowSpec,
    pub path: Path,
    /// Time the flow was last placed; reset when a reroute moves it.
    pub installation_time_s: f64,
}

/// When a placed flow becomes a candidate for rerouting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EligibilityPolicy {
    /// Fixed age threshold, the state's `hysteresis_s`.
    FixedHysteresis,
    /// Age at least half the flow's own duration.
    HalfDuration,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RoutingError {
    #[error("flow {0} is already placed")]
    DuplicateFlow(FlowId),
    #[error("flow {0} is not placed")]
    UnknownFlow(FlowId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid flow: {0}")]
    InvalidFlow(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoveRecord {
    pub flow_id: FlowId,
    pub from: Path,
    pub to: Path,
    pub power_before_w: f64,
    pub power_after_w: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AllocationOutcome {
    Allocated {
        path: Path,
        activated_nodes: Vec<NodeId>,
        activated_links: Vec<LinkId>,
        moves: Vec<MoveRecord>,
    },
    /// No feasible path anywhere; the demand is dropped.
    Blocked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchScope {
    ActiveOnly,
    WholeGraph,
}

/// Live routing state: the graph with its loads and on/off states plus the
/// table of placed flows.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    pub graph: NetworkGraph,
    flows: BTreeMap<FlowId, FlowRecord>,
    /// Per node, how many placed flows' paths visit it.
    node_flow_use: Vec<u32>,
    pub hysteresis_s: f64,
    pub eligibility: EligibilityPolicy,
}

impl NetworkState {
    pub fn new(graph: NetworkGraph, hysteresis_s: f64, eligibility: EligibilityPolicy) -> Self {
        let n = graph.node_count();
        NetworkState { graph, flows: BTreeMap::new(), node_flow_use: vec![0; n], hysteresis_s, eligibility }
    }

    pub fn flows(&self) -> impl Iterator<Item = (&FlowId, &FlowRecord)> {
        self.flows.iter()
    }

    pub fn flow(&self, id: FlowId) -> Option<&FlowRecord> {
        self.flows.get(&id)
    }

    pub fn flow_count(&self) -> usize {
        self.flows.len()
    }

    fn claim(&mut self, path: &Path, rate_bps: u64) {
        for &l in &path.links {
            self.graph.add_load(l, rate_bps);
        }
        for n in path.nodes(&self.graph) {
            self.node_flow_use[n.index()] += 1;
        }
    }

    fn unclaim(&mut self, path: &Path, rate_bps: u64) {
        for &l in &path.links {
            self.graph.remove_load(l, rate_bps);
        }
        for n in path.nodes(&self.graph) {
            self.node_flow_use[n.index()] -= 1;
        }
    }

    fn install(&mut self, spec: FlowSpec, path: Path, now: f64) {
        self.claim(&path, spec.rate_bps);
        self.flows.insert(spec.flow_id, FlowRecord { spec, path, installation_time_s: now });
    }

    fn check_new_flow(&self, spec: &FlowSpec) -> Result<(), RoutingError> {
        if self.flows.contains_key(&spec.flow_id) {
            return Err(RoutingError::DuplicateFlow(spec.flow_id));
        }
        for end in [spec.src, spec.dst] {
            if !self.graph.contains_node(end) {
                return Err(RoutingError::UnknownNode(end));
            }
        }
        if spec.src == spec.dst {
            return Err(RoutingError::InvalidFlow("src equals dst"));
        }
        if spec.rate_bps == 0 {
            return Err(RoutingError::InvalidFlow("zero rate"));
        }
        Ok(())
    }

    /// Places a new flow. Active elements are tried first; if only the
    /// whole-network search succeeds, the off elements on the chosen path
    /// are switched on and a reroute pass follows. With no feasible path at
    /// all the flow is blocked and the state is left untouched.
    pub fn allocate<R: Rng>(
        &mut self,
        spec: FlowSpec,
        now: f64,
        m: &PowerModel,
        rng: &mut R,
    ) -> Result<AllocationOutcome, RoutingError> {
        self.check_new_flow(&spec)?;
        if let Some(path) =
            find_feasible_shortest_path(&self.graph, SearchScope::ActiveOnly, spec.src, spec.dst, spec.rate_bps, rng)
        {
            self.install(spec, path.clone(), now);
            return Ok(AllocationOutcome::Allocated {
                path,
                activated_nodes: Vec::new(),
                activated_links: Vec::new(),
                moves: Vec::new(),
            });
        }
        if let Some(path) =
            find_feasible_shortest_path(&self.graph, SearchScope::WholeGraph, spec.src, spec.dst, spec.rate_bps, rng)
        {
            let (activated_nodes, activated_links) = self.activate_path(&path);
            self.install(spec, path.clone(), now);
            let moves = self.reroute(now, m);
            return Ok(AllocationOutcome::Allocated { path, activated_nodes, activated_links, moves });
        }
        Ok(AllocationOutcome::Blocked)
    }

    /// Baseline placement that never touches element states and never
    /// reroutes: shortest feasible path on the graph as it stands.
    pub fn allocate_static<R: Rng>(
        &mut self,
        spec: FlowSpec,
        now: f64,
        rng: &mut R,
    ) -> Result<Option<Path>, RoutingError> {
        self.check_new_flow(&spec)?;
        match find_feasible_shortest_path(&self.graph, SearchScope::ActiveOnly, spec.src, spec.dst, spec.rate_bps, rng)
        {
            Some(path) => {
                self.install(spec, path.clone(), now);
                Ok(Some(path))
            }
            None => Ok(None),
        }
    }

    /// Removes a placed flow without any power management.
    pub fn deallocate_static(&mut self, flow_id: FlowId) -> Result<(), RoutingError> {
        let rec = self.flows.remove(&flow_id).ok_or(RoutingError::UnknownFlow(flow_id))?;
        self.unclaim(&rec.path, rec.spec.rate_bps);
        Ok(())
    }

    /// Removes a flow, then gives the remaining flows a reroute opportunity.
    /// Elements the departure left idle stay on until the reroute's closing
    /// sweep, so surviving flows may consolidate onto freed capacity.
    pub fn deallocate(
        &mut self,
        flow_id: FlowId,
        now: f64,
        m: &PowerModel,
    ) -> Result<Vec<MoveRecord>, RoutingError> {
        let rec = self.flows.remove(&flow_id).ok_or(RoutingError::UnknownFlow(flow_id))?;
        self.unclaim(&rec.path, rec.spec.rate_bps);
        Ok(self.reroute(now, m))
    }

    fn activate_path(&mut self, path: &Path) -> (Vec<NodeId>, Vec<LinkId>) {
        let mut nodes = Vec::new();
        let mut links = Vec::new();
        for n in path.nodes(&self.graph) {
            if !self.graph.node(n).active {
                self.graph.set_node_state(n, true).expect("activation is unconditional");
                nodes.push(n);
            }
        }
        for &l in &path.links {
            if !self.graph.link(l).active {
                self.graph.set_link_state(l, true).expect("endpoints were just activated");
                links.push(l);
            }
        }
        (nodes, links)
    }

    fn is_eligible(&self, rec: &FlowRecord, now: f64) -> bool {
        let age = now - rec.installation_time_s;
        match self.eligibility {
            EligibilityPolicy::FixedHysteresis => age >= self.hysteresis_s,
            EligibilityPolicy::HalfDuration => age >= 0.5 * rec.spec.duration_s,
        }
    }

    /// Offers every eligible flow, highest rate first, a cheaper active
    /// path; residual capacity is judged with the flow's own load taken off
    /// its current path, and a move resets the flow's installation time.
    /// Finishes by switching off idle link pairs and isolated core switches.
    /// Never increases network power.
    pub fn reroute(&mut self, now: f64, m: &PowerModel) -> Vec<MoveRecord> {
        let mut order: Vec<(u64, FlowId)> = self
            .flows
            .iter()
            .filter(|(_, rec)| self.is_eligible(rec, now))
            .map(|(&id, rec)| (rec.spec.rate_bps, id))
            .collect();
        order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut moves = Vec::new();
        for (_, id) in order {
            let rec = self.flows.get(&id).expect("eligible flow is placed").clone();
            let power_before = network_power(&self.graph, m);
            self.unclaim(&rec.path, rec.spec.rate_bps);
            let candidate =
                self.best_active_candidate(rec.spec.src, rec.spec.dst, rec.spec.rate_bps, m);
            let mut moved = false;
            if let Some((new_path, new_cost)) = candidate {
                if new_path != rec.path {
                    let old_cost = self.path_cost(&rec.path, rec.spec.rate_bps, None, m);
                    if new_cost < old_cost {
                        self.claim(&new_path, rec.spec.rate_bps);
                        let r = self.flows.get_mut(&id).expect("still placed");
                        r.path = new_path.clone();
                        r.installation_time_s = now;
                        moves.push(MoveRecord {
                            flow_id: id,
                            from: rec.path.clone(),
                            to: new_path,
                            power_before_w: power_before,
                            power_after_w: network_power(&self.graph, m),
                        });
                        moved = true;
                    }
                }
            }
            if !moved {
                self.claim(&rec.path, rec.spec.rate_bps);
            }
        }
        self.shutdown_idle();
        moves
    }

    /// Incremental network power of carrying `rate_bps` over `path`: the
    /// per-bit term for each link plus the idle draw of every core switch on
    /// the path that no other placed flow visits (whether that switch is
    /// currently off, or on solely for this placement and thus reclaimable).
    /// `exclude` discounts one flow's own presence, for costing the current
    /// path of a placed flow.
    pub fn path_cost(
        &self,
        path: &Path,
        rate_bps: u64,
        exclude: Option<FlowId>,
        m: &PowerModel,
    ) -> f64 {
        let link_term = path.links.len() as f64 * m.link_power(rate_bps);
        let excluded_nodes: Vec<NodeId> = exclude
            .and_then(|id| self.flows.get(&id))
            .map(|rec| rec.path.nodes(&self.graph))
            .unwrap_or_default();
        let mut node_term = 0.0;
        for n in path.nodes(&self.graph) {
            if self.graph.node(n).kind != NodeKind::Core {
                continue;
            }
            let mut uses = self.node_flow_use[n.index()];
            if excluded_nodes.contains(&n) {
                uses -= 1;
            }
            if uses == 0 {
                node_term += m.p_idle_w;
            }
        }
        link_term + node_term
    }

    /// Cheapest among the fewest-hop feasible paths on the active topology,
    /// ties broken by lexicographic node sequence. Deterministic.
    fn best_active_candidate(
        &self,
        src: NodeId,
        dst: NodeId,
        rate_bps: u64,
        m: &PowerModel,
    ) -> Option<(Path, f64)> {
        let g = &self.graph;
        if !g.node(src).active || !g.node(dst).active {
            return None;
        }
        let usable = |l: LinkId| {
            let link = g.link(l);
            link.active && link.residual_bps() >= rate_bps
        };
        let dist_from = bfs_levels(g, src, false, &usable);
        dist_from[dst.index()]?;
        let dist_to = bfs_levels(g, dst, true, &usable);
        let total = dist_from[dst.index()].unwrap();

        // Depth-first walk of the shortest-path DAG in ascending node order,
        // so candidates come out in lexicographic node-sequence order and
        // the first strict minimum is the lexicographic winner.
        const ENUMERATION_CAP: usize = 100_000;
        let mut best: Option<(Path, f64)> = None;
        let mut emitted = 0usize;
        let mut stack_links: Vec<LinkId> = Vec::new();
        let mut frames: Vec<Vec<LinkId>> = Vec::new();

        // Frames hold pending successors sorted descending so pop() yields
        // ascending (node, link) order.
        let successors = |u: NodeId, depth: u32| -> Vec<LinkId> {
            let mut next: Vec<LinkId> = g
                .out_links(u)
                .iter()
                .copied()
                .filter(|&l| {
                    usable(l)
                        && dist_to[g.link(l).dst.index()]
                            .is_some_and(|d2| depth + 1 + d2 == total)
                })
                .collect();
            next.sort_by_key(|&l| std::cmp::Reverse((g.link(l).dst, l)));
            next
        };

        frames.push(successors(src, 0));
        while let Some(frame) = frames.last_mut() {
            if emitted >= ENUMERATION_CAP {
                break;
            }
            match frame.pop() {
                Some(l) => {
                    stack_links.push(l);
                    let v = g.link(l).dst;
                    if v == dst {
                        emitted += 1;
                        let path = Path { links: stack_links.clone() };
                        let cost = self.path_cost(&path, rate_bps, None, m);
                        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
                            best = Some((path, cost));
                        }
                        stack_links.pop();
                    } else {
                        frames.push(successors(v, stack_links.len() as u32));
                    }
                }
                None => {
                    frames.pop();
                    stack_links.pop();
                }
            }
        }
        best
    }

    /// Switches off every non-access link pair with zero load in both
    /// directions, then every core switch left with no active incident link.
    fn shutdown_idle(&mut self) {
        let pairs: Vec<LinkId> = self.graph.link_pairs().collect();
        for id in pairs {
            let fwd = self.graph.link(id);
            let rev = self.graph.link(id.reverse());
            if fwd.active
                && fwd.load_bps == 0
                && rev.load_bps == 0
                && !self.graph.is_access_link(id)
            {
                self.graph.set_link_state(id, false).expect("pair is idle");
            }
        }
        for i in 0..self.graph.node_count() {
            let id = NodeId(i as u32);
            let n = self.graph.node(id);
            if n.kind != NodeKind::Core || !n.active {
                continue;
            }
            let any_active = self
                .graph
                .out_links(id)
                .iter()
                .chain(self.graph.in_links(id))
                .any(|&l| self.graph.link(l).active);
            if !any_active {
                self.graph.set_node_state(id, false).expect("core is isolated and idle");
            }
        }
    }

    /// Recomputes every bookkeeping quantity from the flow table and checks
    /// it against the stored state: per-link loads, per-node usage counts,
    /// path contiguity on active elements, capacity, on/off coupling, and
    /// per-node flow conservation. Used by tests.
    pub fn validate(&self) -> Result<(), String> {
        self.graph.check_consistency()?;
        let mut loads = vec![0u64; self.graph.link_count()];
        let mut uses = vec![0u32; self.graph.node_count()];
        for (id, rec) in &self.flows {
            let links = &rec.path.links;
            if links.is_empty() {
                return Err(format!("flow {id} has an empty path"));
            }
            if self.graph.link(links[0]).src != rec.spec.src
                || self.graph.link(links[links.len() - 1]).dst != rec.spec.dst
            {
                return Err(format!("flow {id} path does not join its endpoints"));
            }
            for w in links.windows(2) {
                if self.graph.link(w[0]).dst != self.graph.link(w[1]).src {
                    return Err(format!("flow {id} path is not contiguous"));
                }
            }
            let nodes = rec.path.nodes(&self.graph);
            let mut sorted = nodes.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != nodes.len() {
                return Err(format!("flow {id} path revisits a node"));
            }
            for &l in links {
                if !self.graph.link(l).active {
                    return Err(format!("flow {id} rides inactive link {l:?}"));
                }
                loads[l.index()] += rec.spec.rate_bps;
            }
            for n in nodes {
                uses[n.index()] += 1;
            }
        }
        for (id, l) in self.graph.links() {
            if l.load_bps != loads[id.index()] {
                return Err(format!(
                    "link {id:?} load {} != recomputed {}",
                    l.load_bps,
                    loads[id.index()]
                ));
            }
        }
        if uses != self.node_flow_use {
            return Err("node usage counters diverged".into());
        }
        // Conservation: per node, link loads out minus in must equal the
        // rates this node sources minus the rates it sinks.
        for n in self.graph.nodes() {
            let out: i128 = self.graph.out_links(n.id).iter().map(|&l| loads[l.index()] as i128).sum();
            let inn: i128 = self.graph.in_links(n.id).iter().map(|&l| loads[l.index()] as i128).sum();
            let mut demand: i128 = 0;
            for rec in self.flows.values() {
                if rec.spec.src == n.id {
                    demand += rec.spec.rate_bps as i128;
                }
                if rec.spec.dst == n.id {
                    demand -= rec.spec.rate_bps as i128;
                }
            }
            if out - inn != demand {
                return Err(format!("conservation violated at node {}", n.id));
            }
        }
        Ok(())
    }
}

fn bfs_levels(
    g: &NetworkGraph,
    start: NodeId,
    reverse: bool,
    usable: &dyn Fn(LinkId) -> bool,
) -> Vec<Option<u32>> {
    let mut dist = vec![None; g.node_count()];
    dist[start.index()] = Some(0);
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u.index()].unwrap();
        let links = if reverse { g.in_links(u) } else { g.out_links(u) };
        for &l in links {
            if !usable(l) {
                continue;
            }
            let v = if reverse { g.link(l).src } else { g.link(l).dst };
            if dist[v.index()].is_none() {
                dist[v.index()] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Fewest-hop path from `src` to `dst` with residual capacity for
/// `rate_bps` on every link, or `None`. When several fewest-hop paths are
/// feasible one is selected uniformly at random.
pub fn find_feasible_shortest_path<R: Rng>(
    g: &NetworkGraph,
    scope: SearchScope,
    src: NodeId,
    dst: NodeId,
    rate_bps: u64,
    rng: &mut R,
) -> Option<Path> {
    if src == dst || !g.contains_node(src) || !g.contains_node(dst) {
        return None;
    }
    if scope == SearchScope::ActiveOnly && (!g.node(src).active || !g.node(dst).active) {
        return None;
    }
    let usable = |l: LinkId| {
        let link = g.link(l);
        (scope == SearchScope::WholeGraph || link.active) && link.residual_bps() >= rate_bps
    };

    // Level BFS that also counts the number of fewest-hop paths per node;
    // every contribution to a node's count lands before that node is popped.
    let n = g.node_count();
    let mut dist: Vec<Option<u32>> = vec![None; n];
    let mut count = vec![0.0f64; n];
    dist[src.index()] = Some(0);
    count[src.index()] = 1.0;
    let mut queue = std::collections::VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u.index()].unwrap();
        for &l in g.out_links(u) {
            if !usable(l) {
                continue;
            }
            let v = g.link(l).dst;
            match dist[v.index()] {
                None => {
                    dist[v.index()] = Some(du + 1);
                    count[v.index()] = count[u.index()];
                    queue.push_back(v);
                }
                Some(dv) if dv == du + 1 => {
                    count[v.index()] += count[u.index()];
                }
                Some(_) => {}
            }
        }
    }
    dist[dst.index()]?;

    // Walk backwards, picking each predecessor with probability proportional
    // to its path count; the chosen path is uniform over all fewest-hop
    // feasible paths.
    let mut rev_links = Vec::new();
    let mut v = dst;
    while v != src {
        let dv = dist[v.index()].unwrap();
        let preds: Vec<LinkId> = g
            .in_links(v)
            .iter()
            .copied()
            .filter(|&l| usable(l) && dist[g.link(l).src.index()] == Some(dv - 1))
            .collect();
        let total: f64 = preds.iter().map(|&l| count[g.link(l).src.index()]).sum();
        let mut draw = rng.random::<f64>() * total;
        let mut chosen = *preds.last().expect("reachable node has a predecessor");
        for &l in &preds {
            draw -= count[g.link(l).src.index()];
            if draw < 0.0 {
                chosen = l;
                break;
            }
        }
        rev_links.push(chosen);
        v = g.link(chosen).src;
    }
    rev_links.reverse();
    Some(Path { links: rev_links })
}
