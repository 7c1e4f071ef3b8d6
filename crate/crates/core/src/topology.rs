//! Two-tier backhaul topology.
//!
//! Core switches form a random mesh, each edge switch uplinks into a few
//! cores, and hosts attach to exactly one edge switch. Every link is stored
//! as a pair of directed entries that are switched on and off together,
//! while load is tracked per direction. Edge switches, hosts and the
//! host-to-edge access links are never switched off.

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Directed link handle. Links are created in pairs; `id ^ 1` is always the
/// opposite direction of the same physical link.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct LinkId(pub u32);

impl LinkId {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// The other direction of the same physical link.
    pub fn reverse(self) -> LinkId {
        LinkId(self.0 ^ 1)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Core,
    Edge,
    Host,
}

impl NodeKind {
    pub fn is_switch(self) -> bool {
        matches!(self, NodeKind::Core | NodeKind::Edge)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub active: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub src: NodeId,
    pub dst: NodeId,
    pub capacity_bps: u64,
    pub load_bps: u64,
    pub active: bool,
}

impl Link {
    pub fn residual_bps(&self) -> u64 {
        self.capacity_bps - self.load_bps
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown link {0:?}")]
    UnknownLink(LinkId),
    #[error("node {0} is a {1:?} and stays always on")]
    AlwaysOnNode(NodeId, NodeKind),
    #[error("link pair {0:?} attaches a host and stays always on")]
    AlwaysOnLink(LinkId),
    #[error("node {0} still has an active incident link")]
    IncidentLinkActive(NodeId),
    #[error("element still carries {0} bit/s")]
    NonzeroLoad(u64),
    #[error("cannot activate link {0:?}: endpoint {1} is off")]
    EndpointInactive(LinkId, NodeId),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("no connected topology found after {0} attempts")]
    GenerationFailed(u32),
}

/// Parameters for [`generate_topology`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub n_core: usize,
    pub n_edge: usize,
    pub hosts_per_edge: usize,
    /// Probability of each core-to-core link.
    pub p_link: f64,
    /// Capacity of every link, access links included, in bit/s.
    pub capacity_bps: u64,
    /// Number of distinct core switches each edge switch uplinks to.
    pub edge_uplinks: usize,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            n_core: 12,
            n_edge: 6,
            hosts_per_edge: 10,
            p_link: 0.5,
            capacity_bps: 80_000_000,
            edge_uplinks: 2,
        }
    }
}

/// Directed multigraph with joint on/off state per link pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkGraph {
    nodes: Vec<Node>,
    links: Vec<Link>,
    out_links: Vec<Vec<LinkId>>,
    in_links: Vec<Vec<LinkId>>,
}

impl NetworkGraph {
    pub fn new() -> Self {
        NetworkGraph::default()
    }

    pub fn add_node(&mut self, kind: NodeKind) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { id, kind, active: true });
        self.out_links.push(Vec::new());
        self.in_links.push(Vec::new());
        id
    }

    /// Adds both directions of a physical link, active, with zero load.
    /// Returns the forward handle; the reverse one is `forward.reverse()`.
    pub fn add_link_pair(&mut self, a: NodeId, b: NodeId, capacity_bps: u64) -> LinkId {
        assert!(a.index() < self.nodes.len() && b.index() < self.nodes.len());
        assert_ne!(a, b, "self loops are not allowed");
        let fwd = LinkId(self.links.len() as u32);
        self.links.push(Link { src: a, dst: b, capacity_bps, load_bps: 0, active: true });
        self.links.push(Link { src: b, dst: a, capacity_bps, load_bps: 0, active: true });
        self.out_links[a.index()].push(fwd);
        self.in_links[b.index()].push(fwd);
        self.out_links[b.index()].push(fwd.reverse());
        self.in_links[a.index()].push(fwd.reverse());
        fwd
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of directed link entries (twice the physical link count).
    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        id.index() < self.nodes.len()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.index()]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter()
    }

    pub fn links(&self) -> impl Iterator<Item = (LinkId, &Link)> {
        self.links.iter().enumerate().map(|(i, l)| (LinkId(i as u32), l))
    }

    /// Forward directions of every physical link.
    pub fn link_pairs(&self) -> impl Iterator<Item = LinkId> + '_ {
        (0..self.links.len()).step_by(2).map(|i| LinkId(i as u32))
    }

    pub fn out_links(&self, id: NodeId) -> &[LinkId] {
        &self.out_links[id.index()]
    }

    pub fn in_links(&self, id: NodeId) -> &[LinkId] {
        &self.in_links[id.index()]
    }

    pub fn find_link(&self, src: NodeId, dst: NodeId) -> Option<LinkId> {
        self.out_links[src.index()]
            .iter()
            .copied()
            .find(|&l| self.links[l.index()].dst == dst)
    }

    /// True when either endpoint of the link is a host. Access pairs stay on.
    pub fn is_access_link(&self, id: LinkId) -> bool {
        let l = &self.links[id.index()];
        self.nodes[l.src.index()].kind == NodeKind::Host
            || self.nodes[l.dst.index()].kind == NodeKind::Host
    }

    /// The edge switch a host attaches to.
    pub fn attachment(&self, host: NodeId) -> Option<NodeId> {
        if self.node(host).kind != NodeKind::Host {
            return None;
        }
        self.out_links[host.index()].first().map(|&l| self.links[l.index()].dst)
    }

    pub fn hosts(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Host).map(|n| n.id)
    }

    pub(crate) fn add_load(&mut self, id: LinkId, rate_bps: u64) {
        let l = &mut self.links[id.index()];
        debug_assert!(l.active, "load on an inactive link");
        debug_assert!(l.load_bps + rate_bps <= l.capacity_bps, "capacity overrun");
        l.load_bps += rate_bps;
    }

    pub(crate) fn remove_load(&mut self, id: LinkId, rate_bps: u64) {
        let l = &mut self.links[id.index()];
        debug_assert!(l.load_bps >= rate_bps, "releasing more load than carried");
        l.load_bps -= rate_bps;
    }

    /// Copy of the graph with zero loads and every element switched on.
    /// Planning copy for optimization; capacities and wiring are kept.
    pub fn pristine_copy(&self) -> NetworkGraph {
        let mut g = self.clone();
        for n in &mut g.nodes {
            n.active = true;
        }
        for l in &mut g.links {
            l.active = true;
            l.load_bps = 0;
        }
        g
    }

    // Raw setters for evaluation copies built from solver output; they skip
    // the live-state rules (always-on elements, joint pair toggling).
    pub(crate) fn force_node_state(&mut self, id: NodeId, active: bool) {
        self.nodes[id.index()].active = active;
    }

    pub(crate) fn force_link_state(&mut self, id: LinkId, active: bool) {
        self.links[id.index()].active = active;
    }

    /// Switches a node on or off.
    ///
    /// Only idle core switches may be turned off: edge switches and hosts are
    /// always on, and a node with any active incident link stays on.
    pub fn set_node_state(&mut self, id: NodeId, active: bool) -> Result<(), TopologyError> {
        if !self.contains_node(id) {
            return Err(TopologyError::UnknownNode(id));
        }
        if active {
            self.nodes[id.index()].active = true;
            return Ok(());
        }
        let kind = self.nodes[id.index()].kind;
        if kind != NodeKind::Core {
            return Err(TopologyError::AlwaysOnNode(id, kind));
        }
        for &l in self.out_links[id.index()].iter().chain(&self.in_links[id.index()]) {
            let link = &self.links[l.index()];
            if link.load_bps > 0 {
                return Err(TopologyError::NonzeroLoad(link.load_bps));
            }
            if link.active {
                return Err(TopologyError::IncidentLinkActive(id));
            }
        }
        self.nodes[id.index()].active = false;
        Ok(())
    }

    /// Switches a link pair on or off; both directions always move together.
    ///
    /// Turning a pair off requires zero load in both directions, and access
    /// pairs never turn off. Turning a pair on requires both endpoints on.
    pub fn set_link_state(&mut self, id: LinkId, active: bool) -> Result<(), TopologyError> {
        if id.index() >= self.links.len() {
            return Err(TopologyError::UnknownLink(id));
        }
        let (fwd, rev) = (id, id.reverse());
        let (src, dst) = {
            let l = &self.links[fwd.index()];
            (l.src, l.dst)
        };
        if active {
            if !self.nodes[src.index()].active {
                return Err(TopologyError::EndpointInactive(id, src));
            }
            if !self.nodes[dst.index()].active {
                return Err(TopologyError::EndpointInactive(id, dst));
            }
        } else {
            if self.is_access_link(id) {
                return Err(TopologyError::AlwaysOnLink(id));
            }
            let load = self.links[fwd.index()].load_bps + self.links[rev.index()].load_bps;
            if load > 0 {
                return Err(TopologyError::NonzeroLoad(load));
            }
        }
        self.links[fwd.index()].active = active;
        self.links[rev.index()].active = active;
        Ok(())
    }

    /// Snapshot of the currently active elements, ids ascending.
    pub fn active_subgraph(&self) -> ActiveSubgraph {
        ActiveSubgraph {
            nodes: self.nodes.iter().filter(|n| n.active).map(|n| n.id).collect(),
            links: self
                .links()
                .filter(|(_, l)| l.active)
                .map(|(id, _)| id)
                .collect(),
        }
    }

    /// Structural consistency check, recomputed from scratch. Used by tests.
    pub fn check_consistency(&self) -> Result<(), String> {
        if !self.links.len().is_multiple_of(2) {
            return Err("odd number of directed links".into());
        }
        for id in self.link_pairs() {
            let fwd = self.link(id);
            let rev = self.link(id.reverse());
            if fwd.src != rev.dst || fwd.dst != rev.src {
                return Err(format!("link pair {id:?} endpoints disagree"));
            }
            if fwd.active != rev.active {
                return Err(format!("link pair {id:?} has split on/off state"));
            }
            if fwd.capacity_bps != rev.capacity_bps {
                return Err(format!("link pair {id:?} capacities disagree"));
            }
        }
        for (id, l) in self.links() {
            if l.load_bps > l.capacity_bps {
                return Err(format!("link {id:?} over capacity"));
            }
            if !l.active && l.load_bps > 0 {
                return Err(format!("inactive link {id:?} carries load"));
            }
            if l.active
                && (!self.nodes[l.src.index()].active || !self.nodes[l.dst.index()].active)
            {
                return Err(format!("active link {id:?} has an inactive endpoint"));
            }
            if self.is_access_link(id) && !l.active {
                return Err(format!("access link {id:?} is off"));
            }
        }
        for n in &self.nodes {
            if n.kind != NodeKind::Core && !n.active {
                return Err(format!("{:?} node {} is off", n.kind, n.id));
            }
        }
        for n in &self.nodes {
            if n.kind == NodeKind::Host && self.out_links[n.id.index()].len() != 1 {
                return Err(format!("host {} must attach to exactly one edge", n.id));
            }
        }
        Ok(())
    }
}

/// Active elements of a graph at one instant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSubgraph {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkId>,
}

/// Draws a random two-tier topology: core mesh edges are kept with
/// probability `p_link`, each edge switch uplinks to `edge_uplinks` distinct
/// random cores, and `hosts_per_edge` hosts attach to every edge switch.
/// Draws are repeated from the same seeded stream until the switch subgraph
/// is connected; all elements start active.
pub fn generate_topology(cfg: &TopologyConfig, seed: u64) -> Result<NetworkGraph, TopologyError> {
    if cfg.n_core < 2 {
        return Err(TopologyError::InvalidParameter("n_core must be at least 2"));
    }
    if cfg.n_edge < 1 {
        return Err(TopologyError::InvalidParameter("n_edge must be at least 1"));
    }
    if cfg.hosts_per_edge < 1 {
        return Err(TopologyError::InvalidParameter("hosts_per_edge must be at least 1"));
    }
    if !(cfg.p_link > 0.0 && cfg.p_link <= 1.0) {
        return Err(TopologyError::InvalidParameter("p_link must be in (0, 1]"));
    }
    if cfg.edge_uplinks < 1 || cfg.edge_uplinks > cfg.n_core {
        return Err(TopologyError::InvalidParameter("edge_uplinks must be in 1..=n_core"));
    }
    if cfg.capacity_bps == 0 {
        return Err(TopologyError::InvalidParameter("capacity_bps must be positive"));
    }

    const MAX_ATTEMPTS: u32 = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let mut g = NetworkGraph::new();
        for _ in 0..cfg.n_core {
            g.add_node(NodeKind::Core);
        }
        for _ in 0..cfg.n_edge {
            g.add_node(NodeKind::Edge);
        }
        for i in 0..cfg.n_core {
            for j in (i + 1)..cfg.n_core {
                if rng.random::<f64>() < cfg.p_link {
                    g.add_link_pair(NodeId(i as u32), NodeId(j as u32), cfg.capacity_bps);
                }
            }
        }
        for e in 0..cfg.n_edge {
            let edge = NodeId((cfg.n_core + e) as u32);
            let mut picks: Vec<usize> =
                rand::seq::index::sample(&mut rng, cfg.n_core, cfg.edge_uplinks).into_vec();
            picks.sort_unstable();
            for c in picks {
                g.add_link_pair(edge, NodeId(c as u32), cfg.capacity_bps);
            }
        }
        if !switches_connected(&g) {
            continue;
        }
        for e in 0..cfg.n_edge {
            let edge = NodeId((cfg.n_core + e) as u32);
            for _ in 0..cfg.hosts_per_edge {
                let host = g.add_node(NodeKind::Host);
                g.add_link_pair(host, edge, cfg.capacity_bps);
            }
        }
        debug_assert_eq!(g.check_consistency(), Ok(()));
        return Ok(g);
    }
    Err(TopologyError::GenerationFailed(MAX_ATTEMPTS))
}

fn switches_connected(g: &NetworkGraph) -> bool {
    let n = g.node_count();
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![NodeId(0)];
    seen[0] = true;
    let mut visited = 0usize;
    while let Some(u) = stack.pop() {
        visited += 1;
        for &l in g.out_links(u) {
            let v = g.link(l).dst;
            if !seen[v.index()] {
                seen[v.index()] = true;
                stack.push(v);
            }
        }
    }
    visited == n
}
