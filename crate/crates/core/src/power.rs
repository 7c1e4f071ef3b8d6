//! Switch power model: forwarding a bit costs a fixed amount of energy per
//! processing stage, and every active switch draws a constant idle power.
//! Hosts draw nothing; an inactive element draws nothing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{NetworkGraph, NodeId, NodeKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PowerError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

/// Per-bit stage energies in nanojoule and the idle draw of a switch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub e_lookup_nj: f64,
    pub e_rx_nj: f64,
    pub e_xfer_nj: f64,
    pub e_tx_nj: f64,
    pub p_idle_w: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel {
            e_lookup_nj: 0.034,
            e_rx_nj: 0.2,
            e_xfer_nj: 0.21,
            e_tx_nj: 0.2,
            p_idle_w: 90.0,
        }
    }
}

impl PowerModel {
    /// Energy to carry one bit across one link, in nanojoule.
    pub fn per_bit_total(&self) -> f64 {
        self.e_lookup_nj + self.e_rx_nj + self.e_xfer_nj + self.e_tx_nj
    }

    /// Power of one directed link carrying `load_bps`, in watt.
    pub fn link_power(&self, load_bps: u64) -> f64 {
        self.per_bit_total() * 1e-9 * load_bps as f64
    }

    /// Idle draw of a node of the given kind.
    pub fn idle_power(&self, kind: NodeKind) -> f64 {
        if kind.is_switch() {
            self.p_idle_w
        } else {
            0.0
        }
    }
}

/// Power drawn by one node: its idle draw plus the load power of every
/// active incident link, both directions. Zero when the node is off.
pub fn node_power(g: &NetworkGraph, m: &PowerModel, id: NodeId) -> Result<f64, PowerError> {
    if !g.contains_node(id) {
        return Err(PowerError::UnknownNode(id));
    }
    let n = g.node(id);
    if !n.active {
        return Ok(0.0);
    }
    let mut p = m.idle_power(n.kind);
    for &l in g.out_links(id).iter().chain(g.in_links(id)) {
        let link = g.link(l);
        if link.active {
            p += m.link_power(link.load_bps);
        }
    }
    Ok(p)
}

/// Total network power: the idle draw of every active switch plus the load
/// power of every active directed link, each link counted exactly once.
pub fn network_power(g: &NetworkGraph, m: &PowerModel) -> f64 {
    let mut p = 0.0;
    for n in g.nodes() {
        if n.active {
            p += m.idle_power(n.kind);
        }
    }
    for (_, l) in g.links() {
        if l.active {
            p += m.link_power(l.load_bps);
        }
    }
    p
}
