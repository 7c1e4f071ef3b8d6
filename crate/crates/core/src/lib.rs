//! Energy-aware flow routing for two-tier backhaul networks.
//!
//! The model is a fabric of core switches (random mesh), edge switches
//! uplinked into it, and hosts hanging off the edges. Host-to-host flows are
//! placed on capacity-feasible paths, and the routing layer keeps the set of
//! powered-on elements as small as it can: new flows prefer already-active
//! elements, old flows are periodically consolidated onto cheaper paths, and
//! idle links and core switches are switched off.
//!
//! [`topology`] and [`power`] define the network and its power draw,
//! [`workload`] generates Poisson flow traces, [`routing`] implements the
//! power-aware placement heuristic, [`optimal`] is an exact reference solver
//! for small snapshots, and [`sim`] replays traces under interchangeable
//! schemes and integrates power over time.

pub mod optimal;
pub mod power;
pub mod routing;
pub mod seed;
pub mod sim;
pub mod topology;
pub mod workload;
