//! Experiment runner around the routing engine: config parsing, seeded
//! sweep orchestration, and CSV/JSON reporting.

pub mod config;
pub mod experiment;
pub mod output;
