//! Equation-free coarse-grained analysis of an individual-based SIRS
//! epidemic on random regular networks.
//!
//! The microscopic simulator ([`epidemic`]) is wrapped into a coarse
//! time-T map ([`coarse`]) through moment restriction ([`moments`]) and
//! simulated-annealing lifting with slow-manifold healing ([`lifting`]).
//! Fixed points, stability and pseudo-arclength continuation of the
//! coarse map live in [`numerics`]; the CLI driver ([`config`],
//! [`experiments`]) runs temporal, phase-portrait and branch-tracing
//! experiments with reproducible seeds and CSV output.

pub mod config;
pub mod coarse;
pub mod epidemic;
pub mod experiments;
pub mod graph;
pub mod lifting;
pub mod moments;
pub mod numerics;
pub mod rng;
