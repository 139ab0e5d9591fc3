//! Simulation and statistics for the retroreflecting barrier tube.

pub mod dd;
pub mod rotation;
pub mod billiard;
pub mod lattice;
pub mod iet;
pub mod stats;
pub mod experiments;
