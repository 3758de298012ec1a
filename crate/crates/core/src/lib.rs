//! GHZ loop models on 2D Z2-symmetric states: exact small-lattice oracles,
//! Metropolis sampling of POVM outcomes and percolation thresholds.

pub mod lattice;
pub mod unionfind;
pub mod weights;
pub mod sampler;
pub mod analysis;
pub mod oracle;
pub mod reduction;
pub mod phases;
pub mod config;
pub mod svg;
pub mod cli;
