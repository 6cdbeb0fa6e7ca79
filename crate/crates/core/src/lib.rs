pub mod env;
pub mod lattice;
pub mod parallel;
pub mod rng;
pub mod stats;
pub mod walker;
pub mod percolation;
pub mod evolving;
