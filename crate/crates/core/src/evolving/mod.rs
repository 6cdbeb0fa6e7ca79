//! Quenched kernels, evolving sets and the Diaconis–Fill coupling on tori.

mod experiments;
mod kernel;
mod sets;
mod sparse;

use thiserror::Error;

use crate::env::EnvError;
use crate::lattice::LatticeError;
use crate::stats::StatsError;

pub use experiments::*;
pub use kernel::*;
pub use sets::*;
pub use sparse::*;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolvingError {
    #[error("the set is empty")]
    EmptySet,
    #[error("the set is the whole vertex set, so it has no boundary")]
    FullSet,
    #[error("vertex {0} is not on the torus")]
    VertexOutOfRange(usize),
    #[error("vertex {0} appears twice in the set")]
    DuplicateVertex(usize),
    #[error("vertex {0} carries no mass from the set")]
    Unreachable(usize),
    #[error("dense kernels need torus side <= {max}, got {side}", max = DENSE_MAX_SIDE)]
    TooLargeForDense { side: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}
