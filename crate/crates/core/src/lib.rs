//! Exponential-race and Poisson-point-process couplings, and the
//! perfect-simulation machinery built on them for chains with complete
//! connections.

pub mod chain;
pub mod coupler;
pub mod error;
pub mod governor;
pub mod measure;
pub mod ppp;
pub mod priming;
pub mod race;
pub mod reconstruct;
pub mod rng;
pub mod stats;

/// Library version embedded in experiment artifacts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use chain::{ChainModel, ModelSpec};
pub use error::{Error, Result};
pub use measure::{Density, DensitySpec, Region, State, StateSpace};
pub use ppp::{PointProcessSource, PointSet, SplicedSource};
