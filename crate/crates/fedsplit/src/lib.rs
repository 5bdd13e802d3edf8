//! Deterministic simulator for client-level differentially private federated
//! learning.
//!
//! The crate builds up from flat parameter vectors and keyed RNG streams to
//! a full federated round loop: synthetic heterogeneous silos, local SGD and
//! sample-level DP-SGD, norm clipping with a quantile-tracking bound, the
//! Gaussian aggregation mechanism, an exact analytic privacy accountant, and
//! the adaptive sub-client splitting controller that trades noise against
//! update diversity. A theory module provides executable oracles for the
//! sensitivity and variance bounds of the underlying analysis.
//!
//! Everything is reproducible: randomness flows through `(seed, stream,
//! round)`-keyed streams, reductions are index-ordered, and parallel maps
//! (rayon behind the default `parallel` feature) preserve their outputs
//! bitwise regardless of thread count.

pub mod accountant;
pub mod clip;
pub mod data;
pub mod error;
pub mod federation;
pub mod intermediary;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod theory;
pub mod train;
pub mod vector;

pub use error::{Error, Result};
pub use vector::ParamVector;
