//! Learning-augmented 2D Euclidean TSP solving: instance handling, TSPLIB
//! I/O, canonical-frame preprocessing, local search, a small reverse-mode
//! autodiff engine, the policy network, smoothed policy-gradient training
//! and a seeded benchmark harness.

pub mod autodiff;
pub mod bench;
pub mod equivariance;
pub mod error;
pub mod local_search;
pub mod policy;
pub mod rng;
pub mod training;
pub mod tsp;
pub mod tsplib;

pub use error::{Error, Result};
pub use local_search::{combined_local_search, insertion_heuristic, InsertionVariant, LocalSearchConfig};
pub use rng::RngStream;
pub use tsp::{Instance, Point, Tour};
