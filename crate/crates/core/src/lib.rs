//! Data-parallel MLP training with periodic model averaging.
//!
//! Workers train private copies of a feed-forward classifier on disjoint data
//! shards and periodically replace their parameters with the all-reduced
//! mean. Local updates use plain SGD or a Kronecker-factored natural-gradient
//! preconditioner; hidden layers can be initialised by greedy RBM pretraining.

pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod optimizer;
pub mod parallel;
pub mod pretrain;
pub mod rng;

pub use error::{Error, Result};
