//! Numerical laboratory for information-theoretic generalization bounds in
//! distributed and federated learning.
//!
//! The crate simulates `K` nodes that each train a model on `n` local points,
//! aggregates the models by simple averaging (or runs multi-round distributed
//! SGD), measures the true expected generalization error by Monte Carlo,
//! estimates the mutual-information terms with a histogram plug-in estimator
//! and evaluates the centralized, per-node, Lipschitz, privacy, communication
//! and SGD bounds.
//!
//! Modules, bottom up:
//!
//! | module | contents |
//! |---|---|
//! | [`problems`] | Gaussian location and linear-regression data models, closed-form population risk |
//! | [`bregman`] | Bregman losses, gradients, `ψ*⁻¹` |
//! | [`training`] | node algorithms, aggregation, privacy/quantization mechanisms, distributed SGD |
//! | [`generalization`] | Monte Carlo generalization error and identity checks |
//! | [`infotheory`] | joint histograms, plug-in mutual information, closed forms |
//! | [`bounds`] | every bound formula plus the Gaussian-mean example |
//!
//! All information quantities are in nats.

pub mod bounds;
pub mod bregman;
pub mod error;
pub mod generalization;
pub mod infotheory;
pub mod problems;
pub mod rng;
pub mod stats;
pub mod training;

pub use bounds::{BoundKind, BoundValue};
pub use bregman::{Generator, LossForm, TailSpec};
pub use error::{Error, Result};

pub use generalization::{RiskMethod, Scenario};
pub use infotheory::{BinningSpec, MiEstimate};
pub use problems::{Dataset, NodeData, Population, ProblemKind, ProblemSpec};
pub use rng::SeedPath;
pub use stats::{Estimate, PairedCheck};
pub use training::{Aggregation, NodeAlgorithm, SgdConfig};
