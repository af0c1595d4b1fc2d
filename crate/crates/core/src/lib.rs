//! Bayesian neural network classification with posterior weight sampling.
//!
//! Network weights are drawn from their posterior with random-walk
//! Metropolis-Hastings or Hamiltonian Monte Carlo and predictions average the
//! class probabilities of the retained draws. Around that core sit a fixed
//! convolutional feature extractor for grayscale images, right-angle/flip/scale
//! augmentation, dataset ingestion and splitting, classification metrics and
//! chain diagnostics.

pub mod augmentation;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod model;
pub mod rng;
pub mod samplers;

pub use error::{Error, Result};
pub use model::{BayesianModel, Dataset, NetworkSpec, PriorSpec, WeightVector};
pub use samplers::{Chain, ChainControls, HmcConfig, Kernel, RandomWalkProposal, TargetDensity};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
