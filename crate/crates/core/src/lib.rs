//! Classification of subjects from functional-connectivity matrices with a
//! from-scratch deep neural network.
//!
//! Besides prediction the crate ranks the last hidden layer's features by
//! their share of the class-score difference, back-projects them to
//! input-space connectivity patterns, and attaches Monte Carlo dropout
//! uncertainty to every prediction. A synthetic cohort generator and a
//! permuted cross-validation harness make each of these behaviours testable
//! at desk scale.
//!
//! Module map:
//!
//! - [`connectivity`]: matrices, preprocessing, datasets, synthetic data
//! - [`network`]: forward pass, elastic-net loss, backpropagation, training
//! - [`attribution`]: feature ranking, back-projection, truncated prediction
//! - [`bayesian`]: MC dropout prediction and the dropout/uncertainty sweeps
//! - [`baselines`]: linear SVM
//! - [`harness`]: permuted k-fold cross-validation and study drivers
//! - [`cli`]: the `connlab` command line

pub mod attribution;
pub mod baselines;
pub mod bayesian;
pub mod cli;
pub mod connectivity;
pub mod error;
pub mod fixture;
pub mod harness;
pub mod network;
pub mod rng;
pub mod table;

pub use error::{Error, Result};
