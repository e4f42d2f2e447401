//! The frozen reference configuration used by the examples, the CLI defaults
//! and the acceptance suite.
//!
//! 25 nodes, 500 subjects, class effect 0.2, generated with seed 7. At this
//! effect size a 20-neuron single-layer network reaches about 0.97 two-fold
//! CV accuracy, which leaves room for the degradation trends to show.

use crate::baselines::SvmConfig;
use crate::connectivity::{generate_synthetic, Dataset, SyntheticConfig};
use crate::error::Result;
use crate::harness::ModelSpec;
use crate::network::TrainConfig;

pub const REFERENCE_SEED: u64 = 7;

pub fn reference_config() -> SyntheticConfig {
    SyntheticConfig {
        n_subjects: 500,
        n_nodes: 25,
        n_timepoints: 200,
        class_effect_size: 0.2,
        n_effect_blocks: 4,
        noise_sd: 0.5,
    }
}

pub fn reference_data() -> Result<Dataset> {
    generate_synthetic(&reference_config(), REFERENCE_SEED)
}

/// Same generator settings without any class signal.
pub fn null_config() -> SyntheticConfig {
    SyntheticConfig {
        class_effect_size: 0.0,
        ..reference_config()
    }
}

pub fn reference_train_config() -> TrainConfig {
    TrainConfig::default()
}

/// One hidden layer of 20 neurons.
pub fn reference_classifier() -> ModelSpec {
    ModelSpec::dnn(vec![20], reference_train_config())
}

/// Deep network used for attribution and MC dropout: [200, 100, 100] with
/// dropout 0.2 on the last hidden layer.
pub const DEEP_SIZES: [usize; 3] = [200, 100, 100];

pub fn deep_classifier() -> ModelSpec {
    ModelSpec::dnn(DEEP_SIZES.to_vec(), reference_train_config())
}

pub fn reference_svm() -> SvmConfig {
    SvmConfig::default()
}

/// MC passes used throughout.
pub const PASSES: usize = crate::bayesian::DEFAULT_PASSES;
