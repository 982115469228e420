//! Ready-made experiment configs for `gen-config`.

use josnc_core::datagen::{BlobSpec, NoiseType};
use josnc_core::network::ModelConfig;
use josnc_core::trainer::TrainConfig;

use crate::config::{DatasetConfig, ExperimentConfig, Method, NoiseConfig};

pub const PRESETS: [&str; 5] = ["sym20", "sym50", "sym80", "asym40", "openset-sym40"];

/// Base blob layout: 8 ID classes plus 2 OOD classes, 500 samples each, 32 dims.
/// Smoothing is scaled down to keep the label/off-label mass ratio workable with 8 classes.
pub fn scenario(kind: NoiseType, rate_id: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetConfig {
            blobs: BlobSpec {
                n_id_classes: 8,
                n_ood_classes: 2,
                per_class: 500,
                test_per_class: 100,
                dim: 32,
                spread: 2.0,
                seed,
            },
            noise: NoiseConfig { kind, rate_id },
        },
        model: ModelConfig::default(),
        train: TrainConfig {
            epsilon: 0.12,
            ..TrainConfig::with_seed(seed)
        },
        method: Method::Josnc,
        output_dir: None,
        checkpoint_every: None,
    }
}

/// The open-set scenario with 40% symmetric in-distribution noise.
pub fn openset_sym40(seed: u64) -> ExperimentConfig {
    scenario(NoiseType::Symmetric, 0.4, seed)
}

pub fn preset(name: &str, seed: u64) -> Option<ExperimentConfig> {
    let cfg = match name {
        "sym20" => scenario(NoiseType::Symmetric, 0.2, seed),
        "sym50" => scenario(NoiseType::Symmetric, 0.5, seed),
        "sym80" => scenario(NoiseType::Symmetric, 0.8, seed),
        "asym40" => scenario(NoiseType::Asymmetric, 0.4, seed),
        "openset-sym40" => openset_sym40(seed),
        _ => return None,
    };
    Some(cfg)
}
