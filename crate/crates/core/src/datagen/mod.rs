//! Synthetic open-set noisy classification data.
//!
//! [`make_blobs`] draws Gaussian clusters for in-distribution and
//! out-of-distribution classes, [`inject_noise`] corrupts observed labels and
//! records the hidden ground truth, and [`Augmenter`] produces the two
//! stochastic views each training step consumes.
//!
//! Hidden tags ([`SampleTags`]) are kept apart from what the trainer sees
//! ([`TrainSet`]); the only way from a [`NoisyDataset`] to training data is
//! [`NoisyDataset::training_view`], which drops them.

mod augment;
mod blobs;
pub mod io;
mod noise;

use serde::{Deserialize, Serialize};

pub use augment::{sample_rng, AugmentConfig, Augmenter};
pub use blobs::{make_blobs, BlobData, BlobSpec, SourceSample};
pub use noise::{inject_noise, NoiseSpec, NoiseType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NoiseKind {
    Clean,
    IdNoisy,
    OodNoisy,
}

impl NoiseKind {
    pub fn code(self) -> u8 {
        match self {
            NoiseKind::Clean => 0,
            NoiseKind::IdNoisy => 1,
            NoiseKind::OodNoisy => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(NoiseKind::Clean),
            1 => Some(NoiseKind::IdNoisy),
            2 => Some(NoiseKind::OodNoisy),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisySample {
    pub id: u64,
    pub x: Vec<f32>,
    pub observed_label: usize,
    /// Index over ID classes followed by OOD classes.
    pub true_label: usize,
    pub noise_kind: NoiseKind,
}

/// Ground truth for one training sample; evaluation only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleTags {
    pub id: u64,
    pub true_label: usize,
    pub noise_kind: NoiseKind,
}

/// What the trainer is allowed to see of a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub id: u64,
    pub x: Vec<f32>,
    pub observed_label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSet {
    pub samples: Vec<TrainSample>,
    pub dim: usize,
    pub num_classes: usize,
}

/// Clean held-out data drawn from the in-distribution classes only.
#[derive(Clone, Debug, PartialEq)]
pub struct TestSet {
    pub x: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub dim: usize,
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoisyDataset {
    pub samples: Vec<NoisySample>,
    pub dim: usize,
    pub n_id_classes: usize,
    pub n_ood_classes: usize,
}

impl NoisyDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn training_view(&self) -> TrainSet {
        TrainSet {
            samples: self
                .samples
                .iter()
                .map(|s| TrainSample { id: s.id, x: s.x.clone(), observed_label: s.observed_label })
                .collect(),
            dim: self.dim,
            num_classes: self.n_id_classes,
        }
    }

    pub fn tags(&self) -> Vec<SampleTags> {
        self.samples
            .iter()
            .map(|s| SampleTags { id: s.id, true_label: s.true_label, noise_kind: s.noise_kind })
            .collect()
    }

    /// Fraction of samples whose observed label is not their clean label.
    pub fn noise_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let noisy = self.samples.iter().filter(|s| s.noise_kind != NoiseKind::Clean).count();
        noisy as f64 / self.samples.len() as f64
    }
}
