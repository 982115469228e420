use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BlobData, NoiseKind, NoisyDataset, NoisySample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseType {
    /// Uniform over the other ID classes.
    Symmetric,
    /// Class `c` becomes `(c + 1) mod C_id`.
    Asymmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseType,
    pub rate_id: f64,
    pub ood_class_count: usize,
}

impl NoiseSpec {
    /// Expected overall noisy fraction for a given OOD sample fraction.
    pub fn overall_rate(&self, ood_fraction: f64) -> f64 {
        ood_fraction + (1.0 - ood_fraction) * self.rate_id
    }
}

/// Corrupts observed labels.
///
/// Every OOD sample gets a label drawn uniformly from the ID classes. Among
/// ID samples exactly `round(rate_id · n)` are relabeled to a different class
/// per `spec.kind`; the rest keep their true label.
pub fn inject_noise(data: &BlobData, spec: &NoiseSpec, seed: u64) -> Result<NoisyDataset> {
    if !(0.0..1.0).contains(&spec.rate_id) {
        return Err(Error::arg("rate_id", format!("must lie in [0, 1), got {}", spec.rate_id)));
    }
    if spec.ood_class_count != data.n_ood_classes {
        return Err(Error::arg(
            "ood_class_count",
            format!("spec says {}, dataset has {}", spec.ood_class_count, data.n_ood_classes),
        ));
    }
    let c_id = data.n_id_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let id_idx: Vec<usize> = (0..data.samples.len()).filter(|&i| data.samples[i].true_label < c_id).collect();
    let n_flip = (spec.rate_id * id_idx.len() as f64).round() as usize;
    let mut shuffled = id_idx.clone();
    shuffled.shuffle(&mut rng);
    let mut flip = vec![false; data.samples.len()];
    for &i in &shuffled[..n_flip] {
        flip[i] = true;
    }

    let samples = data
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (observed_label, noise_kind) = if s.true_label >= c_id {
                (rng.random_range(0..c_id), NoiseKind::OodNoisy)
            } else if flip[i] {
                let label = match spec.kind {
                    NoiseType::Asymmetric => (s.true_label + 1) % c_id,
                    NoiseType::Symmetric => {
                        let r = rng.random_range(0..c_id - 1);
                        if r >= s.true_label { r + 1 } else { r }
                    }
                };
                (label, NoiseKind::IdNoisy)
            } else {
                (s.true_label, NoiseKind::Clean)
            };
            NoisySample { id: s.id, x: s.x.clone(), observed_label, true_label: s.true_label, noise_kind }
        })
        .collect();

    Ok(NoisyDataset { samples, dim: data.dim, n_id_classes: c_id, n_ood_classes: data.n_ood_classes })
}
