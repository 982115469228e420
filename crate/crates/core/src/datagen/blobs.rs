use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::TestSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub n_id_classes: usize,
    #[serde(default)]
    pub n_ood_classes: usize,
    pub per_class: usize,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub seed: u64,
}

fn default_test_per_class() -> usize {
    100
}

/// A sample before label noise: the class it was drawn from is its true label.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSample {
    pub id: u64,
    pub x: Vec<f32>,
    pub true_label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlobData {
    pub samples: Vec<SourceSample>,
    pub test: TestSet,
    pub centroids: Vec<Vec<f64>>,
    pub dim: usize,
    pub n_id_classes: usize,
    pub n_ood_classes: usize,
}

/// Isotropic Gaussian clusters around standard-normal centroids.
///
/// Classes `0..n_id` are in-distribution, `n_id..n_id + n_ood` are the
/// out-of-distribution carve-out. `knn_k` is the neighbor count training will
/// use; every class needs more than `knn_k` samples.
pub fn make_blobs(spec: &BlobSpec, knn_k: usize) -> Result<BlobData> {
    if spec.dim < 2 {
        return Err(Error::arg("dim", format!("must be at least 2, got {}", spec.dim)));
    }
    if spec.n_id_classes < 2 {
        return Err(Error::arg("n_id_classes", format!("need at least 2, got {}", spec.n_id_classes)));
    }
    if spec.per_class < knn_k + 1 {
        return Err(Error::arg("per_class", format!("{} samples per class cannot supply {knn_k} neighbors", spec.per_class)));
    }
    if !(spec.spread >= 0.0 && spec.spread.is_finite()) {
        return Err(Error::arg("spread", format!("must be finite and non-negative, got {}", spec.spread)));
    }
    let n_classes = spec.n_id_classes + spec.n_ood_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    while centroids.len() < n_classes {
        let c: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
        if centroids.iter().all(|o| o != &c) {
            centroids.push(c);
        }
    }

    let draw = |class: usize, rng: &mut ChaCha8Rng| -> Vec<f32> {
        centroids[class]
            .iter()
            .map(|&m| (m + spec.spread * rng.sample::<f64, _>(StandardNormal)) as f32)
            .collect()
    };

    let mut samples = Vec::with_capacity(n_classes * spec.per_class);
    for class in 0..n_classes {
        for _ in 0..spec.per_class {
            let x = draw(class, &mut rng);
            samples.push(SourceSample { id: samples.len() as u64, x, true_label: class });
        }
    }

    let mut test = TestSet { x: Vec::new(), labels: Vec::new(), dim: spec.dim };
    for class in 0..spec.n_id_classes {
        for _ in 0..spec.test_per_class {
            test.x.push(draw(class, &mut rng));
            test.labels.push(class);
        }
    }

    Ok(BlobData {
        samples,
        test,
        centroids,
        dim: spec.dim,
        n_id_classes: spec.n_id_classes,
        n_ood_classes: spec.n_ood_classes,
    })
}
