use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Jitter standard deviation; `None` means `0.1 · spread` of the data.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_mask_rate")]
    pub mask_rate: f64,
}

fn default_mask_rate() -> f64 {
    0.1
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { sigma: None, mask_rate: default_mask_rate() }
    }
}

/// Gaussian jitter followed by independent coordinate masking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmenter {
    pub sigma: f64,
    pub mask_rate: f64,
}

impl Augmenter {
    pub fn new(sigma: f64, mask_rate: f64) -> Self {
        Self { sigma, mask_rate }
    }

    pub fn apply<T: Scalar>(&self, x: &[T], rng: &mut impl Rng) -> Vec<T> {
        x.iter()
            .map(|&v| {
                let jittered = if self.sigma > 0.0 {
                    v + T::lit(self.sigma * rng.sample::<f64, _>(StandardNormal))
                } else {
                    v
                };
                if self.mask_rate > 0.0 && rng.random::<f64>() < self.mask_rate {
                    T::zero()
                } else {
                    jittered
                }
            })
            .collect()
    }

    /// Two independent views of `x`, reproducible from `(seed, id, epoch)`.
    pub fn views<T: Scalar>(&self, x: &[T], seed: u64, id: u64, epoch: u64) -> (Vec<T>, Vec<T>) {
        let v = self.apply(x, &mut sample_rng(seed, id, epoch, 0));
        let v2 = self.apply(x, &mut sample_rng(seed, id, epoch, 1));
        (v, v2)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG stream per `(seed, sample, epoch, stream)`.
pub fn sample_rng(seed: u64, id: u64, epoch: u64, stream: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(splitmix(splitmix(seed) ^ id) ^ epoch) ^ stream);
    ChaCha8Rng::seed_from_u64(key)
}
