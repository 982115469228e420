use serde::{Deserialize, Serialize};

use crate::datagen::AugmentConfig;
use crate::error::{Error, Result};
use crate::labeler::PllTemperatures;
use crate::selector::ThresholdConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Warmup, then selection + relabeling + consistency regularization.
    Josnc,
    /// Plain smoothed-label cross-entropy on every sample for every epoch.
    Standard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_optimizer")]
    pub kind: OptimizerKind,
    /// SGD momentum, or Adam's first-moment decay.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Sgd
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: default_optimizer(), momentum: default_momentum(), weight_decay: default_weight_decay() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Constant through warmup, cosine-annealed to zero afterwards.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_warmup")]
    pub warmup_epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_schedule")]
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "d_mode")]
    pub mode: TrainMode,
    /// Label smoothing for clean targets and for the selection score.
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    /// Size of the partial label set.
    #[serde(default = "d_kappa")]
    pub kappa: usize,
    /// Neighbors consulted per sample.
    #[serde(default = "d_knn_k")]
    pub knn_k: usize,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    /// Teacher EMA decay.
    #[serde(default = "d_teacher_ema")]
    pub teacher_ema: f64,
    #[serde(default)]
    pub thresholds: ThresholdConfig,
    #[serde(default)]
    pub pll_temperatures: PllTemperatures,
    #[serde(default = "d_t_ssl")]
    pub t_ssl: f64,
    #[serde(default = "d_queue")]
    pub queue_capacity: usize,
    #[serde(default)]
    pub augment: AugmentConfig,
}

fn d_epochs() -> usize {
    60
}
fn d_warmup() -> usize {
    5
}
fn d_batch() -> usize {
    128
}
fn d_lr() -> f64 {
    0.05
}
fn d_schedule() -> LrSchedule {
    LrSchedule::Cosine
}
fn d_mode() -> TrainMode {
    TrainMode::Josnc
}
fn d_epsilon() -> f64 {
    0.6
}
fn d_kappa() -> usize {
    5
}
fn d_knn_k() -> usize {
    10
}
fn d_alpha() -> f64 {
    0.3
}
fn d_beta() -> f64 {
    0.1
}
fn d_gamma() -> f64 {
    1e-4
}
fn d_teacher_ema() -> f64 {
    0.99
}
fn d_t_ssl() -> f64 {
    0.1
}
fn d_queue() -> usize {
    4096
}

impl TrainConfig {
    /// Defaults for everything except the seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            epochs: d_epochs(),
            warmup_epochs: d_warmup(),
            batch_size: d_batch(),
            learning_rate: d_lr(),
            lr_schedule: d_schedule(),
            optimizer: OptimizerConfig::default(),
            mode: d_mode(),
            epsilon: d_epsilon(),
            kappa: d_kappa(),
            knn_k: d_knn_k(),
            alpha: d_alpha(),
            beta: d_beta(),
            gamma: d_gamma(),
            teacher_ema: d_teacher_ema(),
            thresholds: ThresholdConfig::default(),
            pll_temperatures: PllTemperatures::default(),
            t_ssl: d_t_ssl(),
            queue_capacity: d_queue(),
            augment: AugmentConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.warmup_epochs > 0 && self.warmup_epochs < self.epochs) {
            return bad("train: need 0 < warmup_epochs < epochs");
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("train.learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.optimizer.momentum) || !(self.optimizer.weight_decay >= 0.0) {
            return bad("train.optimizer: momentum must lie in [0, 1), weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return bad("train.epsilon must lie in [0, 1)");
        }
        if self.kappa == 0 || self.knn_k == 0 {
            return bad("train.kappa and train.knn_k must be positive");
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("train.{name} must be non-negative")));
            }
        }
        for (name, w) in [
            ("teacher_ema", self.teacher_ema),
            ("thresholds.omega_warmup", self.thresholds.omega_warmup),
            ("thresholds.omega_main", self.thresholds.omega_main),
        ] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("train.{name} must lie in [0, 1]")));
            }
        }
        if !(self.t_ssl > 0.0) || !(self.pll_temperatures.inside > 0.0 && self.pll_temperatures.outside > 0.0) {
            return bad("train: temperatures must be positive");
        }
        if !(0.0..1.0).contains(&self.augment.mask_rate) {
            return bad("train.augment.mask_rate must lie in [0, 1)");
        }
        match self.augment.sigma {
            Some(s) if s >= 0.0 && s.is_finite() => {}
            Some(_) => return bad("train.augment.sigma must be non-negative"),
            None => return bad("train.augment.sigma must be resolved before training"),
        }
        Ok(())
    }

    /// Learning rate for a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine if epoch <= self.warmup_epochs => self.learning_rate,
            LrSchedule::Cosine => {
                let span = (self.epochs - self.warmup_epochs) as f64;
                let t = (epoch - self.warmup_epochs - 1) as f64 / span;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    pub fn is_robust_epoch(&self, epoch: usize) -> bool {
        self.mode == TrainMode::Josnc && epoch > self.warmup_epochs
    }
}
