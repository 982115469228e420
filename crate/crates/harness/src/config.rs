use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use josnc_core::datagen::{BlobSpec, NoiseSpec, NoiseType};
use josnc_core::network::ModelConfig;
use josnc_core::trainer::{TrainConfig, TrainMode};

use crate::error::HarnessError;

/// Which parts of the method a run enables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Full method: selection, relabeling and all three consistency terms.
    Josnc,
    /// Smoothed-label cross-entropy on every sample for the whole run.
    Standard,
    /// Selection and relabeling, no consistency terms.
    SelectionOnly,
    /// Selection plus self-consistency.
    Scon,
    /// Selection plus self- and neighbor-consistency.
    SconNcon,
}

impl Method {
    /// Rewrites the train block so it enables exactly this method's terms.
    pub fn apply(self, train: &mut TrainConfig) {
        train.mode = TrainMode::Josnc;
        match self {
            Method::Josnc => {}
            Method::Standard => train.mode = TrainMode::Standard,
            Method::SelectionOnly => (train.alpha, train.beta, train.gamma) = (0.0, 0.0, 0.0),
            Method::Scon => (train.beta, train.gamma) = (0.0, 0.0),
            Method::SconNcon => train.gamma = 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseType,
    pub rate_id: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub blobs: BlobSpec,
    pub noise: NoiseConfig,
}

impl DatasetConfig {
    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec { kind: self.noise.kind, rate_id: self.noise.rate_id, ood_class_count: self.blobs.n_ood_classes }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Also write a checkpoint every this many epochs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

fn default_method() -> Method {
    Method::Josnc
}

impl ExperimentConfig {
    /// Parses and validates a JSON document. Errors name the offending key
    /// path and the line and column where parsing stopped.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let msg = inner.to_string();
            // serde reports a missing field at its parent; point at the field itself
            let key = match msg.strip_prefix("missing field `").and_then(|m| m.split('`').next()) {
                Some(field) if path == "." => field.to_string(),
                Some(field) => format!("{path}.{field}"),
                None => path,
            };
            HarnessError::Config(format!("{key}: {msg}"))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Checks cross-block constraints that the schema alone cannot express.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let b = &self.dataset.blobs;
        if !(self.dataset.noise.rate_id >= 0.0 && self.dataset.noise.rate_id < 1.0) {
            return Err(HarnessError::Config("dataset.noise.rate_id: must lie in [0, 1)".into()));
        }
        if !(b.spread > 0.0 && b.spread.is_finite()) {
            return Err(HarnessError::Config("dataset.blobs.spread: must be positive".into()));
        }
        if self.train.kappa > b.n_id_classes {
            return Err(HarnessError::Config(format!(
                "train.kappa: {} exceeds {} ID classes",
                self.train.kappa, b.n_id_classes
            )));
        }
        if self.checkpoint_every == Some(0) {
            return Err(HarnessError::Config("checkpoint_every: must be positive".into()));
        }
        self.clone().resolve().train.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Fills every derived default so the result fully describes the run:
    /// the augmentation jitter defaults to a tenth of the blob spread, and the
    /// method's switches are written into the train block.
    pub fn resolve(mut self) -> Self {
        if self.train.augment.sigma.is_none() {
            self.train.augment.sigma = Some(0.1 * self.dataset.blobs.spread);
        }
        self.method.apply(&mut self.train);
        self
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dataset": {
            "blobs": {"n_id_classes": 6, "per_class": 20, "dim": 4, "spread": 0.5, "seed": 1},
            "noise": {"kind": "symmetric", "rate_id": 0.2}
        },
        "train": {"seed": 3}
    }"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.method, Method::Josnc);
        assert_eq!(cfg.train.epochs, 60);
        assert_eq!(cfg.model.embed_dim, 32);
        assert_eq!(cfg.clone().resolve().train.augment.sigma, Some(0.05));
    }

    #[test]
    fn missing_seed_names_the_key() {
        let text = MINIMAL.replace(r#""seed": 3"#, r#""epochs": 10"#);
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("train.seed"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected_with_position() {
        let text = MINIMAL.replace(r#""seed": 3"#, r#""seed": 3, "sed": 4"#);
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("train") && err.contains("sed") && err.contains("line 6"), "{err}");
    }

    #[test]
    fn invalid_ranges_are_config_errors() {
        let text = MINIMAL.replace(r#""rate_id": 0.2"#, r#""rate_id": 1.0"#);
        assert!(ExperimentConfig::from_json(&text).is_err());
        let text = MINIMAL.replace(r#""seed": 3"#, r#""seed": 3, "warmup_epochs": 60"#);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn methods_switch_terms() {
        let base = ExperimentConfig::from_json(MINIMAL).unwrap();
        let with = |m: Method| {
            let mut c = base.clone();
            c.method = m;
            c.resolve().train
        };
        assert_eq!(with(Method::Standard).mode, TrainMode::Standard);
        let t = with(Method::SelectionOnly);
        assert_eq!((t.alpha, t.beta, t.gamma), (0.0, 0.0, 0.0));
        let t = with(Method::Scon);
        assert!(t.alpha > 0.0 && t.beta == 0.0 && t.gamma == 0.0);
        let t = with(Method::SconNcon);
        assert!(t.alpha > 0.0 && t.beta > 0.0 && t.gamma == 0.0);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap().resolve();
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(again.clone().resolve(), cfg);
    }
}
