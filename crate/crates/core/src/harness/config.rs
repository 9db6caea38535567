//! Training configuration: TOML with one section per concern. Unknown
//! keys are rejected so typos fail loudly.

use super::fnv1a64;
use crate::attack::{parse::parse_attack_spec, AttackSchedule, AttackSpec};
use crate::error::{Error, Result};
use crate::model::ModelDescriptor;
use crate::tensor::AdamHyper;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub attack: AttackSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub image_size: usize,
    pub message_len: usize,
    #[serde(default = "default_width")]
    pub enc_width: usize,
    #[serde(default = "default_width")]
    pub dec_width: usize,
    #[serde(default = "default_strides")]
    pub dec_strides: [usize; 5],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Either a directory of images or `synth:<count>`.
    pub dataset: String,
    pub batch_size: usize,
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default = "default_lambda_image")]
    pub lambda_image: f64,
    #[serde(default = "default_lambda_message")]
    pub lambda_message: f64,
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// 0 saves only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub checkpoint_dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub specs: Vec<AttackEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AttackEntry {
    pub spec: String,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_qualities")]
    pub qualities: Vec<u8>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            qualities: default_qualities(),
            samples: default_samples(),
        }
    }
}

fn default_width() -> usize {
    32
}
fn default_strides() -> [usize; 5] {
    [1, 2, 1, 2, 1]
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_lambda_image() -> f64 {
    0.7
}
fn default_lambda_message() -> f64 {
    1.0
}
fn default_log_every() -> usize {
    50
}
fn default_weight() -> f64 {
    1.0
}
fn default_qualities() -> Vec<u8> {
    vec![10, 25, 50, 75, 90]
}
fn default_samples() -> usize {
    256
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.descriptor().validate()?;
        if self.model.image_size % 8 != 0 {
            return Err(Error::Config(format!(
                "image_size must be a multiple of 8, got {}",
                self.model.image_size
            )));
        }
        if self.train.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.train.lambda_image < 0.0 || self.train.lambda_message < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if self.train.lambda_image == 0.0 && self.train.lambda_message == 0.0 {
            return Err(Error::Config("loss weights must not both be zero".into()));
        }
        if !(self.train.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.eval.qualities.is_empty() {
            return Err(Error::Config("eval quality list must not be empty".into()));
        }
        for &q in &self.eval.qualities {
            crate::codec::jpeg::luma_table(q)?;
        }
        super::dataset::DatasetSource::parse(&self.train.dataset)?;
        self.schedule()?;
        Ok(())
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            image_size: self.model.image_size,
            message_len: self.model.message_len,
            enc_width: self.model.enc_width,
            dec_width: self.model.dec_width,
            dec_strides: self.model.dec_strides,
        }
    }

    pub fn schedule(&self) -> Result<AttackSchedule> {
        let specs = self
            .attack
            .specs
            .iter()
            .map(|e| Ok(AttackSpec::weighted(parse_attack_spec(&e.spec)?, e.weight)))
            .collect::<Result<Vec<_>>>()?;
        AttackSchedule::new(specs)
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.train.learning_rate,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            eps: self.train.epsilon,
        }
    }

    /// Stable hex fingerprint of the full configuration.
    pub fn fingerprint(&self) -> String {
        let canon = toml::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(canon.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
image_size = 32
message_len = 8

[train]
dataset = "synth:64"
batch_size = 4
steps = 10
seed = 7

[attack]
specs = [{ spec = "identity" }]
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = TrainConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.model.enc_width, 32);
        assert_eq!(cfg.train.lambda_image, 0.7);
        assert_eq!(cfg.train.lambda_message, 1.0);
        assert_eq!(cfg.eval.qualities, vec![10, 25, 50, 75, 90]);
        assert_eq!(cfg.schedule().unwrap().specs().len(), 1);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let bad = MINIMAL.replace("[attack]", "typo_key = 1\n[attack]");
        let err = TrainConfig::from_toml_str(&bad).unwrap_err();
        assert!(err.to_string().contains("typo_key"), "{err}");
    }

    #[test]
    fn validation_catches_bad_values() {
        let z = MINIMAL.replace("steps = 10", "steps = 0");
        assert!(TrainConfig::from_toml_str(&z).is_err());
        let z = MINIMAL.replace("image_size = 32", "image_size = 36");
        assert!(TrainConfig::from_toml_str(&z).is_err());
        let z = MINIMAL.replace("spec = \"identity\"", "spec = \"bogus\"");
        assert!(TrainConfig::from_toml_str(&z).is_err());
    }

    #[test]
    fn zero_loss_weights_are_rejected_together() {
        let z = MINIMAL.replace(
            "seed = 7",
            "seed = 7\nlambda_image = 0.0\nlambda_message = 0.0",
        );
        assert!(TrainConfig::from_toml_str(&z).is_err());
        let one = MINIMAL.replace("seed = 7", "seed = 7\nlambda_message = 0.0");
        assert!(TrainConfig::from_toml_str(&one).is_ok());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = TrainConfig::from_toml_str(MINIMAL).unwrap();
        let b = TrainConfig::from_toml_str(&MINIMAL.replace("seed = 7", "seed = 8")).unwrap();
        assert_eq!(a.fingerprint(), a.fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
