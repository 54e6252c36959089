//! Flat JSON run configuration: network, training and data settings in one
//! object. Unknown keys are rejected.
//!
//! ```json
//! {
//!   "preset": "scale1-analog",
//!   "learning_rate": 0.05,
//!   "batch_size": 50,
//!   "epochs": 10,
//!   "train_images": "data/train-images-idx3-ubyte",
//!   "train_labels": "data/train-labels-idx1-ubyte"
//! }
//! ```
//!
//! Either `preset` or all of `input`, `layers` and `loss` describe the
//! network; explicit keys override the preset's.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::LossKind;
use crate::network::{LayerSpec, NetworkSpec, TrainConfig};
use crate::tensor::DType;
use crate::variants::Variant;

fn d_lr() -> f64 {
    TrainConfig::default().learning_rate
}
fn d_momentum() -> f64 {
    TrainConfig::default().momentum
}
fn d_batch() -> usize {
    TrainConfig::default().batch_size
}
fn d_epochs() -> usize {
    TrainConfig::default().epochs
}
fn d_seed() -> u64 {
    1
}
fn d_precision() -> DType {
    DType::F32
}
fn d_variant() -> Variant {
    Variant::Imp6
}
fn d_sigma() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub input: Option<[usize; 3]>,
    #[serde(default)]
    pub layers: Option<Vec<LayerSpec>>,
    #[serde(default)]
    pub loss: Option<LossKind>,

    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_precision")]
    pub precision: DType,
    #[serde(default = "d_variant")]
    pub variant: Variant,

    #[serde(default)]
    pub train_images: Option<PathBuf>,
    #[serde(default)]
    pub train_labels: Option<PathBuf>,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,

    /// Denoise: clean PGM images to train on (synthetic scenes when absent).
    #[serde(default)]
    pub clean_images: Vec<PathBuf>,
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    /// Denoise: number of synthetic scenes and their side length.
    #[serde(default)]
    pub synth_count: Option<usize>,
    #[serde(default)]
    pub synth_size: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train_config().validate()?;
        if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be non-negative, got {}", cfg.sigma)));
        }
        Ok(cfg)
    }

    /// Reads `path`; relative data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut cfg.train_images,
            &mut cfg.train_labels,
            &mut cfg.test_images,
            &mut cfg.test_labels,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        cfg.clean_images.iter_mut().for_each(fix);
        Ok(cfg)
    }

    /// The network described by `preset` and explicit overrides.
    pub fn network_spec(&self, default_preset: &str) -> Result<NetworkSpec> {
        let explicit = self.input.is_some() && self.layers.is_some() && self.loss.is_some();
        let mut spec = match (&self.preset, explicit) {
            (Some(p), _) => NetworkSpec::preset(p)?,
            (None, true) => NetworkSpec {
                input: [1, 1, 1],
                layers: Vec::new(),
                loss: LossKind::SoftmaxCrossEntropy,
                seed: 0,
            },
            (None, false) if self.input.is_none() && self.layers.is_none() && self.loss.is_none() => {
                NetworkSpec::preset(default_preset)?
            }
            (None, false) => {
                return Err(Error::Config(
                    "without a preset, input, layers and loss must all be given".into(),
                ))
            }
        };
        if let Some(i) = self.input {
            spec.input = i;
        }
        if let Some(l) = &self.layers {
            spec.layers = l.clone();
        }
        if let Some(l) = self.loss {
            spec.loss = l;
        }
        spec.seed = self.seed;
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            precision: self.precision,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_train_config() {
        let c = RunConfig::default();
        assert_eq!(c.train_config(), TrainConfig::default());
        assert_eq!(c.variant, Variant::Imp6);
        assert_eq!(c.network_spec("scale1-analog").unwrap().layers.len(), 7);
    }

    #[test]
    fn unknown_keys_fail() {
        let e = RunConfig::from_json(r#"{"learning_rat": 0.1}"#).unwrap_err();
        assert!(e.to_string().contains("learning_rat"), "{e}");
    }

    #[test]
    fn explicit_network_and_overrides() {
        let c = RunConfig::from_json(
            r#"{"input": [8, 8, 1], "layers": [{"type": "conv", "kernel": [3, 3], "maps": 2, "activation": "relu"},
                {"type": "full", "units": 3}], "loss": "softmax-cross-entropy", "seed": 9, "precision": "f64"}"#,
        )
        .unwrap();
        let s = c.network_spec("scale1-analog").unwrap();
        assert_eq!(s.input, [8, 8, 1]);
        assert_eq!(s.seed, 9);
        assert_eq!(c.precision, DType::F64);
        assert!(RunConfig::from_json(r#"{"input": [8, 8, 1]}"#).unwrap().network_spec("x").is_err());
    }

    #[test]
    fn invalid_training_values_fail() {
        assert!(RunConfig::from_json(r#"{"batch_size": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"sigma": -1}"#).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let e = RunConfig::load(Path::new("/nonexistent/run.json")).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/run.json"));
    }
}
