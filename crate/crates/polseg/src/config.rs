//! Layered run configuration: built-in defaults, overridden by a TOML file,
//! overridden by CLI flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::synth::SynthConfig;
use crate::decoder::DecoderConfig;
use crate::domain::Direction;
use crate::encoder::EncoderConfig;
use crate::engine::{DiffusionParams, TrainConfig, TrainSetup};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::EditGranularity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// Include the geodetic features (latitude/longitude/altitude) on top of
    /// the six Keplerian elements.
    pub geodetic: bool,
    pub split_ratio: f64,
    pub split_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            geodetic: true,
            split_ratio: 0.8,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskingSection {
    pub enabled: bool,
    pub boundary_window: usize,
}

impl Default for MaskingSection {
    fn default() -> Self {
        MaskingSection {
            enabled: true,
            boundary_window: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub early_stop_train_acc: f64,
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 4,
            lr: 5e-4,
            weight_decay: 1e-5,
            lr_decay: 0.0,
            max_iters: 2000,
            seed: 0,
            eval_every: 100,
            early_stop_train_acc: 0.99,
            checkpoint_every: 0,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub taus: Vec<f64>,
    pub edit_granularity: EditGranularity,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            taus: vec![0.10, 0.25, 0.50],
            edit_granularity: EditGranularity::Segments,
            seed: 0,
        }
    }
}

/// Full run configuration; every section has defaults so partial files are
/// fine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSection,
    pub synth: SynthConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub diffusion: DiffusionParams,
    pub masking: MaskingSection,
    pub loss: LossWeights,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::IoPath {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_file(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Toml(e.to_string()))
    }

    /// Stable hash of the resolved configuration (for run metadata).
    pub fn hash(&self) -> Result<String> {
        let canon = serde_json::to_vec(self)?;
        let digest = Sha256::digest(&canon);
        Ok(hex_string(&digest[..8]))
    }

    pub fn features(&self) -> Vec<String> {
        crate::data::feature_names(self.data.geodetic)
    }

    /// Assemble the engine-facing setup for one direction.
    pub fn train_setup(&self, direction: Direction, use_decoder: bool) -> TrainSetup {
        TrainSetup {
            encoder: self.encoder,
            decoder: self.decoder,
            diffusion: self.diffusion,
            loss: self.loss,
            train: TrainConfig {
                batch_size: self.train.batch_size,
                lr: self.train.lr,
                weight_decay: self.train.weight_decay,
                lr_decay: self.train.lr_decay,
                max_iters: self.train.max_iters,
                seed: self.train.seed,
                direction,
                use_decoder,
                mask_enabled: self.masking.enabled,
                boundary_window: self.masking.boundary_window,
                eval_every: self.train.eval_every,
                early_stop_train_acc: self.train.early_stop_train_acc,
                checkpoint_every: self.train.checkpoint_every,
                checkpoint_dir: None,
                log_every: self.train.log_every,
            },
            features: self.features(),
        }
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_contract() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.diffusion.steps, 1000);
        assert_eq!(cfg.diffusion.infer_steps, 25);
        assert_eq!(cfg.diffusion.beta_start, 1e-4);
        assert_eq!(cfg.diffusion.beta_end, 0.02);
        assert_eq!(cfg.diffusion.eta, 0.0);
        assert_eq!(cfg.encoder.n_layers, 9);
        assert_eq!(cfg.encoder.hidden, 64);
        assert_eq!(cfg.encoder.kernel, 12);
        assert_eq!(cfg.decoder.n_layers, 3);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.lr, 5e-4);
        assert_eq!(cfg.train.weight_decay, 1e-5);
        assert_eq!(cfg.loss.w_smo, 0.15);
        assert_eq!(cfg.loss.smooth_clamp, 16.0);
        assert_eq!(cfg.loss.boundary_sigma, 2.0);
        assert_eq!(cfg.masking.boundary_window, 2);
        assert_eq!(cfg.data.split_ratio, 0.8);
    }

    #[test]
    fn partial_toml_overrides() {
        let text = r#"
[diffusion]
steps = 500
infer_steps = 10

[loss]
w_smo = 0.3
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.diffusion.steps, 500);
        assert_eq!(cfg.diffusion.infer_steps, 10);
        assert_eq!(cfg.diffusion.beta_end, 0.02); // untouched default
        assert_eq!(cfg.loss.w_smo, 0.3);
        assert_eq!(cfg.loss.w_ce, 1.0);
    }

    #[test]
    fn toml_round_trip_and_hash_stability() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
        let mut other = cfg.clone();
        other.train.seed = 99;
        assert_ne!(cfg.hash().unwrap(), other.hash().unwrap());
    }
}
