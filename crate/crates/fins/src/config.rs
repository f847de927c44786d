//! TOML configuration covering the whole pipeline.
//!
//! Every field has a default, so an empty file (or no file at all) is the
//! reference setup. Unknown keys are rejected rather than ignored; a typo
//! in an experiment config should fail loudly, not silently run the
//! defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::loss::{BatchSizes, LossWeights};
use crate::optim::{KfacConfig, LionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: usize,
}

impl Default for NetConfig {
    fn default() -> NetConfig {
        NetConfig { hidden: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lion: LionConfig,
    pub kfac: KfacConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    /// Perturbation scale for the noisy and band sets, in normalized
    /// units.
    pub noise_sigma: f64,
    /// Normal-direction offsets for the off-surface set.
    pub offsets: Vec<f64>,
    pub batch_surface: usize,
    pub batch_noisy: usize,
    pub batch_band: usize,
    pub batch_uniform: usize,
    pub batch_off_surface: usize,
    pub warmup_fraction: f64,
    /// Points below this confidence are dropped before training.
    pub confidence_threshold: f64,
    /// Empty space kept around the cloud inside the unit cube.
    pub margin: f64,
    /// Save an intermediate model every this many epochs; 0 disables.
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 500,
            seed: 42,
            noise_sigma: 0.01,
            offsets: vec![-0.1, -0.05, 0.05, 0.1],
            batch_surface: 2048,
            batch_noisy: 2048,
            batch_band: 1024,
            batch_uniform: 1024,
            batch_off_surface: 2048,
            warmup_fraction: 0.6,
            confidence_threshold: 0.5,
            margin: 0.1,
            snapshot_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn batch_sizes(&self) -> BatchSizes {
        BatchSizes {
            surface: self.batch_surface,
            noisy: self.batch_noisy,
            band: self.batch_band,
            uniform: self.batch_uniform,
            off_surface: self.batch_off_surface,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train epochs must be >= 1".into()));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::Config(format!(
                "train noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.offsets.iter().any(|o| !o.is_finite() || *o == 0.0) {
            return Err(Error::Config(
                "train offsets must be finite and nonzero".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) && self.warmup_fraction != 1.0 {
            return Err(Error::Config(format!(
                "train warmup_fraction must lie in [0, 1], got {}",
                self.warmup_fraction
            )));
        }
        if !(0.0..0.5).contains(&self.margin) {
            return Err(Error::Config(format!(
                "train margin must lie in [0, 0.5), got {}",
                self.margin
            )));
        }
        if !self.confidence_threshold.is_finite() {
            return Err(Error::Config("train confidence_threshold must be finite".into()));
        }
        if self.batch_surface == 0 {
            return Err(Error::Config(
                "train batch_surface must be >= 1 (every term draws on it)".into(),
            ));
        }
        Ok(())
    }
}

/// Top-level configuration, one section per concern.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub encoder: EncoderConfig,
    pub net: NetConfig,
    pub loss: LossWeights,
    pub optim: OptimConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.net.hidden == 0 {
            return Err(Error::Config("net hidden must be >= 1".into()));
        }
        self.loss.validate()?;
        self.optim.lion.validate()?;
        self.optim.kfac.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Config> {
        let config: Config = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].lines().count()).unwrap_or(0);
            Error::parse(origin, line, e.message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default_config() {
        let config = Config::from_toml_str("", Path::new("empty.toml")).unwrap();
        assert_eq!(config, Config::default());
        assert_eq!(config.train.epochs, 500);
        assert_eq!(config.net.hidden, 64);
        assert_eq!(config.encoder.levels, 10);
        assert_eq!(config.optim.kfac.refresh_every, 10);
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let text = r#"
[train]
epochs = 50
seed = 7

[loss]
rgb = 0.0

[optim.lion]
lr_encoder = 1e-3
"#;
        let config = Config::from_toml_str(text, Path::new("t.toml")).unwrap();
        assert_eq!(config.train.epochs, 50);
        assert_eq!(config.train.seed, 7);
        assert_eq!(config.train.batch_surface, 4096);
        assert_eq!(config.loss.rgb, 0.0);
        assert_eq!(config.loss.sdf, 1.0);
        assert_eq!(config.optim.lion.lr_encoder, 1e-3);
        assert_eq!(config.optim.lion.lr_heads, 1e-4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Config::from_toml_str("[train]\nepochz = 3\n", Path::new("t.toml"))
            .unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        let err =
            Config::from_toml_str("[train]\nepochs = 0\n", Path::new("t.toml")).unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
        let err = Config::from_toml_str("[encoder]\ntable_size = 100\n", Path::new("t.toml"))
            .unwrap_err();
        assert!(err.to_string().contains("table_size"), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        let mut config = Config::default();
        config.train.epochs = 123;
        config.loss.normal = 0.25;
        let text = config.to_toml_string();
        let back = Config::from_toml_str(&text, Path::new("rt.toml")).unwrap();
        assert_eq!(back, config);
    }
}
