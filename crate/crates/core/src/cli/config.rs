//! Line-based `section.key = value` run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::denoiser::{ModelConfig, TrainConfig};
use crate::diffusion::{linear_schedule, DiffusionError, NoiseSchedule};
use crate::evaluate::QualityWeights;
use crate::matcher::MatcherConfig;
use crate::preprocess::{PreprocessConfig, Variant};
use crate::synthcorpus::WarpConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("key `{key}`: cannot parse {value:?}")]
    BadValue { key: String, value: String },
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

/// Every accepted key with its default.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("run.seed", "0"),
    ("corpus.n_ids", "50"),
    ("corpus.n_impr", "4"),
    ("corpus.side", "64"),
    ("corpus.max_rotation_deg", "10"),
    ("corpus.max_translation_frac", "0.05"),
    ("corpus.contrast_jitter", "0.2"),
    ("corpus.noise_sigma", "0.05"),
    ("preprocess.variant", "fp"),
    ("preprocess.crop_mean_threshold", "0.75"),
    ("preprocess.ink_threshold", "0.5"),
    ("preprocess.min_quality", "40"),
    ("preprocess.output_side", "64"),
    ("diffusion.T", "1000"),
    ("diffusion.beta_start", "0.0001"),
    ("diffusion.beta_end", "0.02"),
    ("denoiser.init_features", "32"),
    ("denoiser.depth", "2"),
    ("denoiser.time_embed_dim", "128"),
    ("train.batch_size", "16"),
    ("train.steps", "1000"),
    ("train.learning_rate", "0.0001"),
    ("train.checkpoint_every", "0"),
    ("sample.count", "64"),
    ("impress.identities", "50"),
    ("impress.k", "4"),
    ("impress.d", "400"),
    ("matcher.max_pair_distance", "75"),
    ("matcher.distance_tolerance", "6"),
    ("matcher.angle_tolerance_deg", "11.25"),
    ("matcher.threshold", "40"),
    ("evaluate.omit_zero", "true"),
    ("evaluate.weight_coherence", "0.4"),
    ("evaluate.weight_band", "0.3"),
    ("evaluate.weight_contrast", "0.2"),
    ("evaluate.weight_minutiae", "0.1"),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    overrides: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut overrides = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| ConfigError::ParseError {
                    line: i + 1,
                    msg: format!("expected `section.key = value`, got {line:?}"),
                })?;
            let well_formed =
                matches!(key.split_once('.'), Some((s, k)) if !s.is_empty() && !k.is_empty());
            if !well_formed || value.is_empty() {
                return Err(ConfigError::ParseError {
                    line: i + 1,
                    msg: format!("expected `section.key = value`, got {line:?}"),
                });
            }
            if !DEFAULTS.iter().any(|(k, _)| *k == key) {
                return Err(ConfigError::UnknownKey {
                    line: i + 1,
                    key: key.to_string(),
                });
            }
            overrides.insert(key.to_string(), value.to_string());
        }
        Ok(Self { overrides })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        assert!(DEFAULTS.iter().any(|(k, _)| *k == key), "unknown key {key}");
        self.overrides.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> &str {
        self.overrides
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| {
                DEFAULTS
                    .iter()
                    .find(|(k, _)| *k == key)
                    .map(|(_, v)| *v)
                    .unwrap_or_else(|| panic!("unknown key {key}"))
            })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let value = self.raw(key);
        value.parse().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        })
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.get("run.seed")
    }

    pub fn warp(&self) -> Result<WarpConfig, ConfigError> {
        Ok(WarpConfig {
            max_rotation_deg: self.get("corpus.max_rotation_deg")?,
            max_translation_frac: self.get("corpus.max_translation_frac")?,
            contrast_jitter: self.get("corpus.contrast_jitter")?,
            noise_sigma: self.get("corpus.noise_sigma")?,
        })
    }

    pub fn quality_weights(&self) -> Result<QualityWeights, ConfigError> {
        Ok(QualityWeights {
            coherence: self.get("evaluate.weight_coherence")?,
            band: self.get("evaluate.weight_band")?,
            contrast: self.get("evaluate.weight_contrast")?,
            minutiae: self.get("evaluate.weight_minutiae")?,
        })
    }

    pub fn preprocess(&self) -> Result<PreprocessConfig, ConfigError> {
        let variant: &str = self.raw("preprocess.variant");
        Ok(PreprocessConfig {
            variant: variant
                .parse::<Variant>()
                .map_err(|_| ConfigError::BadValue {
                    key: "preprocess.variant".into(),
                    value: variant.into(),
                })?,
            crop_mean_threshold: self.get("preprocess.crop_mean_threshold")?,
            ink_threshold: self.get("preprocess.ink_threshold")?,
            min_quality: self.get("preprocess.min_quality")?,
            output_side: self.get("preprocess.output_side")?,
            weights: self.quality_weights()?,
        })
    }

    pub fn schedule(&self) -> Result<Result<NoiseSchedule, DiffusionError>, ConfigError> {
        Ok(linear_schedule(
            self.get("diffusion.T")?,
            self.get("diffusion.beta_start")?,
            self.get("diffusion.beta_end")?,
        ))
    }

    pub fn model(&self, side: usize) -> Result<ModelConfig, ConfigError> {
        Ok(ModelConfig {
            side,
            init_features: self.get("denoiser.init_features")?,
            depth: self.get("denoiser.depth")?,
            time_embed_dim: self.get("denoiser.time_embed_dim")?,
        })
    }

    pub fn train(&self, seed: u64) -> Result<TrainConfig, ConfigError> {
        Ok(TrainConfig {
            batch_size: self.get("train.batch_size")?,
            steps: self.get("train.steps")?,
            learning_rate: self.get("train.learning_rate")?,
            seed,
            checkpoint_every: self.get("train.checkpoint_every")?,
        })
    }

    pub fn matcher(&self) -> Result<MatcherConfig, ConfigError> {
        Ok(MatcherConfig {
            max_pair_distance: self.get("matcher.max_pair_distance")?,
            distance_tolerance: self.get("matcher.distance_tolerance")?,
            angle_tolerance: self.get::<f64>("matcher.angle_tolerance_deg")?.to_radians(),
            threshold: self.get("matcher.threshold")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_all_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.get::<usize>("diffusion.T").unwrap(), 1000);
        assert_eq!(c.matcher().unwrap(), MatcherConfig::default());
        assert_eq!(c.preprocess().unwrap(), PreprocessConfig::default());
        assert_eq!(c.quality_weights().unwrap(), QualityWeights::default());
        assert_eq!(c.warp().unwrap(), WarpConfig::default());
        assert_eq!(c.model(64).unwrap(), ModelConfig::default());
        assert_eq!(c.train(0).unwrap(), TrainConfig::default());
    }

    #[test]
    fn overrides_comments_and_duplicates() {
        let text = "# comment\n\ndiffusion.T = 1000\nmatcher.threshold = 12 # trailing\nmatcher.threshold=30\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.get::<usize>("diffusion.T").unwrap(), 1000);
        assert_eq!(c.matcher().unwrap().threshold, 30);
        let c = RunConfig::parse("diffusion.T = 50\npreprocess.variant = nocrop").unwrap();
        assert_eq!(c.get::<usize>("diffusion.T").unwrap(), 50);
        assert_eq!(c.preprocess().unwrap().variant, Variant::NoCrop);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            RunConfig::parse("foo"),
            Err(ConfigError::ParseError { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("\n= 3"),
            Err(ConfigError::ParseError { line: 2, .. })
        ));
        assert!(matches!(
            RunConfig::parse("nosection = 3"),
            Err(ConfigError::ParseError { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("train.speed = 3"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        let c = RunConfig::parse("train.steps = many").unwrap();
        assert!(matches!(c.train(0), Err(ConfigError::BadValue { .. })));
    }
}
