use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gaitcontour::contour_pose::{ExtractMode, ExtractOptions};
use gaitcontour::evaluation::EvalOptions;
use gaitcontour::features::{AugmentConfig, ChannelSpec};
use gaitcontour::geometry::ApproxConfig;
use gaitcontour::model::ModelConfig;
use gaitcontour::training::{TrainConfig, TripletConfig};
use serde::{Deserialize, Serialize};

/// Directories of `.cpz` sequences. Relative paths resolve against the
/// working directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub gallery: Option<PathBuf>,
    pub probe: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractSettings {
    /// Emit a uniform contour ring of this many points instead of Contour-Pose.
    pub uniform_points: Option<usize>,
    /// Shuffle contour points within each keypoint group.
    pub shuffle: bool,
    /// Shuffle seed; sequence `i` of a batch uses `seed + i`.
    pub seed: u64,
    pub normalize: bool,
}

impl Default for ExtractSettings {
    fn default() -> Self {
        ExtractSettings {
            uniform_points: None,
            shuffle: false,
            seed: 0,
            normalize: true,
        }
    }
}

/// One JSON document describing a whole experiment. Every section is
/// optional and falls back to its defaults; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataPaths,
    pub approx: ApproxConfig,
    pub extract: ExtractSettings,
    pub channels: ChannelSpec,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub triplet: TripletConfig,
    pub eval: EvalOptions,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()
            .with_context(|| format!("validating config {}", path.display()))?;
        Ok(cfg)
    }

    /// The config at `path`, or the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.approx.validate()?;
        self.train_config().validate()?;
        if self.extract.uniform_points == Some(0) {
            anyhow::bail!("extract.uniform_points must be positive");
        }
        if self.eval.ranks.contains(&0) {
            anyhow::bail!("eval.ranks must be positive");
        }
        if self.eval.far_points.iter().any(|f| !(0.0..=1.0).contains(f)) {
            anyhow::bail!("eval.far_points must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            channels: self.channels.clone(),
            augment: self.augment.clone(),
            triplet: self.triplet.clone(),
        }
    }

    /// Extraction options for sequence `index` of a batch.
    pub fn extract_options(&self, index: usize) -> ExtractOptions {
        ExtractOptions {
            approx: self.approx.clone(),
            mode: self
                .extract
                .uniform_points
                .map_or(ExtractMode::ContourPose, ExtractMode::Uniform),
            shuffle_seed: self
                .extract
                .shuffle
                .then(|| self.extract.seed.wrapping_add(index as u64)),
            normalize: self.extract.normalize,
        }
    }

    /// Seeds model initialization, batch sampling and augmentation together.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.init_seed = seed;
        self.triplet.seed = seed;
        self.augment.rng_seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"modle": {}}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"triplet": {"margn": 0.1}}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = ExperimentConfig::default();
        cfg.set_seed(9);
        cfg.extract.shuffle = true;
        cfg.data.train = Some("train".into());
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn batch_shuffle_seeds_differ_per_sequence() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.extract_options(3).shuffle_seed, None);
        cfg.extract.shuffle = true;
        cfg.extract.seed = 10;
        assert_eq!(cfg.extract_options(3).shuffle_seed, Some(13));
    }
}
