//! Pipeline configuration, loaded from JSON with every field optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::FlipMap;
use crate::error::{Error, Result};
use crate::geometry::ReferenceTemplate;
use crate::head::{parse_strategy, BackboneShape, CostModelConfig, StrategySpec};
use crate::heatmap::{Amplitude, Decoder, GaussianParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TtaMode {
    /// Decode both orientations, average the coordinates.
    #[default]
    Average,
    /// Mirror the flipped stack back, average heatmaps, decode once.
    StackHeatmaps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub input_size: usize,
    pub heatmap_size: usize,
    /// JSON [`ReferenceTemplate`]; defaults to the built-in one scaled to
    /// `input_size`.
    pub template: Option<PathBuf>,
    pub sigma: f64,
    pub amplitude: Amplitude,
    pub decoder: Decoder,
    pub strategy: String,
    pub channels: usize,
    /// Defaults to `320 × (input_size / 32)²`.
    pub backbone: Option<BackboneShape>,
    pub cost: CostModelConfig,
    pub seed: u64,
    pub tta: bool,
    pub tta_mode: TtaMode,
    pub num_landmarks: usize,
    /// Required for flip TTA unless `num_landmarks` is 5.
    pub flip_map: Option<PathBuf>,
    /// `detector_order[j]` is the detector point used for template point `j`.
    pub detector_order: [usize; 5],
    pub max_threshold: f64,
    pub ced_steps: usize,
    /// Worker threads; 0 uses one per core.
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input_size: 192,
            heatmap_size: 96,
            template: None,
            sigma: 1.5,
            amplitude: Amplitude::PeakOne,
            decoder: Decoder::default(),
            strategy: "DDDD".into(),
            channels: 256,
            backbone: None,
            cost: CostModelConfig::default(),
            seed: 0,
            tta: true,
            tta_mode: TtaMode::Average,
            num_landmarks: 106,
            flip_map: None,
            detector_order: [0, 1, 2, 3, 4],
            max_threshold: crate::eval::DEFAULT_MAX_THRESHOLD,
            ced_steps: crate::eval::DEFAULT_CED_STEPS,
            jobs: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Input pixels per heatmap pixel.
    pub fn stride(&self) -> Result<usize> {
        if self.heatmap_size == 0 || self.input_size == 0 || self.input_size % self.heatmap_size != 0 {
            return Err(Error::InvalidConfig(format!(
                "input size {} is not a positive integer multiple of heatmap size {}",
                self.input_size, self.heatmap_size
            )));
        }
        Ok(self.input_size / self.heatmap_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.stride()?;
        self.gaussian()?;
        self.cost.validate()?;
        if self.num_landmarks == 0 {
            return Err(Error::InvalidConfig("num_landmarks must be positive".into()));
        }
        if self.ced_steps < 2 {
            return Err(Error::InvalidConfig(format!("ced_steps must be >= 2, got {}", self.ced_steps)));
        }
        if !(self.max_threshold > 0.0) {
            return Err(Error::InvalidConfig("max_threshold must be positive".into()));
        }
        let mut seen = [false; 5];
        for &i in &self.detector_order {
            if i >= 5 || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidConfig(format!(
                    "detector_order {:?} is not a permutation of 0..5",
                    self.detector_order
                )));
            }
        }
        Ok(())
    }

    pub fn gaussian(&self) -> Result<GaussianParams> {
        GaussianParams::new(self.sigma, self.amplitude)
    }

    pub fn reference_template(&self) -> Result<ReferenceTemplate> {
        match &self.template {
            Some(p) => ReferenceTemplate::load(p),
            None => Ok(ReferenceTemplate::for_size(self.input_size)),
        }
    }

    pub fn backbone_shape(&self) -> BackboneShape {
        self.backbone.unwrap_or(BackboneShape {
            channels: 320,
            height: (self.input_size / 32).max(1),
            width: (self.input_size / 32).max(1),
        })
    }

    pub fn strategy_spec(&self) -> Result<StrategySpec> {
        Ok(parse_strategy(&self.strategy)?
            .with_channels(self.channels)?
            .with_backbone(self.backbone_shape()))
    }

    pub fn load_flip_map(&self) -> Result<FlipMap> {
        let map = match &self.flip_map {
            Some(p) => FlipMap::load(p)?,
            None if self.num_landmarks == 5 => FlipMap::five_point(),
            None => {
                return Err(Error::InvalidConfig(format!(
                    "a flip map file is needed for {} landmarks",
                    self.num_landmarks
                )))
            }
        };
        crate::geometry::check_counts(self.num_landmarks, map.len())?;
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.stride().unwrap(), 2);
        assert_eq!(c.backbone_shape(), BackboneShape::default());
        assert_eq!(c.strategy_spec().unwrap().output_hw(), (96, 96));
    }

    #[test]
    fn stride_must_be_integral() {
        let c = PipelineConfig {
            heatmap_size: 100,
            ..PipelineConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"tta": false, "decoder": {"kind": "argmax"}}"#).unwrap();
        assert!(!c.tta);
        assert_eq!(c.decoder, Decoder::Argmax);
        assert_eq!(c.input_size, 192);
    }

    #[test]
    fn detector_order_must_be_permutation() {
        let c = PipelineConfig {
            detector_order: [0, 1, 1, 3, 4],
            ..PipelineConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn flip_map_needed_beyond_five_points() {
        assert!(PipelineConfig::default().load_flip_map().is_err());
        let five = PipelineConfig {
            num_landmarks: 5,
            ..PipelineConfig::default()
        };
        assert_eq!(five.load_flip_map().unwrap(), FlipMap::five_point());
    }
}
