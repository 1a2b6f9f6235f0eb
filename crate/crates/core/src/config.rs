use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and objective hyperparameters. Defaults are the toy-scale
/// configuration used throughout the synthetic experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    /// Hidden width D of all encoders.
    pub hidden_dim: usize,
    /// Width of the contrastive projection space.
    pub proj_dim: usize,
    pub vision_layers: usize,
    pub text_layers: usize,
    pub multimodal_layers: usize,
    pub heads: usize,
    /// Set from the tokenizer once a vocabulary exists.
    pub vocab_size: usize,
    pub max_text_len: usize,
    pub mlm_mask_ratio: f64,
    pub temperature_init: f64,
    pub temporal_layers: usize,
    /// Frames per step in second-stage temporal training.
    pub t_train_temporal: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 32,
            patch_size: 8,
            channels: 3,
            hidden_dim: 64,
            proj_dim: 32,
            vision_layers: 2,
            text_layers: 2,
            multimodal_layers: 2,
            heads: 4,
            vocab_size: 0,
            max_text_len: 16,
            mlm_mask_ratio: 0.5,
            temperature_init: 0.07,
            temporal_layers: 2,
            t_train_temporal: 4,
        }
    }
}

impl ModelConfig {
    /// A deliberately tiny configuration for finite-difference checks.
    pub fn tiny() -> Self {
        ModelConfig {
            image_size: 16,
            patch_size: 8,
            channels: 3,
            hidden_dim: 8,
            proj_dim: 4,
            vision_layers: 1,
            text_layers: 1,
            multimodal_layers: 1,
            heads: 2,
            vocab_size: 0,
            max_text_len: 8,
            mlm_mask_ratio: 0.5,
            temperature_init: 0.07,
            temporal_layers: 1,
            t_train_temporal: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch_size == 0 {
            return Err(Error::Config("image_size and patch_size must be positive".into()));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.heads == 0 || self.hidden_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if !(self.mlm_mask_ratio > 0.0 && self.mlm_mask_ratio < 1.0) {
            return Err(Error::Config(format!(
                "mlm_mask_ratio must lie in (0, 1), got {}",
                self.mlm_mask_ratio
            )));
        }
        if self.temperature_init <= 0.0 {
            return Err(Error::Config("temperature_init must be positive".into()));
        }
        if self.max_text_len < 2 {
            return Err(Error::Config("max_text_len must be at least 2".into()));
        }
        if self.t_train_temporal == 0 {
            return Err(Error::Config("t_train_temporal must be positive".into()));
        }
        Ok(())
    }

    /// Patches per side of a frame.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Vision sequence length: patches plus CLS.
    pub fn vision_len(&self) -> usize {
        self.grid() * self.grid() + 1
    }

    /// Flattened pixel count of one patch.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let mut c = ModelConfig::default();
        c.vocab_size = 16;
        c.validate().unwrap();
        assert_eq!(c.vision_len(), 17);
        assert_eq!(c.patch_dim(), 192);
    }

    #[test]
    fn rejects_indivisible_patch() {
        let c = ModelConfig {
            image_size: 30,
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_mask_ratio() {
        let c = ModelConfig {
            mlm_mask_ratio: 1.0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
