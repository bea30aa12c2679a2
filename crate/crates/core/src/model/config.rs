use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strides of the four pyramid levels P2..P5 relative to the input.
pub const LEVEL_STRIDES: [usize; 4] = [4, 8, 16, 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneVariant {
    /// One strided conv per stage, a handful of channels. Desk-scale only.
    Tiny,
    /// Basic residual blocks, [2, 2, 2, 2].
    Resnet18Like,
    /// Bottleneck residual blocks, [3, 4, 6, 3].
    Resnet50Like,
}

impl BackboneVariant {
    /// Channel counts of the conv2..conv5 stage outputs.
    pub fn stage_channels(self) -> [usize; 4] {
        match self {
            BackboneVariant::Tiny => [8, 16, 32, 32],
            BackboneVariant::Resnet18Like => [64, 128, 256, 512],
            BackboneVariant::Resnet50Like => [256, 512, 1024, 2048],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VaBounding {
    Tanh,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone_variant: BackboneVariant,
    pub pyramid_channels: usize,
    pub num_expressions: usize,
    pub num_aus: usize,
    /// (height, width) in pixels.
    pub input_size: (usize, usize),
    pub va_bounding: VaBounding,
    /// Optional 3×3 conv on each fused level. Off by default.
    pub fusion_smoothing: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone_variant: BackboneVariant::Resnet18Like,
            pyramid_channels: 256,
            num_expressions: 7,
            num_aus: 12,
            input_size: (112, 112),
            va_bounding: VaBounding::Tanh,
            fusion_smoothing: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration used by unit tests and the synthetic pipeline.
    pub fn tiny(pyramid_channels: usize, input: usize) -> Self {
        Self {
            backbone_variant: BackboneVariant::Tiny,
            pyramid_channels,
            input_size: (input, input),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        // Strides 4..16 must be exact; the stride-32 level rounds up.
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::InputShape(format!(
                "input size {h}x{w} must be a positive multiple of 16"
            )));
        }
        if self.num_expressions < 2 {
            return Err(Error::Validation("num_expressions must be at least 2".into()));
        }
        if self.num_aus < 1 {
            return Err(Error::Validation("num_aus must be at least 1".into()));
        }
        if self.pyramid_channels < 1 {
            return Err(Error::Validation("pyramid_channels must be at least 1".into()));
        }
        Ok(())
    }

    /// Spatial (height, width) of each pyramid level.
    pub fn level_sizes(&self) -> [(usize, usize); 4] {
        let (h, w) = self.input_size;
        LEVEL_STRIDES.map(|s| (h.div_ceil(s), w.div_ceil(s)))
    }

    pub fn concat_len(&self) -> usize {
        4 * self.pyramid_channels
    }
}
