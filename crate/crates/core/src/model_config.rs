use serde::{Deserialize, Serialize};

use crate::error::{HidError, Result};

/// Conditional encoder shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Base channel width C; stage widths double up to 4C.
    pub width: usize,
    pub stages: usize,
    pub window: usize,
    pub heads: usize,
    pub blocks_per_stage: usize,
    /// Hidden width of the feed-forward part, as a multiple of the stage width.
    pub ffn_expansion: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            width: 32,
            stages: 3,
            window: 4,
            heads: 4,
            blocks_per_stage: 1,
            ffn_expansion: 2,
        }
    }
}

impl EncoderConfig {
    /// Channel count of stage `s` (1-based).
    pub fn stage_channels(&self, stage: usize) -> usize {
        (self.width << (stage - 1).min(2)).min(4 * self.width)
    }

    /// Spatial divisor of stage `s` relative to the input.
    pub fn stage_scale(&self, stage: usize) -> usize {
        1 << (stage - 1)
    }
}

/// Invertible decoder shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// Number of invertible conditional blocks.
    pub blocks: usize,
    /// Soft-clamp bound on the affine log-scale.
    pub clamp: f64,
    /// Hidden width of each transfer block.
    pub transfer_width: usize,
    /// Channel-attention bottleneck reduction ratio.
    pub attention_reduction: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            blocks: 9,
            clamp: 2.0,
            transfer_width: 32,
            attention_reduction: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub bands: usize,
    pub encoder: EncoderConfig,
    pub flow: FlowConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            bands: 31,
            encoder: EncoderConfig::default(),
            flow: FlowConfig::default(),
        }
    }
}

pub const MAX_FLOW_BLOCKS: usize = 16;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(HidError::Config(msg));
        let (e, f) = (&self.encoder, &self.flow);
        if self.bands == 0 {
            return fail("bands must be positive".into());
        }
        if !(1..=MAX_FLOW_BLOCKS).contains(&f.blocks) {
            return fail(format!(
                "flow.blocks must lie in 1..={MAX_FLOW_BLOCKS}, got {}",
                f.blocks
            ));
        }
        if !(f.clamp > 0.0 && f.clamp.is_finite()) {
            return fail(format!("flow.clamp must be positive, got {}", f.clamp));
        }
        if f.transfer_width < 2 || f.transfer_width % 2 != 0 {
            return fail(format!(
                "flow.transfer_width must be even and at least 2, got {}",
                f.transfer_width
            ));
        }
        if f.attention_reduction == 0 {
            return fail("flow.attention_reduction must be positive".into());
        }
        if e.width < 2 || e.width % 2 != 0 {
            return fail(format!(
                "encoder.width must be even and at least 2, got {}",
                e.width
            ));
        }
        if e.stages == 0 || e.window == 0 || e.blocks_per_stage == 0 || e.ffn_expansion == 0 {
            return fail(
                "encoder stages, window, blocks_per_stage and ffn_expansion must be positive"
                    .into(),
            );
        }
        if e.heads == 0 || e.width % e.heads != 0 {
            return fail(format!(
                "encoder.heads ({}) must divide encoder.width ({})",
                e.heads, e.width
            ));
        }
        Ok(())
    }

    /// Checks that an `height × width` input fits the stage/window layout.
    pub fn check_spatial(&self, height: usize, width: usize) -> Result<()> {
        let e = &self.encoder;
        for stage in 1..=e.stages {
            let scale = e.stage_scale(stage);
            for (extent, what) in [(height, "height"), (width, "width")] {
                if extent % scale != 0 {
                    return Err(HidError::Divisibility {
                        stage,
                        extent,
                        divisor: scale,
                        what,
                    });
                }
                if !(extent / scale).is_multiple_of(e.window) {
                    return Err(HidError::Divisibility {
                        stage,
                        extent: extent / scale,
                        divisor: e.window,
                        what: "window size",
                    });
                }
            }
        }
        Ok(())
    }
}
