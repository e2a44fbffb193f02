//! Non-invertible conditional encoder: stride-2 convolution downsampling
//! interleaved with window-attention blocks. Emits one feature map per stage
//! and a low-resolution base image in the input band space.

mod attention;
mod hinca;

pub use attention::{map_to_windows, windows_to_map, WindowBlock};
pub use hinca::{HinCaBlock, HinCaTrace, INSTANCE_NORM_EPS};

use hidflow_tensor::{Real, Var};

use crate::error::{HidError, Result};
use crate::layers::{Conv, Initializer, Role};
use crate::model_config::ModelConfig;
use crate::params::Bound;

#[derive(Clone, Debug)]
struct Stage {
    down: Option<Conv>,
    blocks: Vec<WindowBlock>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    config: ModelConfig,
    embed: Conv,
    stages: Vec<Stage>,
    lowfreq: Conv,
}

pub struct EncoderOutput<'t, T> {
    /// Stage outputs, finest first. Stage `s` has spatial extent divided by
    /// `2^(s-1)`.
    pub stages: Vec<Var<'t, T>>,
    /// Band-space projection of the coarsest stage.
    pub lowfreq_base: Var<'t, T>,
}

/// Stride-2 3×3 convolution halving both spatial extents.
pub fn downsample<'t, T: Real>(conv: &Conv, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if let [_, h, w] = shape[..] {
        if h % 2 != 0 || w % 2 != 0 {
            return Err(HidError::Data(format!(
                "downsampling needs even extents, got {h}×{w}"
            )));
        }
    }
    conv.forward(p, x)
}

impl Encoder {
    pub fn new<T: Real>(init: &mut Initializer<'_, T>, config: &ModelConfig) -> Result<Self> {
        let e = &config.encoder;
        let embed = Conv::new(
            init,
            "encoder.embed",
            config.bands,
            e.width,
            3,
            1,
            Role::Hidden,
        )?;
        let mut stages = Vec::with_capacity(e.stages);
        for s in 1..=e.stages {
            let channels = e.stage_channels(s);
            let down = if s > 1 {
                let cin = e.stage_channels(s - 1);
                Some(Conv::new(
                    init,
                    &format!("encoder.stage{s}.down"),
                    cin,
                    channels,
                    3,
                    2,
                    Role::Hidden,
                )?)
            } else {
                None
            };
            let blocks = (0..e.blocks_per_stage)
                .map(|b| {
                    WindowBlock::new(
                        init,
                        &format!("encoder.stage{s}.block{b}"),
                        channels,
                        e.heads,
                        e.window,
                        e.ffn_expansion,
                    )
                })
                .collect::<Result<_>>()?;
            stages.push(Stage { down, blocks });
        }
        let lowfreq = Conv::new(
            init,
            "encoder.lowfreq",
            e.stage_channels(e.stages),
            config.bands,
            1,
            1,
            Role::Output,
        )?;
        Ok(Encoder {
            config: config.clone(),
            embed,
            stages,
            lowfreq,
        })
    }

    /// Encodes a `B×H×W` noisy cube.
    pub fn encode<'t, T: Real>(
        &self,
        p: &Bound<'t, T>,
        y: Var<'t, T>,
    ) -> Result<EncoderOutput<'t, T>> {
        let shape = y.shape();
        let [b, h, w] = shape[..] else {
            return Err(HidError::Data(format!(
                "encoder expects a B×H×W cube, got {shape:?}"
            )));
        };
        if b != self.config.bands {
            return Err(HidError::Data(format!(
                "model has {} bands, input has {b}",
                self.config.bands
            )));
        }
        self.config.check_spatial(h, w)?;
        let mut x = self.embed.forward(p, y)?;
        let mut outputs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            if let Some(down) = &stage.down {
                x = downsample(down, p, x)?;
            }
            for block in &stage.blocks {
                x = block.forward(p, x)?;
            }
            outputs.push(x);
        }
        let lowfreq_base = self.lowfreq.forward(p, x)?;
        Ok(EncoderOutput {
            stages: outputs,
            lowfreq_base,
        })
    }
}
