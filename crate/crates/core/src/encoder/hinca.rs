//! Half-instance-normalization block with channel attention, used as the
//! information transfer layer that turns an upsampled condition map into
//! the affine scale and shift of one invertible block.

use hidflow_tensor::{Real, Var};

use crate::error::{HidError, Result};
use crate::layers::{Affine, Conv, Initializer, Linear, Role};
use crate::params::Bound;

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct HinCaBlock {
    in_channels: usize,
    hidden: usize,
    out_channels: usize,
    conv1: Conv,
    half_norm: Affine,
    conv2: Conv,
    squeeze: Linear,
    excite: Linear,
    shortcut: Conv,
}

/// Intermediate values exposed for inspection.
pub struct HinCaTrace<'t, T> {
    pub output: Var<'t, T>,
    /// Channel-attention gate, one value per output channel.
    pub gate: Var<'t, T>,
    /// First half of the first conv's output after instance normalization,
    /// before the learned affine.
    pub normalized_half: Var<'t, T>,
}

impl HinCaBlock {
    pub fn new<T: Real>(
        init: &mut Initializer<'_, T>,
        name: &str,
        in_channels: usize,
        hidden: usize,
        out_channels: usize,
        reduction: usize,
    ) -> Result<Self> {
        if !in_channels.is_multiple_of(2) || !hidden.is_multiple_of(2) {
            return Err(HidError::Config(format!(
                "transfer block needs even channel counts, got input {in_channels} and hidden {hidden}"
            )));
        }
        let bottleneck = (out_channels / reduction).max(1);
        Ok(HinCaBlock {
            in_channels,
            hidden,
            out_channels,
            conv1: Conv::new(
                init,
                &format!("{name}.conv1"),
                in_channels,
                hidden,
                3,
                1,
                Role::Hidden,
            )?,
            half_norm: Affine::new(init, &format!("{name}.half_norm"), hidden / 2)?,
            conv2: Conv::new(
                init,
                &format!("{name}.conv2"),
                hidden,
                out_channels,
                3,
                1,
                Role::Output,
            )?,
            squeeze: Linear::new(
                init,
                &format!("{name}.ca.squeeze"),
                out_channels,
                bottleneck,
                Role::Hidden,
            )?,
            excite: Linear::new(
                init,
                &format!("{name}.ca.excite"),
                bottleneck,
                out_channels,
                Role::Hidden,
            )?,
            shortcut: Conv::new(
                init,
                &format!("{name}.shortcut"),
                in_channels,
                out_channels,
                1,
                1,
                Role::Output,
            )?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, t: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.trace(p, t)?.output)
    }

    pub fn trace<'t, T: Real>(&self, p: &Bound<'t, T>, t: Var<'t, T>) -> Result<HinCaTrace<'t, T>> {
        let shape = t.shape();
        let [c, h, w] = shape[..] else {
            return Err(HidError::Data(format!(
                "transfer block expects C×H×W, got {shape:?}"
            )));
        };
        if c % 2 != 0 {
            return Err(HidError::Data(format!(
                "transfer block input needs an even channel count, got {c}"
            )));
        }
        if c != self.in_channels {
            return Err(HidError::Data(format!(
                "transfer block expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let half = self.hidden / 2;
        let a = self.conv1.forward(p, t)?;
        let normalized_half = a.slice_axis(0, 0, half)?.instance_norm(INSTANCE_NORM_EPS)?;
        let merged = Var::concat(
            &[
                self.half_norm.forward_channels(p, normalized_half)?,
                a.slice_axis(0, half, half)?,
            ],
            0,
        )?
        .silu()?;
        let body = self.conv2.forward(p, merged)?;

        let pooled = body
            .reshape(&[self.out_channels, h * w])?
            .sum_axis(1)?
            .mul_scalar(1.0 / (h * w) as f64)?
            .reshape(&[1, self.out_channels])?;
        let gate = self
            .excite
            .forward(p, self.squeeze.forward(p, pooled)?.silu()?)?
            .sigmoid()?
            .reshape(&[self.out_channels])?;
        let output = body
            .scale_channels(gate)?
            .add(self.shortcut.forward(p, t)?)?;
        Ok(HinCaTrace {
            output,
            gate,
            normalized_half,
        })
    }
}
