//! Window self-attention transformer block: pre-norm multi-head attention
//! inside non-overlapping `w×w` windows, then a pre-norm feed-forward with a
//! 3×3 depthwise convolution. The depthwise convolution also runs per
//! window, so no information crosses a window boundary inside a block.

use hidflow_tensor::{Real, Var};

use crate::error::{HidError, Result};
use crate::layers::{Affine, Initializer, Linear, Role};
use crate::params::{Bound, ParamId};

const LN_EPS: f64 = 1e-5;
const TO_WINDOWS: [usize; 5] = [1, 3, 2, 4, 0];
const FROM_WINDOWS: [usize; 5] = [4, 0, 2, 1, 3];

#[derive(Clone, Debug)]
pub struct WindowBlock {
    channels: usize,
    heads: usize,
    window: usize,
    hidden: usize,
    norm1: Affine,
    qkv: Linear,
    proj: Linear,
    norm2: Affine,
    fc1: Linear,
    dw_weight: ParamId,
    dw_bias: ParamId,
    fc2: Linear,
}

/// `C×H×W` map to `(windows·w²)×C` tokens, window-major.
pub fn map_to_windows<'t, T: Real>(x: Var<'t, T>, window: usize) -> Result<Var<'t, T>> {
    let [c, h, w] = three(&x.shape())?;
    check_window(h, w, window)?;
    let tokens = x
        .reshape(&[c, h / window, window, w / window, window])?
        .permute(&TO_WINDOWS)?
        .reshape(&[h * w, c])?;
    Ok(tokens)
}

/// Inverse of [`map_to_windows`].
pub fn windows_to_map<'t, T: Real>(
    tokens: Var<'t, T>,
    height: usize,
    width: usize,
    window: usize,
) -> Result<Var<'t, T>> {
    let c = tokens.shape()[1];
    Ok(tokens
        .reshape(&[height / window, width / window, window, window, c])?
        .permute(&FROM_WINDOWS)?
        .reshape(&[c, height, width])?)
}

fn three(shape: &[usize]) -> Result<[usize; 3]> {
    match *shape {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(HidError::Data(format!(
            "expected a C×H×W feature map, got {shape:?}"
        ))),
    }
}

fn check_window(h: usize, w: usize, window: usize) -> Result<()> {
    for (extent, what) in [(h, "height"), (w, "width")] {
        if window == 0 || extent % window != 0 {
            return Err(HidError::Divisibility {
                stage: 0,
                extent,
                divisor: window,
                what,
            });
        }
    }
    Ok(())
}

impl WindowBlock {
    pub fn new<T: Real>(
        init: &mut Initializer<'_, T>,
        name: &str,
        channels: usize,
        heads: usize,
        window: usize,
        expansion: usize,
    ) -> Result<Self> {
        let hidden = channels * expansion;
        Ok(WindowBlock {
            channels,
            heads,
            window,
            hidden,
            norm1: Affine::new(init, &format!("{name}.norm1"), channels)?,
            qkv: Linear::new(
                init,
                &format!("{name}.qkv"),
                channels,
                3 * channels,
                Role::Hidden,
            )?,
            proj: Linear::new(
                init,
                &format!("{name}.proj"),
                channels,
                channels,
                Role::Residual,
            )?,
            norm2: Affine::new(init, &format!("{name}.norm2"), channels)?,
            fc1: Linear::new(init, &format!("{name}.fc1"), channels, hidden, Role::Hidden)?,
            dw_weight: init.weight(
                &format!("{name}.dwconv.weight"),
                &[hidden, 3, 3],
                9,
                Role::Hidden,
            )?,
            dw_bias: init.bias(&format!("{name}.dwconv.bias"), hidden)?,
            fc2: Linear::new(
                init,
                &format!("{name}.fc2"),
                hidden,
                channels,
                Role::Residual,
            )?,
        })
    }

    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.forward_with_attention(p, x)?.0)
    }

    /// Forward pass that also returns the attention weights, shaped
    /// `(windows·heads) × w² × w²`.
    pub fn forward_with_attention<'t, T: Real>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let [c, h, w] = three(&x.shape())?;
        if c != self.channels {
            return Err(HidError::Data(format!(
                "window block expects {} channels, got {c}",
                self.channels
            )));
        }
        let win = self.window;
        let area = win * win;
        let windows = (h / win) * (w / win);
        let head_dim = c / self.heads;
        let tokens = map_to_windows(x, win)?;

        // Multi-head self-attention within each window.
        let normed = self
            .norm1
            .forward_last(p, tokens.layer_norm_last(LN_EPS)?)?;
        let qkv = self
            .qkv
            .forward(p, normed)?
            .reshape(&[windows, area, 3, self.heads, head_dim])?
            .permute(&[2, 0, 3, 1, 4])?
            .reshape(&[3, windows * self.heads, area, head_dim])?;
        let part = |i: usize| -> Result<Var<'t, T>> {
            Ok(qkv
                .slice_axis(0, i, 1)?
                .reshape(&[windows * self.heads, area, head_dim])?)
        };
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);
        let attention = q
            .bmm(k.permute(&[0, 2, 1])?)?
            .mul_scalar(1.0 / (head_dim as f64).sqrt())?
            .softmax_last()?;
        let mixed = attention
            .bmm(v)?
            .reshape(&[windows, self.heads, area, head_dim])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[windows * area, c])?;
        let tokens = tokens.add(self.proj.forward(p, mixed)?)?;

        // Feed-forward with a depthwise 3×3 conv inside each window.
        let normed = self
            .norm2
            .forward_last(p, tokens.layer_norm_last(LN_EPS)?)?;
        let hidden = self
            .fc1
            .forward(p, normed)?
            .silu()?
            .reshape(&[windows, win, win, self.hidden])?
            .permute(&[0, 3, 1, 2])?
            .depthwise_conv2d(p.get(self.dw_weight), Some(p.get(self.dw_bias)), 1)?
            .silu()?
            .permute(&[0, 2, 3, 1])?
            .reshape(&[windows * area, self.hidden])?;
        let tokens = tokens.add(self.fc2.forward(p, hidden)?)?;

        Ok((windows_to_map(tokens, h, w, win)?, attention))
    }
}
