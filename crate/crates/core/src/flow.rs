//! The invertible decoder. Layers are written in the normalizing direction
//! (image towards latent), which is the direction whose log-determinant the
//! likelihood needs; each has an exact inverse used for generation.
//!
//! Working tensors are `B×H×W`. Blocks are numbered in decoder order: block
//! `k` is the `(N+1-k)`-th layer on the way from the image to the latent.

use hidflow_tensor::{Real, Tensor, Var};

use crate::error::{HidError, Result};

/// Lower bound on `|det(W + I)|` for the residual convolution.
pub const SINGULARITY_GUARD: f64 = 1e-12;

/// Per-element scale (already soft-clamped, in log space) and shift of one
/// conditional affine layer.
#[derive(Clone, Copy, Debug)]
pub struct AffineParams<'t, T> {
    pub log_scale: Var<'t, T>,
    pub shift: Var<'t, T>,
}

/// Splits a `2B×H×W` transfer output into `(s, b)`, first half `s`, and
/// applies the soft clamp `s = α·tanh(s/α)`.
pub fn split_transfer<'t, T: Real>(out: Var<'t, T>, clamp: f64) -> Result<AffineParams<'t, T>> {
    let c = out.shape()[0];
    if !c.is_multiple_of(2) {
        return Err(HidError::Data(format!(
            "transfer output needs an even channel count, got {c}"
        )));
    }
    let raw = out.slice_axis(0, 0, c / 2)?;
    let log_scale = raw.mul_scalar(1.0 / clamp)?.tanh()?.mul_scalar(clamp)?;
    Ok(AffineParams {
        log_scale,
        shift: out.slice_axis(0, c / 2, c / 2)?,
    })
}

fn expect_shape<T: Real>(op: &'static str, h: &Var<'_, T>, other: &Var<'_, T>) -> Result<()> {
    let (a, b) = (h.shape(), other.shape());
    if a != b {
        return Err(HidError::Tensor(
            hidflow_tensor::TensorError::ShapeMismatch { op, lhs: a, rhs: b },
        ));
    }
    Ok(())
}

/// `exp(s) ⊙ h + b`, with log-determinant `Σ s`.
pub fn conditional_affine_forward<'t, T: Real>(
    h: Var<'t, T>,
    p: &AffineParams<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    expect_shape("conditional_affine", &h, &p.log_scale)?;
    expect_shape("conditional_affine", &h, &p.shift)?;
    let out = h.mul(p.log_scale.exp()?)?.add(p.shift)?;
    Ok((out, p.log_scale.sum()?))
}

/// `(h_next − b) ⊘ exp(s)`, computed as a product with `exp(−s)`.
pub fn conditional_affine_inverse<'t, T: Real>(
    h_next: Var<'t, T>,
    p: &AffineParams<'t, T>,
) -> Result<Var<'t, T>> {
    expect_shape("conditional_affine_inverse", &h_next, &p.log_scale)?;
    expect_shape("conditional_affine_inverse", &h_next, &p.shift)?;
    Ok(h_next.sub(p.shift)?.mul(p.log_scale.neg()?.exp()?)?)
}

fn shifted_matrix<'t, T: Real>(w: Var<'t, T>, channels: usize) -> Result<Var<'t, T>> {
    let shape = w.shape();
    if shape != [channels, channels] {
        return Err(HidError::Data(format!(
            "residual conv matrix must be {channels}×{channels} for {channels} channels, got {shape:?}"
        )));
    }
    Ok(w.add(w.tape().constant(Tensor::eye(channels)))?)
}

fn split_dims<T: Real>(h: &Var<'_, T>) -> Result<(usize, usize, usize)> {
    match h.shape()[..] {
        [c, y, x] => Ok((c, y, x)),
        ref s => Err(HidError::Data(format!(
            "flow layers expect B×H×W tensors, got {s:?}"
        ))),
    }
}

/// Per-pixel `(W + I)·h`, with log-determinant `H·W·log|det(W + I)|`.
pub fn residual_conv_forward<'t, T: Real>(
    h: Var<'t, T>,
    w: Var<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let (c, y, x) = split_dims(&h)?;
    let m = shifted_matrix(w, c)?;
    let logdet = m.logabsdet(SINGULARITY_GUARD)?.mul_scalar((y * x) as f64)?;
    let out = m.matmul(h.reshape(&[c, y * x])?)?.reshape(&[c, y, x])?;
    Ok((out, logdet))
}

/// Per-pixel solve of `(W + I)·h = h_next` by LU with partial pivoting.
pub fn residual_conv_inverse<'t, T: Real>(h_next: Var<'t, T>, w: Var<'t, T>) -> Result<Var<'t, T>> {
    let (c, y, x) = split_dims(&h_next)?;
    let m = shifted_matrix(w, c)?;
    Ok(m.solve(h_next.reshape(&[c, y * x])?, SINGULARITY_GUARD)?
        .reshape(&[c, y, x])?)
}

/// Generative-direction fusion `h + lowfreq`. A pure translation, so its
/// log-determinant is exactly zero and is not returned.
pub fn fusion_bias_forward<'t, T: Real>(h: Var<'t, T>, lowfreq: Var<'t, T>) -> Result<Var<'t, T>> {
    expect_shape("fusion_bias", &h, &lowfreq)?;
    Ok(h.add(lowfreq)?)
}

pub fn fusion_bias_inverse<'t, T: Real>(x: Var<'t, T>, lowfreq: Var<'t, T>) -> Result<Var<'t, T>> {
    expect_shape("fusion_bias_inverse", &x, &lowfreq)?;
    Ok(x.sub(lowfreq)?)
}

/// Everything the decoder needs from the conditioning branch, resolved to
/// the working resolution. Vectors are indexed by decoder block (`k − 1`).
pub struct Conditioning<'t, T> {
    pub affine: Vec<AffineParams<'t, T>>,
    pub residual: Vec<Var<'t, T>>,
    /// Upsampled low-frequency image, `B×H×W`.
    pub lowfreq: Var<'t, T>,
}

impl<T> Conditioning<'_, T> {
    pub fn blocks(&self) -> usize {
        self.affine.len()
    }
}

/// One layer's output and log-determinant contribution.
pub struct LayerTrace<'t, T> {
    pub name: String,
    pub output: Var<'t, T>,
    /// `None` for the fusion layer, whose contribution is identically zero.
    pub logdet: Option<Var<'t, T>>,
}

pub struct FlowTrace<'t, T> {
    pub z: Var<'t, T>,
    /// `log|det ∂z/∂x|`, a scalar.
    pub logdet: Var<'t, T>,
    /// Layers in the order they were applied.
    pub layers: Vec<LayerTrace<'t, T>>,
}

/// Image to latent: remove the low-frequency base, then run blocks
/// `N, N−1, …, 1`, each as affine followed by the residual convolution.
pub fn flow_forward<'t, T: Real>(
    x: Var<'t, T>,
    cond: &Conditioning<'t, T>,
) -> Result<FlowTrace<'t, T>> {
    let tape = x.tape();
    let mut layers = Vec::with_capacity(2 * cond.blocks() + 1);
    let mut h = fusion_bias_inverse(x, cond.lowfreq)?;
    layers.push(LayerTrace {
        name: "fusion".into(),
        output: h,
        logdet: None,
    });
    let mut logdet = tape.constant(Tensor::scalar(T::zero()));
    for k in (1..=cond.blocks()).rev() {
        let (a, ld_a) = conditional_affine_forward(h, &cond.affine[k - 1])?;
        layers.push(LayerTrace {
            name: format!("icb{k}.affine"),
            output: a,
            logdet: Some(ld_a),
        });
        let (c, ld_c) = residual_conv_forward(a, cond.residual[k - 1])?;
        layers.push(LayerTrace {
            name: format!("icb{k}.conv"),
            output: c,
            logdet: Some(ld_c),
        });
        logdet = logdet.add(ld_a)?.add(ld_c)?;
        h = c;
    }
    Ok(FlowTrace {
        z: h,
        logdet,
        layers,
    })
}

/// Latent to image, the exact inverse of [`flow_forward`]. Returns the
/// per-layer outputs in application order, the last being the image.
pub fn flow_inverse_traced<'t, T: Real>(
    z: Var<'t, T>,
    cond: &Conditioning<'t, T>,
) -> Result<Vec<LayerTrace<'t, T>>> {
    let mut layers = Vec::with_capacity(2 * cond.blocks() + 1);
    let mut h = z;
    for k in 1..=cond.blocks() {
        h = residual_conv_inverse(h, cond.residual[k - 1])?;
        layers.push(LayerTrace {
            name: format!("icb{k}.conv"),
            output: h,
            logdet: None,
        });
        h = conditional_affine_inverse(h, &cond.affine[k - 1])?;
        layers.push(LayerTrace {
            name: format!("icb{k}.affine"),
            output: h,
            logdet: None,
        });
    }
    let x = fusion_bias_forward(h, cond.lowfreq)?;
    layers.push(LayerTrace {
        name: "fusion".into(),
        output: x,
        logdet: None,
    });
    Ok(layers)
}

pub fn flow_inverse<'t, T: Real>(z: Var<'t, T>, cond: &Conditioning<'t, T>) -> Result<Var<'t, T>> {
    let mut h = z;
    for k in 1..=cond.blocks() {
        h = residual_conv_inverse(h, cond.residual[k - 1])?;
        h = conditional_affine_inverse(h, &cond.affine[k - 1])?;
    }
    fusion_bias_forward(h, cond.lowfreq)
}

/// Encoder stage feeding decoder block `k` (1-based) out of `blocks`, for
/// `stages` stages: the first blocks take the coarsest stage.
pub fn stage_for_block(k: usize, blocks: usize, stages: usize) -> usize {
    stages - (k - 1) * stages / blocks
}
