use crate::error::{Result, TensorError};
use crate::real::{gemm, Real};
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    hout: usize,
    wout: usize,
}

impl ConvGeom {
    fn new(
        op: &'static str,
        h: usize,
        w: usize,
        cin: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(TensorError::InvalidShape {
                op,
                detail: format!(
                    "kernel {k} stride {stride} pad {pad} does not fit a {h}×{w} input"
                ),
            });
        }
        let hout = (h + 2 * pad - k) / stride + 1;
        let wout = (w + 2 * pad - k) / stride + 1;
        Ok(ConvGeom {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            hout,
            wout,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input coordinate read by output `o` at kernel tap `tap`, if inside.
    #[inline]
    fn src(&self, o: usize, tap: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + tap).checked_sub(self.pad)?;
        (pos < extent).then_some(pos)
    }

    fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let l = self.hout * self.wout;
        let mut cols = vec![T::zero(); self.cin * self.k * self.k * l];
        for c in 0..self.cin {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = ((c * self.k + ki) * self.k + kj) * l;
                    for oy in 0..self.hout {
                        let Some(iy) = self.src(oy, ki, self.h) else {
                            continue;
                        };
                        let src_row =
                            &x[(c * self.h + iy) * self.w..(c * self.h + iy + 1) * self.w];
                        let dst = &mut cols[row + oy * self.wout..row + (oy + 1) * self.wout];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            if let Some(ix) = self.src(ox, kj, self.w) {
                                *d = src_row[ix];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, cols: &[T]) -> Vec<T> {
        let l = self.hout * self.wout;
        let mut x = vec![T::zero(); self.cin * self.h * self.w];
        for c in 0..self.cin {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = ((c * self.k + ki) * self.k + kj) * l;
                    for oy in 0..self.hout {
                        let Some(iy) = self.src(oy, ki, self.h) else {
                            continue;
                        };
                        let base = (c * self.h + iy) * self.w;
                        for ox in 0..self.wout {
                            if let Some(ix) = self.src(ox, kj, self.w) {
                                x[base + ix] = x[base + ix] + cols[row + oy * self.wout + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }
}

/// Bilinear interpolation taps for a 2× upsample (half-pixel centers, edge
/// clamped): each output index reads `(i0, w0)` and `(i1, w1)`.
fn upsample_taps(extent: usize) -> Vec<(usize, f64, usize, f64)> {
    (0..2 * extent)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(extent - 1);
            let i1 = (i0 + 1).min(extent - 1);
            let w1 = src - i0 as f64;
            (i0, 1.0 - w1, i1, w1)
        })
        .collect()
}

impl<'t, T: Real> Var<'t, T> {
    /// 2-D convolution of a `C×H×W` map with `O×C×k×k` weights, square
    /// stride and symmetric zero padding. `bias` has shape `O`.
    pub fn conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.tape.record(&parents, move |inputs| {
            let (x, w) = (inputs[0], inputs[1]);
            let (cin, h, wd, cout, k) = match (x.shape(), w.shape()) {
                ([c, h, wd], [o, c2, k, k2]) if c == c2 && k == k2 => (*c, *h, *wd, *o, *k),
                (l, r) => {
                    return Err(TensorError::ShapeMismatch {
                        op: "conv2d",
                        lhs: l.to_vec(),
                        rhs: r.to_vec(),
                    })
                }
            };
            if has_bias && inputs[2].shape() != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![cout],
                    rhs: inputs[2].shape().to_vec(),
                });
            }
            let geom = ConvGeom::new("conv2d", h, wd, cin, k, stride, pad)?;
            let l = geom.hout * geom.wout;
            let ckk = cin * k * k;
            let cols = if geom.is_pointwise() {
                Vec::new()
            } else {
                geom.im2col(x.data())
            };
            let mut out = vec![T::zero(); cout * l];
            {
                let cols_ref: &[T] = if geom.is_pointwise() { x.data() } else { &cols };
                gemm(
                    cout,
                    ckk,
                    l,
                    w.data(),
                    false,
                    cols_ref,
                    false,
                    &mut out,
                    false,
                );
            }
            if has_bias {
                for (row, &b) in out.chunks_mut(l).zip(inputs[2].data()) {
                    row.iter_mut().for_each(|v| *v = *v + b);
                }
            }
            Ok((
                Tensor::from_parts(vec![cout, geom.hout, geom.wout], out),
                Box::new(move |ctx| {
                    let g = ctx.grad.data();
                    let x = ctx.inputs[0].data();
                    let w = ctx.inputs[1].data();
                    let cols_ref: &[T] = if geom.is_pointwise() { x } else { &cols };
                    let gx = ctx.needs[0].then(|| {
                        let mut gcols = vec![T::zero(); ckk * l];
                        gemm(ckk, cout, l, w, true, g, false, &mut gcols, false);
                        let data = if geom.is_pointwise() {
                            gcols
                        } else {
                            geom.col2im(&gcols)
                        };
                        Tensor::from_parts(ctx.inputs[0].shape().to_vec(), data)
                    });
                    let gw = ctx.needs[1].then(|| {
                        let mut gw = vec![T::zero(); cout * ckk];
                        gemm(cout, l, ckk, g, false, cols_ref, true, &mut gw, false);
                        Tensor::from_parts(ctx.inputs[1].shape().to_vec(), gw)
                    });
                    let mut grads = vec![gx, gw];
                    if has_bias {
                        grads.push(ctx.needs[2].then(|| {
                            Tensor::from_parts(
                                vec![cout],
                                g.chunks(l).map(|r| r.iter().copied().sum()).collect(),
                            )
                        }));
                    }
                    grads
                }),
            ))
        })
    }

    /// Per-channel convolution of an `N×C×H×W` batch with `C×k×k` weights,
    /// stride 1 and symmetric zero padding. `bias` has shape `C`.
    pub fn depthwise_conv2d(
        self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        self.tape.record(&parents, move |inputs| {
            let (x, w) = (inputs[0], inputs[1]);
            let (nb, c, h, wd, k) = match (x.shape(), w.shape()) {
                ([n, c, h, wd], [c2, k, k2]) if c == c2 && k == k2 => (*n, *c, *h, *wd, *k),
                (l, r) => {
                    return Err(TensorError::ShapeMismatch {
                        op: "depthwise_conv2d",
                        lhs: l.to_vec(),
                        rhs: r.to_vec(),
                    })
                }
            };
            if has_bias && inputs[2].shape() != [c] {
                return Err(TensorError::ShapeMismatch {
                    op: "depthwise_conv2d bias",
                    lhs: vec![c],
                    rhs: inputs[2].shape().to_vec(),
                });
            }
            let geom = ConvGeom::new("depthwise_conv2d", h, wd, c, k, 1, pad)?;
            let (ho, wo) = (geom.hout, geom.wout);
            let xd = x.data();
            let wdata = w.data();
            let mut out = vec![T::zero(); nb * c * ho * wo];
            for n in 0..nb {
                for ch in 0..c {
                    let plane = &xd[(n * c + ch) * h * wd..(n * c + ch + 1) * h * wd];
                    let kern = &wdata[ch * k * k..(ch + 1) * k * k];
                    let dst = &mut out[(n * c + ch) * ho * wo..(n * c + ch + 1) * ho * wo];
                    let b = if has_bias {
                        inputs[2].data()[ch]
                    } else {
                        T::zero()
                    };
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut acc = b;
                            for ki in 0..k {
                                let Some(iy) = geom.src(oy, ki, h) else {
                                    continue;
                                };
                                for kj in 0..k {
                                    if let Some(ix) = geom.src(ox, kj, wd) {
                                        acc = acc + kern[ki * k + kj] * plane[iy * wd + ix];
                                    }
                                }
                            }
                            dst[oy * wo + ox] = acc;
                        }
                    }
                }
            }
            Ok((
                Tensor::from_parts(vec![nb, c, ho, wo], out),
                Box::new(move |ctx| {
                    let g = ctx.grad.data();
                    let xd = ctx.inputs[0].data();
                    let wdata = ctx.inputs[1].data();
                    let mut gx = vec![T::zero(); xd.len()];
                    let mut gw = vec![T::zero(); wdata.len()];
                    let mut gb = vec![T::zero(); c];
                    for n in 0..nb {
                        for ch in 0..c {
                            let base_in = (n * c + ch) * h * wd;
                            let base_out = (n * c + ch) * ho * wo;
                            for oy in 0..ho {
                                for ox in 0..wo {
                                    let go = g[base_out + oy * wo + ox];
                                    gb[ch] = gb[ch] + go;
                                    for ki in 0..k {
                                        let Some(iy) = geom.src(oy, ki, h) else {
                                            continue;
                                        };
                                        for kj in 0..k {
                                            if let Some(ix) = geom.src(ox, kj, wd) {
                                                let xi = base_in + iy * wd + ix;
                                                let wi = ch * k * k + ki * k + kj;
                                                gx[xi] = gx[xi] + go * wdata[wi];
                                                gw[wi] = gw[wi] + go * xd[xi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let mut grads = vec![
                        ctx.needs[0]
                            .then(|| Tensor::from_parts(ctx.inputs[0].shape().to_vec(), gx)),
                        ctx.needs[1]
                            .then(|| Tensor::from_parts(ctx.inputs[1].shape().to_vec(), gw)),
                    ];
                    if has_bias {
                        grads.push(ctx.needs[2].then(|| Tensor::from_parts(vec![c], gb)));
                    }
                    grads
                }),
            ))
        })
    }

    /// Bilinear 2× upsample of a `C×H×W` map (half-pixel centers, edges
    /// clamped, matching the common `align_corners = false` convention).
    pub fn upsample_bilinear2x(self) -> Result<Var<'t, T>> {
        self.tape.record(&[self], |inputs| {
            let (c, h, w) = match inputs[0].shape() {
                [c, h, w] if *h > 0 && *w > 0 => (*c, *h, *w),
                other => {
                    return Err(TensorError::InvalidShape {
                        op: "upsample_bilinear2x",
                        detail: format!("expected a non-empty C×H×W map, got {other:?}"),
                    })
                }
            };
            let ty = upsample_taps(h);
            let tx = upsample_taps(w);
            let conv = |v: f64| T::from_f64_lossy(v);
            let x = inputs[0].data();
            let (h2, w2) = (2 * h, 2 * w);
            let mut out = vec![T::zero(); c * h2 * w2];
            for ch in 0..c {
                let plane = &x[ch * h * w..(ch + 1) * h * w];
                for (oy, &(y0, wy0, y1, wy1)) in ty.iter().enumerate() {
                    for (ox, &(x0, wx0, x1, wx1)) in tx.iter().enumerate() {
                        let top = plane[y0 * w + x0] * conv(wx0) + plane[y0 * w + x1] * conv(wx1);
                        let bottom =
                            plane[y1 * w + x0] * conv(wx0) + plane[y1 * w + x1] * conv(wx1);
                        out[(ch * h2 + oy) * w2 + ox] = top * conv(wy0) + bottom * conv(wy1);
                    }
                }
            }
            Ok((
                Tensor::from_parts(vec![c, h2, w2], out),
                Box::new(move |ctx| {
                    let g = ctx.grad.data();
                    let mut gx = vec![T::zero(); c * h * w];
                    for ch in 0..c {
                        let plane = &mut gx[ch * h * w..(ch + 1) * h * w];
                        for (oy, &(y0, wy0, y1, wy1)) in ty.iter().enumerate() {
                            for (ox, &(x0, wx0, x1, wx1)) in tx.iter().enumerate() {
                                let go = g[(ch * h2 + oy) * w2 + ox];
                                let top = go * conv(wy0);
                                let bottom = go * conv(wy1);
                                plane[y0 * w + x0] = plane[y0 * w + x0] + top * conv(wx0);
                                plane[y0 * w + x1] = plane[y0 * w + x1] + top * conv(wx1);
                                plane[y1 * w + x0] = plane[y1 * w + x0] + bottom * conv(wx0);
                                plane[y1 * w + x1] = plane[y1 * w + x1] + bottom * conv(wx1);
                            }
                        }
                    }
                    vec![Some(Tensor::from_parts(vec![c, h, w], gx))]
                }),
            ))
        })
    }
}
