use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::{inverse_permutation, numel, Tensor};

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

impl<'t, T: Real> Var<'t, T> {
    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let shape = shape.to_vec();
        self.tape.record(&[self], move |inputs| {
            let out = inputs[0].reshape(&shape)?;
            Ok((
                out,
                Box::new(|ctx| {
                    let g = ctx
                        .grad
                        .reshape(ctx.inputs[0].shape())
                        .expect("reshape preserves size");
                    vec![Some(g)]
                }),
            ))
        })
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let perm = perm.to_vec();
        self.tape.record(&[self], move |inputs| {
            let out = inputs[0].permute(&perm)?;
            let inv = inverse_permutation(&perm);
            Ok((
                out,
                Box::new(move |ctx| vec![Some(ctx.grad.permute(&inv).expect("valid inverse"))]),
            ))
        })
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let rank = self.shape().len();
        if rank != 2 {
            return Err(TensorError::InvalidShape {
                op: "transpose",
                detail: format!("expected rank 2, got rank {rank}"),
            });
        }
        self.permute(&[1, 0])
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice_axis(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        self.tape.record(&[self], move |inputs| {
            let shape = inputs[0].shape();
            if axis >= shape.len() || start + len > shape[axis] {
                return Err(TensorError::InvalidShape {
                    op: "slice_axis",
                    detail: format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
                });
            }
            let (outer, extent, inner) = split_at_axis(shape, axis);
            let src = inputs[0].data();
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                data.extend_from_slice(&src[base..base + len * inner]);
            }
            let mut out_shape = shape.to_vec();
            out_shape[axis] = len;
            Ok((
                Tensor::from_parts(out_shape, data),
                Box::new(move |ctx| {
                    let mut g = vec![T::zero(); outer * extent * inner];
                    let gd = ctx.grad.data();
                    for o in 0..outer {
                        let dst = (o * extent + start) * inner;
                        let src = o * len * inner;
                        g[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                    }
                    vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), g))]
                }),
            ))
        })
    }

    /// Joins vars along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or(TensorError::InvalidShape {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        first.tape.record(parts, move |inputs| {
            let base = inputs[0].shape();
            if axis >= base.len() {
                return Err(TensorError::InvalidShape {
                    op: "concat",
                    detail: format!("axis {axis} out of range for {base:?}"),
                });
            }
            for t in inputs {
                let s = t.shape();
                let compatible = s.len() == base.len()
                    && s.iter()
                        .zip(base)
                        .enumerate()
                        .all(|(i, (a, b))| i == axis || a == b);
                if !compatible {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        lhs: base.to_vec(),
                        rhs: s.to_vec(),
                    });
                }
            }
            let extents: Vec<usize> = inputs.iter().map(|t| t.shape()[axis]).collect();
            let total: usize = extents.iter().sum();
            let (outer, _, inner) = split_at_axis(base, axis);
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for (t, &e) in inputs.iter().zip(&extents) {
                    data.extend_from_slice(&t.data()[o * e * inner..(o + 1) * e * inner]);
                }
            }
            let mut out_shape = base.to_vec();
            out_shape[axis] = total;
            Ok((
                Tensor::from_parts(out_shape, data),
                Box::new(move |ctx| {
                    let gd = ctx.grad.data();
                    let mut grads: Vec<Vec<T>> = extents
                        .iter()
                        .map(|&e| Vec::with_capacity(outer * e * inner))
                        .collect();
                    let mut offset = 0;
                    for _ in 0..outer {
                        for (g, &e) in grads.iter_mut().zip(&extents) {
                            g.extend_from_slice(&gd[offset..offset + e * inner]);
                            offset += e * inner;
                        }
                    }
                    grads
                        .into_iter()
                        .zip(&ctx.inputs)
                        .map(|(g, t)| Some(Tensor::from_parts(t.shape().to_vec(), g)))
                        .collect()
                }),
            ))
        })
    }
}
