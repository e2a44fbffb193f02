use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::{numel, Tensor};

impl<'t, T: Real> Var<'t, T> {
    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(self) -> Result<Var<'t, T>> {
        self.tape.record(&[self], |inputs| {
            Ok((
                Tensor::scalar(inputs[0].sum()),
                Box::new(|ctx| {
                    let g = ctx.grad.data()[0];
                    vec![Some(Tensor::full(ctx.inputs[0].shape(), g))]
                }),
            ))
        })
    }

    /// Mean of all elements, as a rank-0 scalar.
    pub fn mean(self) -> Result<Var<'t, T>> {
        let n = self.numel();
        if n == 0 {
            return Err(TensorError::InvalidShape {
                op: "mean",
                detail: "empty tensor".into(),
            });
        }
        self.sum()?.mul_scalar(1.0 / n as f64)
    }

    /// Sums out `axis`, dropping it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        self.tape.record(&[self], move |inputs| {
            let shape = inputs[0].shape();
            if axis >= shape.len() {
                return Err(TensorError::InvalidShape {
                    op: "sum_axis",
                    detail: format!("axis {axis} out of range for {shape:?}"),
                });
            }
            let outer = numel(&shape[..axis]);
            let extent = shape[axis];
            let inner = numel(&shape[axis + 1..]);
            let src = inputs[0].data();
            let mut data = vec![T::zero(); outer * inner];
            for o in 0..outer {
                for e in 0..extent {
                    let row = &src[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                    for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                        *d = *d + v;
                    }
                }
            }
            let mut out_shape = shape.to_vec();
            out_shape.remove(axis);
            Ok((
                Tensor::from_parts(out_shape, data),
                Box::new(move |ctx| {
                    let gd = ctx.grad.data();
                    let mut g = Vec::with_capacity(outer * extent * inner);
                    for o in 0..outer {
                        for _ in 0..extent {
                            g.extend_from_slice(&gd[o * inner..(o + 1) * inner]);
                        }
                    }
                    vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), g))]
                }),
            ))
        })
    }

    /// Softmax over the last axis.
    pub fn softmax_last(self) -> Result<Var<'t, T>> {
        self.tape.record(&[self], |inputs| {
            let shape = inputs[0].shape();
            let Some(&cols) = shape.last() else {
                return Err(TensorError::InvalidShape {
                    op: "softmax_last",
                    detail: "rank-0 input".into(),
                });
            };
            let mut data = inputs[0].data().to_vec();
            if cols > 0 {
                for row in data.chunks_mut(cols) {
                    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                    let mut total = T::zero();
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        total = total + *v;
                    }
                    for v in row.iter_mut() {
                        *v = *v / total;
                    }
                }
            }
            Ok((
                Tensor::from_parts(shape.to_vec(), data),
                Box::new(move |ctx| {
                    let y = ctx.output.data();
                    let gd = ctx.grad.data();
                    let mut g = vec![T::zero(); y.len()];
                    for ((gr, yr), outr) in
                        gd.chunks(cols).zip(y.chunks(cols)).zip(g.chunks_mut(cols))
                    {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((o, &gv), &yv) in outr.iter_mut().zip(gr).zip(yr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), g))]
                }),
            ))
        })
    }
}
