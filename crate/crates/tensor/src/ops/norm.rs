use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t, T: Real> Var<'t, T> {
    /// Standardizes each contiguous row of `row_len` elements to zero mean
    /// and unit (biased) variance, with `eps` added to the variance.
    fn normalize_rows(self, row_len: usize, eps: f64, op: &'static str) -> Result<Var<'t, T>> {
        self.tape.record(&[self], move |inputs| {
            let x = inputs[0].data();
            if row_len == 0 || x.len() % row_len != 0 {
                return Err(TensorError::InvalidShape {
                    op,
                    detail: format!(
                        "rows of {row_len} do not tile shape {:?}",
                        inputs[0].shape()
                    ),
                });
            }
            let n = T::from_usize(row_len).expect("row length fits");
            let eps = T::from_f64_lossy(eps);
            let mut y = Vec::with_capacity(x.len());
            let mut inv_std = Vec::with_capacity(x.len() / row_len);
            for row in x.chunks(row_len) {
                let mean = row.iter().copied().sum::<T>() / n;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                let is = (var + eps).sqrt().recip();
                inv_std.push(is);
                y.extend(row.iter().map(|&v| (v - mean) * is));
            }
            Ok((
                Tensor::from_parts(inputs[0].shape().to_vec(), y),
                Box::new(move |ctx| {
                    let (g, y) = (ctx.grad.data(), ctx.output.data());
                    let mut gx = Vec::with_capacity(g.len());
                    for ((gr, yr), &is) in g.chunks(row_len).zip(y.chunks(row_len)).zip(&inv_std) {
                        let sum_g: T = gr.iter().copied().sum();
                        let sum_gy: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        gx.extend(
                            gr.iter()
                                .zip(yr)
                                .map(|(&gv, &yv)| is * (gv - (sum_g + yv * sum_gy) / n)),
                        );
                    }
                    vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), gx))]
                }),
            ))
        })
    }

    /// Instance normalization of a `C×H×W` map: each channel is standardized
    /// over its spatial extent.
    pub fn instance_norm(self, eps: f64) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() != 3 {
            return Err(TensorError::InvalidShape {
                op: "instance_norm",
                detail: format!("expected C×H×W, got {shape:?}"),
            });
        }
        self.normalize_rows(shape[1] * shape[2], eps, "instance_norm")
    }

    /// Layer normalization over the trailing axis (no affine).
    pub fn layer_norm_last(self, eps: f64) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let Some(&c) = shape.last() else {
            return Err(TensorError::InvalidShape {
                op: "layer_norm_last",
                detail: "rank-0 input".into(),
            });
        };
        self.normalize_rows(c, eps, "layer_norm_last")
    }
}
