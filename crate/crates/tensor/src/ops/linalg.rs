use crate::error::{Result, TensorError};
use crate::linalg::Lu;
use crate::real::{gemm, Real};
use crate::tape::Var;
use crate::tensor::Tensor;

impl<'t, T: Real> Var<'t, T> {
    /// `(m×k)·(k×n)` matrix product.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.record(&[self, other], |inputs| {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = match (a.shape(), b.shape()) {
                ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
                (l, r) => {
                    return Err(TensorError::ShapeMismatch {
                        op: "matmul",
                        lhs: l.to_vec(),
                        rhs: r.to_vec(),
                    })
                }
            };
            let mut c = vec![T::zero(); m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut c, false);
            Ok((
                Tensor::from_parts(vec![m, n], c),
                Box::new(move |ctx| {
                    let (a, b, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
                    let ga = ctx.needs[0].then(|| {
                        let mut ga = vec![T::zero(); m * k];
                        gemm(m, n, k, g, false, b, true, &mut ga, false);
                        Tensor::from_parts(vec![m, k], ga)
                    });
                    let gb = ctx.needs[1].then(|| {
                        let mut gb = vec![T::zero(); k * n];
                        gemm(k, m, n, a, true, g, false, &mut gb, false);
                        Tensor::from_parts(vec![k, n], gb)
                    });
                    vec![ga, gb]
                }),
            ))
        })
    }

    /// Batched product `(b×m×k)·(b×k×n)`.
    pub fn bmm(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.record(&[self, other], |inputs| {
            let (a, b) = (inputs[0], inputs[1]);
            let (bt, m, k, n) = match (a.shape(), b.shape()) {
                ([b1, m, k], [b2, k2, n]) if b1 == b2 && k == k2 => (*b1, *m, *k, *n),
                (l, r) => {
                    return Err(TensorError::ShapeMismatch {
                        op: "bmm",
                        lhs: l.to_vec(),
                        rhs: r.to_vec(),
                    })
                }
            };
            let mut c = vec![T::zero(); bt * m * n];
            for i in 0..bt {
                gemm(
                    m,
                    k,
                    n,
                    &a.data()[i * m * k..(i + 1) * m * k],
                    false,
                    &b.data()[i * k * n..(i + 1) * k * n],
                    false,
                    &mut c[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
            Ok((
                Tensor::from_parts(vec![bt, m, n], c),
                Box::new(move |ctx| {
                    let (a, b, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
                    let ga = ctx.needs[0].then(|| {
                        let mut ga = vec![T::zero(); bt * m * k];
                        for i in 0..bt {
                            gemm(
                                m,
                                n,
                                k,
                                &g[i * m * n..(i + 1) * m * n],
                                false,
                                &b[i * k * n..(i + 1) * k * n],
                                true,
                                &mut ga[i * m * k..(i + 1) * m * k],
                                false,
                            );
                        }
                        Tensor::from_parts(vec![bt, m, k], ga)
                    });
                    let gb = ctx.needs[1].then(|| {
                        let mut gb = vec![T::zero(); bt * k * n];
                        for i in 0..bt {
                            gemm(
                                k,
                                m,
                                n,
                                &a[i * m * k..(i + 1) * m * k],
                                true,
                                &g[i * m * n..(i + 1) * m * n],
                                false,
                                &mut gb[i * k * n..(i + 1) * k * n],
                                false,
                            );
                        }
                        Tensor::from_parts(vec![bt, k, n], gb)
                    });
                    vec![ga, gb]
                }),
            ))
        })
    }

    /// `log|det A|` of a square matrix as a rank-0 scalar. Fails when
    /// `|det A| < min_abs_det`.
    pub fn logabsdet(self, min_abs_det: f64) -> Result<Var<'t, T>> {
        self.tape.record(&[self], move |inputs| {
            let lu = Lu::factor(inputs[0])?;
            lu.ensure_nonsingular("logabsdet", min_abs_det)?;
            let value = T::from_f64_lossy(lu.log_abs_det());
            Ok((
                Tensor::scalar(value),
                Box::new(move |ctx| {
                    // d log|det A| / dA = A^{-T}
                    let g = ctx.grad.data()[0];
                    let inv = lu.inverse().expect("factor is square");
                    let inv_t = inv.permute(&[1, 0]).expect("rank 2");
                    vec![Some(inv_t.map(|v| v * g))]
                }),
            ))
        })
    }

    /// Solves `A·X = B` with `A` square (`self`) and `B` of shape `n×k`.
    /// Fails when `|det A| < min_abs_det`.
    pub fn solve(self, rhs: Var<'t, T>, min_abs_det: f64) -> Result<Var<'t, T>> {
        self.tape.record(&[self, rhs], move |inputs| {
            let lu = Lu::factor(inputs[0])?;
            lu.ensure_nonsingular("solve", min_abs_det)?;
            let x = lu.solve(inputs[1])?;
            Ok((
                x,
                Box::new(move |ctx| {
                    let gb = lu
                        .solve_transposed(ctx.grad)
                        .expect("shapes checked in forward");
                    let ga = ctx.needs[0].then(|| {
                        let n = lu.side();
                        let k = ctx.output.shape()[1];
                        let mut ga = vec![T::zero(); n * n];
                        gemm(
                            n,
                            k,
                            n,
                            gb.data(),
                            false,
                            ctx.output.data(),
                            true,
                            &mut ga,
                            false,
                        );
                        Tensor::from_parts(vec![n, n], ga.into_iter().map(|v| -v).collect())
                    });
                    vec![ga, Some(gb)]
                }),
            ))
        })
    }
}
