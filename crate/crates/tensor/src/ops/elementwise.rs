use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

const DIVISOR_FLOOR: f64 = 1e-30;

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

impl<'t, T: Real> Var<'t, T> {
    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Result<Var<'t, T>> {
        self.tape.record(&[self], |inputs| {
            let out = inputs[0].map(f);
            Ok((
                out,
                Box::new(move |ctx| {
                    let g = ctx
                        .grad
                        .data()
                        .iter()
                        .zip(ctx.inputs[0].data())
                        .zip(ctx.output.data());
                    let data = g.map(|((&g, &x), &y)| g * df(x, y)).collect();
                    vec![Some(Tensor::from_parts(ctx.grad.shape().to_vec(), data))]
                }),
            ))
        })
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.record(&[self, other], |inputs| {
            same_shape(inputs[0], inputs[1], "add")?;
            Ok((
                zip(inputs[0], inputs[1], |a, b| a + b),
                Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
            ))
        })
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.record(&[self, other], |inputs| {
            same_shape(inputs[0], inputs[1], "sub")?;
            Ok((
                zip(inputs[0], inputs[1], |a, b| a - b),
                Box::new(|ctx| {
                    vec![
                        Some(ctx.grad.clone()),
                        ctx.needs[1].then(|| ctx.grad.map(|g| -g)),
                    ]
                }),
            ))
        })
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.record(&[self, other], |inputs| {
            same_shape(inputs[0], inputs[1], "mul")?;
            Ok((
                zip(inputs[0], inputs[1], |a, b| a * b),
                Box::new(|ctx| {
                    let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
                    vec![
                        ctx.needs[0].then(|| zip(ctx.grad, b, |g, b| g * b)),
                        ctx.needs[1].then(|| zip(ctx.grad, a, |g, a| g * a)),
                    ]
                }),
            ))
        })
    }

    /// Elementwise quotient. Fails when any divisor magnitude is below 1e-30.
    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.record(&[self, other], |inputs| {
            same_shape(inputs[0], inputs[1], "div")?;
            let smallest = inputs[1]
                .data()
                .iter()
                .map(|d| d.abs().as_f64())
                .fold(f64::INFINITY, f64::min);
            if smallest < DIVISOR_FLOOR {
                return Err(TensorError::DegenerateDivisor {
                    op: "div",
                    magnitude: smallest,
                });
            }
            Ok((
                zip(inputs[0], inputs[1], |a, b| a / b),
                Box::new(|ctx| {
                    let (b, y) = (ctx.inputs[1], ctx.output);
                    vec![
                        ctx.needs[0].then(|| zip(ctx.grad, b, |g, b| g / b)),
                        ctx.needs[1].then(|| {
                            let gy = zip(ctx.grad, y, |g, y| g * y);
                            zip(&gy, b, |gy, b| -gy / b)
                        }),
                    ]
                }),
            ))
        })
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.unary(|x| -x, |_, _| -T::one())
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'t, T>> {
        let c = T::from_f64_lossy(c);
        self.unary(move |x| x + c, |_, _| T::one())
    }

    pub fn mul_scalar(self, c: f64) -> Result<Var<'t, T>> {
        let c = T::from_f64_lossy(c);
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn exp(self) -> Result<Var<'t, T>> {
        self.unary(T::exp, |_, y| y)
    }

    pub fn log(self) -> Result<Var<'t, T>> {
        self.unary(T::ln, |x, _| x.recip())
    }

    pub fn tanh(self) -> Result<Var<'t, T>> {
        self.unary(T::tanh, |_, y| T::one() - y * y)
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(self) -> Result<Var<'t, T>> {
        self.unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    pub fn square(self) -> Result<Var<'t, T>> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    /// Absolute value; the subgradient at 0 is taken as 0.
    pub fn abs(self) -> Result<Var<'t, T>> {
        self.unary(T::abs, |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
