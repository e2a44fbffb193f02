use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum Layout {
    /// Vector indexes the leading axis.
    Leading,
    /// Vector indexes the trailing axis.
    Trailing,
}

/// Index into the per-channel vector for flat element `i`.
#[inline]
fn channel_of(layout: Layout, i: usize, channels: usize, inner: usize) -> usize {
    match layout {
        Layout::Leading => i / inner,
        Layout::Trailing => i % channels,
    }
}

impl<'t, T: Real> Var<'t, T> {
    fn channel_extent(
        shape: &[usize],
        vec_shape: &[usize],
        layout: Layout,
        op: &'static str,
    ) -> Result<(usize, usize)> {
        let axis = match layout {
            Layout::Leading => shape.first(),
            Layout::Trailing => shape.last(),
        };
        match (axis, vec_shape) {
            (Some(&c), [v]) if c == *v && c > 0 => Ok((c, shape.iter().product::<usize>() / c)),
            _ => Err(TensorError::ShapeMismatch {
                op,
                lhs: shape.to_vec(),
                rhs: vec_shape.to_vec(),
            }),
        }
    }

    fn broadcast_add(
        self,
        bias: Var<'t, T>,
        layout: Layout,
        op: &'static str,
    ) -> Result<Var<'t, T>> {
        self.tape.record(&[self, bias], move |inputs| {
            let (c, inner) =
                Self::channel_extent(inputs[0].shape(), inputs[1].shape(), layout, op)?;
            let b = inputs[1].data();
            let data = inputs[0]
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| v + b[channel_of(layout, i, c, inner)])
                .collect();
            Ok((
                Tensor::from_parts(inputs[0].shape().to_vec(), data),
                Box::new(move |ctx| {
                    let gb = ctx.needs[1].then(|| {
                        let mut gb = vec![T::zero(); c];
                        for (i, &g) in ctx.grad.data().iter().enumerate() {
                            let ch = channel_of(layout, i, c, inner);
                            gb[ch] = gb[ch] + g;
                        }
                        Tensor::from_parts(vec![c], gb)
                    });
                    vec![Some(ctx.grad.clone()), gb]
                }),
            ))
        })
    }

    /// Adds `bias[c]` to every element of channel `c` of a `C×…` tensor.
    pub fn add_channel_bias(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.broadcast_add(bias, Layout::Leading, "add_channel_bias")
    }

    /// Adds `bias` along the trailing axis of a `…×C` tensor.
    pub fn add_bias_last(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.broadcast_add(bias, Layout::Trailing, "add_bias_last")
    }

    fn broadcast_scale(
        self,
        scale: Var<'t, T>,
        layout: Layout,
        op: &'static str,
    ) -> Result<Var<'t, T>> {
        self.tape.record(&[self, scale], move |inputs| {
            let (c, inner) =
                Self::channel_extent(inputs[0].shape(), inputs[1].shape(), layout, op)?;
            let s = inputs[1].data();
            let data = inputs[0]
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| v * s[channel_of(layout, i, c, inner)])
                .collect();
            Ok((
                Tensor::from_parts(inputs[0].shape().to_vec(), data),
                Box::new(move |ctx| {
                    let (x, s, g) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
                    let gx = ctx.needs[0].then(|| {
                        let data = g
                            .iter()
                            .enumerate()
                            .map(|(i, &g)| g * s[channel_of(layout, i, c, inner)])
                            .collect();
                        Tensor::from_parts(ctx.inputs[0].shape().to_vec(), data)
                    });
                    let gs = ctx.needs[1].then(|| {
                        let mut gs = vec![T::zero(); c];
                        for (i, (&g, &x)) in g.iter().zip(x).enumerate() {
                            let ch = channel_of(layout, i, c, inner);
                            gs[ch] = gs[ch] + g * x;
                        }
                        Tensor::from_parts(vec![c], gs)
                    });
                    vec![gx, gs]
                }),
            ))
        })
    }

    /// Multiplies channel `c` of a `C×…` tensor by `scale[c]`.
    pub fn scale_channels(self, scale: Var<'t, T>) -> Result<Var<'t, T>> {
        self.broadcast_scale(scale, Layout::Leading, "scale_channels")
    }

    /// Multiplies along the trailing axis of a `…×C` tensor.
    pub fn scale_last(self, scale: Var<'t, T>) -> Result<Var<'t, T>> {
        self.broadcast_scale(scale, Layout::Trailing, "scale_last")
    }
}
