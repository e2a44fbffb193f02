//! Numerical checking helpers: central finite differences and dense
//! Jacobians assembled from reverse-mode vector-Jacobian products.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function at `x`.
pub fn finite_difference_gradient(
    x: &Tensor<f64>,
    step: f64,
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
) -> Result<Tensor<f64>> {
    let mut grad = Vec::with_capacity(x.numel());
    let mut probe = x.data().to_vec();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&Tensor::new(x.shape(), probe.clone())?)?;
        probe[i] = orig - step;
        let minus = f(&Tensor::new(x.shape(), probe.clone())?)?;
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    Tensor::new(x.shape(), grad)
}

/// Dense Jacobian `∂f(x)/∂x` as an `m×n` matrix (`m` outputs, `n` inputs),
/// one reverse pass per output element on a single recorded forward.
pub fn tape_jacobian(
    x: &Tensor<f64>,
    f: impl for<'t> FnOnce(Var<'t, f64>) -> Result<Var<'t, f64>>,
) -> Result<Tensor<f64>> {
    let tape = Tape::new();
    let input = tape.leaf(x.clone());
    let output = f(input)?;
    let out_shape = output.shape();
    let m = output.numel();
    let n = x.numel();
    let mut jac = Vec::with_capacity(m * n);
    for row in 0..m {
        let seed = Tensor::from_fn(&out_shape, |i| if i == row { 1.0 } else { 0.0 });
        let grads = tape.backward_with_seed(output, seed)?;
        jac.extend_from_slice(grads.get(input).data());
    }
    Tensor::new(&[m, n], jac)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
