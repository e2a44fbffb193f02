#![allow(dead_code)]

use hidflow_core::{EncoderConfig, FlowConfig, HsiCube, ModelConfig};
use hidflow_tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

pub fn random_cube(h: usize, w: usize, b: usize, rng: &mut ChaCha8Rng) -> HsiCube {
    HsiCube::from_fn(h, w, b, |_, _, _| rng.random_range(0.0..1.0))
}

pub fn config(
    bands: usize,
    width: usize,
    stages: usize,
    window: usize,
    heads: usize,
    blocks: usize,
) -> ModelConfig {
    ModelConfig {
        bands,
        encoder: EncoderConfig {
            width,
            stages,
            window,
            heads,
            blocks_per_stage: 1,
            ffn_expansion: 2,
        },
        flow: FlowConfig {
            blocks,
            transfer_width: 8,
            ..FlowConfig::default()
        },
    }
}

/// Dense Jacobian of `f` at `x`, one reverse sweep per output element.
pub fn jacobian(
    x: &Tensor<f64>,
    f: impl for<'t> FnOnce(Var<'t, f64>) -> hidflow_core::Result<Var<'t, f64>>,
) -> Tensor<f64> {
    let tape = Tape::new();
    let input = tape.leaf(x.clone());
    let out = f(input).unwrap();
    let (m, n) = (out.numel(), x.numel());
    let shape = out.shape();
    let mut rows = Vec::with_capacity(m * n);
    for r in 0..m {
        let seed = Tensor::from_fn(&shape, |i| if i == r { 1.0 } else { 0.0 });
        rows.extend_from_slice(
            tape.backward_with_seed(out, seed)
                .unwrap()
                .get(input)
                .data(),
        );
    }
    Tensor::new(&[m, n], rows).unwrap()
}

/// `log|det A|` by Gaussian elimination with full pivoting.
pub fn log_abs_det(a: &Tensor<f64>) -> f64 {
    let n = a.shape()[0];
    assert_eq!(a.shape(), &[n, n]);
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| a.data()[i * n..(i + 1) * n].to_vec())
        .collect();
    let mut acc = 0.0;
    for k in 0..n {
        let (mut pr, mut pc, mut best) = (k, k, -1.0);
        for (i, row) in m.iter().enumerate().skip(k) {
            for (j, v) in row.iter().enumerate().skip(k) {
                if v.abs() > best {
                    (pr, pc, best) = (i, j, v.abs());
                }
            }
        }
        assert!(best > 0.0, "singular matrix");
        m.swap(k, pr);
        for row in m.iter_mut() {
            row.swap(k, pc);
        }
        let pivot = m[k][k];
        acc += pivot.abs().ln();
        for i in k + 1..n {
            let f = m[i][k] / pivot;
            for j in k..n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    acc
}

pub fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Relative error between the tape gradient and central differences (step
/// 1e-5) of `Σ wᵢ·f(x)ᵢ` for a fixed weighting `w`.
pub fn gradient_error(
    x: &Tensor<f64>,
    f: impl for<'t> Fn(Var<'t, f64>) -> hidflow_core::Result<Var<'t, f64>>,
) -> f64 {
    let contract = |tape: &Tape<f64>, input: Var<'_, f64>| -> f64 {
        let _ = tape;
        let out = f(input).unwrap();
        let w = Tensor::from_fn(&out.shape(), |i| 0.3 + ((i * 7919) % 13) as f64 / 10.0);
        out.mul(input.tape().constant(w))
            .unwrap()
            .sum()
            .unwrap()
            .item()
            .unwrap()
    };
    let tape = Tape::new();
    let input = tape.leaf(x.clone());
    let out = f(input).unwrap();
    let w = Tensor::from_fn(&out.shape(), |i| 0.3 + ((i * 7919) % 13) as f64 / 10.0);
    let loss = out.mul(tape.constant(w)).unwrap().sum().unwrap();
    let analytic = tape.backward(loss).unwrap().get(input);
    let numeric = hidflow_tensor::check::finite_difference_gradient(x, 1e-5, |probe| {
        let t = Tape::new();
        let v = t.leaf(probe.clone());
        Ok(contract(&t, v))
    })
    .unwrap();
    hidflow_tensor::check::relative_error(analytic.data(), numeric.data())
}
