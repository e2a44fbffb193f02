//! Numerical self-checks of the flow: invertibility, log-determinant against
//! a dense Jacobian, loss gradients against finite differences, the identity
//! initialization, and normalization of the learned density.

use std::fmt;
use std::time::Instant;

use hidflow_tensor::check::{finite_difference_gradient, relative_error, tape_jacobian};
use hidflow_tensor::linalg::Lu;
use hidflow_tensor::{Real, Tape, Tensor};
use rand::Rng;

use crate::cube::HsiCube;
use crate::error::Result;
use crate::layers::Init;
use crate::model::HidFlowNet;
use crate::model_config::{EncoderConfig, FlowConfig, ModelConfig};
use crate::objective::{nll_loss, rec_loss, total_loss, OptimConfig, HALF_LOG_TWO_PI};
use crate::params::ParameterStore;
use crate::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    /// Reduced case counts; a few seconds.
    Quick,
    /// Full case counts.
    Full,
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    /// Worst observed error.
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
    pub seconds: f64,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {:.3e} (limit {:.0e}, {:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.limit,
            self.seconds
        )
    }
}

fn timed(name: &str, limit: f64, f: impl FnOnce() -> Result<f64>) -> Result<Check> {
    let start = Instant::now();
    let value = f()?;
    Ok(Check {
        name: name.to_string(),
        value,
        limit,
        passed: value <= limit,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn model_config(
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

fn uniform<T: Real>(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(lo..hi)))
}

fn random_cube(h: usize, w: usize, b: usize, rng: &mut impl Rng) -> HsiCube {
    HsiCube::from_fn(h, w, b, |_, _, _| rng.random_range(0.0..1.0))
}

/// `‖f⁻¹(f(x; y); y) − x‖∞`.
pub fn round_trip_error<T: Real>(model: &HidFlowNet<T>, x: &Tensor<T>, y: &HsiCube) -> Result<f64> {
    let tape = Tape::new();
    let p = model.store().bind(&tape, false);
    let cond = model.condition(&p, tape.constant(y.to_tensor()))?;
    let z = model.flow_forward(tape.constant(x.clone()), &cond)?.z;
    let back = model.flow_inverse(z, &cond)?.value();
    Ok(back.max_abs_diff(x)?)
}

/// Relative gap between the accumulated log-determinant and `log|det J|` of
/// the dense Jacobian of `x ↦ f(x; y)`.
pub fn logdet_error(model: &HidFlowNet<f64>, x: &Tensor<f64>, y: &HsiCube) -> Result<f64> {
    let jac = tape_jacobian(x, |xv| {
        let p = model.store().bind(xv.tape(), false);
        let cond = model
            .condition(&p, xv.tape().constant(y.to_tensor()))
            .map_err(tensor_err)?;
        Ok(model.flow_forward(xv, &cond).map_err(tensor_err)?.z)
    })?;
    let dense = Lu::factor(&jac)?.log_abs_det();
    let tape = Tape::new();
    let p = model.store().bind(&tape, false);
    let cond = model.condition(&p, tape.constant(y.to_tensor()))?;
    let analytic = model
        .flow_forward(tape.constant(x.clone()), &cond)?
        .logdet
        .item()?;
    Ok((analytic - dense).abs() / analytic.abs().max(dense.abs()).max(f64::MIN_POSITIVE))
}

fn tensor_err(e: crate::error::HidError) -> hidflow_tensor::TensorError {
    match e {
        crate::error::HidError::Tensor(t) => t,
        other => hidflow_tensor::TensorError::InvalidShape {
            op: "flow",
            detail: other.to_string(),
        },
    }
}

/// Training loss of one `(x, y)` pair with latent `ẑ`, evaluated with the
/// parameters in `store`.
pub fn sample_loss(
    model: &HidFlowNet<f64>,
    store: &ParameterStore<f64>,
    x: &HsiCube,
    y: &HsiCube,
    z_hat: &Tensor<f64>,
    optim: &OptimConfig,
) -> Result<f64> {
    let tape = Tape::new();
    let p = store.bind(&tape, false);
    let xv = tape.constant(x.to_tensor());
    let cond = model.condition(&p, tape.constant(y.to_tensor()))?;
    let nll = nll_loss(&model.flow_forward(xv, &cond)?)?;
    let rec = rec_loss(model.flow_inverse(tape.constant(z_hat.clone()), &cond)?, xv)?;
    Ok(total_loss(nll, rec, optim)?.item()?)
}

/// Relative error between tape and central-difference gradients of the
/// training loss, per parameter tensor. At most `max_entries` entries of
/// each tensor are probed (all when `None`).
pub fn gradient_errors(
    model: &HidFlowNet<f64>,
    x: &HsiCube,
    y: &HsiCube,
    z_hat: &Tensor<f64>,
    max_entries: Option<usize>,
) -> Result<Vec<(String, f64)>> {
    let optim = OptimConfig::default();
    let tape = Tape::new();
    let p = model.store().bind(&tape, true);
    let xv = tape.constant(x.to_tensor());
    let cond = model.condition(&p, tape.constant(y.to_tensor()))?;
    let nll = nll_loss(&model.flow_forward(xv, &cond)?)?;
    let rec = rec_loss(model.flow_inverse(tape.constant(z_hat.clone()), &cond)?, xv)?;
    let grads = tape.backward(total_loss(nll, rec, &optim)?)?;

    let mut out = Vec::new();
    for id in model.store().ids() {
        let analytic = grads.get(p.get(id));
        let value = model.store().value(id);
        let n = value.numel();
        let picks: Vec<usize> = match max_entries {
            Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
            _ => (0..n).collect(),
        };
        let mut store = model.store().clone();
        let sub = Tensor::new(
            &[picks.len()],
            picks.iter().map(|&i| value.data()[i]).collect(),
        )?;
        let numeric = finite_difference_gradient(&sub, 1e-5, |probe| {
            let mut v = value.data().to_vec();
            for (&i, &pv) in picks.iter().zip(probe.data()) {
                v[i] = pv;
            }
            store
                .set_value(id, Tensor::new(value.shape(), v)?)
                .map_err(tensor_err)?;
            sample_loss(model, &store, x, y, z_hat, &optim).map_err(tensor_err)
        })?;
        let a: Vec<f64> = picks.iter().map(|&i| analytic.data()[i]).collect();
        out.push((
            model.store().name(id).to_string(),
            relative_error(&a, numeric.data()),
        ));
    }
    Ok(out)
}

/// Identity-initialized model with a random low-frequency branch. Returns
/// the inverse error against `z + lowfreq` and the NLL error against its
/// closed form.
pub fn identity_errors(seed: u64) -> Result<(f64, f64)> {
    let cfg = model_config(4, 8, 3, 2, 2, 9);
    let mut model = HidFlowNet::<f64>::new(&cfg, Init::Identity, seed)?;
    let mut rng = stream(seed, Stream::Verify, &[4]);
    let ids: Vec<_> = model
        .store()
        .ids()
        .filter(|&id| model.store().name(id).starts_with("encoder.lowfreq"))
        .collect();
    for id in ids {
        let shape = model.store().value(id).shape().to_vec();
        model
            .store_mut()
            .set_value(id, uniform(&shape, -0.5, 0.5, &mut rng))?;
    }
    let y = random_cube(8, 8, 4, &mut rng);
    let x: Tensor<f64> = uniform(&[4, 8, 8], 0.0, 1.0, &mut rng);
    let z: Tensor<f64> = uniform(&[4, 8, 8], -3.0, 3.0, &mut rng);

    let tape = Tape::new();
    let p = model.store().bind(&tape, false);
    let cond = model.condition(&p, tape.constant(y.to_tensor()))?;
    let low = cond.lowfreq.value();
    let inv = model.flow_inverse(tape.constant(z.clone()), &cond)?.value();
    let inv_err = inv.max_abs_diff(&z.zip_map(&low, "add", |a, b| a + b)?)?;

    let nll = nll_loss(&model.flow_forward(tape.constant(x.clone()), &cond)?)?.item()?;
    let energy: f64 = x
        .data()
        .iter()
        .zip(low.data())
        .map(|(a, b)| 0.5 * (a - b) * (a - b))
        .sum();
    let closed = energy + x.numel() as f64 * HALF_LOG_TWO_PI;
    Ok((inv_err, (nll - closed).abs()))
}

/// Integral of `exp(−nll)` over `[−6, 6]²` for a two-dimensional flow, by the
/// trapezoid rule with spacing `h`.
pub fn density_mass(model: &HidFlowNet<f64>, y: &HsiCube, h: f64) -> Result<f64> {
    let tape = Tape::new();
    let p = model.store().bind(&tape, false);
    let cond = model.condition(&p, tape.constant(y.to_tensor()))?;
    let n = (12.0 / h).round() as usize;
    let mut total = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            let (a, b) = (-6.0 + i as f64 * h, -6.0 + j as f64 * h);
            let point = tape.constant(Tensor::new(&[2, 1, 1], vec![a, b])?);
            let nll = nll_loss(&model.flow_forward(point, &cond)?)?.item()?;
            let w =
                if i == 0 || i == n { 0.5 } else { 1.0 } * if j == 0 || j == n { 0.5 } else { 1.0 };
            total += w * (-nll).exp();
        }
    }
    Ok(total * h * h)
}

/// Runs every suite. `checkpoint` adds a round-trip check of a trained model
/// on a random input of extent `extent`.
pub fn run(
    level: Level,
    seed: u64,
    checkpoint: Option<(&HidFlowNet<f64>, usize)>,
) -> Result<Vec<Check>> {
    let full = level == Level::Full;
    let mut checks = Vec::new();

    let cfg = model_config(4, 8, 3, 2, 2, 9);
    let cases = if full { 100 } else { 10 };
    let model64 = HidFlowNet::<f64>::new(&cfg, Init::Randomized, seed)?;
    let model32 = HidFlowNet::<f32>::new(&cfg, Init::Randomized, seed)?;
    for (name, limit, is64) in [
        ("round trip (f64)", 1e-9, true),
        ("round trip (f32)", 1e-4, false),
    ] {
        checks.push(timed(name, limit, || {
            let mut rng = stream(seed, Stream::Verify, &[1, is64 as u64]);
            let mut worst = 0.0f64;
            for _ in 0..cases {
                let x: Tensor<f64> = uniform(&[4, 8, 8], 0.0, 1.0, &mut rng);
                let y = random_cube(8, 8, 4, &mut rng);
                let e = if is64 {
                    round_trip_error(&model64, &x, &y)?
                } else {
                    round_trip_error(&model32, &x.cast(), &y)?
                };
                worst = worst.max(e);
            }
            Ok(worst)
        })?);
    }

    checks.push(timed("log-determinant vs dense Jacobian", 1e-6, || {
        let cfg = model_config(2, 4, 2, 2, 2, 2);
        let mut rng = stream(seed, Stream::Verify, &[2]);
        let mut worst = 0.0f64;
        for k in 0..if full { 20 } else { 3 } {
            let model = HidFlowNet::<f64>::new(&cfg, Init::Randomized, seed.wrapping_add(k))?;
            let x = uniform(&[2, 4, 4], -1.0, 1.0, &mut rng);
            worst = worst.max(logdet_error(&model, &x, &random_cube(4, 4, 2, &mut rng))?);
        }
        Ok(worst)
    })?);

    checks.push(timed("loss gradient vs finite differences", 1e-3, || {
        let cfg = model_config(2, 4, 3, 2, 2, 1);
        let model = HidFlowNet::<f64>::new(&cfg, Init::Randomized, seed)?;
        let mut rng = stream(seed, Stream::Verify, &[3]);
        let x = random_cube(8, 8, 2, &mut rng);
        let y = random_cube(8, 8, 2, &mut rng);
        let z: Tensor<f64> = uniform(&[2, 8, 8], -1.0, 1.0, &mut rng);
        let errors = gradient_errors(&model, &x, &y, &z, if full { None } else { Some(6) })?;
        Ok(errors.into_iter().map(|(_, e)| e).fold(0.0, f64::max))
    })?);

    let (inv_err, nll_err) = identity_errors(seed)?;
    checks.push(Check {
        name: "identity init inverse".into(),
        value: inv_err,
        limit: 1e-6,
        passed: inv_err <= 1e-6,
        seconds: 0.0,
    });
    checks.push(Check {
        name: "identity init NLL".into(),
        value: nll_err,
        limit: 1e-9,
        passed: nll_err <= 1e-9,
        seconds: 0.0,
    });

    checks.push(timed("density integrates to one", 1e-3, || {
        let cfg = model_config(2, 2, 1, 1, 1, 1);
        let model = HidFlowNet::<f64>::new(&cfg, Init::Randomized, seed)?;
        let y = random_cube(1, 1, 2, &mut stream(seed, Stream::Verify, &[5]));
        Ok((density_mass(&model, &y, if full { 0.05 } else { 0.1 })? - 1.0).abs())
    })?);

    if let Some((model, extent)) = checkpoint {
        checks.push(timed("checkpoint round trip", 1e-6, || {
            let b = model.config().bands;
            let mut rng = stream(seed, Stream::Verify, &[6]);
            let x = uniform(&[b, extent, extent], 0.0, 1.0, &mut rng);
            round_trip_error(model, &x, &random_cube(extent, extent, b, &mut rng))
        })?);
    }
    Ok(checks)
}
