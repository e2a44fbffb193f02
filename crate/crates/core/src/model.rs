use hidflow_tensor::{Real, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::cube::HsiCube;
use crate::encoder::{Encoder, HinCaBlock};
use crate::error::{HidError, Result};
use crate::flow::{self, split_transfer, Conditioning, FlowTrace};
use crate::layers::{Init, Initializer};
use crate::model_config::ModelConfig;
use crate::params::{Bound, ParamId, ParameterStore};
use crate::rng::{self, Stream};

#[derive(Clone, Debug)]
struct Icb {
    transfer: HinCaBlock,
    residual: ParamId,
    stage: usize,
}

/// Encoder plus invertible decoder, with its parameters.
#[derive(Clone, Debug)]
pub struct HidFlowNet<T> {
    config: ModelConfig,
    store: ParameterStore<T>,
    encoder: Encoder,
    blocks: Vec<Icb>,
}

/// Encoder feature maps routed to the decoder blocks.
pub struct ConditionStack<'t, T> {
    /// Stage outputs at their native resolution, finest first.
    pub stages: Vec<Var<'t, T>>,
    /// The same maps upsampled to the working resolution.
    pub upsampled: Vec<Var<'t, T>>,
    /// 1-based stage feeding each decoder block.
    pub block_stage: Vec<usize>,
}

impl<'t, T: Real> ConditionStack<'t, T> {
    /// Native-resolution condition of decoder block `k` and its upsampling
    /// factor.
    pub fn for_block(&self, k: usize) -> (Var<'t, T>, usize) {
        let s = self.block_stage[k - 1];
        (self.stages[s - 1], 1 << (s - 1))
    }
}

fn upsample_times<'t, T: Real>(mut x: Var<'t, T>, times: usize) -> Result<Var<'t, T>> {
    for _ in 0..times {
        x = x.upsample_bilinear2x()?;
    }
    Ok(x)
}

impl<T: Real> HidFlowNet<T> {
    pub fn new(config: &ModelConfig, init: Init, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new();
        let mut initializer = Initializer::new(&mut store, init, seed);
        let encoder = Encoder::new(&mut initializer, config)?;
        let (n, s) = (config.flow.blocks, config.encoder.stages);
        let mut blocks = Vec::with_capacity(n);
        for k in 1..=n {
            let stage = flow::stage_for_block(k, n, s);
            let transfer = HinCaBlock::new(
                &mut initializer,
                &format!("flow.icb{k}.transfer"),
                config.encoder.stage_channels(stage),
                config.flow.transfer_width,
                2 * config.bands,
                config.flow.attention_reduction,
            )?;
            let residual =
                initializer.residual_matrix(&format!("flow.icb{k}.residual"), config.bands)?;
            blocks.push(Icb {
                transfer,
                residual,
                stage,
            });
        }
        Ok(HidFlowNet {
            config: config.clone(),
            store,
            encoder,
            blocks,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore<T> {
        &mut self.store
    }

    /// Parameter id of decoder block `k`'s residual matrix `W`.
    pub fn residual_id(&self, k: usize) -> ParamId {
        self.blocks[k - 1].residual
    }

    pub fn blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Checks `|det(W + I)|` of every block against the singularity guard.
    pub fn check_residuals(&self) -> Result<()> {
        for (k, block) in self.blocks.iter().enumerate() {
            let w = self.store.value(block.residual).to_f64_vec();
            let c = self.config.bands;
            let m =
                Tensor::<f64>::from_fn(&[c, c], |i| w[i] + if i / c == i % c { 1.0 } else { 0.0 });
            let lu = hidflow_tensor::linalg::Lu::factor(&m)?;
            lu.ensure_nonsingular("residual_conv", flow::SINGULARITY_GUARD)
                .map_err(|_| HidError::NonFinite {
                    quantity: "residual conv determinant",
                    layer: format!("icb{}.conv", k + 1),
                })?;
        }
        Ok(())
    }

    /// Runs the encoder on `y` (`B×H×W`) and upsamples its stages.
    pub fn condition_stack<'t>(
        &self,
        p: &Bound<'t, T>,
        y: Var<'t, T>,
    ) -> Result<(ConditionStack<'t, T>, Var<'t, T>)> {
        let out = self.encoder.encode(p, y)?;
        let upsampled = out
            .stages
            .iter()
            .enumerate()
            .map(|(i, &t)| upsample_times(t, i))
            .collect::<Result<Vec<_>>>()?;
        let lowfreq = upsample_times(out.lowfreq_base, out.stages.len() - 1)?;
        let stack = ConditionStack {
            stages: out.stages,
            upsampled,
            block_stage: self.blocks.iter().map(|b| b.stage).collect(),
        };
        Ok((stack, lowfreq))
    }

    /// Resolves every decoder block's scale and shift from `y`.
    pub fn condition<'t>(&self, p: &Bound<'t, T>, y: Var<'t, T>) -> Result<Conditioning<'t, T>> {
        let (stack, lowfreq) = self.condition_stack(p, y)?;
        let mut affine = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let t = stack.upsampled[block.stage - 1];
            affine.push(split_transfer(
                block.transfer.forward(p, t)?,
                self.config.flow.clamp,
            )?);
        }
        let residual = self.blocks.iter().map(|b| p.get(b.residual)).collect();
        Ok(Conditioning {
            affine,
            residual,
            lowfreq,
        })
    }

    pub fn flow_forward<'t>(
        &self,
        x: Var<'t, T>,
        cond: &Conditioning<'t, T>,
    ) -> Result<FlowTrace<'t, T>> {
        flow::flow_forward(x, cond)
    }

    pub fn flow_inverse<'t>(
        &self,
        z: Var<'t, T>,
        cond: &Conditioning<'t, T>,
    ) -> Result<Var<'t, T>> {
        flow::flow_inverse(z, cond)
    }

    /// Draws `ẑ ~ N(0, τ²I)` shaped `B×H×W`.
    pub fn latent(shape: &[usize], temperature: f64, rng: &mut impl Rng) -> Tensor<T> {
        Tensor::from_fn(shape, |_| {
            let v: f64 = rng.sample(StandardNormal);
            T::from_f64_lossy(temperature * v)
        })
    }

    /// Unclamped reconstruction `f⁻¹(z; y)` for an explicit latent.
    pub fn reconstruct(&self, y: &HsiCube, z: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = self.store.bind(&tape, false);
        let cond = self.condition(&p, tape.constant(y.to_tensor()))?;
        let x = self.flow_inverse(tape.constant(z.clone()), &cond)?;
        Ok(x.value())
    }

    /// Draws `samples` latents at temperature `τ` and reconstructs each;
    /// results are clamped to `[0, 1]`. Sample `i` uses its own seeded
    /// stream, so results do not depend on `samples`.
    pub fn sample(
        &self,
        y: &HsiCube,
        samples: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<HsiCube>> {
        let tape = Tape::new();
        let p = self.store.bind(&tape, false);
        let cond = self.condition(&p, tape.constant(y.to_tensor()))?;
        let shape = [y.bands(), y.height(), y.width()];
        (0..samples)
            .map(|i| {
                let mut rng = rng::stream(seed, Stream::Sample, &[i as u64]);
                let z = tape.constant(Self::latent(&shape, temperature, &mut rng));
                let x = self.flow_inverse(z, &cond)?.value();
                Ok(HsiCube::from_tensor(&x)?.clamp_unit())
            })
            .collect()
    }

    /// Point estimate at `z = 0`, clamped to `[0, 1]`.
    pub fn denoise(&self, y: &HsiCube) -> Result<HsiCube> {
        let z = Tensor::zeros(&[y.bands(), y.height(), y.width()]);
        Ok(HsiCube::from_tensor(&self.reconstruct(y, &z)?)?.clamp_unit())
    }
}
