//! Training loop. Every random draw is keyed by the run seed and the global
//! batch counter, so a run resumed from a checkpoint follows the same
//! trajectory as an uninterrupted one.

use std::path::{Path, PathBuf};

use hidflow_tensor::{Real, Tape, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::cube::HsiCube;
use crate::data::{self, augment};
use crate::degradation::NoiseSpec;
use crate::error::{HidError, Result};
use crate::io::write_atomic;
use crate::layers::Init;
use crate::metrics::psnr;
use crate::model::HidFlowNet;
use crate::objective::{adam_step, nll_loss, rec_loss, total_loss, StepOutcome};
use crate::params::ParameterStore;
use crate::rng::{self, derive_seed, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Gaussian,
    Mixture,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSums {
    pub total: f64,
    pub nll: f64,
    pub rec: f64,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub phase: Phase,
    pub steps: u64,
    /// NaN when every step of the epoch was skipped.
    #[serde(with = "nan_as_null")]
    pub total: f64,
    #[serde(with = "nan_as_null")]
    pub nll: f64,
    #[serde(with = "nan_as_null")]
    pub rec: f64,
    pub val_psnr: Option<f64>,
}

/// JSON has no NaN; store it as `null`.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Trainer bookkeeping persisted in checkpoints.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Batches processed, including skipped ones.
    pub batches: u64,
    pub consecutive_failures: u32,
    pub skipped: u64,
    pub restores: u64,
    pub epoch_sums: LossSums,
    pub log: Vec<EpochRecord>,
    pub events: Vec<String>,
}

/// Per-sample losses, batch means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub batch: u64,
    pub total: f64,
    pub nll: f64,
    pub rec: f64,
    pub applied: bool,
}

struct Validation {
    clean: HsiCube,
    noisy: HsiCube,
}

pub struct Trainer<T> {
    pub config: RunConfig,
    pub model: HidFlowNet<T>,
    pub state: TrainState,
    patches: Vec<HsiCube>,
    validation: Option<Validation>,
    last_good: ParameterStore<T>,
}

struct SampleResult<T> {
    grads: Vec<Tensor<T>>,
    total: f64,
    nll: f64,
    rec: f64,
}

/// Training and validation cubes named by a config: files, or the toy
/// dataset with the first held-out cube for validation.
pub fn load_data(config: &RunConfig) -> Result<(Vec<HsiCube>, Option<HsiCube>)> {
    if let Some(spec) = &config.data.synthetic {
        let cubes = data::synthetic_dataset(spec, config.seed);
        let validation = data::synthetic_cube(spec, config.seed, spec.count as u64);
        return Ok((cubes, Some(validation)));
    }
    if config.data.train.is_empty() {
        return Err(HidError::Config(
            "no training data: set data.train or data.synthetic".into(),
        ));
    }
    let cubes = config
        .data
        .train
        .iter()
        .map(|p| crate::io::read_cube(p))
        .collect::<Result<Vec<_>>>()?;
    let validation = config
        .data
        .validation
        .as_deref()
        .map(crate::io::read_cube)
        .transpose()?;
    Ok((cubes, validation))
}

impl<T: Real> Trainer<T> {
    pub fn new(config: RunConfig, cubes: &[HsiCube], validation: Option<HsiCube>) -> Result<Self> {
        config.validate()?;
        let model = HidFlowNet::new(&config.model, Init::Standard, config.seed)?;
        Self::with_model(config, model, TrainState::default(), cubes, validation)
    }

    pub fn resume(
        loaded: checkpoint::Loaded<T>,
        cubes: &[HsiCube],
        validation: Option<HsiCube>,
    ) -> Result<Self> {
        Self::with_model(loaded.config, loaded.model, loaded.state, cubes, validation)
    }

    fn with_model(
        config: RunConfig,
        model: HidFlowNet<T>,
        state: TrainState,
        cubes: &[HsiCube],
        validation: Option<HsiCube>,
    ) -> Result<Self> {
        let t = &config.train;
        let mut patches = Vec::new();
        for cube in cubes {
            if cube.bands() != config.model.bands {
                return Err(HidError::Data(format!(
                    "training cube has {} bands, model expects {}",
                    cube.bands(),
                    config.model.bands
                )));
            }
            patches.extend(data::make_patches(cube, t.patch_size, t.patch_stride)?);
        }
        if patches.is_empty() {
            return Err(HidError::Data("no training patches".into()));
        }
        let validation = validation
            .map(|clean| {
                config.model.check_spatial(clean.height(), clean.width())?;
                let noisy = config
                    .noise
                    .gaussian()
                    .apply(&clean, derive_seed(config.seed, Stream::Validation, &[]))?;
                Ok::<_, HidError>(Validation { clean, noisy })
            })
            .transpose()?;
        let last_good = model.store().clone();
        Ok(Trainer {
            config,
            model,
            state,
            patches,
            validation,
            last_good,
        })
    }

    pub fn patch_count(&self) -> usize {
        self.patches.len()
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.patches.len().div_ceil(self.config.train.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        let t = &self.config.train;
        let full = self.steps_per_epoch() * (t.gaussian_epochs + t.mixture_epochs);
        t.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn is_finished(&self) -> bool {
        self.state.batches >= self.total_steps()
    }

    fn phase(&self, epoch: u64) -> Phase {
        if epoch < self.config.train.gaussian_epochs {
            Phase::Gaussian
        } else {
            Phase::Mixture
        }
    }

    fn noise(&self, phase: Phase) -> NoiseSpec {
        match phase {
            Phase::Gaussian => self.config.noise.gaussian(),
            Phase::Mixture => self.config.noise.mixture(),
        }
    }

    /// Patch indices of batch `b`.
    fn batch_indices(&self, b: u64) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let (epoch, slot) = (b / spe, (b % spe) as usize);
        let mut order: Vec<usize> = (0..self.patches.len()).collect();
        order.shuffle(&mut rng::stream(
            self.config.seed,
            Stream::Shuffle,
            &[epoch],
        ));
        let bs = self.config.train.batch_size;
        order[slot * bs..((slot + 1) * bs).min(order.len())].to_vec()
    }

    /// Clean/noisy training pairs of batch `b`.
    pub fn batch(&self, b: u64) -> Result<Vec<(HsiCube, HsiCube)>> {
        let seed = self.config.seed;
        let noise = self.noise(self.phase(b / self.steps_per_epoch()));
        self.batch_indices(b)
            .into_iter()
            .enumerate()
            .map(|(i, idx)| {
                let patch = &self.patches[idx];
                let clean = if self.config.train.augment {
                    augment(patch, seed, &[b, i as u64])
                } else {
                    patch.clone()
                };
                let noisy =
                    noise.apply(&clean, derive_seed(seed, Stream::Noise, &[b, i as u64]))?;
                Ok((clean, noisy))
            })
            .collect()
    }

    fn sample_gradients(
        &self,
        clean: &HsiCube,
        noisy: &HsiCube,
        z_hat: &Tensor<T>,
    ) -> Result<SampleResult<T>> {
        let tape = Tape::new();
        let p = self.model.store().bind(&tape, true);
        let x = tape.constant(clean.to_tensor());
        let cond = self.model.condition(&p, tape.constant(noisy.to_tensor()))?;
        let trace = self.model.flow_forward(x, &cond)?;
        let nll = nll_loss(&trace)?;
        let x_hat = self
            .model
            .flow_inverse(tape.constant(z_hat.clone()), &cond)?;
        let rec = rec_loss(x_hat, x)?;
        let total = total_loss(nll, rec, &self.config.optim)?;
        let (tv, nv, rv) = (
            total.item()?.as_f64(),
            nll.item()?.as_f64(),
            rec.item()?.as_f64(),
        );
        if !(tv.is_finite() && rv.is_finite()) {
            return Err(HidError::NonFinite {
                quantity: "loss",
                layer: "reconstruction".into(),
            });
        }
        let mut grads = tape.backward(total)?;
        let grads = p.vars().iter().map(|&v| grads.take(v)).collect();
        Ok(SampleResult {
            grads,
            total: tv,
            nll: nv,
            rec: rv,
        })
    }

    fn record_failure(&mut self, why: String) {
        let s = &mut self.state;
        s.skipped += 1;
        s.consecutive_failures += 1;
        s.events
            .push(format!("batch {}: step skipped: {why}", s.batches));
        log::warn!("batch {}: step skipped: {why}", s.batches);
        if s.consecutive_failures >= self.config.train.max_consecutive_failures {
            *self.model.store_mut() = self.last_good.clone();
            let s = &mut self.state;
            s.restores += 1;
            s.consecutive_failures = 0;
            s.events
                .push(format!("batch {}: restored last checkpoint", s.batches));
            log::warn!("batch {}: restored last checkpoint", s.batches);
        }
    }

    /// Processes the next batch.
    pub fn step(&mut self) -> Result<StepReport> {
        let b = self.state.batches;
        let pairs = self.batch(b)?;
        let bands = self.config.model.bands;
        let size = self.config.train.patch_size;
        let z_hat = HidFlowNet::<T>::latent(
            &[bands, size, size],
            1.0,
            &mut rng::stream(self.config.seed, Stream::Latent, &[b]),
        );
        let results: Vec<Result<SampleResult<T>>> = pairs
            .par_iter()
            .map(|(clean, noisy)| self.sample_gradients(clean, noisy, &z_hat))
            .collect();

        let n = results.len();
        let mut report = StepReport {
            batch: b,
            total: f64::NAN,
            nll: f64::NAN,
            rec: f64::NAN,
            applied: false,
        };
        let mut sum: Option<SampleResult<T>> = None;
        let mut failure = None;
        for r in results {
            match r {
                Ok(r) => match &mut sum {
                    None => sum = Some(r),
                    Some(acc) => {
                        for (a, g) in acc.grads.iter_mut().zip(&r.grads) {
                            *a = a.zip_map(g, "gradient sum", |x, y| x + y)?;
                        }
                        acc.total += r.total;
                        acc.nll += r.nll;
                        acc.rec += r.rec;
                    }
                },
                Err(e @ (HidError::NonFinite { .. } | HidError::Tensor(_))) => {
                    failure.get_or_insert(e.to_string());
                }
                Err(e) => return Err(e),
            }
        }

        if let (None, Some(acc)) = (&failure, sum) {
            let scale = T::from_f64_lossy(1.0 / n as f64);
            let grads: Vec<Tensor<T>> = acc
                .grads
                .into_iter()
                .map(|g| g.map(|v| v * scale))
                .collect();
            let before = self.model.store().clone();
            match adam_step(self.model.store_mut(), &grads, &self.config.optim)? {
                StepOutcome::Skipped { parameter } => {
                    failure = Some(format!("non-finite gradient for `{parameter}`"))
                }
                StepOutcome::Applied => {
                    if let Err(e) = self.model.check_residuals() {
                        *self.model.store_mut() = before;
                        failure = Some(e.to_string());
                    }
                }
            }
            report.total = acc.total / n as f64;
            report.nll = acc.nll / n as f64;
            report.rec = acc.rec / n as f64;
        }
        match failure {
            Some(why) => self.record_failure(why),
            None => {
                report.applied = true;
                self.state.consecutive_failures = 0;
                let s = &mut self.state.epoch_sums;
                s.total += report.total;
                s.nll += report.nll;
                s.rec += report.rec;
                s.steps += 1;
            }
        }
        self.state.batches += 1;
        if self.state.batches.is_multiple_of(self.steps_per_epoch()) || self.is_finished() {
            self.close_epoch()?;
        }
        Ok(report)
    }

    /// PSNR of the `τ = 0` estimate on the validation cube, and of the noisy
    /// input itself.
    pub fn validate(&self) -> Result<Option<(f64, f64)>> {
        let Some(v) = &self.validation else {
            return Ok(None);
        };
        let restored = self.model.denoise(&v.noisy)?;
        Ok(Some((
            psnr(&restored, &v.clean, 1.0)?,
            psnr(&v.noisy, &v.clean, 1.0)?,
        )))
    }

    fn close_epoch(&mut self) -> Result<()> {
        let spe = self.steps_per_epoch();
        let epoch = (self.state.batches - 1) / spe;
        let sums = std::mem::take(&mut self.state.epoch_sums);
        let mean = |v: f64| {
            if sums.steps > 0 {
                v / sums.steps as f64
            } else {
                f64::NAN
            }
        };
        let val_psnr = self.validate()?.map(|(p, _)| p).filter(|p| p.is_finite());
        let record = EpochRecord {
            epoch,
            phase: self.phase(epoch),
            steps: sums.steps,
            total: mean(sums.total),
            nll: mean(sums.nll),
            rec: mean(sums.rec),
            val_psnr,
        };
        log::info!(
            "epoch {} ({:?}): total {:.5} nll {:.3} rec {:.5} val PSNR {:?}",
            record.epoch,
            record.phase,
            record.total,
            record.nll,
            record.rec,
            record.val_psnr
        );
        self.state.log.push(record);
        Ok(())
    }

    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        checkpoint::to_bytes(&self.model, &self.config, &self.state)
    }

    /// Marks the current parameters as the restore point.
    pub fn mark_checkpoint(&mut self) {
        self.last_good = self.model.store().clone();
    }

    /// Steps until finished. `on_checkpoint` runs after every
    /// `checkpoint_every` steps and once at the end.
    pub fn run(&mut self, mut on_checkpoint: impl FnMut(&Self) -> Result<()>) -> Result<()> {
        let every = self.config.output.checkpoint_every;
        while !self.is_finished() {
            self.step()?;
            if self.is_finished() || (every > 0 && self.state.batches.is_multiple_of(every)) {
                on_checkpoint(self)?;
                self.mark_checkpoint();
            }
        }
        Ok(())
    }

    /// CSV rendering of the epoch log.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,phase,steps,total,nll,rec,val_psnr_db\n");
        for r in &self.state.log {
            let phase = match r.phase {
                Phase::Gaussian => "gaussian",
                Phase::Mixture => "mixture",
            };
            let val = r.val_psnr.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{phase},{},{},{},{},{val}\n",
                r.epoch, r.steps, r.total, r.nll, r.rec
            ));
        }
        out
    }
}

pub fn checkpoint_path(dir: &Path, batches: u64) -> PathBuf {
    dir.join(format!("checkpoint-{batches:07}.hidf"))
}

pub const FINAL_CHECKPOINT: &str = "final.hidf";
pub const TRAIN_LOG: &str = "train_log.csv";

/// Runs to completion, writing periodic checkpoints, `final.hidf` and
/// `train_log.csv` into `dir`.
pub fn run_to_dir<T: Real>(trainer: &mut Trainer<T>, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| HidError::io(dir, e))?;
    trainer.run(|t| {
        let bytes = t.checkpoint_bytes()?;
        write_atomic(&checkpoint_path(dir, t.state.batches), &bytes)?;
        if t.is_finished() {
            write_atomic(&dir.join(FINAL_CHECKPOINT), &bytes)?;
        }
        write_atomic(&dir.join(TRAIN_LOG), t.log_csv().as_bytes())
    })?;
    Ok(dir.join(FINAL_CHECKPOINT))
}
