//! Synthetic noise. σ values are given on the 0–255 scale and divided by
//! 255 for `[0, 1]` data. Noisy values are never clamped.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{HidError, Result};
use crate::rng::{self, Stream};

/// Parameter ranges of the mixture protocol. Ranges are inclusive `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSpec {
    /// Per-band Gaussian σ, 0–255 scale.
    pub sigma: [f64; 2],
    /// Fraction of pixels hit by salt-and-pepper noise in an impulse band.
    pub impulse_ratio: [f64; 2],
    /// Fraction of columns receiving a stripe offset.
    pub stripe_fraction: [f64; 2],
    pub stripe_offset: [f64; 2],
    /// Fraction of columns starting a dead line.
    pub deadline_fraction: [f64; 2],
    pub deadline_width: [usize; 2],
}

impl Default for MixtureSpec {
    fn default() -> Self {
        MixtureSpec {
            sigma: [10.0, 70.0],
            impulse_ratio: [0.1, 0.5],
            stripe_fraction: [0.05, 0.15],
            stripe_offset: [-0.25, 0.25],
            deadline_fraction: [0.05, 0.15],
            deadline_width: [1, 3],
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, r: [f64; 2]| {
            if r[0] <= r[1] && r.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(HidError::Config(format!(
                    "mixture {name} range {r:?} is empty"
                )))
            }
        };
        let fraction = |name: &str, r: [f64; 2]| {
            range(name, r)?;
            if r[0] > 0.0 && r[1] < 1.0 {
                Ok(())
            } else {
                Err(HidError::Config(format!(
                    "mixture {name} range {r:?} must lie inside (0, 1)"
                )))
            }
        };
        range("sigma", self.sigma)?;
        if self.sigma[0] < 0.0 {
            return Err(HidError::Config(
                "mixture sigma must be non-negative".into(),
            ));
        }
        fraction("impulse_ratio", self.impulse_ratio)?;
        fraction("stripe_fraction", self.stripe_fraction)?;
        range("stripe_offset", self.stripe_offset)?;
        fraction("deadline_fraction", self.deadline_fraction)?;
        if self.deadline_width[0] == 0 || self.deadline_width[0] > self.deadline_width[1] {
            return Err(HidError::Config(format!(
                "deadline_width range {:?} is invalid",
                self.deadline_width
            )));
        }
        Ok(())
    }
}

/// A degradation to apply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Gaussian { sigma: f64 },
    Mixture(MixtureSpec),
}

impl NoiseSpec {
    pub fn apply(&self, x: &HsiCube, seed: u64) -> Result<HsiCube> {
        match self {
            NoiseSpec::Gaussian { sigma } => Ok(add_gaussian(x, *sigma, seed)),
            NoiseSpec::Mixture(spec) => Ok(add_mixture(x, spec, seed)?.0),
        }
    }
}

fn gaussian_field(x: &mut HsiCube, band: Option<usize>, sigma: f64, rng: &mut ChaCha8Rng) {
    let bands = x.bands();
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        if band.is_none_or(|b| i % bands == b) {
            let e: f64 = rng.sample(StandardNormal);
            *v += sigma * e;
        }
    }
}

/// `y = x + ε`, `ε ~ N(0, (σ/255)²)` i.i.d.
pub fn add_gaussian(x: &HsiCube, sigma_255: f64, seed: u64) -> HsiCube {
    let mut y = x.clone();
    if sigma_255 != 0.0 {
        let mut rng = rng::stream(seed, Stream::Noise, &[0]);
        gaussian_field(&mut y, None, sigma_255 / 255.0, &mut rng);
    }
    y
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpulseBand {
    pub band: usize,
    pub ratio: f64,
    /// Seed of the per-pixel hit/value draws.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripeBand {
    pub band: usize,
    pub fraction: f64,
    pub columns: Vec<usize>,
    pub offsets: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeadlineBand {
    pub band: usize,
    pub fraction: f64,
    /// `(first column, width)` of each dead line.
    pub lines: Vec<(usize, usize)>,
}

/// Every draw made by [`add_mixture`]. Per-element fields (the Gaussian
/// noise and the impulse pixels) are recorded by the seed of their band's
/// own stream; everything else is recorded explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureLog {
    /// Per-band σ on the `[0, 1]` scale.
    pub band_sigma: Vec<f64>,
    pub gaussian_seeds: Vec<u64>,
    pub impulse_bands: Vec<usize>,
    pub stripe_bands: Vec<usize>,
    pub deadline_bands: Vec<usize>,
    pub impulse: Vec<ImpulseBand>,
    pub stripes: Vec<StripeBand>,
    pub deadlines: Vec<DeadlineBand>,
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn column_count(width: usize, fraction: f64) -> usize {
    ((fraction * width as f64).round() as usize).clamp(1, width)
}

/// Splits `0..n` into three parts whose sizes differ by at most one.
fn three_way(order: &[usize]) -> [Vec<usize>; 3] {
    let n = order.len();
    let a = n.div_ceil(3);
    let b = (n - a).div_ceil(2);
    let mut parts = [
        order[..a].to_vec(),
        order[a..a + b].to_vec(),
        order[a + b..].to_vec(),
    ];
    for p in &mut parts {
        p.sort_unstable();
    }
    parts
}

/// Mixture noise: per-band Gaussian, then impulse, stripe and dead-line
/// noise on three random, disjoint band groups.
pub fn add_mixture(x: &HsiCube, spec: &MixtureSpec, seed: u64) -> Result<(HsiCube, MixtureLog)> {
    spec.validate()?;
    let (_, w, bands) = x.dims();
    if bands < 3 {
        return Err(HidError::Data(format!(
            "mixture noise needs at least 3 bands, got {bands}"
        )));
    }
    let mut rng = rng::stream(seed, Stream::Noise, &[1]);
    let band_sigma: Vec<f64> = (0..bands)
        .map(|_| uniform(&mut rng, spec.sigma) / 255.0)
        .collect();
    let gaussian_seeds: Vec<u64> = (0..bands).map(|_| rng.random()).collect();

    let mut order: Vec<usize> = (0..bands).collect();
    order.shuffle(&mut rng);
    let [impulse_bands, stripe_bands, deadline_bands] = three_way(&order);

    let impulse = impulse_bands
        .iter()
        .map(|&band| ImpulseBand {
            band,
            ratio: uniform(&mut rng, spec.impulse_ratio),
            seed: rng.random(),
        })
        .collect();
    let stripes = stripe_bands
        .iter()
        .map(|&band| {
            let fraction = uniform(&mut rng, spec.stripe_fraction);
            let mut columns =
                rand::seq::index::sample(&mut rng, w, column_count(w, fraction)).into_vec();
            columns.sort_unstable();
            let offsets = columns
                .iter()
                .map(|_| uniform(&mut rng, spec.stripe_offset))
                .collect();
            StripeBand {
                band,
                fraction,
                columns,
                offsets,
            }
        })
        .collect();
    let deadlines = deadline_bands
        .iter()
        .map(|&band| {
            let fraction = uniform(&mut rng, spec.deadline_fraction);
            let mut starts =
                rand::seq::index::sample(&mut rng, w, column_count(w, fraction)).into_vec();
            starts.sort_unstable();
            let [lo, hi] = spec.deadline_width;
            let lines = starts
                .into_iter()
                .map(|c| (c, rng.random_range(lo..=hi)))
                .collect();
            DeadlineBand {
                band,
                fraction,
                lines,
            }
        })
        .collect();

    let log = MixtureLog {
        band_sigma,
        gaussian_seeds,
        impulse_bands,
        stripe_bands,
        deadline_bands,
        impulse,
        stripes,
        deadlines,
    };
    Ok((replay_mixture(x, &log)?, log))
}

/// Re-creates a mixture degradation from its log alone.
pub fn replay_mixture(x: &HsiCube, log: &MixtureLog) -> Result<HsiCube> {
    let (h, w, bands) = x.dims();
    if log.band_sigma.len() != bands || log.gaussian_seeds.len() != bands {
        return Err(HidError::Data(format!(
            "mixture log describes {} bands, cube has {bands}",
            log.band_sigma.len()
        )));
    }
    let mut y = x.clone();
    for b in 0..bands {
        let mut rng = rng::stream(log.gaussian_seeds[b], Stream::Noise, &[2]);
        gaussian_field(&mut y, Some(b), log.band_sigma[b], &mut rng);
    }
    for ib in &log.impulse {
        let mut rng = rng::stream(ib.seed, Stream::Noise, &[3]);
        for r in 0..h {
            for c in 0..w {
                if rng.random_bool(ib.ratio) {
                    y.set(r, c, ib.band, if rng.random_bool(0.5) { 1.0 } else { 0.0 });
                }
            }
        }
    }
    for sb in &log.stripes {
        for (&c, &off) in sb.columns.iter().zip(&sb.offsets) {
            for r in 0..h {
                let v = y.get(r, c, sb.band);
                y.set(r, c, sb.band, v + off);
            }
        }
    }
    for db in &log.deadlines {
        for &(start, width) in &db.lines {
            for c in start..(start + width).min(w) {
                for r in 0..h {
                    y.set(r, c, db.band, 0.0);
                }
            }
        }
    }
    Ok(y)
}
