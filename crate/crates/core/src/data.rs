//! Patch extraction, geometric augmentation and the synthetic toy dataset.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{HidError, Result};
use crate::rng::{self, Stream};

/// Number of aligned `size×size` windows at `stride` along one axis.
fn positions(extent: usize, size: usize, stride: usize) -> usize {
    (extent - size) / stride + 1
}

/// All aligned spatial windows, row-major by window origin.
pub fn make_patches(cube: &HsiCube, size: usize, stride: usize) -> Result<Vec<HsiCube>> {
    let (h, w, _) = cube.dims();
    if size == 0 || stride == 0 {
        return Err(HidError::Config(
            "patch size and stride must be positive".into(),
        ));
    }
    if h < size || w < size {
        return Err(HidError::Data(format!(
            "cube {h}×{w} is smaller than the {size}×{size} patch size"
        )));
    }
    let mut out = Vec::with_capacity(positions(h, size, stride) * positions(w, size, stride));
    for i in 0..positions(h, size, stride) {
        for j in 0..positions(w, size, stride) {
            out.push(cube.crop(i * stride, j * stride, size, size)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flip {
    None,
    Horizontal,
    Vertical,
}

/// A flip followed by a counter-clockwise rotation of `quarter_turns·90°`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub flip: Flip,
    pub quarter_turns: u8,
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        flip: Flip::None,
        quarter_turns: 0,
    };

    /// One of the 12 flip/rotation combinations, uniformly.
    pub fn draw(seed: u64, indices: &[u64]) -> Self {
        let k = rng::stream(seed, Stream::Augment, indices).random_range(0..12u8);
        let flip = [Flip::None, Flip::Horizontal, Flip::Vertical][(k / 4) as usize];
        Augmentation {
            flip,
            quarter_turns: k % 4,
        }
    }

    pub fn apply(&self, cube: &HsiCube) -> HsiCube {
        let flipped = match self.flip {
            Flip::None => cube.clone(),
            Flip::Horizontal => flip_horizontal(cube),
            Flip::Vertical => flip_vertical(cube),
        };
        (0..self.quarter_turns % 4).fold(flipped, |c, _| rotate90(&c))
    }
}

pub fn flip_horizontal(c: &HsiCube) -> HsiCube {
    let (h, w, b) = c.dims();
    HsiCube::from_fn(h, w, b, |y, x, k| c.get(y, w - 1 - x, k))
}

pub fn flip_vertical(c: &HsiCube) -> HsiCube {
    let (h, w, b) = c.dims();
    HsiCube::from_fn(h, w, b, |y, x, k| c.get(h - 1 - y, x, k))
}

/// Counter-clockwise quarter turn; the spectral axis is untouched.
pub fn rotate90(c: &HsiCube) -> HsiCube {
    let (h, w, b) = c.dims();
    HsiCube::from_fn(w, h, b, |y, x, k| c.get(x, w - 1 - y, k))
}

/// Random augmentation of a training patch.
pub fn augment(patch: &HsiCube, seed: u64, indices: &[u64]) -> HsiCube {
    Augmentation::draw(seed, indices).apply(patch)
}

/// Toy dataset shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub bumps: [usize; 2],
    /// Spatial standard deviation range of each bump, in pixels.
    pub radius: [f64; 2],
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            count: 64,
            height: 32,
            width: 32,
            bands: 8,
            bumps: [3, 6],
            radius: [2.0, 8.0],
        }
    }
}

/// Smooth cubes built from 2-D Gaussian bumps. Each bump's spectrum is a
/// slowly varying sinusoid over the band index, so neighbouring bands are
/// strongly correlated. Values land in `[0.05, 0.95]`.
pub fn synthetic_cube(spec: &SyntheticSpec, seed: u64, index: u64) -> HsiCube {
    let mut rng = rng::stream(seed, Stream::Dataset, &[index]);
    let n = rng.random_range(spec.bumps[0]..=spec.bumps[1]);
    let bumps: Vec<_> = (0..n)
        .map(|_| {
            let cy = rng.random_range(0.0..spec.height as f64);
            let cx = rng.random_range(0.0..spec.width as f64);
            let r = rng.random_range(spec.radius[0]..=spec.radius[1]);
            let amp = rng.random_range(0.3..1.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let freq =
                rng.random_range(0.2..0.8) / spec.bands.max(1) as f64 * std::f64::consts::TAU;
            (cy, cx, r, amp, phase, freq)
        })
        .collect();
    let raw = HsiCube::from_fn(spec.height, spec.width, spec.bands, |y, x, b| {
        bumps
            .iter()
            .map(|&(cy, cx, r, amp, phase, freq)| {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                let spectral = 0.6 + 0.4 * (phase + freq * b as f64).sin();
                amp * spectral * (-d2 / (2.0 * r * r)).exp()
            })
            .sum()
    });
    let peak = raw.data().iter().cloned().fold(0.0, f64::max).max(1e-12);
    let data = raw.data().iter().map(|v| 0.05 + 0.9 * v / peak).collect();
    HsiCube::new(spec.height, spec.width, spec.bands, data).expect("dimensions are consistent")
}

pub fn synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Vec<HsiCube> {
    (0..spec.count as u64)
        .map(|i| synthetic_cube(spec, seed, i))
        .collect()
}
