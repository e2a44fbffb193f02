//! Image quality metrics between a restored and a reference cube.

use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{HidError, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Pixels whose spectrum norm falls below this are skipped by SAM.
pub const SAM_MIN_NORM: f64 = 1e-8;

/// `10·log10(peak² / MSE)` over the whole cube. Identical cubes give
/// `f64::INFINITY`.
pub fn psnr(x_hat: &HsiCube, x: &HsiCube, peak: f64) -> Result<f64> {
    x_hat.same_dims(x)?;
    let mse = x_hat
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h×w` plane.
fn filter(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|j| g[j] * plane[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| g[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM over bands, 11×11 Gaussian window (σ = 1.5), valid region,
/// `C1 = (0.01·peak)²`, `C2 = (0.03·peak)²`.
pub fn ssim(x_hat: &HsiCube, x: &HsiCube, peak: f64) -> Result<f64> {
    x_hat.same_dims(x)?;
    let (h, w, bands) = x.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(HidError::Data(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {h}×{w}"
        )));
    }
    let g = gaussian_window();
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let mut total = 0.0;
    for b in 0..bands {
        let a: Vec<f64> = (0..h * w).map(|i| x_hat.data()[i * bands + b]).collect();
        let r: Vec<f64> = (0..h * w).map(|i| x.data()[i * bands + b]).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mu_a = filter(&a, h, w, &g);
        let mu_r = filter(&r, h, w, &g);
        let e_aa = filter(&prod(&a, &a), h, w, &g);
        let e_rr = filter(&prod(&r, &r), h, w, &g);
        let e_ar = filter(&prod(&a, &r), h, w, &g);
        let n = mu_a.len();
        let band_sum: f64 = (0..n)
            .map(|i| {
                let (ma, mr) = (mu_a[i], mu_r[i]);
                let var_a = e_aa[i] - ma * ma;
                let var_r = e_rr[i] - mr * mr;
                let cov = e_ar[i] - ma * mr;
                ((2.0 * ma * mr + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mr * mr + c1) * (var_a + var_r + c2))
            })
            .sum();
        total += band_sum / n as f64;
    }
    Ok(total / bands as f64)
}

/// Spectral angle statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamResult {
    /// Mean angle in radians over non-degenerate pixels.
    pub mean: f64,
    pub skipped: usize,
}

/// Mean per-pixel spectral angle in radians; pixels where either spectrum's
/// norm is below [`SAM_MIN_NORM`] are skipped and counted.
pub fn sam(x_hat: &HsiCube, x: &HsiCube) -> Result<SamResult> {
    x_hat.same_dims(x)?;
    let (h, w, _) = x.dims();
    let (mut sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for r in 0..h {
        for c in 0..w {
            let (a, b) = (x_hat.spectrum(r, c), x.spectrum(r, c));
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na < SAM_MIN_NORM || nb < SAM_MIN_NORM {
                skipped += 1;
                continue;
            }
            // Half-angle form of arccos(⟨a,b⟩/(‖a‖‖b‖)); exact for parallel spectra.
            let (mut d2, mut s2) = (0.0, 0.0);
            for (p, q) in a.iter().zip(b) {
                let (u, v) = (p / na, q / nb);
                d2 += (u - v) * (u - v);
                s2 += (u + v) * (u + v);
            }
            sum += 2.0 * d2.sqrt().atan2(s2.sqrt());
            used += 1;
        }
    }
    if used == 0 {
        return Err(HidError::Data(
            "every pixel has a degenerate spectrum; SAM is undefined".into(),
        ));
    }
    Ok(SamResult {
        mean: sum / used as f64,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub sam: f64,
}

impl MetricReport {
    pub fn compute(name: impl Into<String>, x_hat: &HsiCube, x: &HsiCube) -> Result<Self> {
        Ok(MetricReport {
            name: name.into(),
            psnr: psnr(x_hat, x, 1.0)?,
            ssim: ssim(x_hat, x, 1.0)?,
            sam: sam(x_hat, x)?.mean,
        })
    }

    pub const CSV_HEADER: &'static str = "name,psnr_db,ssim,sam_rad";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.name, self.psnr, self.ssim, self.sam)
    }

    pub fn to_csv(reports: &[MetricReport]) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in reports {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: PSNR {:.4} dB, SSIM {:.4}, SAM {:.4} rad",
            self.name, self.psnr, self.ssim, self.sam
        )
    }
}
