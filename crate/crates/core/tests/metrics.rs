mod common;

use common::*;
use hidflow_core::degradation::add_gaussian;
use hidflow_core::metrics::*;
use hidflow_core::HsiCube;
use rand::Rng;

#[test]
fn psnr_of_identical_cubes_is_infinite() {
    let x = random_cube(4, 4, 3, &mut rng(1));
    assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
}

#[test]
fn psnr_of_constant_offset() {
    let x = random_cube(16, 16, 4, &mut rng(2));
    let y = HsiCube::from_fn(16, 16, 4, |r, c, b| x.get(r, c, b) + 0.1);
    assert!((psnr(&y, &x, 1.0).unwrap() - 20.0).abs() < 1e-9);
    assert!(psnr(&y, &random_cube(16, 15, 4, &mut rng(2)), 1.0).is_err());
}

#[test]
fn psnr_of_sigma_50_noise() {
    let x = HsiCube::filled(128, 128, 16, 0.5);
    let y = add_gaussian(&x, 50.0, 3);
    assert!((psnr(&y, &x, 1.0).unwrap() - 14.151).abs() < 0.05);
}

#[test]
fn psnr_falls_as_noise_grows() {
    let x = random_cube(32, 32, 4, &mut rng(4));
    let values: Vec<f64> = [5.0, 10.0, 20.0, 40.0, 80.0]
        .iter()
        .map(|&s| psnr(&add_gaussian(&x, s, 5), &x, 1.0).unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[0] > w[1]), "{values:?}");
}

#[test]
fn ssim_of_identical_cubes_is_exactly_one() {
    let x = random_cube(16, 20, 3, &mut rng(6));
    assert_eq!(ssim(&x, &x, 1.0).unwrap(), 1.0);
}

#[test]
fn ssim_of_inverted_image_is_below_one() {
    let x = random_cube(16, 16, 2, &mut rng(7));
    let inv = HsiCube::from_fn(16, 16, 2, |r, c, b| 1.0 - x.get(r, c, b));
    let v = ssim(&inv, &x, 1.0).unwrap();
    assert!(v < 1.0 && v >= -1.0);
}

#[test]
fn ssim_rejects_small_images() {
    let x = random_cube(10, 16, 2, &mut rng(8));
    assert!(ssim(&x, &x, 1.0).is_err());
}

/// Direct 2-D weighted window sums, no separability.
fn reference_ssim(a: &HsiCube, b: &HsiCube) -> f64 {
    let (h, w, bands) = a.dims();
    let mut g = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    for band in 0..bands {
        let mut band_acc = 0.0;
        for r in 0..=h - 11 {
            for c in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = g[i][j] / total;
                        let (x, y) = (a.get(r + i, c + j, band), b.get(r + i, c + j, band));
                        ma += k * x;
                        mb += k * y;
                        saa += k * x * x;
                        sbb += k * y * y;
                        sab += k * x * y;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                band_acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        acc += band_acc / ((h - 10) * (w - 10)) as f64;
    }
    acc / bands as f64
}

#[test]
fn ssim_matches_independent_reference() {
    let mut r = rng(9);
    for _ in 0..3 {
        let x = random_cube(18, 15, 3, &mut r);
        let y = HsiCube::from_fn(18, 15, 3, |a, b, c| {
            (x.get(a, b, c) + r.random_range(-0.3..0.3)).clamp(0.0, 1.0)
        });
        assert!((ssim(&y, &x, 1.0).unwrap() - reference_ssim(&y, &x)).abs() < 1e-6);
    }
}

#[test]
fn sam_of_identical_and_scaled_spectra_is_zero() {
    let x = HsiCube::from_fn(5, 5, 4, |r, c, b| {
        0.1 + ((r * 7 + c * 3 + b) % 5) as f64 * 0.2
    });
    assert_eq!(sam(&x, &x).unwrap().mean, 0.0);
    let doubled = HsiCube::from_fn(5, 5, 4, |r, c, b| 2.0 * x.get(r, c, b));
    assert_eq!(sam(&doubled, &x).unwrap().mean, 0.0);
}

#[test]
fn sam_is_invariant_to_positive_pixel_scaling() {
    let mut r = rng(10);
    let x = random_cube(6, 6, 5, &mut r);
    let y = random_cube(6, 6, 5, &mut r);
    let scales: Vec<f64> = (0..36).map(|_| r.random_range(0.1..10.0)).collect();
    let scaled = HsiCube::from_fn(6, 6, 5, |a, b, c| scales[a * 6 + b] * y.get(a, b, c));
    let (s0, s1) = (sam(&y, &x).unwrap().mean, sam(&scaled, &x).unwrap().mean);
    assert!((s0 - s1).abs() < 1e-12);
}

#[test]
fn sam_of_orthogonal_spectra_is_a_right_angle() {
    let a = HsiCube::from_fn(3, 3, 3, |_, _, b| if b == 0 { 1.0 } else { 0.0 });
    let b = HsiCube::from_fn(3, 3, 3, |_, _, b| if b == 1 { 1.0 } else { 0.0 });
    assert!((sam(&a, &b).unwrap().mean - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
}

#[test]
fn sam_skips_degenerate_pixels() {
    let a = HsiCube::from_fn(2, 2, 3, |r, c, _| if r == 0 && c == 0 { 0.0 } else { 1.0 });
    let res = sam(&a, &a).unwrap();
    assert_eq!(res.skipped, 1);
    assert_eq!(res.mean, 0.0);
    let zero = HsiCube::filled(2, 2, 3, 0.0);
    assert!(sam(&zero, &a).is_err());
}

#[test]
fn report_rows() {
    let x = random_cube(12, 12, 3, &mut rng(11));
    let y = add_gaussian(&x, 10.0, 1);
    let rep = MetricReport::compute("cube-a", &y, &x).unwrap();
    assert!(rep.ssim <= 1.0 && rep.sam >= 0.0 && rep.sam <= std::f64::consts::PI);
    let csv = MetricReport::to_csv(&[rep.clone()]);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), MetricReport::CSV_HEADER);
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(fields[0], "cube-a");
    assert_eq!(fields[1].parse::<f64>().unwrap(), rep.psnr);
}
