mod common;

use common::*;
use hidflow_core::degradation::*;
use hidflow_core::HsiCube;

#[test]
fn zero_sigma_is_a_no_op() {
    let x = random_cube(4, 4, 3, &mut rng(1));
    assert_eq!(add_gaussian(&x, 0.0, 9), x);
}

#[test]
fn gaussian_noise_statistics() {
    let x = HsiCube::filled(100, 100, 100, 0.5);
    let y = add_gaussian(&x, 50.0, 2);
    let n = x.len() as f64;
    let diffs: Vec<f64> = y.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sigma = 50.0 / 255.0;
    assert!((std / sigma - 1.0).abs() < 0.02, "{std}");
    assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "{mean}");
    // Unclamped: some values leave [0, 1].
    assert!(y.data().iter().any(|&v| !(0.0..=1.0).contains(&v)));
}

#[test]
fn gaussian_noise_is_seeded() {
    let x = random_cube(8, 8, 4, &mut rng(3));
    assert_eq!(add_gaussian(&x, 30.0, 5), add_gaussian(&x, 30.0, 5));
    assert_ne!(add_gaussian(&x, 30.0, 5), add_gaussian(&x, 30.0, 6));
}

#[test]
fn mixture_band_sigmas_lie_in_range() {
    let x = random_cube(16, 16, 10, &mut rng(4));
    let (_, log) = add_mixture(&x, &MixtureSpec::default(), 7).unwrap();
    assert_eq!(log.band_sigma.len(), 10);
    assert!(log
        .band_sigma
        .iter()
        .all(|&s| (10.0 / 255.0..=70.0 / 255.0).contains(&s)));
}

#[test]
fn mixture_partition_is_disjoint_and_complete() {
    let x = HsiCube::filled(4, 8, 7, 0.5);
    for seed in 0..200 {
        let (_, log) = add_mixture(&x, &MixtureSpec::default(), seed).unwrap();
        let mut all: Vec<usize> = log
            .impulse_bands
            .iter()
            .chain(&log.stripe_bands)
            .chain(&log.deadline_bands)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
    }
}

#[test]
fn impulse_bands_hold_enough_saturated_pixels() {
    let x = HsiCube::filled(64, 64, 6, 0.5);
    let (y, log) = add_mixture(&x, &MixtureSpec::default(), 11).unwrap();
    let n = 64.0 * 64.0;
    for ib in &log.impulse {
        let hits = (0..64 * 64).filter(|i| {
            let v = y.get(i / 64, i % 64, ib.band);
            v == 0.0 || v == 1.0
        });
        let count = hits.count() as f64;
        let sd = (n * ib.ratio * (1.0 - ib.ratio)).sqrt();
        assert!(
            count >= n * ib.ratio - 3.0 * sd,
            "band {}: {count} saturated, ratio {}",
            ib.band,
            ib.ratio
        );
    }
}

#[test]
fn deadlines_zero_whole_columns() {
    let x = HsiCube::filled(8, 32, 6, 0.5);
    let (y, log) = add_mixture(&x, &MixtureSpec::default(), 12).unwrap();
    for db in &log.deadlines {
        assert!(!db.lines.is_empty());
        for &(start, width) in &db.lines {
            assert!((1..=3).contains(&width));
            for c in start..(start + width).min(32) {
                assert!((0..8).all(|r| y.get(r, c, db.band) == 0.0));
            }
        }
    }
    for sb in &log.stripes {
        assert_eq!(sb.columns.len(), sb.offsets.len());
        assert!(sb.offsets.iter().all(|o| (-0.25..=0.25).contains(o)));
    }
}

#[test]
fn mixture_replays_from_its_log() {
    let x = random_cube(12, 12, 5, &mut rng(13));
    let (y, log) = add_mixture(&x, &MixtureSpec::default(), 21).unwrap();
    let text = serde_json::to_string(&log).unwrap();
    let parsed: MixtureLog = serde_json::from_str(&text).unwrap();
    assert_eq!(replay_mixture(&x, &parsed).unwrap(), y);
    assert_eq!(add_mixture(&x, &MixtureSpec::default(), 21).unwrap().0, y);
}

#[test]
fn mixture_needs_three_bands() {
    let x = HsiCube::filled(4, 4, 2, 0.5);
    assert!(add_mixture(&x, &MixtureSpec::default(), 0).is_err());
}

#[test]
fn invalid_mixture_ranges_are_rejected() {
    let spec = MixtureSpec {
        impulse_ratio: [0.5, 0.1],
        ..MixtureSpec::default()
    };
    assert!(spec.validate().is_err());
    let spec = MixtureSpec {
        stripe_fraction: [0.0, 0.5],
        ..MixtureSpec::default()
    };
    assert!(spec.validate().is_err());
}

#[test]
fn noise_spec_round_trips_through_toml() {
    #[derive(serde::Serialize, serde::Deserialize)]
    struct Wrap {
        noise: NoiseSpec,
    }
    let text = "[noise]\nkind = \"gaussian\"\nsigma = 70.0\n";
    let w: Wrap = toml::from_str(text).unwrap();
    assert_eq!(w.noise, NoiseSpec::Gaussian { sigma: 70.0 });
    assert!(
        toml::from_str::<Wrap>("[noise]\nkind = \"gaussian\"\nsigma = 1.0\nbogus = 2\n").is_err()
    );
}
