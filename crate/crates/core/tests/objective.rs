mod common;

use common::*;
use hidflow_core::data::{augment, flip_horizontal, make_patches, rotate90, Augmentation, Flip};
use hidflow_core::flow::{FlowTrace, LayerTrace};
use hidflow_core::objective::*;
use hidflow_core::{HidError, HidFlowNet, HsiCube, Init, ParameterStore};
use hidflow_tensor::{Tape, Tensor};
use rand::Rng;

#[test]
fn nll_at_the_mode() {
    let tape = Tape::<f64>::new();
    let trace = FlowTrace {
        z: tape.constant(Tensor::zeros(&[1, 2, 2])),
        logdet: tape.constant(Tensor::scalar(0.0)),
        layers: Vec::new(),
    };
    let nll = nll_loss(&trace).unwrap().item().unwrap();
    assert!((nll - 2.0 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    assert!((nll - 3.6757541).abs() < 1e-7);
}

#[test]
fn nll_of_identity_model_is_gaussian_energy() {
    let cfg = config(2, 4, 2, 2, 2, 3);
    let net = HidFlowNet::<f64>::new(&cfg, Init::Identity, 0).unwrap();
    let mut r = rng(1);
    let x = random_cube(4, 4, 2, &mut r);
    let y = random_cube(4, 4, 2, &mut r);
    let tape = Tape::new();
    let p = net.store().bind(&tape, false);
    let cond = net.condition(&p, tape.constant(y.to_tensor())).unwrap();
    let trace = net
        .flow_forward(tape.constant(x.to_tensor()), &cond)
        .unwrap();
    let nll = nll_loss(&trace).unwrap().item().unwrap();
    let d = x.len() as f64;
    let expected = 0.5 * x.data().iter().map(|v| v * v).sum::<f64>()
        + 0.5 * d * (2.0 * std::f64::consts::PI).ln();
    assert!((nll - expected).abs() < 1e-9);
}

#[test]
fn non_finite_nll_names_the_layer() {
    let tape = Tape::<f64>::new();
    let good = tape.constant(Tensor::zeros(&[1, 1, 2]));
    let bad = tape.constant(Tensor::new(&[1, 1, 2], vec![f64::INFINITY, 0.0]).unwrap());
    let trace = FlowTrace {
        z: bad,
        logdet: tape.constant(Tensor::scalar(0.0)),
        layers: vec![
            LayerTrace {
                name: "icb2.affine".into(),
                output: good,
                logdet: None,
            },
            LayerTrace {
                name: "icb2.conv".into(),
                output: bad,
                logdet: None,
            },
        ],
    };
    match nll_loss(&trace) {
        Err(HidError::NonFinite { layer, .. }) => assert_eq!(layer, "icb2.conv"),
        other => panic!(
            "expected a non-finite error, got {:?}",
            other.map(|v| v.value())
        ),
    }
}

#[test]
fn rec_loss_examples() {
    let tape = Tape::<f64>::new();
    let mut r = rng(2);
    let x = uniform_tensor(&[3, 4, 5], 0.0, 1.0, &mut r);
    let xv = tape.constant(x.clone());
    assert_eq!(rec_loss(xv, xv).unwrap().item().unwrap(), 0.0);
    let shifted = tape.constant(x.map(|v| v + 0.5));
    assert!((rec_loss(shifted, xv).unwrap().item().unwrap() - 0.5).abs() < 1e-12);
    let other = uniform_tensor(&[3, 4, 5], 0.0, 1.0, &mut r);
    let brute = x
        .data()
        .iter()
        .zip(other.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / 60.0;
    let got = rec_loss(tape.constant(other), xv).unwrap().item().unwrap();
    assert!((got - brute).abs() < 1e-14);
    assert!(rec_loss(xv, tape.constant(Tensor::zeros(&[3, 4, 4]))).is_err());
}

#[test]
fn total_loss_weights() {
    let tape = Tape::<f64>::new();
    let nll = tape.constant(Tensor::scalar(10.0));
    let rec = tape.constant(Tensor::scalar(0.2));
    let cfg = OptimConfig::default();
    assert!((total_loss(nll, rec, &cfg).unwrap().item().unwrap() - 0.21).abs() < 1e-15);
    let no_nll = OptimConfig {
        lambda_nll: 0.0,
        ..cfg.clone()
    };
    assert_eq!(total_loss(nll, rec, &no_nll).unwrap().item().unwrap(), 0.2);
    let no_rec = OptimConfig {
        lambda_rec: 0.0,
        ..cfg
    };
    assert_eq!(
        total_loss(nll, rec, &no_rec).unwrap().item().unwrap(),
        0.001 * 10.0
    );
}

fn scalar_store(v: f64) -> ParameterStore<f64> {
    let mut store = ParameterStore::new();
    store.register("w", Tensor::scalar(v)).unwrap();
    store
}

#[test]
fn first_adam_step_moves_by_the_learning_rate() {
    let cfg = OptimConfig::default();
    let mut store = scalar_store(0.3);
    assert_eq!(
        adam_step(&mut store, &[Tensor::scalar(1.0)], &cfg).unwrap(),
        StepOutcome::Applied
    );
    let id = store.id("w").unwrap();
    let moved = 0.3 - store.value(id).item().unwrap();
    // m̂/(√v̂ + ε) = 1/(1 + 1e-8), so the step equals lr up to ε.
    assert!((moved / cfg.lr - 1.0).abs() < 1e-7, "{moved}");
    assert_eq!(store.step(), 1);
}

#[test]
fn zero_gradients_leave_parameters_unchanged() {
    let mut store = scalar_store(0.3);
    for _ in 0..5 {
        adam_step(&mut store, &[Tensor::scalar(0.0)], &OptimConfig::default()).unwrap();
    }
    assert_eq!(store.value(store.id("w").unwrap()).item().unwrap(), 0.3);
    assert_eq!(store.step(), 5);
}

#[test]
fn non_finite_gradient_skips_the_step() {
    let mut store = ParameterStore::<f64>::new();
    store.register("a", Tensor::ones(&[2])).unwrap();
    store.register("b", Tensor::ones(&[3])).unwrap();
    let before = store.clone();
    let grads = [
        Tensor::ones(&[2]),
        Tensor::new(&[3], vec![0.0, f64::NAN, 1.0]).unwrap(),
    ];
    let out = adam_step(&mut store, &grads, &OptimConfig::default()).unwrap();
    assert_eq!(
        out,
        StepOutcome::Skipped {
            parameter: "b".into()
        }
    );
    assert_eq!(store.step(), 0);
    assert_eq!(
        store.value(store.id("a").unwrap()),
        before.value(before.id("a").unwrap())
    );
}

#[test]
fn adam_is_deterministic() {
    let run = || {
        let net = HidFlowNet::<f32>::new(&config(2, 4, 1, 2, 2, 2), Init::Standard, 9).unwrap();
        let mut store = net.store().clone();
        let mut r = rng(10);
        for _ in 0..10 {
            let grads: Vec<Tensor<f32>> = store
                .ids()
                .map(|id| Tensor::from_fn(store.value(id).shape(), |_| r.random_range(-1.0..1.0)))
                .collect();
            adam_step(&mut store, &grads, &OptimConfig::default()).unwrap();
        }
        store
            .ids()
            .flat_map(|id| store.value(id).data().to_vec())
            .map(f32::to_bits)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn patch_counts_follow_stride_arithmetic() {
    assert_eq!(
        make_patches(&HsiCube::filled(512, 512, 1, 0.0), 64, 16)
            .unwrap()
            .len(),
        841
    );
    assert_eq!(
        make_patches(&HsiCube::filled(64, 64, 2, 0.0), 64, 16)
            .unwrap()
            .len(),
        1
    );
    let cube = HsiCube::from_fn(80, 80, 2, |y, x, b| (y * 1000 + x * 10 + b) as f64);
    let patches = make_patches(&cube, 64, 16).unwrap();
    assert_eq!(patches.len(), 4);
    assert_eq!(patches[1].get(0, 0, 1), cube.get(0, 16, 1));
    assert_eq!(patches[2].get(5, 3, 0), cube.get(21, 3, 0));
    assert!(make_patches(&HsiCube::filled(63, 100, 1, 0.0), 64, 16).is_err());
}

#[test]
fn augmentations_compose_to_identity() {
    let cube = random_cube(6, 6, 3, &mut rng(11));
    assert_eq!(Augmentation::IDENTITY.apply(&cube), cube);
    let four = (0..4).fold(cube.clone(), |c, _| rotate90(&c));
    assert_eq!(four, cube);
    assert_eq!(flip_horizontal(&flip_horizontal(&cube)), cube);
    assert_ne!(rotate90(&cube), cube);
}

#[test]
fn augmentation_leaves_spectra_intact() {
    let cube = random_cube(5, 5, 4, &mut rng(12));
    let aug = Augmentation {
        flip: Flip::Vertical,
        quarter_turns: 3,
    }
    .apply(&cube);
    let mut before: Vec<Vec<u64>> = (0..25)
        .map(|i| {
            cube.spectrum(i / 5, i % 5)
                .iter()
                .map(|v| v.to_bits())
                .collect()
        })
        .collect();
    let mut after: Vec<Vec<u64>> = (0..25)
        .map(|i| {
            aug.spectrum(i / 5, i % 5)
                .iter()
                .map(|v| v.to_bits())
                .collect()
        })
        .collect();
    before.sort();
    after.sort();
    assert_eq!(before, after);
}

#[test]
fn every_augmentation_is_drawn() {
    let mut seen = std::collections::HashSet::new();
    for i in 0..400 {
        let a = Augmentation::draw(3, &[i]);
        seen.insert((a.flip as u8, a.quarter_turns));
    }
    assert_eq!(seen.len(), 12);
    let cube = random_cube(4, 4, 2, &mut rng(13));
    assert_eq!(augment(&cube, 3, &[7]), augment(&cube, 3, &[7]));
}
