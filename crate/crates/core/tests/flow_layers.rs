mod common;

use common::*;
use hidflow_core::flow::*;
use hidflow_core::{HidFlowNet, Init};
use hidflow_tensor::{Tape, Tensor};
use proptest::prelude::*;

const LN2: f64 = std::f64::consts::LN_2;

fn affine<'t>(tape: &'t Tape<f64>, s: Tensor<f64>, b: Tensor<f64>) -> AffineParams<'t, f64> {
    AffineParams {
        log_scale: tape.constant(s),
        shift: tape.constant(b),
    }
}

#[test]
fn affine_with_zero_scale_and_shift_is_identity() {
    let tape = Tape::new();
    let h = tape.constant(Tensor::from_fn(&[2, 3, 3], |i| i as f64 * 0.1 - 0.5));
    let p = affine(&tape, Tensor::zeros(&[2, 3, 3]), Tensor::zeros(&[2, 3, 3]));
    let (out, ld) = conditional_affine_forward(h, &p).unwrap();
    assert_eq!(out.value(), h.value());
    assert_eq!(ld.item().unwrap(), 0.0);
}

#[test]
fn affine_doubling_example() {
    let tape = Tape::new();
    let hv = Tensor::new(&[1, 2, 2], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
    let h = tape.constant(hv.clone());
    let p = affine(
        &tape,
        Tensor::full(&[1, 2, 2], LN2),
        Tensor::ones(&[1, 2, 2]),
    );
    let (out, ld) = conditional_affine_forward(h, &p).unwrap();
    let expected = hv.map(|v| 2.0 * v + 1.0);
    assert!(out.value().max_abs_diff(&expected).unwrap() < 1e-15);
    assert!((ld.item().unwrap() - 4.0 * LN2).abs() < 1e-15);

    let back = conditional_affine_inverse(tape.constant(expected), &p).unwrap();
    assert!(back.value().max_abs_diff(&hv).unwrap() < 1e-15);
    let zero = conditional_affine_inverse(p.shift, &p).unwrap();
    assert_eq!(zero.value(), Tensor::zeros(&[1, 2, 2]));
}

#[test]
fn affine_logdet_matches_dense_jacobian() {
    let mut r = rng(1);
    for _ in 0..10 {
        let h = uniform_tensor(&[2, 4, 4], -2.0, 2.0, &mut r);
        let s = uniform_tensor(&[2, 4, 4], -2.0, 2.0, &mut r);
        let b = uniform_tensor(&[2, 4, 4], -2.0, 2.0, &mut r);
        let jac = jacobian(&h, |x| {
            let p = affine(x.tape(), s.clone(), b.clone());
            Ok(conditional_affine_forward(x, &p)?.0)
        });
        let tape = Tape::new();
        let (_, ld) = conditional_affine_forward(tape.constant(h), &affine(&tape, s, b)).unwrap();
        assert!(rel(ld.item().unwrap(), log_abs_det(&jac)) < 1e-10);
    }
}

#[test]
fn affine_rejects_mismatched_shapes() {
    let tape = Tape::new();
    let h = tape.constant(Tensor::zeros(&[2, 2, 2]));
    let p = affine(&tape, Tensor::zeros(&[1, 2, 2]), Tensor::zeros(&[1, 2, 2]));
    assert!(conditional_affine_forward(h, &p).is_err());
    assert!(conditional_affine_inverse(h, &p).is_err());
}

#[test]
fn transfer_split_puts_scale_first_and_soft_clamps_it() {
    let tape = Tape::new();
    let raw = Tensor::from_fn(&[4, 1, 2], |i| {
        if i < 4 {
            100.0 * (i as f64 - 1.5)
        } else {
            i as f64
        }
    });
    let p = split_transfer(tape.constant(raw), 2.0).unwrap();
    let s = p.log_scale.value();
    assert!(s.data().iter().all(|v| v.abs() <= 2.0));
    assert!((s.data()[3] - 2.0).abs() < 1e-12);
    assert_eq!(p.shift.value().data(), &[4.0, 5.0, 6.0, 7.0]);
    assert!(split_transfer(tape.constant(Tensor::zeros(&[3, 1, 1])), 2.0).is_err());
}

#[test]
fn residual_conv_with_zero_matrix_is_identity() {
    let tape = Tape::new();
    let h = tape.constant(Tensor::from_fn(&[3, 2, 2], |i| i as f64));
    let w = tape.constant(Tensor::zeros(&[3, 3]));
    let (out, ld) = residual_conv_forward(h, w).unwrap();
    assert_eq!(out.value(), h.value());
    assert_eq!(ld.item().unwrap(), 0.0);
    assert_eq!(residual_conv_inverse(h, w).unwrap().value(), h.value());
}

#[test]
fn residual_conv_scalar_example() {
    let tape = Tape::new();
    let hv = Tensor::from_fn(&[1, 2, 3], |i| i as f64 - 2.5);
    let (out, ld) = residual_conv_forward(
        tape.constant(hv.clone()),
        tape.constant(Tensor::ones(&[1, 1])),
    )
    .unwrap();
    assert_eq!(out.value(), hv.map(|v| 2.0 * v));
    assert!((ld.item().unwrap() - 6.0 * LN2).abs() < 1e-14);
}

#[test]
fn residual_conv_logdet_matches_dense_jacobian() {
    let mut r = rng(2);
    for _ in 0..10 {
        let h = uniform_tensor(&[3, 2, 2], -2.0, 2.0, &mut r);
        let w = uniform_tensor(&[3, 3], -0.8, 0.8, &mut r);
        let jac = jacobian(&h, |x| {
            Ok(residual_conv_forward(x, x.tape().constant(w.clone()))?.0)
        });
        assert_eq!(jac.shape(), &[12, 12]);
        let tape = Tape::new();
        let (_, ld) = residual_conv_forward(tape.constant(h), tape.constant(w)).unwrap();
        assert!(rel(ld.item().unwrap(), log_abs_det(&jac)) < 1e-8);
    }
}

#[test]
fn residual_conv_round_trip_is_tight() {
    let mut r = rng(3);
    let tape = Tape::new();
    let h = uniform_tensor(&[4, 5, 3], -2.0, 2.0, &mut r);
    let w = tape.constant(uniform_tensor(&[4, 4], -0.5, 0.5, &mut r));
    let (out, _) = residual_conv_forward(tape.constant(h.clone()), w).unwrap();
    let back = residual_conv_inverse(out, w).unwrap();
    assert!(back.value().max_abs_diff(&h).unwrap() < 1e-9);
}

#[test]
fn singular_residual_conv_is_reported() {
    let tape = Tape::new();
    let h = tape.constant(Tensor::ones(&[2, 2, 2]));
    let w = tape.constant(Tensor::from_fn(
        &[2, 2],
        |i| if i == 0 { -1.0 } else { 0.0 },
    ));
    assert!(residual_conv_forward(h, w).is_err());
    assert!(residual_conv_inverse(h, w).is_err());
}

#[test]
fn fusion_bias_examples() {
    let mut r = rng(4);
    let tape = Tape::new();
    let hv = uniform_tensor(&[2, 3, 3], -1.0, 1.0, &mut r);
    let lv = uniform_tensor(&[2, 3, 3], -1.0, 1.0, &mut r);
    let zero = tape.constant(Tensor::zeros(&[2, 3, 3]));
    assert_eq!(
        fusion_bias_forward(tape.constant(hv.clone()), zero)
            .unwrap()
            .value(),
        hv
    );
    assert_eq!(
        fusion_bias_forward(zero, tape.constant(lv.clone()))
            .unwrap()
            .value(),
        lv
    );
    let jac = jacobian(&hv, |x| {
        fusion_bias_forward(x, x.tape().constant(lv.clone()))
    });
    assert_eq!(jac, Tensor::eye(18));
    assert_eq!(log_abs_det(&jac), 0.0);
    assert!(
        fusion_bias_forward(tape.constant(hv), tape.constant(Tensor::zeros(&[2, 3, 2]))).is_err()
    );
}

#[test]
fn blocks_take_coarse_stages_first() {
    let stages: Vec<usize> = (1..=9).map(|k| stage_for_block(k, 9, 3)).collect();
    assert_eq!(stages, [3, 3, 3, 2, 2, 2, 1, 1, 1]);
    assert_eq!(stage_for_block(1, 1, 3), 3);
    assert_eq!([stage_for_block(1, 2, 2), stage_for_block(2, 2, 2)], [2, 1]);
}

#[test]
fn identity_network_maps_x_to_itself() {
    let cfg = config(3, 4, 2, 2, 2, 3);
    let net = HidFlowNet::<f64>::new(&cfg, Init::Identity, 5).unwrap();
    let mut r = rng(5);
    let x = random_cube(4, 4, 3, &mut r);
    let y = random_cube(4, 4, 3, &mut r);
    let tape = Tape::new();
    let p = net.store().bind(&tape, false);
    let cond = net.condition(&p, tape.constant(y.to_tensor())).unwrap();
    assert_eq!(cond.lowfreq.value(), Tensor::zeros(&[3, 4, 4]));
    let trace = net
        .flow_forward(tape.constant(x.to_tensor()), &cond)
        .unwrap();
    assert_eq!(trace.z.value(), x.to_tensor());
    assert_eq!(trace.logdet.item().unwrap(), 0.0);
    assert_eq!(trace.layers.len(), 7);
}

#[test]
fn identity_network_inverse_adds_lowfreq() {
    let cfg = config(3, 4, 2, 2, 2, 4);
    let net = HidFlowNet::<f64>::new(&cfg, Init::Identity, 6).unwrap();
    let mut r = rng(6);
    let y = random_cube(4, 4, 3, &mut r);
    let tape = Tape::new();
    let p = net.store().bind(&tape, false);
    let mut cond = net.condition(&p, tape.constant(y.to_tensor())).unwrap();
    let low = uniform_tensor(&[3, 4, 4], -1.0, 1.0, &mut r);
    cond.lowfreq = tape.constant(low.clone());
    let z = uniform_tensor(&[3, 4, 4], -3.0, 3.0, &mut r);
    let x = net
        .flow_inverse(tape.constant(z.clone()), &cond)
        .unwrap()
        .value();
    let expected = z.zip_map(&low, "add", |a, b| a + b).unwrap();
    assert!(x.max_abs_diff(&expected).unwrap() <= 1e-6);
}

#[test]
fn single_block_logdet_matches_dense_jacobian() {
    let cfg = config(2, 4, 1, 2, 2, 1);
    let mut r = rng(7);
    for seed in 0..3 {
        let net = HidFlowNet::<f64>::new(&cfg, Init::Randomized, seed).unwrap();
        let x = uniform_tensor(&[2, 2, 2], -1.0, 1.0, &mut r);
        let y = random_cube(2, 2, 2, &mut r);
        let jac = jacobian(&x, |xv| {
            let p = net.store().bind(xv.tape(), false);
            let cond = net.condition(&p, xv.tape().constant(y.to_tensor()))?;
            Ok(net.flow_forward(xv, &cond)?.z)
        });
        let tape = Tape::new();
        let p = net.store().bind(&tape, false);
        let cond = net.condition(&p, tape.constant(y.to_tensor())).unwrap();
        let ld = net
            .flow_forward(tape.constant(x), &cond)
            .unwrap()
            .logdet
            .item()
            .unwrap();
        assert!(
            ld.abs() > 1e-3,
            "randomized model should not be volume preserving"
        );
        assert!(rel(ld, log_abs_det(&jac)) < 1e-6);
    }
}

#[test]
fn latent_shape_matches_input_for_every_configuration() {
    for (bands, stages, window, blocks, hw) in [
        (2, 1, 1, 1, 2),
        (3, 2, 2, 2, 4),
        (5, 3, 2, 5, 8),
        (4, 2, 4, 16, 8),
    ] {
        let cfg = config(bands, 4, stages, window, 2, blocks);
        let net = HidFlowNet::<f64>::new(&cfg, Init::Randomized, 1).unwrap();
        let y = random_cube(hw, hw, bands, &mut rng(8));
        let tape = Tape::new();
        let p = net.store().bind(&tape, false);
        let cond = net.condition(&p, tape.constant(y.to_tensor())).unwrap();
        let trace = net
            .flow_forward(tape.constant(y.to_tensor()), &cond)
            .unwrap();
        assert_eq!(trace.z.shape(), vec![bands, hw, hw]);
        assert!(trace.logdet.item().unwrap().is_finite());
    }
}

#[test]
fn condition_stack_is_upsampled_to_working_resolution() {
    let cfg = config(2, 4, 3, 2, 2, 9);
    let net = HidFlowNet::<f64>::new(&cfg, Init::Randomized, 2).unwrap();
    let y = random_cube(8, 8, 2, &mut rng(9));
    let tape = Tape::new();
    let p = net.store().bind(&tape, false);
    let (stack, lowfreq) = net
        .condition_stack(&p, tape.constant(y.to_tensor()))
        .unwrap();
    assert_eq!(lowfreq.shape(), vec![2, 8, 8]);
    for (s, (native, up)) in stack.stages.iter().zip(&stack.upsampled).enumerate() {
        let c = cfg.encoder.stage_channels(s + 1);
        assert_eq!(native.shape(), vec![c, 8 >> s, 8 >> s]);
        assert_eq!(up.shape(), vec![c, 8, 8]);
    }
    let (t1, scale1) = stack.for_block(1);
    assert_eq!((t1.shape()[1], scale1), (2, 4));
    let (t9, scale9) = stack.for_block(9);
    assert_eq!((t9.shape()[1], scale9), (8, 1));
}

fn layer_round_trips_f32(
    h: Vec<f64>,
    s: Vec<f64>,
    b: Vec<f64>,
    w: Vec<f64>,
) -> Result<(), TestCaseError> {
    let tape = Tape::<f32>::new();
    let t = |shape: &[usize], v: &[f64]| tape.constant(Tensor::from_f64(shape, v).unwrap());
    let hv = t(&[2, 3, 3], &h);
    let p = AffineParams {
        log_scale: t(&[2, 3, 3], &s),
        shift: t(&[2, 3, 3], &b),
    };
    let (a, _) = conditional_affine_forward(hv, &p).unwrap();
    let back = conditional_affine_inverse(a, &p).unwrap();
    prop_assert!(back.value().max_abs_diff(&hv.value()).unwrap() <= 1e-4);
    let wv = t(&[2, 2], &w);
    let (c, _) = residual_conv_forward(hv, wv).unwrap();
    prop_assert!(
        residual_conv_inverse(c, wv)
            .unwrap()
            .value()
            .max_abs_diff(&hv.value())
            .unwrap()
            <= 1e-4
    );
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_layer_inverts_its_forward(
        h in prop::collection::vec(-2.0f64..2.0, 18),
        s in prop::collection::vec(-2.0f64..2.0, 18),
        b in prop::collection::vec(-2.0f64..2.0, 18),
        w in prop::collection::vec(-0.4f64..0.4, 4),
        low in prop::collection::vec(-1.0f64..1.0, 18),
    ) {
        let tape = Tape::<f64>::new();
        let t = |shape: &[usize], v: &[f64]| tape.constant(Tensor::new(shape, v.to_vec()).unwrap());
        let hv = t(&[2, 3, 3], &h);
        let p = AffineParams { log_scale: t(&[2, 3, 3], &s), shift: t(&[2, 3, 3], &b) };
        let (a, _) = conditional_affine_forward(hv, &p).unwrap();
        prop_assert!(conditional_affine_inverse(a, &p).unwrap().value().max_abs_diff(&hv.value()).unwrap() <= 1e-9);
        let wv = t(&[2, 2], &w);
        let (c, _) = residual_conv_forward(hv, wv).unwrap();
        prop_assert!(residual_conv_inverse(c, wv).unwrap().value().max_abs_diff(&hv.value()).unwrap() <= 1e-9);
        let lv = t(&[2, 3, 3], &low);
        let f = fusion_bias_forward(hv, lv).unwrap();
        prop_assert!(fusion_bias_inverse(f, lv).unwrap().value().max_abs_diff(&hv.value()).unwrap() <= 1e-9);
        layer_round_trips_f32(h, s, b, w)?;
    }
}
