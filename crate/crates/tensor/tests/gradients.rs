use cdgan_tensor::{
    grad_check, Activation, Conv2dSpec, ConvTransposeSpec, GradCheckOptions, Result, Tape, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-2;

/// `sum(y ⊙ r)` for a fixed random `r`, which gives every output element an
/// O(1) weight in the loss.
fn project(tape: &Tape, y: &Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Var::constant(Tensor::randn(y.shape().to_vec(), 0.0, 1.0, &mut rng));
    tape.sum(&tape.mul(y, &r)?)
}

/// Normal samples pushed at least `gap` away from zero.
fn away_from_zero(shape: Vec<usize>, gap: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::randn(shape, 0.0, 1.0, rng);
    for v in t.data_mut() {
        if v.abs() < gap {
            *v = if *v < 0.0 { -gap } else { gap } * 2.0;
        }
    }
    t
}

fn assert_passes(name: &str, case: usize, report: cdgan_tensor::GradCheckReport) {
    assert!(report.passes(TOL), "{name} case {case}: {report:?}");
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..8 {
        let stride = 1 + case % 2;
        let spec = if case % 3 == 0 { Conv2dSpec::reflect(stride, 1) } else { Conv2dSpec::new(stride, 1) };
        let x = Tensor::randn(vec![1, 2, 5, 6], 0.0, 1.0, &mut rng);
        let w = Tensor::randn(vec![3, 2, 3, 3], 0.0, 0.5, &mut rng);
        let b = Tensor::randn(vec![3], 0.0, 0.1, &mut rng);
        let seed = rng.gen();
        let f = move |t: &Tape, v: &[Var]| project(t, &t.conv2d(&v[0], &v[1], &v[2], spec)?, seed);
        assert_passes("conv2d", case, grad_check(f, &[x, w, b], &GradCheckOptions::default()).unwrap());
    }
}

#[test]
fn conv_transpose_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for case in 0..8 {
        let x = Tensor::randn(vec![1, 3, 4, 3], 0.0, 1.0, &mut rng);
        let w = Tensor::randn(vec![3, 2, 3, 3], 0.0, 0.5, &mut rng);
        let b = Tensor::randn(vec![2], 0.0, 0.1, &mut rng);
        let seed = rng.gen();
        let spec = ConvTransposeSpec::new(2, 1, 1);
        let f = move |t: &Tape, v: &[Var]| project(t, &t.conv2d_transpose(&v[0], &v[1], &v[2], spec)?, seed);
        assert_passes("conv2d_transpose", case, grad_check(f, &[x, w, b], &GradCheckOptions::default()).unwrap());
    }
}

#[test]
fn instance_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..8 {
        let x = Tensor::randn(vec![1, 2, 4, 4], 0.3, 1.2, &mut rng);
        let g = Tensor::randn(vec![2], 1.0, 0.2, &mut rng);
        let b = Tensor::randn(vec![2], 0.0, 0.2, &mut rng);
        let seed = rng.gen();
        let f = move |t: &Tape, v: &[Var]| project(t, &t.instance_norm(&v[0], &v[1], &v[2], 1e-5)?, seed);
        assert_passes("instance_norm", case, grad_check(f, &[x, g, b], &GradCheckOptions::default()).unwrap());
    }
}

#[test]
fn activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let kinds = [Activation::Relu, Activation::LeakyRelu(0.2), Activation::Tanh, Activation::Sigmoid];
    for (case, kind) in kinds.into_iter().cycle().take(12).enumerate() {
        let x = away_from_zero(vec![16], 0.01, &mut rng);
        let seed = rng.gen();
        let f = move |t: &Tape, v: &[Var]| project(t, &t.activation(&v[0], kind)?, seed);
        assert_passes("activation", case, grad_check(f, &[x], &GradCheckOptions::default()).unwrap());
    }
}

#[test]
fn dropout_gradient_uses_the_same_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let x = Tensor::randn(vec![32], 0.0, 1.0, &mut rng);
    let f = |t: &Tape, v: &[Var]| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(7);
        project(t, &t.dropout(&v[0], 0.5, true, &mut mask_rng)?, 8)
    };
    assert_passes("dropout", 0, grad_check(f, &[x], &GradCheckOptions::default()).unwrap());
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for case in 0..8 {
        let logits = Tensor::randn(vec![1, 1, 3, 3], 0.0, 2.0, &mut rng);
        let target = Tensor::uniform(vec![1, 1, 3, 3], 0.0, 1.0, &mut rng);
        let f = |t: &Tape, v: &[Var]| t.bce_with_logits(&v[0], &v[1]);
        assert_passes("bce", case, grad_check(f, &[logits, target], &GradCheckOptions::default()).unwrap());

        let a = Tensor::randn(vec![12], 0.0, 1.0, &mut rng);
        let mut b = Tensor::randn(vec![12], 0.0, 1.0, &mut rng);
        for (bv, av) in b.data_mut().iter_mut().zip(a.data()) {
            if (*bv - av).abs() < 0.01 {
                *bv = av + 0.05;
            }
        }
        let f = |t: &Tape, v: &[Var]| t.l1_loss(&v[0], &v[1]);
        assert_passes("l1", case, grad_check(f, &[a, b], &GradCheckOptions::default()).unwrap());
    }
}

#[test]
fn conv_norm_leaky_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    for case in 0..8 {
        let x = Tensor::randn(vec![1, 2, 6, 6], 0.0, 1.0, &mut rng);
        let w = Tensor::randn(vec![3, 2, 3, 3], 0.0, 0.5, &mut rng);
        let b = Tensor::zeros(vec![3]);
        let g = Tensor::full(vec![3], 1.0);
        let beta = Tensor::zeros(vec![3]);
        let f = |t: &Tape, v: &[Var]| {
            let y = t.conv2d(&v[0], &v[1], &v[2], Conv2dSpec::new(1, 1))?;
            let y = t.instance_norm(&y, &v[3], &v[4], 1e-5)?;
            let y = t.activation(&y, Activation::LeakyRelu(0.2))?;
            t.mean(&y)
        };
        let opts = GradCheckOptions {
            skip_kinks: true,
            ..Default::default()
        };
        let report = grad_check(f, &[x, w, b, g, beta], &opts).unwrap();
        assert!(report.kinks_skipped * 4 <= report.checked, "{report:?}");
        assert_passes("chain", case, report);
    }
}
