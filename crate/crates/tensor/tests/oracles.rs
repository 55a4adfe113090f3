//! Convolutions checked against direct loop implementations that share no
//! code with the GEMM lowering.

use cdgan_tensor::{conv_out_size, Conv2dSpec, ConvTransposeSpec, PadMode, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reflect(i: isize, len: usize) -> usize {
    let len = len as isize;
    let r = if i < 0 { -i } else if i >= len { 2 * (len - 1) - i } else { i };
    r as usize
}

/// Quadruple loop over (n, cout, oy, ox) with an inner tap sum.
fn naive_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize, mode: PadMode) -> Tensor {
    let [n, cin, h, wd] = x.dims4().unwrap();
    let [cout, _, k, _] = w.dims4().unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![0.0f32; n * cout * oh * ow];
    for bi in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co] as f64;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd;
                                let v = match (inside, mode) {
                                    (true, _) => xd[((bi * cin + ci) * h + iy as usize) * wd + ix as usize],
                                    (false, PadMode::Zero) => 0.0,
                                    (false, PadMode::Reflect) => {
                                        xd[((bi * cin + ci) * h + reflect(iy, h)) * wd + reflect(ix, wd)]
                                    }
                                };
                                acc += v as f64 * wdat[((co * cin + ci) * k + ky) * k + kx] as f64;
                            }
                        }
                    }
                    out[((bi * cout + co) * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
    }
    Tensor::new(vec![n, cout, oh, ow], out).unwrap()
}

/// Scatter form: every input pixel stamps the kernel onto the output grid.
fn naive_conv_transpose(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize, out_pad: usize) -> Tensor {
    let [n, cin, h, wd] = x.dims4().unwrap();
    let [_, cout, k, _] = w.dims4().unwrap();
    let oh = (h - 1) * stride + k + out_pad - 2 * pad;
    let ow = (wd - 1) * stride + k + out_pad - 2 * pad;
    let mut out = vec![0.0f64; n * cout * oh * ow];
    for bi in 0..n {
        for ci in 0..cin {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = x.data()[((bi * cin + ci) * h + iy) * wd + ix] as f64;
                    for co in 0..cout {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if oy < 0 || ox < 0 || oy as usize >= oh || ox as usize >= ow {
                                    continue;
                                }
                                out[((bi * cout + co) * oh + oy as usize) * ow + ox as usize] +=
                                    v * w.data()[((ci * cout + co) * k + ky) * k + kx] as f64;
                            }
                        }
                    }
                }
            }
        }
    }
    for bi in 0..n {
        for co in 0..cout {
            let plane = &mut out[(bi * cout + co) * oh * ow..(bi * cout + co + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v += b.data()[co] as f64);
        }
    }
    Tensor::new(vec![n, cout, oh, ow], out.into_iter().map(|v| v as f32).collect()).unwrap()
}

fn conv(x: &Tensor, w: &Tensor, b: &Tensor, spec: Conv2dSpec) -> Tensor {
    Tape::new()
        .conv2d(&Var::constant(x.clone()), &Var::constant(w.clone()), &Var::constant(b.clone()), spec)
        .unwrap()
        .into_value()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[test]
fn conv2d_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // The fixed case named in the contract: 2×6×16×16.
    let x = Tensor::randn(vec![2, 6, 16, 16], 0.0, 1.0, &mut rng);
    let w = Tensor::randn(vec![5, 6, 3, 3], 0.0, 0.3, &mut rng);
    let b = Tensor::randn(vec![5], 0.0, 0.1, &mut rng);
    let spec = Conv2dSpec::new(1, 1);
    let got = conv(&x, &w, &b, spec);
    let want = naive_conv2d(&x, &w, &b, 1, 1, PadMode::Zero);
    assert!(got.max_abs_diff(&want).unwrap() <= 1e-5);

    for case in 0..40 {
        let n = rng.gen_range(1..=2);
        let cin = rng.gen_range(1..=8);
        let cout = rng.gen_range(1..=6);
        let h = rng.gen_range(4..=16);
        let wd = rng.gen_range(4..=16);
        let k = rng.gen_range(1..=4.min(h).min(wd));
        let stride = rng.gen_range(1..=3);
        let pad = rng.gen_range(0..=(k / 2 + 1).min(h - 1).min(wd - 1));
        let mode = if case % 3 == 0 { PadMode::Reflect } else { PadMode::Zero };
        let x = Tensor::randn(vec![n, cin, h, wd], 0.0, 1.0, &mut rng);
        let w = Tensor::randn(vec![cout, cin, k, k], 0.0, 0.3, &mut rng);
        let b = Tensor::randn(vec![cout], 0.0, 0.1, &mut rng);
        let spec = Conv2dSpec { stride, pad, pad_mode: mode };
        let got = conv(&x, &w, &b, spec);
        let want = naive_conv2d(&x, &w, &b, stride, pad, mode);
        let diff = got.max_abs_diff(&want).unwrap();
        assert!(diff <= 1e-5, "case {case}: diff {diff} for {spec:?} k={k}");
    }
}

#[test]
fn conv_transpose_matches_scatter_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..30 {
        let n = rng.gen_range(1..=2);
        let cin = rng.gen_range(1..=6);
        let cout = rng.gen_range(1..=5);
        let h = rng.gen_range(2..=9);
        let wd = rng.gen_range(2..=9);
        let k = rng.gen_range(2..=4);
        let stride = rng.gen_range(1..=3);
        let pad = rng.gen_range(0..k);
        let out_pad = rng.gen_range(0..stride);
        if (h - 1) * stride + k + out_pad <= 2 * pad || (wd - 1) * stride + k + out_pad <= 2 * pad {
            continue;
        }
        let x = Tensor::randn(vec![n, cin, h, wd], 0.0, 1.0, &mut rng);
        let w = Tensor::randn(vec![cin, cout, k, k], 0.0, 0.3, &mut rng);
        let b = Tensor::randn(vec![cout], 0.0, 0.1, &mut rng);
        let got = Tape::new()
            .conv2d_transpose(
                &Var::constant(x.clone()),
                &Var::constant(w.clone()),
                &Var::constant(b.clone()),
                ConvTransposeSpec::new(stride, pad, out_pad),
            )
            .unwrap();
        let want = naive_conv_transpose(&x, &w, &b, stride, pad, out_pad);
        let diff = got.value().max_abs_diff(&want).unwrap();
        assert!(diff <= 1e-5, "case {case}: diff {diff}");
    }
}

/// The transposed convolution is the input-gradient of the convolution with
/// the same weight: conv2d_transpose(y, w) == d<conv2d(x, w), y>/dx.
#[test]
fn conv_transpose_equals_conv_input_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let (cin, cout) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let h = 2 * rng.gen_range(3..=8);
        let x = Tensor::randn(vec![1, cin, h, h], 0.0, 1.0, &mut rng);
        let w = Tensor::randn(vec![cout, cin, 3, 3], 0.0, 0.3, &mut rng);
        let zero_cout = Var::constant(Tensor::zeros(vec![cout]));
        let zero_cin = Var::constant(Tensor::zeros(vec![cin]));
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let y = tape.conv2d(&xv, &Var::constant(w.clone()), &zero_cout, Conv2dSpec::new(2, 1)).unwrap();
        let up = Tensor::randn(y.shape().to_vec(), 0.0, 1.0, &mut rng);
        let loss = tape.sum(&tape.mul(&y, &Var::constant(up.clone())).unwrap()).unwrap();
        let grad = tape.backward(&loss).unwrap().get(&xv).unwrap().clone();

        // conv weight Cout×Cin×K×K is exactly a Cin'=Cout, Cout'=Cin transposed weight.
        let tr = Tape::new()
            .conv2d_transpose(&Var::constant(up), &Var::constant(w), &zero_cin, ConvTransposeSpec::new(2, 1, 1))
            .unwrap();
        assert!(tr.value().max_abs_diff(&grad).unwrap() <= 1e-5);
    }
}

#[test]
fn adjoint_inner_product_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for case in 0..30 {
        let (cin, cout) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let h = rng.gen_range(4..=12);
        let k = [1, 3, 4][case % 3];
        let stride = rng.gen_range(1..=2);
        let pad = rng.gen_range(0..=1);
        let oh = conv_out_size(h, k, stride, pad).unwrap();
        // Output padding that lands the transposed output back on h×h.
        let back = (oh - 1) * stride + k - 2 * pad;
        let out_pad = h - back;
        if out_pad >= stride {
            continue;
        }
        let x = Tensor::randn(vec![1, cin, h, h], 0.0, 1.0, &mut rng);
        let w = Tensor::randn(vec![cout, cin, k, k], 0.0, 0.5, &mut rng);
        let y = Tensor::randn(vec![1, cout, oh, oh], 0.0, 1.0, &mut rng);
        let ax = naive_conv2d(&x, &w, &Tensor::zeros(vec![cout]), stride, pad, PadMode::Zero);
        let aty = Tape::new()
            .conv2d_transpose(
                &Var::constant(y.clone()),
                &Var::constant(w),
                &Var::constant(Tensor::zeros(vec![cin])),
                ConvTransposeSpec::new(stride, pad, out_pad),
            )
            .unwrap();
        let (lhs, rhs) = (dot(&ax, &y), dot(&x, aty.value()));
        assert!((lhs - rhs).abs() <= 1e-4 * lhs.abs().max(1.0), "case {case}: {lhs} vs {rhs}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_output_shape_law(
        h in 1usize..24, w in 1usize..24, k in 1usize..6, stride in 1usize..4, pad in 0usize..3,
    ) {
        prop_assume!(k <= h + 2 * pad && k <= w + 2 * pad);
        let x = Var::constant(Tensor::full(vec![1, 2, h, w], 0.5));
        let wt = Var::constant(Tensor::full(vec![3, 2, k, k], 0.1));
        let b = Var::constant(Tensor::zeros(vec![3]));
        let out = Tape::new().conv2d(&x, &wt, &b, Conv2dSpec::new(stride, pad)).unwrap();
        prop_assert_eq!(out.shape(), &[1, 3, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1]);
    }
}

#[test]
fn forward_backward_is_bitwise_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let tape = Tape::new();
        let x = tape.leaf(Tensor::randn(vec![2, 3, 12, 12], 0.0, 1.0, &mut rng));
        let w = tape.leaf(Tensor::randn(vec![4, 3, 3, 3], 0.0, 0.2, &mut rng));
        let b = tape.leaf(Tensor::zeros(vec![4]));
        let y = tape.conv2d(&x, &w, &b, Conv2dSpec::reflect(1, 1)).unwrap();
        let y = tape.dropout(&y, 0.5, true, &mut rng).unwrap();
        let loss = tape.mean(&tape.mul(&y, &y).unwrap()).unwrap();
        let g = tape.backward(&loss).unwrap();
        (loss.value().clone(), g.get(&w).unwrap().clone(), g.get(&x).unwrap().clone())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.bit_checksum(), b.0.bit_checksum());
    assert_eq!(a.1.bit_checksum(), b.1.bit_checksum());
    assert_eq!(a.2.bit_checksum(), b.2.bit_checksum());
}
