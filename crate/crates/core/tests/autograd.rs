use std::sync::Arc;

use scenebias::autograd::*;
use scenebias::gradcheck::{grad_check, GradCheckConfig};
use scenebias::{rng, Result, Tensor};

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut rng::seeded(seed))
}

/// Direct 7-nested-loop convolution, written independently of the kernels.
fn conv3d_oracle(x: &Tensor, w: &Tensor, stride: [usize; 3], pad: [usize; 3]) -> Vec<f64> {
    let [b, ci, t, h, wd]: [usize; 5] = x.shape().try_into().unwrap();
    let [co, _, kt, kh, kw]: [usize; 5] = w.shape().try_into().unwrap();
    let ot = (t + 2 * pad[0] - kt) / stride[0] + 1;
    let oh = (h + 2 * pad[1] - kh) / stride[1] + 1;
    let ow = (wd + 2 * pad[2] - kw) / stride[2] + 1;
    let xi = |n, c, tt, hh, ww| (((n * ci + c) * t + tt) * h + hh) * wd + ww;
    let wi = |o, c, a, bb, cc| (((o * ci + c) * kt + a) * kh + bb) * kw + cc;
    let mut out = Vec::new();
    for n in 0..b {
        for o in 0..co {
            for z in 0..ot {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for a in 0..kt {
                                for bb in 0..kh {
                                    for cc in 0..kw {
                                        let tt = (z * stride[0] + a) as isize - pad[0] as isize;
                                        let hh = (y * stride[1] + bb) as isize - pad[1] as isize;
                                        let ww = (xx * stride[2] + cc) as isize - pad[2] as isize;
                                        if tt < 0
                                            || hh < 0
                                            || ww < 0
                                            || tt >= t as isize
                                            || hh >= h as isize
                                            || ww >= wd as isize
                                        {
                                            continue;
                                        }
                                        acc += x.data()[xi(n, c, tt as usize, hh as usize, ww as usize)]
                                            * w.data()[wi(o, c, a, bb, cc)];
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    out
}

#[test]
fn conv3d_identity_kernel() {
    let x = rand_tensor(&[1, 1, 2, 3, 3], 1);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = tape.constant(Tensor::ones(&[1, 1, 1, 1, 1]));
    let y = tape.conv3d(xv, w, None, Conv3dSpec::default()).unwrap();
    assert_eq!(tape.value(y).shape(), x.shape());
    assert_eq!(tape.value(y).data(), x.data());
}

#[test]
fn conv3d_matches_loop_oracle() {
    let x = rand_tensor(&[1, 2, 4, 6, 6], 11);
    let w = rand_tensor(&[3, 2, 2, 3, 3], 12);
    let mut tape = Tape::new();
    let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
    let y = tape.conv3d(xv, wv, None, Conv3dSpec::default()).unwrap();
    let expect = conv3d_oracle(&x, &w, [1; 3], [0; 3]);
    assert_eq!(tape.value(y).shape(), &[1, 3, 3, 4, 4]);
    for (a, b) in tape.value(y).data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv3d_strided_padded_matches_oracle() {
    let x = rand_tensor(&[2, 3, 5, 7, 6], 21);
    let w = rand_tensor(&[4, 3, 3, 3, 2], 22);
    let spec = Conv3dSpec {
        stride: [2, 2, 1],
        pad: [1, 1, 1],
    };
    let mut tape = Tape::new();
    let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
    let y = tape.conv3d(xv, wv, None, spec).unwrap();
    let expect = conv3d_oracle(&x, &w, spec.stride, spec.pad);
    assert_eq!(tape.value(y).numel(), expect.len());
    for (a, b) in tape.value(y).data().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv3d_rejects_channel_mismatch() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 2, 2, 2]));
    let w = tape.constant(Tensor::zeros(&[1, 3, 1, 1, 1]));
    let err = tape.conv3d(x, w, None, Conv3dSpec::default()).unwrap_err();
    assert!(err.to_string().contains("channel"), "{err}");
    let w4 = tape.constant(Tensor::zeros(&[1, 2, 1, 1]));
    assert!(tape.conv3d(x, w4, None, Conv3dSpec::default()).is_err());
}

#[test]
fn add_cancels() {
    let x = rand_tensor(&[2, 3], 5);
    let neg = Tensor::new(x.shape(), x.data().iter().map(|v| -v).collect()).unwrap();
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(x), tape.constant(neg));
    let s = tape.add(a, b).unwrap();
    assert!(tape.value(s).data().iter().all(|&v| v == 0.0));
}

#[test]
fn concat_channel_arithmetic() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::ones(&[2, 3, 1, 2, 2]));
    let b = tape.constant(Tensor::zeros(&[2, 5, 1, 2, 2]));
    let c = tape.concat_channels(&[a, b]).unwrap();
    assert_eq!(tape.value(c).shape(), &[2, 8, 1, 2, 2]);
    // second sample starts with the ones of `a`
    assert_eq!(tape.value(c).data()[8 * 4], 1.0);
    let bad = tape.constant(Tensor::zeros(&[2, 5, 1, 3, 2]));
    let err = tape.concat_channels(&[a, bad]).unwrap_err();
    assert!(err.to_string().contains("dimension 3"), "{err}");
}

#[test]
fn pool_output_shape_formula() {
    let mut tape = Tape::new();
    let x = tape.constant(rand_tensor(&[1, 2, 5, 9, 8], 3));
    let spec = Pool3dSpec {
        mode: PoolMode::Max,
        kernel: [1, 3, 2],
        stride: [1, 2, 2],
        pad: [0, 1, 0],
    };
    let y = tape.pool3d(x, spec).unwrap();
    // floor((in + 2p - k)/s) + 1
    assert_eq!(tape.value(y).shape(), &[1, 2, 5, (9 + 2 - 3) / 2 + 1, (8 - 2) / 2 + 1]);
}

#[test]
fn cross_entropy_uniform_logits() {
    for c in [2usize, 5, 10] {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::full(&[3, c], 0.7));
        let loss = tape.softmax_cross_entropy(l, &[0, c - 1, 1]).unwrap();
        assert!((tape.value(loss).item().unwrap() - (c as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_confident_target() {
    let mut logits = vec![0.0; 4];
    logits[2] = 1000.0;
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::new(&[1, 4], logits).unwrap());
    let loss = tape.softmax_cross_entropy(l, &[2]).unwrap();
    assert!(tape.value(loss).item().unwrap().abs() < 1e-12);
}

#[test]
fn cross_entropy_matches_direct_formula() {
    let logits = rand_tensor(&[4, 10], 9).reshape(&[4, 10]).unwrap();
    let targets = [3, 0, 9, 5];
    let mut expect = 0.0;
    for (i, row) in logits.data().chunks(10).enumerate() {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        expect += -(row[targets[i]].exp() / z).ln();
    }
    expect /= 4.0;
    let mut tape = Tape::new();
    let l = tape.constant(logits);
    let loss = tape.softmax_cross_entropy(l, &targets).unwrap();
    assert!((tape.value(loss).item().unwrap() - expect).abs() < 1e-10);
}

#[test]
fn cross_entropy_rejects_bad_target() {
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::zeros(&[1, 3]));
    assert!(tape.softmax_cross_entropy(l, &[3]).is_err());
}

#[test]
fn backward_of_sum_is_ones() {
    let mut tape = Tape::new();
    let x = tape.leaf(rand_tensor(&[2, 3, 4], 1).with_grad());
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().iter().all(|&g| g == 1.0));
}

#[test]
fn backward_of_half_square_is_identity() {
    let x = rand_tensor(&[5, 2], 2);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().with_grad());
    let sq = tape.mul(xv, xv).unwrap();
    let s = tape.sum(sq).unwrap();
    let loss = tape.scale(s, 0.5).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(xv).unwrap(), x.data());
}

#[test]
fn repeated_backward_accumulates() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::ones(&[3]).with_grad());
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    tape.zero_grads();
    assert!(tape.grad(x).is_none());
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::ones(&[3]).with_grad());
    let y = tape.relu(x).unwrap();
    assert!(tape.backward(y).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::ones(&[2]).with_grad());
    let c = tape.constant(Tensor::ones(&[2]));
    let y = tape.mul(x, c).unwrap();
    assert!(tape.requires_grad(y));
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(c).is_none());
}

#[test]
fn weighted_mask_rejects_saturated_alpha() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::new(&[1], vec![1.0]).unwrap());
    let m = tape.constant(Tensor::ones(&[1, 1, 1, 2, 2]));
    assert!(tape.weighted_mask(a, m).is_err());
}

#[test]
fn scaled_sigmoid_stays_open_interval() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[4], vec![-1e3, -40.0, 40.0, 1e3]).unwrap());
    let y = tape.scaled_sigmoid(x).unwrap();
    assert!(tape.value(y).data().iter().all(|v| v.abs() < 1.0));
}

// ---- finite-difference checks, one per primitive ----------------------------

fn named(ts: Vec<Tensor>) -> Vec<(String, Tensor)> {
    ts.into_iter().enumerate().map(|(i, t)| (format!("p{i}"), t)).collect()
}

/// Reduces any tensor to a scalar through a fixed random projection so that
/// every output element contributes a distinct weight.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let r = tape.constant(rand_tensor(&shape, seed));
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

fn check(params: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
    let cfg = GradCheckConfig::default();
    let rep = grad_check(
        &named(params),
        |t, v| {
            let y = f(t, v)?;
            project(t, y, 999)
        },
        &cfg,
    )
    .unwrap();
    assert!(rep.passed(), "{rep:#?}");
}

#[test]
fn gradcheck_linear() {
    check(
        vec![rand_tensor(&[3, 4], 1), rand_tensor(&[2, 4], 2), rand_tensor(&[2], 3)],
        |t, v| t.linear(v[0], v[1], Some(v[2])),
    );
}

#[test]
fn gradcheck_conv3d() {
    let spec = Conv3dSpec {
        stride: [1, 2, 2],
        pad: [1, 1, 0],
    };
    check(
        vec![
            rand_tensor(&[2, 2, 3, 5, 5], 1),
            rand_tensor(&[3, 2, 2, 3, 3], 2),
            rand_tensor(&[3], 3),
        ],
        move |t, v| t.conv3d(v[0], v[1], Some(v[2]), spec),
    );
}

#[test]
fn gradcheck_pools() {
    for mode in [PoolMode::Max, PoolMode::Avg] {
        let spec = Pool3dSpec {
            mode,
            kernel: [2, 2, 2],
            stride: [1, 2, 2],
            pad: [0, 1, 1],
        };
        check(vec![rand_tensor(&[1, 2, 3, 4, 4], 4)], move |t, v| t.pool3d(v[0], spec));
    }
}

#[test]
fn gradcheck_elementwise() {
    check(vec![rand_tensor(&[2, 3, 4], 5)], |t, v| t.relu(v[0]));
    check(vec![rand_tensor(&[2, 3, 4], 6)], |t, v| t.scaled_sigmoid(v[0]));
    check(vec![rand_tensor(&[2, 3], 7), rand_tensor(&[2, 3], 8)], |t, v| {
        t.add(v[0], v[1])
    });
    check(
        vec![rand_tensor(&[2, 3, 2, 2, 2], 9), rand_tensor(&[2, 1, 2, 2, 2], 10)],
        |t, v| t.mul(v[0], v[1]),
    );
    check(vec![rand_tensor(&[2, 3], 11)], |t, v| t.scale(v[0], -1.7));
}

#[test]
fn gradcheck_structural() {
    check(
        vec![rand_tensor(&[2, 1, 2, 2, 1], 1), rand_tensor(&[2, 3, 2, 2, 1], 2)],
        |t, v| t.concat_channels(&[v[0], v[1]]),
    );
    check(vec![rand_tensor(&[2, 3, 2, 2, 2], 3)], |t, v| t.global_avg_pool(v[0]));
    check(
        vec![
            rand_tensor(&[2, 3, 2, 2, 1], 4),
            rand_tensor(&[3], 5),
            rand_tensor(&[3], 6),
        ],
        |t, v| t.channel_affine(v[0], v[1], v[2]),
    );
}

#[test]
fn gradcheck_weighted_mask_through_alpha() {
    let mask: Vec<f64> = (0..2 * 8).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
    let mask = Tensor::new(&[2, 1, 2, 2, 2], mask).unwrap();
    check(vec![Tensor::new(&[2], vec![0.3, -0.6]).unwrap()], move |t, v| {
        let m = t.constant(mask.clone());
        t.weighted_mask(v[0], m)
    });
}

#[test]
fn gradcheck_cross_entropy() {
    let cfg = GradCheckConfig::default();
    let rep = grad_check(
        &named(vec![rand_tensor(&[4, 5], 12)]),
        |t, v| t.softmax_cross_entropy(v[0], &[0, 4, 2, 2]),
        &cfg,
    )
    .unwrap();
    assert!(rep.passed(), "{rep:#?}");
}

/// Identity whose backward doubles the gradient.
struct Doubling;

impl CustomOp for Doubling {
    fn name(&self) -> &str {
        "doubling"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(inputs[0].clone())
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad_out: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad_out.iter().map(|g| 2.0 * g).collect())]
    }
}

#[test]
fn gradcheck_flags_corrupted_rule() {
    let cfg = GradCheckConfig::default();
    let op: Arc<dyn CustomOp> = Arc::new(Doubling);
    let rep = grad_check(
        &named(vec![rand_tensor(&[3, 4], 1), rand_tensor(&[2, 4], 2)]),
        |t, v| {
            let y = t.linear(v[0], v[1], None)?;
            let y = t.apply(Primitive::Custom(op.clone()), &[y])?;
            project(t, y, 5)
        },
        &cfg,
    )
    .unwrap();
    assert!(!rep.passed());
    assert!(rep.max_rel_error() > 0.3);
}

#[test]
fn activation_pattern_tracks_relu_signs() {
    let pattern = |vals: Vec<f64>| {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(&[2], vals).unwrap());
        t.relu(x).unwrap();
        t.activation_pattern()
    };
    assert_eq!(pattern(vec![0.3, -0.2]), pattern(vec![0.9, -5.0]));
    assert_ne!(pattern(vec![0.3, -0.2]), pattern(vec![0.3, 0.2]));
}

#[test]
fn gradcheck_skips_coordinates_at_a_kink() {
    let cfg = GradCheckConfig::default();
    let x = Tensor::new(&[3], vec![2e-6, 0.5, -0.7]).unwrap();
    let rep = grad_check(
        &named(vec![x]),
        |t, v| {
            let y = t.relu(v[0])?;
            t.sum(y)
        },
        &cfg,
    )
    .unwrap();
    assert_eq!(rep.params[0].skipped, 1);
    assert_eq!(rep.params[0].checked, 2);
    assert!(rep.passed());
}
