use gaitcontour::numeric::{
    grad_check, grad_check_many, GradCheckConfig, GradChecker, NormMode, Probe, Tape, Tensor, Var,
};
use gaitcontour::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn cfg() -> GradCheckConfig {
    GradCheckConfig::default()
}

#[test]
fn matmul_identity_and_shape_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[3, 4], &mut rng);
    let mut tape = Tape::new();
    let i3 = tape.constant(Tensor::eye(3));
    let av = tape.constant(a.clone());
    let out = tape.matmul(i3, av).unwrap();
    assert_eq!(tape.value(out), &a);
    let bad = tape.constant(Tensor::zeros(&[5, 2]));
    assert!(matches!(tape.matmul(av, bad), Err(Error::ShapeMismatch(_))));
}

#[test]
fn concat_along_points() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::full(&[4, 3, 128], 1.0));
    let b = tape.constant(Tensor::full(&[4, 3, 128], 2.0));
    let c = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.value(c).shape(), &[4, 6, 128]);
    let v = tape.value(c);
    assert_eq!(v.get(&[2, 2, 7]), 1.0);
    assert_eq!(v.get(&[2, 3, 7]), 2.0);
}

#[test]
fn gradient_of_squared_norm() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap(), true);
    let xt = tape.transpose(x).unwrap();
    let y = tape.matmul(xt, x).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn shared_subexpressions_accumulate() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap(), true);
    let y = tape.add(x, x).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0, 2.0]);
}

#[test]
fn softmax_values_and_stability() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[3]));
    let y = tape.softmax(x, 0).unwrap();
    for v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = tape.constant(Tensor::new(&[2], vec![1000.0, 0.0]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[3, 5, 2], &mut rng);
    let w = random(&[3, 5, 2], &mut rng);
    for axis in 0..3 {
        let report = grad_check(
            |tape, x| {
                let y = tape.softmax(x, axis)?;
                let wv = tape.constant(w.clone());
                let p = tape.mul(y, wv)?;
                Ok(tape.sum(p))
            },
            &x,
            GradCheckConfig { tol: 1e-6, ..cfg() },
        )
        .unwrap();
        assert!(report.passed, "axis {axis}: {report:?}");
    }
}

#[test]
fn sum_of_squares_grad_check_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[4, 6], &mut rng);
    let report = grad_check(
        |tape, x| {
            let sq = tape.mul(x, x)?;
            Ok(tape.sum(sq))
        },
        &x,
        GradCheckConfig { tol: 1e-8, ..cfg() },
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

/// Direct summation oracle for the temporal convolution.
fn naive_temporal_conv(x: &Tensor, w: &Tensor, b: &[f64], pad: usize) -> Tensor {
    let [bsz, t, j, cin] = *x.shape() else { panic!() };
    let [k, _, cout] = *w.shape() else { panic!() };
    let mut out = Tensor::zeros(&[bsz, t, j, cout]);
    for bi in 0..bsz {
        for ti in 0..t {
            for ji in 0..j {
                for co in 0..cout {
                    let mut acc = b[co];
                    for tau in 0..k {
                        let src = ti as isize + tau as isize - pad as isize;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            acc += x.get(&[bi, src as usize, ji, ci]) * w.get(&[tau, ci, co]);
                        }
                    }
                    out.set(&[bi, ti, ji, co], acc);
                }
            }
        }
    }
    out
}

#[test]
fn temporal_conv_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (t, k) in [(5, 3), (2, 3), (1, 3), (4, 5), (3, 1)] {
        let x = random(&[2, t, 3, 4], &mut rng);
        let w = random(&[k, 4, 5], &mut rng);
        let b: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let bv = tape.constant(Tensor::new(&[5], b.clone()).unwrap());
        let y = tape.temporal_conv(xv, wv, Some(bv), (k - 1) / 2).unwrap();
        let want = naive_temporal_conv(&x, &w, &b, (k - 1) / 2);
        assert!(tape.value(y).max_abs_diff(&want) < 1e-12, "t={t} k={k}");
    }
}

#[test]
fn temporal_conv_identity_kernel_and_pointwise_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[1, 6, 4, 3], &mut rng);
    let mut w = Tensor::zeros(&[3, 3, 3]);
    for c in 0..3 {
        w.set(&[1, c, c], 1.0);
    }
    let mut tape = Tape::new();
    let (xv, wv) = (tape.constant(x.clone()), tape.constant(w));
    let y = tape.temporal_conv(xv, wv, None, 1).unwrap();
    assert_eq!(tape.value(y), &x);

    // k = 1 is a per-frame linear layer.
    let w1 = random(&[1, 3, 2], &mut rng);
    let w1v = tape.constant(w1.clone());
    let y = tape.temporal_conv(xv, w1v, None, 0).unwrap();
    let w2 = tape.constant(w1.reshaped(&[3, 2]).unwrap());
    let lin = tape.linear(xv, w2, None).unwrap();
    assert!(tape.value(y).max_abs_diff(tape.value(lin)) < 1e-14);
}

#[test]
fn temporal_conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs = vec![
        random(&[2, 4, 3, 2], &mut rng),
        random(&[3, 2, 3], &mut rng),
        random(&[3], &mut rng),
    ];
    let probe = random(&[2, 4, 3, 3], &mut rng);
    let report = grad_check_many(
        |tape, v| {
            let y = tape.temporal_conv(v[0], v[1], Some(v[2]), 1)?;
            let p = tape.constant(probe.clone());
            let m = tape.mul(y, p)?;
            Ok(tape.sum(m))
        },
        &inputs,
        None,
        cfg(),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn attention_single_token_has_unit_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let q = random(&[3, 1, 4], &mut rng);
    let k = random(&[3, 1, 4], &mut rng);
    let v = random(&[3, 1, 4], &mut rng);
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.constant(q), tape.constant(k), tape.constant(v.clone()));
    let out = tape.attention(qv, kv, vv, 2).unwrap();
    assert!(tape.value(out).max_abs_diff(&v) < 1e-15);
}

#[test]
fn attention_two_tokens_matches_hand_computation() {
    // One head, one channel: scores are q_i * k_j.
    let q = Tensor::new(&[1, 2, 1], vec![1.0, 2.0]).unwrap();
    let k = Tensor::new(&[1, 2, 1], vec![0.5, -1.0]).unwrap();
    let v = Tensor::new(&[1, 2, 1], vec![3.0, 7.0]).unwrap();
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.constant(q), tape.constant(k), tape.constant(v));
    let out = tape.attention(qv, kv, vv, 1).unwrap();
    let expect = |s0: f64, s1: f64| {
        let (e0, e1) = (s0.exp(), s1.exp());
        (3.0 * e0 + 7.0 * e1) / (e0 + e1)
    };
    let got = tape.value(out).data();
    assert!((got[0] - expect(0.5, -1.0)).abs() < 1e-14);
    assert!((got[1] - expect(1.0, -2.0)).abs() < 1e-14);
}

#[test]
fn attention_is_permutation_equivariant_and_differentiable() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = vec![
        random(&[2, 5, 4], &mut rng),
        random(&[2, 5, 4], &mut rng),
        random(&[2, 5, 4], &mut rng),
    ];
    let perm = [3, 0, 4, 1, 2];
    let mut tape = Tape::new();
    let v: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = tape.attention(v[0], v[1], v[2], 2).unwrap();
    let pv: Vec<_> = v.iter().map(|&x| tape.index_select(x, 1, &perm).unwrap()).collect();
    let pout = tape.attention(pv[0], pv[1], pv[2], 2).unwrap();
    let out_p = tape.index_select(out, 1, &perm).unwrap();
    assert!(tape.value(pout).max_abs_diff(tape.value(out_p)) < 1e-14);

    let probe = random(&[2, 5, 4], &mut rng);
    let report = grad_check_many(
        |tape, v| {
            let y = tape.attention(v[0], v[1], v[2], 2)?;
            let p = tape.constant(probe.clone());
            let m = tape.mul(y, p)?;
            Ok(tape.sum(m))
        },
        &inputs,
        None,
        cfg(),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn batch_norm_train_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::from_fn(&[3, 7, 4], |i| rng.random_range(-2.0..5.0) * (1 + i % 4) as f64);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::full(&[4], 1.0));
    let b = tape.constant(Tensor::zeros(&[4]));
    let (y, stats) = tape.batch_norm(xv, g, b, NormMode::Train).unwrap();
    assert!(stats.is_some());
    let d = tape.value(y).data();
    for c in 0..4 {
        let col: Vec<f64> = d.iter().skip(c).step_by(4).copied().collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-10);
        // eps = 1e-5 shrinks the variance by var / (var + eps).
        assert!((var - 1.0).abs() < 1e-5, "var {var}");
    }
}

#[test]
fn batch_norm_eval_passes_normalized_input_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&[5, 3], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(Tensor::full(&[3], 1.0));
    let b = tape.constant(Tensor::zeros(&[3]));
    let mean = [0.0; 3];
    let var = [1.0 - 1e-5; 3];
    let (y, stats) = tape
        .batch_norm(xv, g, b, NormMode::Eval { mean: &mean, var: &var })
        .unwrap();
    assert!(stats.is_none());
    assert!(tape.value(y).max_abs_diff(&x) < 1e-12);
}

#[test]
fn batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = vec![
        random(&[2, 5, 3], &mut rng),
        random(&[3], &mut rng),
        random(&[3], &mut rng),
    ];
    let probe = random(&[2, 5, 3], &mut rng);
    for train in [true, false] {
        let mean = [0.1, -0.2, 0.3];
        let var = [0.5, 1.5, 2.0];
        let report = grad_check_many(
            |tape, v| {
                let mode = if train {
                    NormMode::Train
                } else {
                    NormMode::Eval { mean: &mean, var: &var }
                };
                let (y, _) = tape.batch_norm(v[0], v[1], v[2], mode)?;
                let p = tape.constant(probe.clone());
                let m = tape.mul(y, p)?;
                Ok(tape.sum(m))
            },
            &inputs,
            None,
            GradCheckConfig { tol: 1e-5, ..cfg() },
        )
        .unwrap();
        assert!(report.passed, "train={train}: {report:?}");
    }
}

#[test]
fn avg_pool_shapes_and_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[2, 33, 5], 0.75));
    let y = tape.avg_pool(x, 1, 11).unwrap();
    assert_eq!(tape.value(y).shape(), &[2, 3, 5]);
    assert!(tape.value(y).data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
    let x = tape.constant(Tensor::full(&[2, 15, 5], 1.0));
    let y = tape.avg_pool(x, 1, 15).unwrap();
    assert_eq!(tape.value(y).shape(), &[2, 1, 5]);
    let bad = tape.constant(Tensor::zeros(&[2, 10, 5]));
    assert!(matches!(tape.avg_pool(bad, 1, 11), Err(Error::ShapeMismatch(_))));
}

#[test]
fn structural_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inputs = vec![
        random(&[2, 6, 3], &mut rng),
        random(&[2, 4, 3], &mut rng),
        random(&[3, 2], &mut rng),
        random(&[2], &mut rng),
    ];
    let report = grad_check_many(
        |tape, v| {
            let c = tape.concat(&[v[0], v[1]], 1)?;
            let sel = tape.index_select(c, 1, &[9, 0, 0, 4, 7, 2])?;
            let pooled = tape.avg_pool(sel, 1, 3)?;
            let lin = tape.linear(pooled, v[2], Some(v[3]))?;
            let t = tape.transpose(lin)?;
            let m = tape.mean(t, 0)?;
            let r = tape.relu(m)?;
            let s = tape.mul_scalar(r, 1.7);
            let sq = tape.mul(s, s)?;
            let sub = tape.sub(sq, s)?;
            let rs = tape.reshape(sub, &[4])?;
            let bias = tape.constant(Tensor::new(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
            let ab = tape.add_broadcast(rs, bias)?;
            Ok(tape.sum(ab))
        },
        &inputs,
        None,
        cfg(),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn batched_matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let inputs = vec![
        random(&[3, 2, 4], &mut rng),
        random(&[3, 4, 5], &mut rng),
        random(&[4, 5], &mut rng),
    ];
    let report = grad_check_many(
        |tape, v| {
            let a = tape.matmul(v[0], v[1])?;
            let b = tape.matmul(v[0], v[2])?;
            let c = tape.mul(a, b)?;
            Ok(tape.sum(c))
        },
        &inputs,
        None,
        cfg(),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn ops_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random(&[2, 3, 7, 8], &mut rng);
        let w = random(&[3, 8, 8], &mut rng);
        let mut tape = Tape::new();
        let xv = tape.leaf(x, true);
        let wv = tape.leaf(w, true);
        let y = tape.temporal_conv(xv, wv, None, 1).unwrap();
        let y = tape.reshape(y, &[6, 7, 8]).unwrap();
        let a = tape.attention(y, y, y, 4).unwrap();
        let s = tape.sum(a);
        let g = tape.backward(s).unwrap();
        (tape.value(s).item().to_bits(), g.get(wv).unwrap().clone())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
}

#[test]
fn kink_guard_skips_coordinates_next_to_a_relu_kink() {
    // x[0] sits 3e-6 from the ReLU kink, closer than h; x[1] is far from it.
    let x = Tensor::new(&[2], vec![3e-6, 0.5]).unwrap();
    let f = |tape: &mut Tape, v: &[Var]| {
        let r = tape.relu(v[0])?;
        let sq = tape.mul(r, r)?;
        let s = tape.sum(sq);
        let lin = tape.sum(r);
        tape.add(s, lin)
    };
    let mut plain = GradChecker::new(f, std::slice::from_ref(&x), cfg()).unwrap();
    let Probe::Checked { rel_err, .. } = plain.probe((0, 0)).unwrap() else {
        panic!()
    };
    assert!(rel_err > 0.1, "{rel_err}");

    let guarded = GradCheckConfig {
        kink_guard: Some(10.0),
        ..cfg()
    };
    let mut checker = GradChecker::new(f, std::slice::from_ref(&x), guarded).unwrap();
    assert_eq!(checker.probe((0, 0)).unwrap(), Probe::Kink);
    let Probe::Checked {
        numeric,
        analytic,
        rel_err,
        ..
    } = checker.probe((0, 1)).unwrap()
    else {
        panic!()
    };
    assert!((analytic - 2.0).abs() < 1e-12 && (numeric - 2.0).abs() < 1e-8 && rel_err < 1e-8);

    let report = grad_check_many(f, std::slice::from_ref(&x), None, guarded).unwrap();
    assert_eq!((report.checked, report.skipped), (1, 1));
    assert!(report.passed);
}

#[test]
fn branch_signature_tracks_relu_signs_only() {
    let sig = |vals: Vec<f64>| {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::new(&[3], vals).unwrap());
        let r = tape.relu(v).unwrap();
        tape.sum(r);
        tape.branch_signature()
    };
    assert_eq!(sig(vec![1.0, -2.0, 3.0]), sig(vec![0.5, -0.1, 9.0]));
    assert_ne!(sig(vec![1.0, -2.0, 3.0]), sig(vec![1.0, 2.0, 3.0]));
}

#[test]
fn frozen_branches_difference_the_smooth_piece() {
    // Same function as the kink-guard test; x[0] is 3e-6 from the kink.
    let x = Tensor::new(&[2], vec![3e-6, 0.5]).unwrap();
    let f = |tape: &mut Tape, v: &[Var]| {
        let r = tape.relu(v[0])?;
        let sq = tape.mul(r, r)?;
        let s = tape.sum(sq);
        let lin = tape.sum(r);
        tape.add(s, lin)
    };
    let frozen = GradCheckConfig {
        freeze_branches: true,
        ..cfg()
    };
    let mut checker = GradChecker::new(f, std::slice::from_ref(&x), frozen).unwrap();
    // On the active piece d/dx (x^2 + x) = 2x + 1.
    let Probe::Checked {
        numeric,
        analytic,
        rel_err,
        ..
    } = checker.probe((0, 0)).unwrap()
    else {
        panic!()
    };
    assert!((analytic - (1.0 + 6e-6)).abs() < 1e-12);
    assert!((numeric - analytic).abs() < 1e-8, "{numeric} vs {analytic}");
    assert!(rel_err < 1e-8);
}

#[test]
fn frozen_batch_hard_keeps_the_mined_triplets() {
    let labels = [0, 0, 1, 1];
    let e = Tensor::new(&[4, 1], vec![0.0, 1.0, 1.05, 3.0]).unwrap();
    let mut tape = Tape::new();
    let v = tape.constant(e.clone());
    tape.batch_hard_triplet(v, &labels, 0.2).unwrap();
    let branches = tape.branches();
    assert_eq!(branches.batch_hard.len(), 1);

    // Move row 1 so the free mining picks a different negative for anchor 0
    // and deactivates anchor 3; the frozen tape keeps the original choice.
    let moved = Tensor::new(&[4, 1], vec![0.0, 1.0, 2.9, 3.0]).unwrap();
    let mut free = Tape::new();
    let v = free.constant(moved.clone());
    free.batch_hard_triplet(v, &labels, 0.2).unwrap();
    assert_ne!(free.branches(), branches);

    let mut replay = Tape::with_branches(branches.clone());
    let v = replay.constant(moved);
    let loss = replay.batch_hard_triplet(v, &labels, 0.2).unwrap();
    let rows = [0.0f64, 1.0, 2.9, 3.0];
    let expected: f64 = branches.batch_hard[0]
        .iter()
        .map(|&(a, p, n)| (rows[a] - rows[p]).abs() - (rows[a] - rows[n]).abs() + 0.2)
        .sum::<f64>()
        / 4.0;
    assert!((replay.value(loss).item() - expected).abs() < 1e-15);
    assert_eq!(replay.branches(), branches);

    let mut empty = Tape::with_branches(Default::default());
    let v = empty.constant(e);
    assert!(empty.batch_hard_triplet(v, &labels, 0.2).is_err());
    assert!(empty.relu(v).is_err());
}
