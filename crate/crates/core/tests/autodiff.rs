mod common;

use std::collections::BTreeMap;

use common::prims::{primitive_case, PRIM_OPS};
use common::{grad_check, project, random_tensor, rel_err};
use proptest::prelude::*;
use wmtransfer_core::nets::{NamedParamSet, ParamRole};
use wmtransfer_core::tensor::{AdamConfig, AdamState, Elementwise};
use wmtransfer_core::{Error, RngStream, Tape, Tensor};

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(m(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let b = tape.constant(m(&[&[3.0], &[4.0]]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c), &m(&[&[3.0], &[4.0]]));

    let a = tape.constant(m(&[&[2.0]]));
    let b = tape.constant(m(&[&[3.0]]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[6.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 2]));
    match tape.matmul(a, b) {
        Err(Error::Dimension(msg)) => {
            assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
        }
        other => panic!("expected dimension error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(11, "matmul");
    for case in 0..20 {
        let a = random_tensor(&[3, 4], 1.0, &mut rng);
        let b = random_tensor(&[4, 2], 1.0, &mut rng);
        let err = grad_check(
            &[a, b],
            |t, v| {
                let c = t.matmul(v[0], v[1]).unwrap();
                project(t, c, case)
            },
            usize::MAX,
            &mut rng,
        );
        assert!(err < 1e-6, "case {case}: rel err {err}");
    }
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::scalar(0.0));
    let t = tape.elementwise(Elementwise::Tanh, &[z]).unwrap();
    assert_eq!(tape.value(t).item().unwrap(), 0.0);

    let a = tape.constant(Tensor::row(&[1.0, 2.0]));
    let b = tape.constant(Tensor::row(&[3.0, 4.0]));
    let s = tape.elementwise(Elementwise::Add, &[a, b]).unwrap();
    assert_eq!(tape.value(s).data(), &[4.0, 6.0]);

    let x = tape.param(Tensor::scalar(0.0));
    let y = tape.softplus(x);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().item().unwrap(), 0.5);
}

#[test]
fn elementwise_rejects_incompatible_shapes_and_arity() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(tape.add(a, b), Err(Error::Dimension(_))));
    assert!(matches!(
        tape.elementwise(Elementwise::Mul, &[a]),
        Err(Error::Input(_))
    ));
    // Scalar broadcast is allowed.
    let s = tape.constant(Tensor::scalar(2.0));
    let p = tape.mul(a, s).unwrap();
    assert_eq!(tape.shape(p), &[2, 3]);
}

#[test]
fn gaussian_sample_zero_std_returns_mean() {
    let mut tape = Tape::new();
    let mean = tape.constant(Tensor::row(&[0.25, -1.5, 3.0]));
    let std = tape.constant(Tensor::zeros(&[1, 3]));
    let mut rng = RngStream::new(1, "s");
    let s = tape.gaussian_sample(mean, std, &mut rng).unwrap();
    assert!(tape.value(s).bit_eq(tape.value(mean)));
}

#[test]
fn gaussian_sample_rejects_negative_std() {
    let mut tape = Tape::new();
    let mean = tape.constant(Tensor::row(&[0.0, 0.0]));
    let std = tape.constant(Tensor::row(&[1.0, -0.1]));
    let mut rng = RngStream::new(1, "s");
    assert!(matches!(
        tape.gaussian_sample(mean, std, &mut rng),
        Err(Error::Domain(_))
    ));
}

#[test]
fn gaussian_sample_is_reproducible() {
    let draw = || {
        let mut tape = Tape::new();
        let mean = tape.constant(Tensor::zeros(&[4, 3]));
        let std = tape.constant(Tensor::full(&[4, 3], 2.0));
        let mut rng = RngStream::new(99, "sample");
        let s = tape.gaussian_sample(mean, std, &mut rng).unwrap();
        tape.value(s).clone()
    };
    assert!(draw().bit_eq(&draw()));
}

#[test]
fn gaussian_sample_gradient_monte_carlo() {
    let n = 10_000;
    let mut tape = Tape::new();
    let mean = tape.param(Tensor::full(&[n, 2], 0.3));
    let std = tape.param(Tensor::full(&[n, 2], 1.7));
    let mut rng = RngStream::new(5, "mc");
    let s = tape.gaussian_sample(mean, std, &mut rng).unwrap();
    // E[sample] estimated per coordinate by averaging over the n draws.
    let col_sum = {
        let ones = tape.constant(Tensor::full(&[1, n], 1.0 / n as f64));
        tape.matmul(ones, s).unwrap()
    };
    let loss = tape.sum(col_sum);
    let g = tape.backward(loss).unwrap();
    // Each coordinate of the mean-of-draws has derivative 1 w.r.t. μ.
    let dmean = g.get(mean).unwrap();
    let per_coord: Vec<f64> = (0..2)
        .map(|j| (0..n).map(|i| dmean.data()[i * 2 + j]).sum())
        .collect();
    for d in per_coord {
        assert!((d - 1.0).abs() < 0.05, "{d}");
    }
    // And ∂/∂σ is the mean of ε, which is close to zero.
    let dstd = g.get(std).unwrap();
    for j in 0..2 {
        let d: f64 = (0..n).map(|i| dstd.data()[i * 2 + j]).sum();
        assert!(d.abs() < 0.05, "{d}");
    }
}

#[test]
fn gaussian_kl_examples() {
    let mut tape = Tape::new();
    let mu = tape.constant(Tensor::row(&[0.3, -0.2]));
    let sd = tape.constant(Tensor::row(&[0.5, 2.0]));
    let kl = tape.gaussian_kl(mu, sd, mu, sd).unwrap();
    assert_eq!(tape.value(kl).item().unwrap(), 0.0);

    let ma = tape.constant(Tensor::row(&[1.0]));
    let mb = tape.constant(Tensor::row(&[0.0]));
    let one = tape.constant(Tensor::row(&[1.0]));
    let kl = tape.gaussian_kl(ma, one, mb, one).unwrap();
    assert_eq!(tape.value(kl).item().unwrap(), 0.5);

    let zero = tape.constant(Tensor::row(&[0.0]));
    assert!(matches!(
        tape.gaussian_kl(ma, zero, mb, one),
        Err(Error::Domain(_))
    ));
}

fn normal_pdf(x: f64, mu: f64, sd: f64) -> f64 {
    (-(x - mu).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// ∫ p log(p/q) by composite Simpson over ±12σ of p.
fn kl_quadrature(ma: f64, sa: f64, mb: f64, sb: f64) -> f64 {
    let (lo, hi) = (ma - 12.0 * sa, ma + 12.0 * sa);
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let f = |x: f64| {
        let p = normal_pdf(x, ma, sa);
        let q = normal_pdf(x, mb, sb);
        if p == 0.0 {
            0.0
        } else {
            p * (p / q).ln()
        }
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn gaussian_kl_matches_quadrature() {
    let mut rng = RngStream::new(8, "kl");
    let dims = 8;
    let ma: Vec<f64> = (0..dims).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let mb: Vec<f64> = (0..dims).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let sa: Vec<f64> = (0..dims).map(|_| rng.uniform(0.3, 1.5)).collect();
    let sb: Vec<f64> = (0..dims).map(|_| rng.uniform(0.3, 1.5)).collect();
    let oracle: f64 = (0..dims)
        .map(|i| kl_quadrature(ma[i], sa[i], mb[i], sb[i]))
        .sum();
    let mut tape = Tape::new();
    let vars: Vec<_> = [&ma, &sa, &mb, &sb]
        .iter()
        .map(|v| tape.constant(Tensor::row(v)))
        .collect();
    let kl = tape
        .gaussian_kl(vars[0], vars[1], vars[2], vars[3])
        .unwrap();
    let got = tape.value(kl).item().unwrap();
    assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");
}

fn one_param(value: f64) -> NamedParamSet {
    let mut p = NamedParamSet::new();
    p.insert("w", Tensor::scalar(value), ParamRole::FeatureExtraction);
    p
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut p = one_param(0.7);
    let mut opt = AdamState::new(AdamConfig::default(), &p, ["w"]).unwrap();
    let grads = BTreeMap::from([("w".to_string(), Tensor::scalar(0.0))]);
    opt.step(&mut p, &grads).unwrap();
    assert_eq!(p.tensor("w").unwrap().item().unwrap(), 0.7);
    assert_eq!(opt.step_count(), 1);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut p = one_param(0.0);
    let mut opt = AdamState::new(AdamConfig::with_lr(1e-3), &p, ["w"]).unwrap();
    let grads = BTreeMap::from([("w".to_string(), Tensor::scalar(1.0))]);
    opt.step(&mut p, &grads).unwrap();
    let w = p.tensor("w").unwrap().item().unwrap();
    assert!((w + 1e-3).abs() < 1e-9, "{w}");
}

#[test]
fn adam_clips_global_norm() {
    // Norm 200 with limit 100 halves the gradients. The first Adam step is
    // scale invariant, so compare the stored first moments instead.
    let mut p = NamedParamSet::new();
    p.insert("a", Tensor::row(&[0.0, 0.0]), ParamRole::FeatureExtraction);
    let mut opt = AdamState::new(AdamConfig::default(), &p, ["a"]).unwrap();
    let grads = BTreeMap::from([("a".to_string(), Tensor::row(&[120.0, 160.0]))]);
    let report = opt.step(&mut p, &grads).unwrap();
    assert_eq!(report.grad_norm, 200.0);
    assert!(report.clipped);
    let m = &opt.first_moments()["a"];
    assert!((m.data()[0] - 0.1 * 60.0).abs() < 1e-12);
    assert!((m.data()[1] - 0.1 * 80.0).abs() < 1e-12);
}

#[test]
fn adam_missing_gradient_is_key_error() {
    let mut p = one_param(1.0);
    let mut opt = AdamState::new(AdamConfig::default(), &p, ["w"]).unwrap();
    assert!(matches!(
        opt.step(&mut p, &BTreeMap::new()),
        Err(Error::Key(_))
    ));
}

/// Gradient of the last node w.r.t. `wrt` by enumerating every path in an
/// explicit edge list and summing the products of local derivatives.
fn path_sum(edges: &[(usize, usize, f64)], from: usize, wrt: usize) -> f64 {
    if from == wrt {
        return 1.0;
    }
    edges
        .iter()
        .filter(|(out, _, _)| *out == from)
        .map(|(_, input, d)| d * path_sum(edges, *input, wrt))
        .sum()
}

#[test]
fn shared_subexpressions_accumulate() {
    let (x, y) = (1.3, -0.7);
    let mut tape = Tape::new();
    let vx = tape.param(Tensor::scalar(x));
    let vy = tape.param(Tensor::scalar(y));
    let va = tape.mul(vx, vy).unwrap(); // a = x·y
    let vb = tape.add(va, vx).unwrap(); // b = a + x
    let vc = tape.mul(va, vb).unwrap(); // c = a·b
    let g = tape.backward(vc).unwrap();

    // nodes: 0=x 1=y 2=a 3=b 4=c
    let (a, b) = (x * y, x * y + x);
    let edges = [
        (2, 0, y),
        (2, 1, x),
        (3, 2, 1.0),
        (3, 0, 1.0),
        (4, 2, b),
        (4, 3, a),
    ];
    let dx = path_sum(&edges, 4, 0);
    let dy = path_sum(&edges, 4, 1);
    assert!((g.get(vx).unwrap().item().unwrap() - dx).abs() < 1e-12);
    assert!((g.get(vy).unwrap().item().unwrap() - dy).abs() < 1e-12);
}

#[test]
fn identical_runs_are_bit_identical() {
    let run = || {
        let mut rng = RngStream::new(4, "det");
        let mut tape = Tape::new();
        let a = tape.param(random_tensor(&[5, 3], 1.0, &mut rng));
        let w = tape.param(random_tensor(&[3, 4], 1.0, &mut rng));
        let h = tape.matmul(a, w).unwrap();
        let h = tape.elu(h);
        let sd = tape.softplus(h);
        let s = tape.gaussian_sample(h, sd, &mut rng).unwrap();
        let l = tape.square(s);
        let l = tape.mean(l);
        let g = tape.backward(l).unwrap();
        (
            tape.value(l).clone(),
            g.get(a).unwrap().clone(),
            g.get(w).unwrap().clone(),
        )
    };
    let (l1, a1, w1) = run();
    let (l2, a2, w2) = run();
    assert!(l1.bit_eq(&l2) && a1.bit_eq(&a2) && w1.bit_eq(&w2));
}

#[test]
fn detach_blocks_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0));
    let d = tape.detach(x);
    let y = tape.mul(x, d).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().item().unwrap(), 2.0);
    assert!(g.get(d).is_none());
}

#[test]
fn rel_err_is_symmetric_in_scale() {
    assert_eq!(rel_err(&[1.0], &[1.0]), 0.0);
    assert!((rel_err(&[2.0], &[1.0]) - 0.5).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn primitives_match_finite_differences(
        op_index in 0usize..PRIM_OPS.len(),
        rows in 1usize..5,
        cols in 1usize..5,
        seed in any::<u64>(),
    ) {
        let op = PRIM_OPS[op_index];
        let err = primitive_case(op, rows, cols, seed);
        prop_assert!(err < 1e-4, "{:?} {}x{} seed {}: {}", op, rows, cols, seed, err);
    }
}
