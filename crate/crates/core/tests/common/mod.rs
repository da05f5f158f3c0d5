//! Central finite-difference gradient oracle shared by the integration tests.
#![allow(dead_code)]

pub mod oracles;
pub mod prims;

use wmtransfer_core::nets::{Bound, NamedParamSet};
use wmtransfer_core::{RngStream, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

/// Relative error `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both are negligible.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

fn eval(f: &dyn Fn(&mut Tape, &[Var]) -> Var, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.value(out).item().expect("scalar output")
}

/// Worst relative error between backprop and central differences over all
/// inputs. When an input has more than `max_coords` entries, a random subset
/// of coordinates (drawn from `rng`) is compared.
pub fn grad_check(
    inputs: &[Tensor],
    f: impl Fn(&mut Tape, &[Var]) -> Var,
    max_coords: usize,
    rng: &mut RngStream,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).expect("backward");

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic_full = grads
            .get(vars[i])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        let coords: Vec<usize> = if input.len() <= max_coords {
            (0..input.len()).collect()
        } else {
            (0..max_coords).map(|_| rng.below(input.len())).collect()
        };
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for &c in &coords {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[c] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[c] -= FD_STEP;
            let n = (eval(&f, &plus) - eval(&f, &minus)) / (2.0 * FD_STEP);
            numeric.push(n);
            analytic.push(analytic_full.data()[c]);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut RngStream) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.uniform(-scale, scale);
    }
    t
}

/// Projects a tensor to a scalar with fixed random weights so every output
/// coordinate contributes a distinct gradient.
pub fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let mut rng = RngStream::new(seed, "projection");
    let w = random_tensor(tape.shape(x), 1.0, &mut rng);
    let w = tape.constant(w);
    let y = tape.mul(x, w).unwrap();
    tape.sum(y)
}

/// Central differences over a sample of coordinates of every parameter
/// under `prefix`, against backprop. Returns the worst relative error.
pub fn param_grad_check(
    params: &NamedParamSet,
    prefix: &str,
    coords: usize,
    f: &dyn Fn(&mut Tape, &Bound) -> Var,
) -> (f64, usize) {
    let eval = |p: &NamedParamSet| {
        let mut tape = Tape::new();
        let bound = Bound::with(&mut tape, p, "", false);
        let out = f(&mut tape, &bound);
        tape.value(out).item().unwrap()
    };
    let mut tape = Tape::new();
    let bound = Bound::with(&mut tape, params, "", true);
    let out = f(&mut tape, &bound);
    let grads = tape.backward(out).unwrap();
    let analytic = bound.grads(&tape, &grads, prefix);

    let mut rng = RngStream::new(77, "coords");
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (path, g) in &analytic {
        let n = g.len();
        let picks: Vec<usize> = if n <= coords {
            (0..n).collect()
        } else {
            (0..coords).map(|_| rng.below(n)).collect()
        };
        let mut a = Vec::new();
        let mut num = Vec::new();
        for c in picks {
            let mut plus = params.clone();
            plus.tensor_mut(path).unwrap().data_mut()[c] += FD_STEP;
            let mut minus = params.clone();
            minus.tensor_mut(path).unwrap().data_mut()[c] -= FD_STEP;
            num.push((eval(&plus) - eval(&minus)) / (2.0 * FD_STEP));
            a.push(g.data()[c]);
        }
        let e = rel_err(&a, &num);
        worst = worst.max(e);
        checked += 1;
    }
    (worst, checked)
}
