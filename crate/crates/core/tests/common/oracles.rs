//! Independent reference computations for behavior learning.

use wmtransfer_core::behavior::Dynamics;
use wmtransfer_core::{Result, RngStream, Tape, Tensor, Var};

/// `V^n(τ) = Σ_{k<n} γ^k r_{τ+k} + γ^n v_{τ+n}`, with n capped at the horizon.
pub fn n_step(r: &[f64], v: &[f64], gamma: f64, tau: usize, n: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..n {
        total += gamma.powi(k as i32) * r[tau + k];
    }
    total + gamma.powi(n as i32) * v[tau + n]
}

/// Explicit mixture `(1−λ)·Σ_{n<N} λ^{n−1} V^n + λ^{N−1} V^N` with `N = H − τ`.
pub fn mixture(r: &[f64], v: &[f64], gamma: f64, lambda: f64, tau: usize) -> f64 {
    let big_n = r.len() - tau;
    let mut total = 0.0;
    for n in 1..big_n {
        total += (1.0 - lambda) * lambda.powi(n as i32 - 1) * n_step(r, v, gamma, tau, n);
    }
    total + lambda.powi(big_n as i32 - 1) * n_step(r, v, gamma, tau, big_n)
}

/// Next features embed the action; reward is `−‖s[:, :A] − a*‖²`.
pub struct Bandit {
    pub target: Tensor,
    pub width: usize,
}

impl Dynamics for Bandit {
    type State = Var;

    fn features(&self, _tape: &mut Tape, state: &Var) -> Result<Var> {
        Ok(*state)
    }

    fn step(&self, tape: &mut Tape, _s: &Var, action: Var, _rng: &mut RngStream) -> Result<Var> {
        let b = tape.shape(action)[0];
        let pad = tape.constant(Tensor::zeros(&[b, self.width - tape.shape(action)[1]]));
        tape.concat_cols(&[action, pad])
    }

    fn reward(&self, tape: &mut Tape, s: Var) -> Result<Var> {
        let a = tape.slice_cols(s, 0, self.target.len())?;
        let b = tape.shape(a)[0];
        let rows: Vec<f64> = (0..b).flat_map(|_| self.target.data().to_vec()).collect();
        let t = tape.constant(Tensor::new(vec![b, self.target.len()], rows)?);
        let d = tape.sub(a, t)?;
        let sq = tape.square(d);
        let dist = tape.sum_cols(sq)?;
        Ok(tape.neg(dist))
    }
}
