use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub(crate) fn check_discounts(gamma: f64, lambda: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::config(format!("discount {gamma} outside [0, 1)")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// λ-returns `[B, H]` from rewards `[B, H]` and values `[B, H+1]` by the
/// backward recursion `V(τ) = r_τ + γ·((1−λ)·v_{τ+1} + λ·V(τ+1))`,
/// with `V(H) = v_H`.
pub fn lambda_returns(
    rewards: &Tensor,
    values: &Tensor,
    gamma: f64,
    lambda: f64,
) -> Result<Tensor> {
    check_discounts(gamma, lambda)?;
    let (b, h) = rewards.dims2()?;
    if values.dims2()? != (b, h + 1) {
        return Err(Error::dim(format!(
            "values must be [{b}, {}], got {:?}",
            h + 1,
            values.shape()
        )));
    }
    let mut out = Tensor::zeros(&[b, h]);
    for i in 0..b {
        let r = &rewards.data()[i * h..(i + 1) * h];
        let v = &values.data()[i * (h + 1)..(i + 1) * (h + 1)];
        let row = &mut out.data_mut()[i * h..(i + 1) * h];
        let mut next = v[h];
        for t in (0..h).rev() {
            next = r[t] + gamma * ((1.0 - lambda) * v[t + 1] + lambda * next);
            row[t] = next;
        }
    }
    Ok(out)
}

/// Tape version of [`lambda_returns`] over per-step `[B, 1]` columns.
pub fn lambda_return_vars(
    tape: &mut Tape,
    rewards: &[Var],
    values: &[Var],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<Var>> {
    check_discounts(gamma, lambda)?;
    let h = rewards.len();
    if values.len() != h + 1 {
        return Err(Error::dim(format!(
            "{h} rewards need {} values, got {}",
            h + 1,
            values.len()
        )));
    }
    let mut out = vec![values[h]; h];
    let mut next = values[h];
    for t in (0..h).rev() {
        let boot = tape.scale(values[t + 1], 1.0 - lambda);
        let carry = tape.scale(next, lambda);
        let mix = tape.add(boot, carry)?;
        let disc = tape.scale(mix, gamma);
        next = tape.add(rewards[t], disc)?;
        out[t] = next;
    }
    Ok(out)
}
