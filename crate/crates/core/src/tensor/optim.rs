use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::nets::NamedParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients are rescaled so their global L2 norm is at most this.
    pub clip_norm: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            clip_norm: 100.0,
        }
    }
}

/// Adam moments for a fixed set of parameter paths.
///
/// Paths not registered here are never touched by [`AdamState::step`], which
/// is how frozen parameters stay out of the optimizer.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

#[derive(Clone, Copy, Debug)]
pub struct StepReport {
    /// Global norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

impl AdamState {
    pub fn new<'a>(
        config: AdamConfig,
        params: &NamedParamSet,
        paths: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let mut first = BTreeMap::new();
        for path in paths {
            let t = params
                .tensor(path)
                .ok_or_else(|| Error::Key(path.to_string()))?;
            first.insert(path.to_string(), Tensor::zeros(t.shape()));
        }
        let second = first.clone();
        Ok(AdamState {
            config,
            step: 0,
            first,
            second,
        })
    }

    /// Rebuilds a state from saved moments.
    pub fn from_parts(
        config: AdamConfig,
        step: u64,
        first: BTreeMap<String, Tensor>,
        second: BTreeMap<String, Tensor>,
    ) -> Result<Self> {
        if first.len() != second.len()
            || first
                .iter()
                .zip(&second)
                .any(|((ka, a), (kb, b))| ka != kb || a.shape() != b.shape())
        {
            return Err(Error::format("optimizer", "moment tables disagree"));
        }
        Ok(AdamState {
            config,
            step,
            first,
            second,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.first.keys().map(String::as_str)
    }

    pub fn first_moments(&self) -> &BTreeMap<String, Tensor> {
        &self.first
    }

    pub fn second_moments(&self) -> &BTreeMap<String, Tensor> {
        &self.second
    }

    /// Clips `grads` to the global norm limit, then applies one bias-corrected
    /// Adam update to every registered path of `params`.
    pub fn step(
        &mut self,
        params: &mut NamedParamSet,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<StepReport> {
        let mut sq = 0.0;
        for (path, m) in &self.first {
            let g = grads.get(path).ok_or_else(|| Error::Key(path.clone()))?;
            if g.shape() != m.shape() {
                return Err(Error::dim(format!(
                    "gradient for {path} has shape {:?}, parameter {:?}",
                    g.shape(),
                    m.shape()
                )));
            }
            sq += g.sq_norm();
        }
        let grad_norm = sq.sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::training(
                "gradients",
                format!("global norm {grad_norm}"),
            ));
        }
        let clipped = grad_norm > self.config.clip_norm;
        let factor = if clipped {
            self.config.clip_norm / grad_norm
        } else {
            1.0
        };

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (path, m) in self.first.iter_mut() {
            let v = self.second.get_mut(path).expect("moments share keys");
            let g = &grads[path];
            let p = params
                .tensor_mut(path)
                .ok_or_else(|| Error::Key(path.clone()))?;
            let it = p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut().iter_mut().zip(v.data_mut()))
                .zip(g.data());
            for ((p, (m, v)), &g) in it {
                let g = g * factor;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
        }
        Ok(StepReport { grad_norm, clipped })
    }
}
