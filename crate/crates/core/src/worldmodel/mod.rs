//! Recurrent state-space world model: representation, transition and reward
//! models trained jointly on replayed sequences.

mod replay;

pub use replay::{Episode, ReplayBuffer, SequenceBatch};

use crate::error::{Error, Result};
use crate::nets::{self, Bound, ModelSpec};
use crate::tensor::{RngStream, Tape, Tensor, Var};

/// Latent state on a tape. `sample` is the stochastic part of `s`.
#[derive(Clone, Copy, Debug)]
pub struct LatentVars {
    pub h: Var,
    pub mean: Var,
    pub std: Var,
    pub sample: Var,
}

impl LatentVars {
    /// Zero recurrent and stochastic state for `batch` rows.
    pub fn initial(tape: &mut Tape, spec: &ModelSpec, batch: usize) -> Self {
        let h = tape.constant(Tensor::zeros(&[batch, spec.deter]));
        let mean = tape.constant(Tensor::zeros(&[batch, spec.stoch]));
        let std = tape.constant(Tensor::full(&[batch, spec.stoch], 1.0));
        let sample = tape.constant(Tensor::zeros(&[batch, spec.stoch]));
        LatentVars {
            h,
            mean,
            std,
            sample,
        }
    }

    /// `s = concat(h, z_sample)`.
    pub fn features(&self, tape: &mut Tape) -> Result<Var> {
        tape.concat_cols(&[self.h, self.sample])
    }

    pub fn detach(&self, tape: &mut Tape) -> Self {
        LatentVars {
            h: tape.detach(self.h),
            mean: tape.detach(self.mean),
            std: tape.detach(self.std),
            sample: tape.detach(self.sample),
        }
    }

    pub fn value(&self, tape: &Tape) -> LatentState {
        LatentState {
            h: tape.value(self.h).clone(),
            z_mean: tape.value(self.mean).clone(),
            z_std: tape.value(self.std).clone(),
            z_sample: tape.value(self.sample).clone(),
        }
    }
}

/// Latent state values, one row per batch element.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub h: Tensor,
    pub z_mean: Tensor,
    pub z_std: Tensor,
    pub z_sample: Tensor,
}

impl LatentState {
    pub fn initial(spec: &ModelSpec, batch: usize) -> Self {
        LatentState {
            h: Tensor::zeros(&[batch, spec.deter]),
            z_mean: Tensor::zeros(&[batch, spec.stoch]),
            z_std: Tensor::full(&[batch, spec.stoch], 1.0),
            z_sample: Tensor::zeros(&[batch, spec.stoch]),
        }
    }

    /// Places the state on a tape as constants.
    pub fn on_tape(&self, tape: &mut Tape) -> LatentVars {
        LatentVars {
            h: tape.constant(self.h.clone()),
            mean: tape.constant(self.z_mean.clone()),
            std: tape.constant(self.z_std.clone()),
            sample: tape.constant(self.z_sample.clone()),
        }
    }

    pub fn features(&self) -> Tensor {
        let (b, dh) = (self.h.shape()[0], self.h.shape()[1]);
        let dz = self.z_sample.shape()[1];
        let mut data = Vec::with_capacity(b * (dh + dz));
        for i in 0..b {
            data.extend_from_slice(&self.h.data()[i * dh..(i + 1) * dh]);
            data.extend_from_slice(&self.z_sample.data()[i * dz..(i + 1) * dz]);
        }
        Tensor::new(vec![b, dh + dz], data).expect("row-wise concat")
    }
}

fn check_width(tape: &Tape, v: Var, width: usize, what: &str) -> Result<()> {
    let shape = tape.shape(v);
    if shape.len() != 2 || shape[1] != width {
        return Err(Error::dim(format!(
            "{what} must be [B, {width}], got {shape:?}"
        )));
    }
    Ok(())
}

fn dense(tape: &mut Tape, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = bound.var(&format!("{prefix}/weight"))?;
    let b = bound.var(&format!("{prefix}/bias"))?;
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

/// Draws a reparameterized sample, or returns the mean when `rng` is absent.
fn draw(tape: &mut Tape, mean: Var, std: Var, rng: Option<&mut RngStream>) -> Result<Var> {
    match rng {
        Some(rng) => tape.gaussian_sample(mean, std, rng),
        None => Ok(mean),
    }
}

/// Recurrent update `h' = GRU(h, ELU([z, a]·W + b))`.
fn recurrent(
    tape: &mut Tape,
    bound: &Bound,
    spec: &ModelSpec,
    prev: &LatentVars,
    action: Var,
) -> Result<Var> {
    check_width(tape, prev.h, spec.deter, "recurrent state")?;
    check_width(tape, prev.sample, spec.stoch, "stochastic state")?;
    check_width(tape, action, spec.action_dim, "action")?;
    let zw = tape.matmul(prev.sample, bound.var("transition/img_in/weight")?)?;
    let aw = tape.matmul(action, bound.var("transition/img_in/action_weight")?)?;
    let x = tape.add(zw, aw)?;
    let x = tape.add_bias(x, bound.var("transition/img_in/bias")?)?;
    let x = tape.elu(x);

    let d = spec.deter;
    let joined = tape.concat_cols(&[x, prev.h])?;
    let parts = dense(tape, bound, "transition/gru", joined)?;
    let reset = tape.slice_cols(parts, 0, d)?;
    let reset = tape.sigmoid(reset);
    let cand = tape.slice_cols(parts, d, 2 * d)?;
    let cand = tape.mul(reset, cand)?;
    let cand = tape.tanh(cand);
    let update = tape.slice_cols(parts, 2 * d, 3 * d)?;
    let update = tape.add_const(update, -1.0);
    let update = tape.sigmoid(update);
    // h' = u·cand + (1 − u)·h
    let delta = tape.sub(cand, prev.h)?;
    let step = tape.mul(update, delta)?;
    tape.add(prev.h, step)
}

fn prior_from(
    tape: &mut Tape,
    bound: &Bound,
    spec: &ModelSpec,
    h: Var,
    rng: Option<&mut RngStream>,
) -> Result<LatentVars> {
    let x = dense(tape, bound, "transition/prior_fc1", h)?;
    let x = tape.elu(x);
    let out = dense(tape, bound, "transition/prior_fc2", x)?;
    let (mean, std) = nets::gaussian_head(tape, out, spec.min_std)?;
    let sample = draw(tape, mean, std, rng)?;
    Ok(LatentVars {
        h,
        mean,
        std,
        sample,
    })
}

/// One filtering step. Returns `(posterior, prior)`, both sharing `h'`.
///
/// The prior sample is drawn before the posterior sample, so the prior
/// matches [`imagine_step`] under the same stream.
pub fn observe_step(
    tape: &mut Tape,
    bound: &Bound,
    spec: &ModelSpec,
    prev: &LatentVars,
    action: Var,
    embed: Var,
    mut rng: Option<&mut RngStream>,
) -> Result<(LatentVars, LatentVars)> {
    check_width(tape, embed, spec.embed_dim(), "observation embedding")?;
    let h = recurrent(tape, bound, spec, prev, action)?;
    let prior = prior_from(tape, bound, spec, h, rng.as_deref_mut())?;
    let joined = tape.concat_cols(&[h, embed])?;
    let x = dense(tape, bound, "transition/post_fc1", joined)?;
    let x = tape.elu(x);
    let out = dense(tape, bound, "transition/post_fc2", x)?;
    let (mean, std) = nets::gaussian_head(tape, out, spec.min_std)?;
    let sample = draw(tape, mean, std, rng)?;
    let post = LatentVars {
        h,
        mean,
        std,
        sample,
    };
    Ok((post, prior))
}

/// One open-loop step through the transition model.
pub fn imagine_step(
    tape: &mut Tape,
    bound: &Bound,
    spec: &ModelSpec,
    prev: &LatentVars,
    action: Var,
    rng: Option<&mut RngStream>,
) -> Result<LatentVars> {
    let h = recurrent(tape, bound, spec, prev, action)?;
    prior_from(tape, bound, spec, h, rng)
}

/// Frozen source reward models feeding a meta reward model.
pub trait RewardSources {
    /// Number of sources `N`.
    fn count(&self) -> usize;
    /// Width `F` of each source's contribution.
    fn width(&self) -> usize;
    /// Source features for `s`. Implementations must not create tape params.
    fn features(&self, tape: &mut Tape, s: Var) -> Result<Vec<Var>>;
}

/// Reward model over `concat(s, f_1, .., f_N)`.
pub fn meta_reward_forward(
    tape: &mut Tape,
    bound: &Bound,
    s: Var,
    features: &[Var],
    expected_sources: usize,
) -> Result<Var> {
    if features.len() != expected_sources {
        return Err(Error::config(format!(
            "meta reward model configured for {expected_sources} sources, got {}",
            features.len()
        )));
    }
    if features.is_empty() {
        return nets::reward(tape, bound, s);
    }
    let mut parts = Vec::with_capacity(features.len() + 1);
    parts.push(s);
    parts.extend_from_slice(features);
    let input = tape.concat_cols(&parts)?;
    nets::reward(tape, bound, input)
}

/// Reward prediction for `s`, through the meta model when sources are given.
/// Sources see a detached copy of `s`.
pub fn predict_reward(
    tape: &mut Tape,
    bound: &Bound,
    s: Var,
    sources: Option<&dyn RewardSources>,
) -> Result<Var> {
    match sources {
        None => nets::reward(tape, bound, s),
        Some(src) => {
            let frozen_s = tape.detach(s);
            let feats = src.features(tape, frozen_s)?;
            meta_reward_forward(tape, bound, s, &feats, src.count())
        }
    }
}

/// Per-term breakdown of a world-model loss. Terms are means per sequence
/// step; `loss` is the summed objective per sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossDiagnostics {
    pub loss: f64,
    pub reconstruction: f64,
    pub reward: f64,
    pub kl: f64,
    pub kl_raw: f64,
    pub reward_mse: f64,
    pub posterior_std: f64,
    pub prior_std: f64,
}

#[derive(Debug)]
pub struct WorldModelOutput {
    pub loss: Var,
    /// Posterior state per time step, `[B, ·]` each.
    pub posteriors: Vec<LatentVars>,
    pub diagnostics: LossDiagnostics,
}

/// Joint loss over a sequence batch: reconstruction, reward and KL with a
/// free-nats floor, summed over time and averaged over the batch.
///
/// Without `rng` every latent takes its mean, which makes the loss a
/// deterministic function of the batch.
pub fn world_model_loss(
    tape: &mut Tape,
    bound: &Bound,
    spec: &ModelSpec,
    batch: &SequenceBatch,
    free_nats: f64,
    sources: Option<&dyn RewardSources>,
    mut rng: Option<&mut RngStream>,
) -> Result<WorldModelOutput> {
    let (b, l) = (batch.batch_size(), batch.seq_len());
    if b == 0 || l == 0 {
        return Err(Error::Input("empty sequence batch".into()));
    }
    let obs = tape.constant(batch.stacked_obs());
    check_width(tape, obs, spec.obs_dim(), "observations")?;
    let embeds = nets::encode(tape, bound, obs)?;

    let mut state = LatentVars::initial(tape, spec, b);
    let mut posteriors = Vec::with_capacity(l);
    let mut feats = Vec::with_capacity(l);
    let mut kls = Vec::with_capacity(l);
    let (mut post_std, mut prior_std) = (0.0, 0.0);
    for t in 0..l {
        let action = tape.constant(batch.actions[t].clone());
        let embed = tape.slice_rows(embeds, t * b, (t + 1) * b)?;
        let (post, prior) =
            observe_step(tape, bound, spec, &state, action, embed, rng.as_deref_mut())?;
        kls.push(tape.gaussian_kl_rows(post.mean, post.std, prior.mean, prior.std)?);
        post_std += tape.value(post.std).mean();
        prior_std += tape.value(prior.std).mean();
        feats.push(post.features(tape)?);
        posteriors.push(post);
        state = post;
    }

    let s = tape.concat_rows(&feats)?;
    let recon = nets::decode(tape, bound, s)?;
    let diff = tape.sub(recon, obs)?;
    let sq = tape.square(diff);
    let recon_sum = tape.sum(sq);
    let recon_term = tape.scale(recon_sum, 0.5 / b as f64);

    let pred = predict_reward(tape, bound, s, sources)?;
    let target = tape.constant(batch.stacked_rewards());
    let rdiff = tape.sub(pred, target)?;
    let rsq = tape.square(rdiff);
    let reward_sum = tape.sum(rsq);
    let reward_term = tape.scale(reward_sum, 0.5 / b as f64);

    let kl_all = tape.concat_rows(&kls)?;
    let kl_floor = tape.clamp_min(kl_all, free_nats);
    let kl_sum = tape.sum(kl_floor);
    let kl_term = tape.scale(kl_sum, 1.0 / b as f64);

    let partial = tape.add(recon_term, reward_term)?;
    let loss = tape.add(partial, kl_term)?;

    let n = (b * l) as f64;
    let item = |tape: &Tape, v: Var| tape.value(v).item().unwrap_or(f64::NAN);
    let diagnostics = LossDiagnostics {
        loss: item(tape, loss),
        reconstruction: item(tape, recon_term) / l as f64,
        reward: item(tape, reward_term) / l as f64,
        kl: item(tape, kl_term) / l as f64,
        kl_raw: tape.value(kl_all).sum() / n,
        reward_mse: 2.0 * item(tape, reward_term) / l as f64,
        posterior_std: post_std / l as f64,
        prior_std: prior_std / l as f64,
    };
    for (term, v) in [
        ("reconstruction", diagnostics.reconstruction),
        ("reward", diagnostics.reward),
        ("kl", diagnostics.kl),
    ] {
        if !v.is_finite() {
            return Err(Error::training(term, format!("non-finite value {v}")));
        }
    }
    Ok(WorldModelOutput {
        loss,
        posteriors,
        diagnostics,
    })
}
