//! Actor and value learned from imagined latent rollouts, and action
//! selection in the environment.

mod returns;

pub use returns::{lambda_return_vars, lambda_returns};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{self, Bound, ModelSpec, NamedParamSet};
use crate::tensor::{AdamState, RngStream, Tape, Tensor, Var};
use crate::worldmodel::{self, LatentState, LatentVars, RewardSources};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BehaviorConfig {
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// Std of the exploration noise added before the tanh squash.
    pub explore_noise: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        BehaviorConfig {
            horizon: 15,
            gamma: 0.99,
            lambda: 0.95,
            explore_noise: 0.3,
        }
    }
}

impl BehaviorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("imagination horizon must be at least 1"));
        }
        returns::check_discounts(self.gamma, self.lambda)?;
        if !(self.explore_noise >= 0.0) {
            return Err(Error::config("exploration noise must be non-negative"));
        }
        Ok(())
    }
}

/// A latent model that can be rolled forward in imagination.
pub trait Dynamics {
    type State: Clone;

    /// Batch of `s` features `[B, |s|]`.
    fn features(&self, tape: &mut Tape, state: &Self::State) -> Result<Var>;

    fn step(
        &self,
        tape: &mut Tape,
        state: &Self::State,
        action: Var,
        rng: &mut RngStream,
    ) -> Result<Self::State>;

    /// Predicted reward `[B, 1]` for features `s`.
    fn reward(&self, tape: &mut Tape, features: Var) -> Result<Var>;
}

/// The learned world model as imagination dynamics.
pub struct LatentDynamics<'a> {
    pub bound: &'a Bound,
    pub spec: &'a ModelSpec,
    pub sources: Option<&'a dyn RewardSources>,
}

impl Dynamics for LatentDynamics<'_> {
    type State = LatentVars;

    fn features(&self, tape: &mut Tape, state: &LatentVars) -> Result<Var> {
        state.features(tape)
    }

    fn step(
        &self,
        tape: &mut Tape,
        state: &LatentVars,
        action: Var,
        rng: &mut RngStream,
    ) -> Result<LatentVars> {
        worldmodel::imagine_step(tape, self.bound, self.spec, state, action, Some(rng))
    }

    fn reward(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        worldmodel::predict_reward(tape, self.bound, features, self.sources)
    }
}

/// Stacks per-step posteriors into one detached batch of `B·L` starts.
pub fn imagination_starts(tape: &mut Tape, posteriors: &[LatentVars]) -> Result<LatentVars> {
    let pick = |f: fn(&LatentVars) -> Var| posteriors.iter().map(f).collect::<Vec<_>>();
    let h = tape.concat_rows(&pick(|p| p.h))?;
    let mean = tape.concat_rows(&pick(|p| p.mean))?;
    let std = tape.concat_rows(&pick(|p| p.std))?;
    let sample = tape.concat_rows(&pick(|p| p.sample))?;
    Ok(LatentVars {
        h,
        mean,
        std,
        sample,
    }
    .detach(tape))
}

/// Rollout in imagination. `states` has `H+1` entries, the rest `H`;
/// `rewards[τ]` is predicted for `states[τ+1]`.
#[derive(Clone, Debug)]
pub struct ImaginedTrajectory {
    pub states: Vec<Var>,
    pub actions: Vec<Var>,
    pub rewards: Vec<Var>,
}

/// Squashed action `tanh(mean + std·ε)`, or `tanh(mean)` without `rng`.
pub fn sample_action(
    tape: &mut Tape,
    actor: &Bound,
    spec: &ModelSpec,
    features: Var,
    rng: Option<&mut RngStream>,
) -> Result<Var> {
    let (mean, std) = nets::actor_dist(tape, actor, spec, features)?;
    let pre = match rng {
        Some(rng) => tape.gaussian_sample(mean, std, rng)?,
        None => mean,
    };
    Ok(tape.tanh(pre))
}

pub fn imagine<D: Dynamics>(
    tape: &mut Tape,
    dynamics: &D,
    actor: &Bound,
    spec: &ModelSpec,
    start: &D::State,
    horizon: usize,
    rng: &mut RngStream,
) -> Result<ImaginedTrajectory> {
    if horizon == 0 {
        return Err(Error::config("imagination horizon must be at least 1"));
    }
    let mut state = start.clone();
    let mut states = vec![dynamics.features(tape, &state)?];
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    for tau in 0..horizon {
        let s = states[tau];
        let a = sample_action(tape, actor, spec, s, Some(rng))?;
        state = dynamics.step(tape, &state, a, rng)?;
        let next = dynamics.features(tape, &state)?;
        if !tape.value(next).is_finite() {
            return Err(Error::training(
                "imagination",
                format!("non-finite state at step {}", tau + 1),
            ));
        }
        rewards.push(dynamics.reward(tape, next)?);
        actions.push(a);
        states.push(next);
    }
    Ok(ImaginedTrajectory {
        states,
        actions,
        rewards,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BehaviorDiagnostics {
    pub actor_loss: f64,
    pub value_loss: f64,
    pub mean_return: f64,
    pub mean_reward: f64,
    pub actor_grad_norm: f64,
    pub value_grad_norm: f64,
}

/// Negative mean λ-return of a fresh rollout, with the actor on the tape
/// as trainable params and the value model as constants.
#[derive(Debug)]
pub struct ActorObjective {
    pub loss: Var,
    pub bound: Bound,
    pub trajectory: ImaginedTrajectory,
    pub targets: Vec<Var>,
}

pub fn actor_objective<D: Dynamics>(
    tape: &mut Tape,
    dynamics: &D,
    start: &D::State,
    params: &NamedParamSet,
    spec: &ModelSpec,
    cfg: &BehaviorConfig,
    rng: &mut RngStream,
) -> Result<ActorObjective> {
    cfg.validate()?;
    let mut bound = Bound::with(tape, params, "actor", true);
    bound.add(tape, params, "value", false);
    let trajectory = imagine(tape, dynamics, &bound, spec, start, cfg.horizon, rng)?;
    let values = trajectory
        .states
        .iter()
        .map(|&s| nets::value(tape, &bound, s))
        .collect::<Result<Vec<_>>>()?;
    let targets = lambda_return_vars(tape, &trajectory.rewards, &values, cfg.gamma, cfg.lambda)?;
    let all = tape.concat_rows(&targets)?;
    let mean_return = tape.mean(all);
    let loss = tape.neg(mean_return);
    Ok(ActorObjective {
        loss,
        bound,
        trajectory,
        targets,
    })
}

/// One actor step and one value step from a rollout starting at `start`.
///
/// The actor objective sees the value model as constants, and the value
/// regression sees states and targets as constants. `tape` may already hold
/// the (constant) world model that `dynamics` refers to.
#[allow(clippy::too_many_arguments)]
pub fn behavior_update<D: Dynamics>(
    tape: &mut Tape,
    dynamics: &D,
    start: &D::State,
    params: &mut NamedParamSet,
    actor_opt: &mut AdamState,
    value_opt: &mut AdamState,
    spec: &ModelSpec,
    cfg: &BehaviorConfig,
    rng: &mut RngStream,
) -> Result<BehaviorDiagnostics> {
    let objective = actor_objective(tape, dynamics, start, params, spec, cfg, rng)?;
    let actor_loss_value = tape.value(objective.loss).item()?;
    if !actor_loss_value.is_finite() {
        return Err(Error::training("actor", "non-finite imagined return"));
    }
    let ActorObjective {
        loss: actor_loss,
        bound,
        trajectory: traj,
        targets,
    } = objective;
    let grads = tape.backward(actor_loss)?;
    let actor_grads = bound.grads(tape, &grads, "actor");
    let actor_report = actor_opt.step(params, &actor_grads)?;

    let horizon = targets.len();
    let states = stack_rows(tape, &traj.states[..horizon]);
    let target_values = stack_rows(tape, &targets);
    let (value_loss, value_grad_norm) = value_update(params, value_opt, &states, &target_values)?;

    let rewards = stack_rows(tape, &traj.rewards);
    Ok(BehaviorDiagnostics {
        actor_loss: actor_loss_value,
        value_loss,
        mean_return: -actor_loss_value,
        mean_reward: rewards.mean(),
        actor_grad_norm: actor_report.grad_norm,
        value_grad_norm,
    })
}

fn stack_rows(tape: &Tape, vars: &[Var]) -> Tensor {
    let cols = tape.shape(vars[0])[1];
    let data: Vec<f64> = vars
        .iter()
        .flat_map(|&v| tape.value(v).data().iter().copied())
        .collect();
    let rows = data.len() / cols;
    Tensor::new(vec![rows, cols], data).expect("equal widths")
}

/// One Adam step on `½·mean((v(s) − target)²)`. Returns the loss before the
/// step and the gradient norm.
pub fn value_update(
    params: &mut NamedParamSet,
    value_opt: &mut AdamState,
    states: &Tensor,
    targets: &Tensor,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let bound = Bound::with(&mut tape, params, "value", true);
    let s = tape.constant(states.clone());
    let target = tape.constant(targets.clone());
    let v = nets::value(&mut tape, &bound, s)?;
    let diff = tape.sub(v, target)?;
    let sq = tape.square(diff);
    let mse = tape.mean(sq);
    let loss = tape.scale(mse, 0.5);
    let loss_value = tape.value(loss).item()?;
    if !loss_value.is_finite() {
        return Err(Error::training("value", "non-finite value loss"));
    }
    let grads = tape.backward(loss)?;
    let report = value_opt.step(params, &bound.grads(&tape, &grads, "value"))?;
    Ok((loss_value, report.grad_norm))
}

/// Recurrent state carried between environment steps.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState {
    pub latent: LatentState,
    pub prev_action: Vec<f64>,
}

impl PolicyState {
    pub fn initial(spec: &ModelSpec) -> Self {
        PolicyState {
            latent: LatentState::initial(spec, 1),
            prev_action: vec![0.0; spec.action_dim],
        }
    }
}

/// Filters `obs` into the latent state and picks the next padded action.
///
/// With `explore`, the action is `tanh(mean + std·ε + σ·ε')` with latent
/// sampling; otherwise it is `tanh(mean)` on the posterior mean, a pure
/// function of the inputs.
pub fn act(
    params: &NamedParamSet,
    spec: &ModelSpec,
    obs: &[f64],
    state: &PolicyState,
    explore: Option<(f64, &mut RngStream)>,
) -> Result<(Vec<f64>, PolicyState)> {
    if obs.len() != spec.obs_dim() {
        return Err(Error::dim(format!(
            "observation has {} values, expected {}",
            obs.len(),
            spec.obs_dim()
        )));
    }
    if state.prev_action.len() != spec.action_dim {
        return Err(Error::dim("previous action width differs from the model"));
    }
    let mut tape = Tape::new();
    let mut bound = Bound::new();
    for prefix in ["encoder", "transition", "actor"] {
        bound.add(&mut tape, params, prefix, false);
    }
    let o = tape.constant(Tensor::new(vec![1, obs.len()], obs.to_vec())?);
    let embed = nets::encode(&mut tape, &bound, o)?;
    let prev = state.latent.on_tape(&mut tape);
    let a_prev = tape.constant(Tensor::row(&state.prev_action));
    let (action, post) = match explore {
        Some((noise, rng)) => {
            let (post, _) = worldmodel::observe_step(
                &mut tape,
                &bound,
                spec,
                &prev,
                a_prev,
                embed,
                Some(&mut *rng),
            )?;
            let s = post.features(&mut tape)?;
            let (mean, std) = nets::actor_dist(&mut tape, &bound, spec, s)?;
            let pre = tape.gaussian_sample(mean, std, rng)?;
            let a: Vec<f64> = tape
                .value(pre)
                .data()
                .iter()
                .map(|x| (x + noise * rng.normal()).tanh())
                .collect();
            (a, post)
        }
        None => {
            let (post, _) =
                worldmodel::observe_step(&mut tape, &bound, spec, &prev, a_prev, embed, None)?;
            let s = post.features(&mut tape)?;
            let a = sample_action(&mut tape, &bound, spec, s, None)?;
            (tape.value(a).data().to_vec(), post)
        }
    };
    Ok((
        action.clone(),
        PolicyState {
            latent: post.value(&tape),
            prev_action: action,
        },
    ))
}

/// Paths under `prefix`, for building an optimizer over one model.
pub fn paths_under<'a>(params: &'a NamedParamSet, prefix: &'a str) -> Vec<&'a str> {
    params
        .paths()
        .filter(|p| nets::path_has_prefix(p, prefix))
        .collect()
}

/// Field-wise mean over several updates.
pub fn mean_diagnostics(items: &[BehaviorDiagnostics]) -> BehaviorDiagnostics {
    let n = items.len().max(1) as f64;
    let mean = |f: fn(&BehaviorDiagnostics) -> f64| items.iter().map(f).sum::<f64>() / n;
    BehaviorDiagnostics {
        actor_loss: mean(|d| d.actor_loss),
        value_loss: mean(|d| d.value_loss),
        mean_return: mean(|d| d.mean_return),
        mean_reward: mean(|d| d.mean_reward),
        actor_grad_norm: mean(|d| d.actor_grad_norm),
        value_grad_norm: mean(|d| d.value_grad_norm),
    }
}
