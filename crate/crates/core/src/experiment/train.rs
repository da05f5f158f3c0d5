use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::behavior::{self, BehaviorDiagnostics, LatentDynamics, PolicyState};
use crate::checkpoint::AgentCheckpoint;
use crate::envs::{pad_action_space, Domain, Env, EnvConfig, PaddedActionSpace, PaddedEnv};
use crate::error::{Error, Result};
use crate::nets::{self, path_has_prefix, Bound, ModelSpec, NamedParamSet};
use crate::tensor::{AdamState, RngStream, Tape};
use crate::transfer::{MetaSources, ENCODER_PREFIX};
use crate::worldmodel::{self, Episode, LossDiagnostics, ReplayBuffer, RewardSources};

use super::config::{ExperimentConfig, TrainConfig};
use super::metrics::{EpisodeRecord, MetricLog, RunInfo, UpdateRecord};

const WORLD_MODEL: [&str; 4] = ["encoder", "decoder", "transition", "reward"];

pub const CHECKPOINT_FILE: &str = "checkpoint.wmtl";

/// An agent with its optimizers, ready to train.
#[derive(Clone, Debug)]
pub struct Agent {
    pub spec: ModelSpec,
    pub params: NamedParamSet,
    pub domains: Vec<Domain>,
    pub space: PaddedActionSpace,
    /// Keep the encoder out of the world-model optimizer.
    pub frozen_encoder: bool,
    pub sources: Option<MetaSources>,
    pub model_opt: AdamState,
    pub actor_opt: AdamState,
    pub value_opt: AdamState,
}

impl Agent {
    /// Fresh parameters for `domains`, with the action width padded to
    /// their maximum. `template` supplies the layer sizes.
    pub fn fresh(
        domains: &[Domain],
        template: &ModelSpec,
        train: &TrainConfig,
        rng: &RngStream,
    ) -> Result<Self> {
        let spec = agent_spec(domains, template, 0)?;
        let params = nets::build_agent(&spec, rng)?;
        Agent::from_params(domains, spec, params, train, false, None)
    }

    pub fn from_params(
        domains: &[Domain],
        spec: ModelSpec,
        params: NamedParamSet,
        train: &TrainConfig,
        frozen_encoder: bool,
        sources: Option<MetaSources>,
    ) -> Result<Self> {
        spec.validate()?;
        let space = pad_action_space(domains)?;
        if space.a_max != spec.action_dim {
            return Err(Error::config(format!(
                "model action width {} but the domains need {}",
                spec.action_dim, space.a_max
            )));
        }
        let extra = sources.as_ref().map_or(0, |s| s.extra_inputs());
        if extra != spec.reward_extra_inputs {
            return Err(Error::config(format!(
                "reward model takes {} extra inputs, sources provide {extra}",
                spec.reward_extra_inputs
            )));
        }
        let model_paths: Vec<&str> = params
            .paths()
            .filter(|p| WORLD_MODEL.iter().any(|m| path_has_prefix(p, m)))
            .filter(|p| !(frozen_encoder && path_has_prefix(p, ENCODER_PREFIX)))
            .collect();
        let model_opt = AdamState::new(train.adam(train.model_lr), &params, model_paths)?;
        let actor_opt = AdamState::new(
            train.adam(train.actor_lr),
            &params,
            behavior::paths_under(&params, "actor"),
        )?;
        let value_opt = AdamState::new(
            train.adam(train.value_lr),
            &params,
            behavior::paths_under(&params, "value"),
        )?;
        Ok(Agent {
            spec,
            params,
            domains: domains.to_vec(),
            space,
            frozen_encoder,
            sources,
            model_opt,
            actor_opt,
            value_opt,
        })
    }

    pub fn checkpoint(&self, env_steps: u64) -> AgentCheckpoint {
        let mut ckpt = AgentCheckpoint::new(
            self.params.clone(),
            self.spec.clone(),
            self.domains.iter().map(|d| d.id().to_string()).collect(),
            env_steps,
        );
        ckpt.meta.encoder_frozen = self.frozen_encoder;
        if let Some(src) = &self.sources {
            ckpt.meta
                .notes
                .insert("meta_sources".into(), src.domains().join(","));
            ckpt.meta
                .notes
                .insert("meta_mode".into(), src.mode().to_string());
        }
        for (name, opt) in [
            ("model", &self.model_opt),
            ("actor", &self.actor_opt),
            ("value", &self.value_opt),
        ] {
            ckpt.optimizers.insert(name.to_string(), opt.clone());
        }
        ckpt
    }

    /// One world-model step followed by one actor and one value step on
    /// imagined rollouts from the batch posteriors.
    pub fn update(
        &mut self,
        replay: &ReplayBuffer,
        train: &TrainConfig,
        behavior_cfg: &behavior::BehaviorConfig,
        rng: &mut RngStream,
    ) -> Result<(LossDiagnostics, BehaviorDiagnostics)> {
        let batch = replay.sample(train.batch_size, train.seq_len, rng)?;
        let sources = self.sources.as_ref().map(|s| s as &dyn RewardSources);

        let mut tape = Tape::new();
        let mut bound = Bound::new();
        for prefix in WORLD_MODEL {
            let trainable = !(self.frozen_encoder && prefix == ENCODER_PREFIX);
            bound.add(&mut tape, &self.params, prefix, trainable);
        }
        let out = worldmodel::world_model_loss(
            &mut tape,
            &bound,
            &self.spec,
            &batch,
            train.free_nats,
            sources,
            Some(rng),
        )?;
        let grads = tape.backward(out.loss)?;
        let model_grads = bound.grads(&tape, &grads, "");
        self.model_opt.step(&mut self.params, &model_grads)?;
        let starts: Vec<_> = out.posteriors.iter().map(|p| p.value(&tape)).collect();
        drop(tape);

        let mut tape = Tape::new();
        let mut bound = Bound::new();
        for prefix in ["transition", "reward"] {
            bound.add(&mut tape, &self.params, prefix, false);
        }
        let placed: Vec<_> = starts.iter().map(|s| s.on_tape(&mut tape)).collect();
        let start = behavior::imagination_starts(&mut tape, &placed)?;
        let dynamics = LatentDynamics {
            bound: &bound,
            spec: &self.spec,
            sources,
        };
        let diag = behavior::behavior_update(
            &mut tape,
            &dynamics,
            &start,
            &mut self.params,
            &mut self.actor_opt,
            &mut self.value_opt,
            &self.spec,
            behavior_cfg,
            rng,
        )?;
        Ok((out.diagnostics, diag))
    }
}

/// Model spec for an agent acting in `domains`.
pub fn agent_spec(
    domains: &[Domain],
    template: &ModelSpec,
    reward_extra_inputs: usize,
) -> Result<ModelSpec> {
    let space = pad_action_space(domains)?;
    let spec = ModelSpec {
        action_dim: space.a_max,
        reward_extra_inputs,
        ..template.clone()
    };
    spec.validate()?;
    Ok(spec)
}

/// Root stream of one run. Every stream of the run descends from it, and
/// its key embeds the seed.
pub fn run_stream(seed: u64) -> RngStream {
    RngStream::new(seed, "run")
}

/// Parameters and action space an episode is played with.
struct Player<'a> {
    params: &'a NamedParamSet,
    spec: &'a ModelSpec,
    space: &'a PaddedActionSpace,
    env: EnvConfig,
    explore_noise: f64,
}

impl<'a> Player<'a> {
    fn of(agent: &'a Agent, cfg: &ExperimentConfig) -> Self {
        Player {
            params: &agent.params,
            spec: &agent.spec,
            space: &agent.space,
            env: cfg.env,
            explore_noise: cfg.behavior.explore_noise,
        }
    }

    /// Plays one episode of `domain`. The replay keeps the full padded
    /// action; the environment ignores the unused coordinates.
    fn play(&self, domain: Domain, policy: Policy<'_>, env_rng: &mut RngStream) -> Result<Episode> {
        let mut env = PaddedEnv::new(Env::with_config(domain, self.env), self.space.clone())?;
        let frame = env.env.reset(Some(env_rng));
        let mut episode = Episode::new(domain.id(), frame.pixels.clone(), self.spec.action_dim);
        let mut state = PolicyState::initial(self.spec);
        let mut obs = frame.pixels;
        let mut policy = policy;
        loop {
            let action = match &mut policy {
                Policy::Random(rng) => (0..self.spec.action_dim)
                    .map(|_| rng.uniform(-1.0, 1.0))
                    .collect(),
                Policy::Explore(rng) => {
                    let explore = Some((self.explore_noise, &mut **rng));
                    let (a, next) = behavior::act(self.params, self.spec, &obs, &state, explore)?;
                    state = next;
                    a
                }
                Policy::Greedy => {
                    let (a, next) = behavior::act(self.params, self.spec, &obs, &state, None)?;
                    state = next;
                    a
                }
            };
            let step = env.step(&action)?;
            episode.push(action, step.reward, step.frame.pixels.clone());
            obs = step.frame.pixels;
            if step.done {
                return Ok(episode);
            }
        }
    }
}

enum Policy<'a> {
    Random(&'a mut RngStream),
    Explore(&'a mut RngStream),
    Greedy,
}

/// Greedy returns of `agent` on each of its domains.
pub fn evaluate(
    agent: &Agent,
    cfg: &ExperimentConfig,
    episodes: usize,
    rng: &mut RngStream,
) -> Result<Vec<(Domain, f64)>> {
    greedy_returns(&Player::of(agent, cfg), &agent.domains, episodes, rng)
}

/// Greedy returns of a stored agent on each domain it was trained on.
pub fn evaluate_checkpoint(
    ckpt: &AgentCheckpoint,
    env: EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<(Domain, f64)>> {
    let domains = ckpt
        .meta
        .domains
        .iter()
        .map(|d| d.parse())
        .collect::<Result<Vec<Domain>>>()?;
    let space = pad_action_space(&domains)?;
    if space.a_max != ckpt.meta.spec.action_dim {
        return Err(Error::config(format!(
            "checkpoint action width {} but its domains need {}",
            ckpt.meta.spec.action_dim, space.a_max
        )));
    }
    let player = Player {
        params: &ckpt.params,
        spec: &ckpt.meta.spec,
        space: &space,
        env,
        explore_noise: 0.0,
    };
    let mut rng = run_stream(seed).split("eval");
    greedy_returns(&player, &domains, episodes, &mut rng)
}

fn greedy_returns(
    player: &Player<'_>,
    domains: &[Domain],
    episodes: usize,
    rng: &mut RngStream,
) -> Result<Vec<(Domain, f64)>> {
    let mut out = Vec::new();
    for _ in 0..episodes {
        for &domain in domains {
            let ep = player.play(domain, Policy::Greedy, rng)?;
            out.push((domain, ep.total_reward()));
        }
    }
    Ok(out)
}

/// Where a run writes its metrics and checkpoints.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub dir: Option<PathBuf>,
}

impl RunOutput {
    pub fn none() -> Self {
        RunOutput { dir: None }
    }

    pub fn at(dir: impl Into<PathBuf>) -> Self {
        RunOutput {
            dir: Some(dir.into()),
        }
    }

    fn save(&self, agent: &Agent, log: &MetricLog) -> Result<()> {
        if let Some(dir) = &self.dir {
            log.write_dir(dir)?;
            agent
                .checkpoint(log.env_steps())
                .save(&dir.join(CHECKPOINT_FILE))?;
        }
        Ok(())
    }
}

/// Trained agent and what happened on the way.
#[derive(Debug)]
pub struct TrainResult {
    pub agent: Agent,
    pub checkpoint: AgentCheckpoint,
    pub log: MetricLog,
    pub replay: ReplayBuffer,
    pub grad_steps: u64,
}

/// Seeds the replay with random episodes, then alternates one collection
/// phase (episodes in every domain) with `grad_steps` updates until the
/// step budget is spent.
pub fn train_agent(
    mut agent: Agent,
    cfg: &ExperimentConfig,
    run: RunInfo,
    out: &RunOutput,
) -> Result<TrainResult> {
    let train = &cfg.train;
    train.validate()?;
    cfg.behavior.validate()?;
    let root = run_stream(run.seed);
    let mut env_rng = root.split("env");
    let mut act_rng = root.split("act");
    let mut update_rng = root.split("update");
    let mut eval_rng = root.split("eval");

    let clock = Instant::now();
    let mut log = MetricLog::new(run);
    let mut replay = ReplayBuffer::new(train.buffer_capacity);
    let mut env_steps = 0u64;
    let mut grad_steps = 0u64;
    let mut next_eval = train.eval_interval;

    let record = |ep: Episode, env_steps: &mut u64, log: &mut MetricLog, replay: &mut ReplayBuffer| {
        *env_steps += ep.env_steps() as u64;
        log.episodes.push(EpisodeRecord {
            env_steps: *env_steps,
            domain: ep.domain.clone(),
            episode_return: ep.total_reward(),
            wall_ms: clock.elapsed().as_millis() as u64,
        });
        replay.add(ep);
    };

    'seed: for _ in 0..train.seed_episodes {
        for &domain in &agent.domains {
            if env_steps >= train.env_steps {
                break 'seed;
            }
            let ep = Player::of(&agent, cfg).play(domain, Policy::Random(&mut act_rng), &mut env_rng)?;
            record(ep, &mut env_steps, &mut log, &mut replay);
        }
    }

    while env_steps < train.env_steps {
        for _ in 0..train.collect_episodes {
            for &domain in &agent.domains {
                let player = Player::of(&agent, cfg);
                let ep = player.play(domain, Policy::Explore(&mut act_rng), &mut env_rng)?;
                record(ep, &mut env_steps, &mut log, &mut replay);
            }
        }

        let mut wm = Vec::with_capacity(train.grad_steps);
        let mut bh = Vec::with_capacity(train.grad_steps);
        for _ in 0..train.grad_steps {
            let (w, b) = agent.update(&replay, train, &cfg.behavior, &mut update_rng)?;
            wm.push(w);
            bh.push(b);
            grad_steps += 1;
        }
        if !wm.is_empty() {
            let rec = UpdateRecord::new(
                env_steps,
                grad_steps,
                &mean_losses(&wm),
                &behavior::mean_diagnostics(&bh),
            );
            log::debug!(
                "{} steps: loss {:.3} recon {:.3} reward mse {:.4} return {:.3}",
                env_steps,
                rec.loss,
                rec.reconstruction,
                rec.reward_mse,
                rec.imagined_return
            );
            log.updates.push(rec);
        }

        if train.eval_interval > 0 && env_steps >= next_eval {
            while next_eval <= env_steps {
                next_eval += train.eval_interval;
            }
            run_eval(&agent, cfg, env_steps, &clock, &mut eval_rng, &mut log)?;
            out.save(&agent, &log)?;
        }
    }

    if let Some(last) = log.episodes.last() {
        log::info!(
            "{} {}: {} env steps, {} updates, last return {:.2}",
            log.run.method,
            log.run.domains.join("+"),
            env_steps,
            grad_steps,
            last.episode_return
        );
    }
    out.save(&agent, &log)?;
    Ok(TrainResult {
        checkpoint: agent.checkpoint(env_steps),
        agent,
        log,
        replay,
        grad_steps,
    })
}

fn run_eval(
    agent: &Agent,
    cfg: &ExperimentConfig,
    env_steps: u64,
    clock: &Instant,
    rng: &mut RngStream,
    log: &mut MetricLog,
) -> Result<()> {
    for (domain, ret) in evaluate(agent, cfg, cfg.train.eval_episodes, rng)? {
        log.evals.push(EpisodeRecord {
            env_steps,
            domain: domain.id().to_string(),
            episode_return: ret,
            wall_ms: clock.elapsed().as_millis() as u64,
        });
    }
    Ok(())
}

fn mean_losses(items: &[LossDiagnostics]) -> LossDiagnostics {
    let n = items.len().max(1) as f64;
    let mean = |f: fn(&LossDiagnostics) -> f64| items.iter().map(f).sum::<f64>() / n;
    LossDiagnostics {
        loss: mean(|d| d.loss),
        reconstruction: mean(|d| d.reconstruction),
        reward: mean(|d| d.reward),
        kl: mean(|d| d.kl),
        kl_raw: mean(|d| d.kl_raw),
        reward_mse: mean(|d| d.reward_mse),
        posterior_std: mean(|d| d.posterior_std),
        prior_std: mean(|d| d.prior_std),
    }
}

/// Directory of one run below `root`.
pub fn run_dir(root: &Path, method: &str, task: &str, seed: u64) -> PathBuf {
    root.join(method).join(task).join(format!("seed{seed}"))
}
