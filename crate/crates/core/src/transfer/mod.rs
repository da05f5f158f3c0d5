//! Transfer from stored agents: fractional blending, role-based transfer
//! plans, a frozen shared encoder and frozen source reward models feeding a
//! meta reward model.

mod plan;

pub use plan::{default_plan, ftl_plan, TransferMode, TransferPlan};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{encoder_fingerprint, AgentCheckpoint};
use crate::error::{Error, Result};
use crate::nets::{self, init_param, Bound, Head, ModelSpec, NamedParamSet};
use crate::tensor::{RngStream, Tape, Tensor, Var};
use crate::worldmodel::RewardSources;

/// `random_init + ω·source`, elementwise.
pub fn fractional_blend(random_init: &Tensor, source: &Tensor, omega: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::config(format!("fraction {omega} outside [0, 1]")));
    }
    if random_init.shape() != source.shape() {
        return Err(Error::dim(format!(
            "cannot blend {:?} with {:?}",
            random_init.shape(),
            source.shape()
        )));
    }
    let data = random_init
        .data()
        .iter()
        .zip(source.data())
        .map(|(r, s)| r + omega * s)
        .collect();
    Tensor::new(random_init.shape().to_vec(), data)
}

/// Initial parameters for a target agent with `target_spec`, taking each
/// path from `source` as `plan` says. Fresh values come from the same
/// per-path streams as [`nets::build_agent`].
pub fn apply_transfer(
    target_spec: &ModelSpec,
    source: &NamedParamSet,
    plan: &TransferPlan,
    rng: &RngStream,
) -> Result<NamedParamSet> {
    target_spec.validate()?;
    let layout = target_spec.layout();
    let modes = plan.resolve_all(&layout)?;
    let mut out = NamedParamSet::new();
    for slot in layout {
        let mode = modes[&slot.path];
        let fresh = || init_param(&slot.path, &slot.shape, rng);
        let from_source = || -> Result<&Tensor> {
            let t = source
                .tensor(&slot.path)
                .ok_or_else(|| Error::transfer(&slot.path, "missing in source"))?;
            if t.shape() != slot.shape.as_slice() {
                return Err(Error::transfer(
                    &slot.path,
                    format!("source shape {:?}, target {:?}", t.shape(), slot.shape),
                ));
            }
            Ok(t)
        };
        let value = match mode {
            TransferMode::Random => fresh(),
            TransferMode::Full => from_source()?.clone(),
            TransferMode::Fractional(w) => fractional_blend(&fresh(), from_source()?, w)?,
        };
        out.insert(slot.path, value, slot.role);
    }
    Ok(out)
}

/// Encoder taken from a multi-domain agent, shared frozen by later agents.
#[derive(Clone, Debug)]
pub struct UniversalEncoder {
    params: NamedParamSet,
    fingerprint: String,
    domains: Vec<String>,
}

pub const ENCODER_PREFIX: &str = "encoder";

pub fn make_universal_encoder(ckpt: &AgentCheckpoint) -> Result<UniversalEncoder> {
    let params = ckpt.params.subset(ENCODER_PREFIX);
    if params.is_empty() {
        return Err(Error::transfer(ENCODER_PREFIX, "checkpoint has no encoder"));
    }
    if ckpt.meta.domains.len() < 2 {
        log::warn!(
            "universal encoder taken from an agent trained on {} domain(s); two or more expected",
            ckpt.meta.domains.len()
        );
    }
    Ok(UniversalEncoder {
        fingerprint: encoder_fingerprint(&params),
        params,
        domains: ckpt.meta.domains.clone(),
    })
}

impl UniversalEncoder {
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn params(&self) -> &NamedParamSet {
        &self.params
    }

    /// Replaces the encoder of `params` with this one.
    pub fn install(&self, params: &mut NamedParamSet) -> Result<()> {
        for (path, entry) in self.params.iter() {
            match params.tensor(path) {
                Some(t) if t.shape() == entry.tensor.shape() => {}
                Some(t) => {
                    return Err(Error::transfer(
                        path,
                        format!(
                            "encoder shape {:?}, agent {:?}",
                            entry.tensor.shape(),
                            t.shape()
                        ),
                    ))
                }
                None => return Err(Error::transfer(path, "agent has no such parameter")),
            }
        }
        params.remove_prefix(ENCODER_PREFIX);
        params.extend(self.params.clone());
        Ok(())
    }
}

/// What each source contributes to the meta reward model's input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaMode {
    /// Activation of the source reward model's second hidden layer.
    #[default]
    Feature,
    /// The source's scalar reward prediction.
    Scalar,
}

impl fmt::Display for MetaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetaMode::Feature => "feature",
            MetaMode::Scalar => "scalar",
        })
    }
}

impl FromStr for MetaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(MetaMode::Feature),
            "scalar" => Ok(MetaMode::Scalar),
            other => Err(Error::config(format!("unknown meta mode {other:?}"))),
        }
    }
}

/// Frozen reward models of stored agents.
#[derive(Clone, Debug)]
pub struct MetaSources {
    rewards: Vec<NamedParamSet>,
    domains: Vec<String>,
    mode: MetaMode,
}

pub fn assemble_meta_sources(
    pool: &[AgentCheckpoint],
    encoder: &UniversalEncoder,
    mode: MetaMode,
) -> Result<MetaSources> {
    if pool.is_empty() {
        return Err(Error::config("meta reward model needs at least one source"));
    }
    let mut rewards = Vec::with_capacity(pool.len());
    let mut domains = Vec::with_capacity(pool.len());
    for (i, ckpt) in pool.iter().enumerate() {
        let name = ckpt.meta.domains.join("+");
        let stored = encoder_fingerprint(&ckpt.params);
        if stored != encoder.fingerprint() || ckpt.meta.encoder_fingerprint != encoder.fingerprint()
        {
            return Err(Error::transfer(
                ENCODER_PREFIX,
                format!("source {i} ({name}) was not trained with the shared encoder"),
            ));
        }
        if ckpt.meta.spec.reward_extra_inputs != 0 {
            return Err(Error::transfer(
                "reward",
                format!("source {i} ({name}) has a meta reward model itself"),
            ));
        }
        rewards.push(ckpt.params.subset("reward"));
        domains.push(name);
    }
    Ok(MetaSources {
        rewards,
        domains,
        mode,
    })
}

impl MetaSources {
    pub fn mode(&self) -> MetaMode {
        self.mode
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn reward_params(&self) -> &[NamedParamSet] {
        &self.rewards
    }

    /// Extra reward-input width `N·F` for the target spec.
    pub fn extra_inputs(&self) -> usize {
        self.count() * self.width()
    }
}

impl RewardSources for MetaSources {
    fn count(&self) -> usize {
        self.rewards.len()
    }

    fn width(&self) -> usize {
        match self.mode {
            MetaMode::Scalar => 1,
            MetaMode::Feature => self.rewards[0]
                .tensor("reward/fc2/weight")
                .map_or(0, |w| w.shape()[1]),
        }
    }

    fn features(&self, tape: &mut Tape, s: Var) -> Result<Vec<Var>> {
        self.rewards
            .iter()
            .map(|params| {
                let bound = Bound::with(tape, params, "reward", false);
                match self.mode {
                    MetaMode::Scalar => nets::reward(tape, &bound, s),
                    MetaMode::Feature => nets::forward_mlp(tape, &bound, "reward", 2, s, Head::Elu),
                }
            })
            .collect()
    }
}
