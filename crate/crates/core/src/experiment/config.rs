use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorConfig;
use crate::envs::{Domain, EnvConfig};
use crate::error::{Error, Result};
use crate::nets::ModelSpec;
use crate::tensor::AdamConfig;
use crate::transfer::MetaMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    Multitask,
    Ftl,
    Mmtl,
    Sweep,
    FullTransferAblation,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Multitask => "multitask",
            Mode::Ftl => "ftl",
            Mode::Mmtl => "mmtl",
            Mode::Sweep => "sweep",
            Mode::FullTransferAblation => "full_transfer_ablation",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Mode::Baseline,
            Mode::Multitask,
            Mode::Ftl,
            Mode::Mmtl,
            Mode::Sweep,
            Mode::FullTransferAblation,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::config(format!("unknown mode {s:?}")))
    }
}

/// Budgets and optimizer settings of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Stop collecting once this many environment steps were taken.
    pub env_steps: u64,
    /// Random-action episodes per domain before the first update.
    pub seed_episodes: usize,
    /// Episodes per domain in each collection phase.
    pub collect_episodes: usize,
    /// Updates after each collection phase.
    pub grad_steps: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub free_nats: f64,
    pub model_lr: f64,
    pub actor_lr: f64,
    pub value_lr: f64,
    pub grad_clip: f64,
    pub buffer_capacity: usize,
    /// Greedy evaluation (and a checkpoint) every this many env steps; 0 disables.
    pub eval_interval: u64,
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            env_steps: 20_000,
            seed_episodes: 5,
            collect_episodes: 1,
            grad_steps: 20,
            batch_size: 8,
            seq_len: 16,
            free_nats: 1.0,
            model_lr: 2e-3,
            actor_lr: 2e-4,
            value_lr: 5e-4,
            grad_clip: 100.0,
            buffer_capacity: 50_000,
            eval_interval: 1_000,
            eval_episodes: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.env_steps == 0 {
            return Err(Error::config("env_steps budget must be positive"));
        }
        if self.collect_episodes == 0 {
            return Err(Error::config("collect_episodes must be at least 1"));
        }
        if self.batch_size == 0 || self.seq_len == 0 {
            return Err(Error::config("batch_size and seq_len must be positive"));
        }
        for (name, lr) in [
            ("model_lr", self.model_lr),
            ("actor_lr", self.actor_lr),
            ("value_lr", self.value_lr),
            ("grad_clip", self.grad_clip),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(self.free_nats >= 0.0) {
            return Err(Error::config("free_nats must be non-negative"));
        }
        Ok(())
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            clip_norm: self.grad_clip,
            ..Default::default()
        }
    }
}

/// One experiment, as read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub name: Option<String>,
    /// Task trained on; required by every mode except `multitask`.
    #[serde(default)]
    pub target: Option<Domain>,
    /// Domains of the multi-task agent, or the source pool labelling a transfer run.
    #[serde(default)]
    pub sources: Vec<Domain>,
    #[serde(default = "default_omega")]
    pub omega: f64,
    /// At ω = 1, copy the reward and value heads instead of adding the
    /// source to a fresh draw.
    #[serde(default)]
    pub full_copy_at_one: bool,
    #[serde(default = "default_omegas")]
    pub omegas: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub meta_mode: MetaMode,
    /// Multi-task agent for `ftl`/`sweep`, any agent for the full-transfer ablation.
    #[serde(default)]
    pub source_checkpoint: Option<PathBuf>,
    /// Agent whose encoder is shared frozen (`mmtl`, and `baseline` when
    /// training sources for it).
    #[serde(default)]
    pub uae_checkpoint: Option<PathBuf>,
    /// Per-task source agents for `mmtl`.
    #[serde(default)]
    pub source_checkpoints: Vec<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub behavior: BehaviorConfig,
    #[serde(default)]
    pub env: EnvConfig,
    /// Layer sizes; the action width and reward inputs are filled in per run.
    #[serde(default)]
    pub model: ModelSpec,
}

fn default_omega() -> f64 {
    0.2
}

fn default_omegas() -> Vec<f64> {
    vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn new(mode: Mode) -> Self {
        ExperimentConfig {
            mode,
            name: None,
            target: None,
            sources: Vec::new(),
            omega: default_omega(),
            omegas: default_omegas(),
            full_copy_at_one: false,
            seeds: default_seeds(),
            meta_mode: MetaMode::default(),
            source_checkpoint: None,
            uae_checkpoint: None,
            source_checkpoints: Vec::new(),
            train: TrainConfig::default(),
            behavior: BehaviorConfig::default(),
            env: EnvConfig::default(),
            model: ModelSpec::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(e.message().to_string()))?;
        Ok(cfg)
    }

    /// Reads `path`; relative checkpoint paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            cfg.source_checkpoint
                .iter_mut()
                .chain(&mut cfg.uae_checkpoint)
                .chain(&mut cfg.source_checkpoints)
                .for_each(fix);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Label used for output directories and tables.
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.mode.to_string())
    }

    /// Domains the agent collects in.
    pub fn train_domains(&self) -> Result<Vec<Domain>> {
        match self.mode {
            Mode::Multitask => {
                if self.sources.is_empty() {
                    return Err(Error::config("multitask mode needs a non-empty `sources` list"));
                }
                let mut seen = self.sources.clone();
                seen.sort();
                seen.dedup();
                if seen.len() != self.sources.len() {
                    return Err(Error::config("`sources` lists a domain twice"));
                }
                Ok(self.sources.clone())
            }
            _ => Ok(vec![self.target_domain()?]),
        }
    }

    pub fn target_domain(&self) -> Result<Domain> {
        self.target
            .ok_or_else(|| Error::config(format!("{} mode needs a `target` domain", self.mode)))
    }

    /// Checks everything that can be checked without touching the disk.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.behavior.validate()?;
        self.model.validate()?;
        self.train_domains()?;
        if self.seeds.is_empty() {
            return Err(Error::config("`seeds` is empty"));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::config(format!("omega {} outside [0, 1]", self.omega)));
        }
        match self.mode {
            Mode::Ftl | Mode::Sweep | Mode::FullTransferAblation => {
                if self.source_checkpoint.is_none() {
                    return Err(Error::config(format!(
                        "{} mode needs `source_checkpoint`",
                        self.mode
                    )));
                }
            }
            Mode::Mmtl => {
                if self.uae_checkpoint.is_none() {
                    return Err(Error::config("mmtl mode needs `uae_checkpoint`"));
                }
                if self.source_checkpoints.is_empty() {
                    return Err(Error::config("mmtl mode needs at least one source checkpoint"));
                }
            }
            Mode::Baseline | Mode::Multitask => {}
        }
        if self.mode == Mode::Sweep {
            if self.omegas.is_empty() {
                return Err(Error::config("sweep needs at least one omega"));
            }
            if let Some(w) = self.omegas.iter().find(|w| !(0.0..=1.0).contains(*w)) {
                return Err(Error::config(format!("sweep omega {w} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Target task and its source pool, one row per target.
pub type SourceTable = BTreeMap<Domain, Vec<Domain>>;

/// Source pools of the shipped experiments: four sources per target,
/// pendula first for pendula targets.
pub fn desk_source_table() -> SourceTable {
    use Domain::*;
    BTreeMap::from([
        (
            PendulumSwingup,
            vec![DoublePendulumSwingup, PointMass1d, PointMass2d, Reacher2],
        ),
        (
            DoublePendulumSwingup,
            vec![PendulumSwingup, PointMass1d, Reacher2, PointMass2d],
        ),
        (
            Reacher2,
            vec![PointMass2d, PointMass1d, PendulumSwingup, DoublePendulumSwingup],
        ),
        (
            PointMass2d,
            vec![PointMass1d, Reacher2, PendulumSwingup, DoublePendulumSwingup],
        ),
        (
            PointMass1d,
            vec![PointMass2d, Reacher2, PendulumSwingup, DoublePendulumSwingup],
        ),
    ])
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    pool: Vec<TableRow>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRow {
    target: Domain,
    sources: Vec<Domain>,
}

/// Reads a `[[pool]]` table of `target` / `sources` rows.
pub fn parse_source_table(text: &str) -> Result<SourceTable> {
    let file: TableFile =
        toml::from_str(text).map_err(|e| Error::config(e.message().to_string()))?;
    let mut out = SourceTable::new();
    for row in file.pool {
        if row.sources.contains(&row.target) {
            return Err(Error::config(format!(
                "{} lists itself as a source",
                row.target
            )));
        }
        if out.insert(row.target, row.sources).is_some() {
            return Err(Error::config(format!("{} appears twice", row.target)));
        }
    }
    Ok(out)
}
