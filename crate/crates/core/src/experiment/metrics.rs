use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorDiagnostics;
use crate::error::{Error, Result};
use crate::worldmodel::LossDiagnostics;

/// Which protocol produced a run, and for which seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    /// Method label, e.g. `baseline`, `ftl`, `mmtl`, `multitask`, `full_transfer`.
    pub method: String,
    /// Domains the agent collects in, in collection order.
    pub domains: Vec<String>,
    pub seed: u64,
    /// Source pool the agent drew on, if any.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
}

impl RunInfo {
    pub fn new(method: impl Into<String>, domains: &[crate::envs::Domain], seed: u64) -> Self {
        RunInfo {
            method: method.into(),
            domains: domains.iter().map(|d| d.id().to_string()).collect(),
            seed,
            sources: Vec::new(),
            omega: None,
        }
    }

    /// The single task of a one-domain run, or the joined domain list.
    pub fn task(&self) -> String {
        self.domains.join("+")
    }
}

/// One finished episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Environment steps taken in the run when the episode ended.
    pub env_steps: u64,
    pub domain: String,
    /// Undiscounted sum of rewards.
    pub episode_return: f64,
    pub wall_ms: u64,
}

/// Mean losses over one training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub env_steps: u64,
    pub grad_steps: u64,
    pub loss: f64,
    pub reconstruction: f64,
    pub reward_mse: f64,
    pub kl: f64,
    pub posterior_std: f64,
    pub actor_loss: f64,
    pub value_loss: f64,
    pub imagined_return: f64,
}

impl UpdateRecord {
    pub fn new(env_steps: u64, grad_steps: u64, wm: &LossDiagnostics, bh: &BehaviorDiagnostics) -> Self {
        UpdateRecord {
            env_steps,
            grad_steps,
            loss: wm.loss,
            reconstruction: wm.reconstruction,
            reward_mse: wm.reward_mse,
            kl: wm.kl_raw,
            posterior_std: wm.posterior_std,
            actor_loss: bh.actor_loss,
            value_loss: bh.value_loss,
            imagined_return: bh.mean_return,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricLog {
    pub run: RunInfo,
    /// Training episodes, including the random seed episodes.
    pub episodes: Vec<EpisodeRecord>,
    /// Greedy evaluation episodes; they do not count towards `env_steps`.
    pub evals: Vec<EpisodeRecord>,
    pub updates: Vec<UpdateRecord>,
}

const EPISODES_CSV: &str = "metrics.csv";
const EVALS_CSV: &str = "eval.csv";
const UPDATES_CSV: &str = "updates.csv";
const RUN_JSON: &str = "run.json";

impl MetricLog {
    pub fn new(run: RunInfo) -> Self {
        MetricLog {
            run,
            episodes: Vec::new(),
            evals: Vec::new(),
            updates: Vec::new(),
        }
    }

    pub fn env_steps(&self) -> u64 {
        self.episodes.last().map_or(0, |e| e.env_steps)
    }

    /// Equality ignoring wall-clock times.
    pub fn same_outcome(&self, other: &MetricLog) -> bool {
        let strip = |v: &[EpisodeRecord]| -> Vec<EpisodeRecord> {
            v.iter()
                .map(|e| EpisodeRecord {
                    wall_ms: 0,
                    ..e.clone()
                })
                .collect()
        };
        self.run == other.run
            && strip(&self.episodes) == strip(&other.episodes)
            && strip(&self.evals) == strip(&other.evals)
            && self.updates == other.updates
    }

    /// Writes `metrics.csv`, `eval.csv`, `updates.csv` and `run.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_csv(&dir.join(EPISODES_CSV), &self.episodes)?;
        write_csv(&dir.join(EVALS_CSV), &self.evals)?;
        write_csv(&dir.join(UPDATES_CSV), &self.updates)?;
        let path = dir.join(RUN_JSON);
        let json = serde_json::to_string_pretty(&self.run).expect("run info serializes");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_JSON);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let run = serde_json::from_str(&text)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Ok(MetricLog {
            run,
            episodes: read_csv(&dir.join(EPISODES_CSV))?,
            evals: read_optional_csv(&dir.join(EVALS_CSV))?,
            updates: read_optional_csv(&dir.join(UPDATES_CSV))?,
        })
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let csv_err = |e: csv::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn read_optional_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if path.exists() {
        read_csv(path)
    } else {
        Ok(Vec::new())
    }
}

/// Every run directory below `root` (directories holding a `run.json`),
/// sorted by path.
pub fn find_runs(root: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(RUN_JSON).is_file() {
            out.push(dir.clone());
        }
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
                stack.push(entry.path());
            }
        }
    }
    out.sort();
    Ok(out)
}
