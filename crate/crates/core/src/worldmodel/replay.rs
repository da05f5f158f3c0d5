use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{RngStream, Tensor};

/// One recorded episode.
///
/// Entry `t` holds the frame `o_t`, the padded action `a_{t-1}` that led to
/// it and the reward received on arrival. Entry 0 is the reset frame with a
/// zero action and zero reward.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub domain: String,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
}

impl Episode {
    pub fn new(domain: impl Into<String>, first_obs: Vec<f64>, action_dim: usize) -> Self {
        Episode {
            domain: domain.into(),
            obs: vec![first_obs],
            actions: vec![vec![0.0; action_dim]],
            rewards: vec![0.0],
        }
    }

    pub fn push(&mut self, action: Vec<f64>, reward: f64, obs: Vec<f64>) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.obs.push(obs);
    }

    /// Number of stored entries (environment steps + 1).
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn env_steps(&self) -> usize {
        self.obs.len().saturating_sub(1)
    }

    /// Undiscounted sum of rewards.
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Fixed-length sequences, stored time-major: element `t` of each field
/// stacks the `B` sequences' step `t`.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    /// `L × [B, obs_dim]`
    pub obs: Vec<Tensor>,
    /// `L × [B, A_max]`
    pub actions: Vec<Tensor>,
    /// `L × [B, 1]`
    pub rewards: Vec<Tensor>,
    pub domains: Vec<String>,
}

impl SequenceBatch {
    pub fn batch_size(&self) -> usize {
        self.domains.len()
    }

    pub fn seq_len(&self) -> usize {
        self.obs.len()
    }

    /// Builds a batch from `(episode, start)` windows of length `seq_len`.
    pub fn from_windows(windows: &[(&Episode, usize)], seq_len: usize) -> Result<Self> {
        if windows.is_empty() || seq_len == 0 {
            return Err(Error::Input("empty sequence batch".into()));
        }
        let b = windows.len();
        let obs_dim = windows[0].0.obs[0].len();
        let act_dim = windows[0].0.actions[0].len();
        for (ep, start) in windows {
            if start + seq_len > ep.len() {
                return Err(Error::Input(format!(
                    "window {start}+{seq_len} exceeds episode of {}",
                    ep.len()
                )));
            }
            if ep.obs[0].len() != obs_dim || ep.actions[0].len() != act_dim {
                return Err(Error::dim("episodes in a batch must share shapes"));
            }
        }
        let mut obs = Vec::with_capacity(seq_len);
        let mut actions = Vec::with_capacity(seq_len);
        let mut rewards = Vec::with_capacity(seq_len);
        for t in 0..seq_len {
            let o: Vec<f64> = windows
                .iter()
                .flat_map(|(ep, s)| ep.obs[s + t].iter().copied())
                .collect();
            let a: Vec<f64> = windows
                .iter()
                .flat_map(|(ep, s)| ep.actions[s + t].iter().copied())
                .collect();
            let r: Vec<f64> = windows.iter().map(|(ep, s)| ep.rewards[s + t]).collect();
            obs.push(Tensor::new(vec![b, obs_dim], o)?);
            actions.push(Tensor::new(vec![b, act_dim], a)?);
            rewards.push(Tensor::new(vec![b, 1], r)?);
        }
        Ok(SequenceBatch {
            obs,
            actions,
            rewards,
            domains: windows.iter().map(|(ep, _)| ep.domain.clone()).collect(),
        })
    }

    /// All frames as one `[L·B, obs_dim]` matrix, time-major.
    pub fn stacked_obs(&self) -> Tensor {
        stack(&self.obs)
    }

    /// All rewards as `[L·B, 1]`, time-major.
    pub fn stacked_rewards(&self) -> Tensor {
        stack(&self.rewards)
    }

    /// Reorders the sequences within the batch.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let pick = |ts: &[Tensor]| -> Vec<Tensor> {
            ts.iter()
                .map(|t| {
                    let c = t.shape()[1];
                    let data = order
                        .iter()
                        .flat_map(|&i| t.data()[i * c..(i + 1) * c].iter().copied())
                        .collect();
                    Tensor::new(vec![order.len(), c], data).expect("same width")
                })
                .collect()
        };
        SequenceBatch {
            obs: pick(&self.obs),
            actions: pick(&self.actions),
            rewards: pick(&self.rewards),
            domains: order.iter().map(|&i| self.domains[i].clone()).collect(),
        }
    }
}

fn stack(ts: &[Tensor]) -> Tensor {
    let cols = ts[0].shape()[1];
    let rows: usize = ts.iter().map(|t| t.shape()[0]).sum();
    let data = ts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(vec![rows, cols], data).expect("consistent widths")
}

/// Episodes grouped per domain, bounded by a total step capacity.
///
/// The oldest episode overall is evicted first. Sampled sequences never
/// cross an episode boundary, and each sequence picks its domain uniformly.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    stored: usize,
    by_domain: BTreeMap<String, VecDeque<Arc<Episode>>>,
    arrival: VecDeque<String>,
}

impl ReplayBuffer {
    pub fn new(capacity_steps: usize) -> Self {
        ReplayBuffer {
            capacity: capacity_steps,
            stored: 0,
            by_domain: BTreeMap::new(),
            arrival: VecDeque::new(),
        }
    }

    pub fn add(&mut self, episode: Episode) {
        self.stored += episode.env_steps();
        self.arrival.push_back(episode.domain.clone());
        self.by_domain
            .entry(episode.domain.clone())
            .or_default()
            .push_back(Arc::new(episode));
        while self.stored > self.capacity && self.arrival.len() > 1 {
            let domain = self.arrival.pop_front().expect("non-empty");
            let queue = self.by_domain.get_mut(&domain).expect("known domain");
            let old = queue.pop_front().expect("episode present");
            self.stored -= old.env_steps();
            if queue.is_empty() {
                self.by_domain.remove(&domain);
            }
        }
    }

    /// Stored environment steps.
    pub fn steps(&self) -> usize {
        self.stored
    }

    pub fn num_episodes(&self) -> usize {
        self.arrival.len()
    }

    pub fn steps_by_domain(&self) -> BTreeMap<String, usize> {
        self.by_domain
            .iter()
            .map(|(d, eps)| (d.clone(), eps.iter().map(|e| e.env_steps()).sum()))
            .collect()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.by_domain.values().flatten().map(|e| e.as_ref())
    }

    pub fn sample(
        &self,
        batch: usize,
        seq_len: usize,
        rng: &mut RngStream,
    ) -> Result<SequenceBatch> {
        let eligible: Vec<Vec<&Arc<Episode>>> = self
            .by_domain
            .values()
            .map(|eps| {
                eps.iter()
                    .filter(|e| e.len() >= seq_len)
                    .collect::<Vec<_>>()
            })
            .filter(|eps| !eps.is_empty())
            .collect();
        if eligible.is_empty() {
            return Err(Error::Input(format!(
                "replay holds no episode with {seq_len} entries"
            )));
        }
        let mut windows = Vec::with_capacity(batch);
        for _ in 0..batch {
            let eps = &eligible[rng.below(eligible.len())];
            let ep = eps[rng.below(eps.len())].as_ref();
            let start = rng.below(ep.len() - seq_len + 1);
            windows.push((ep, start));
        }
        SequenceBatch::from_windows(&windows, seq_len)
    }
}
