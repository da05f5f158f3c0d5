use serde::{Deserialize, Serialize};

use super::params::ParamRole;
use crate::error::{Error, Result};

/// Layer widths and latent sizes of an agent.
///
/// Reward, value and actor are three dense layers (two hidden plus the
/// output layer); encoder and decoder are four.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    /// Frame height and width.
    pub obs_shape: [usize; 2],
    /// Padded action width fed to the transition model and emitted by the actor.
    pub action_dim: usize,
    pub deter: usize,
    pub stoch: usize,
    pub encoder_hidden: [usize; 3],
    pub decoder_hidden: [usize; 3],
    pub rssm_hidden: usize,
    pub head_hidden: [usize; 2],
    /// Extra reward-model inputs appended after the latent state (meta sources).
    #[serde(default)]
    pub reward_extra_inputs: usize,
    pub min_std: f64,
    pub actor_min_std: f64,
    pub actor_mean_scale: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            obs_shape: [16, 16],
            action_dim: 1,
            deter: 32,
            stoch: 8,
            encoder_hidden: [128, 64, 32],
            decoder_hidden: [32, 64, 128],
            rssm_hidden: 64,
            head_hidden: [64, 64],
            reward_extra_inputs: 0,
            min_std: 0.1,
            actor_min_std: 1e-4,
            actor_mean_scale: 5.0,
        }
    }
}

/// One parameter tensor of the agent layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot {
    pub path: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
}

impl ModelSpec {
    pub fn with_action_dim(action_dim: usize) -> Self {
        ModelSpec {
            action_dim,
            ..Default::default()
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_shape[0] * self.obs_shape[1]
    }

    /// Width of `s = concat(h, z)`.
    pub fn latent_dim(&self) -> usize {
        self.deter + self.stoch
    }

    /// Encoder output width, consumed by the posterior.
    pub fn embed_dim(&self) -> usize {
        2 * self.stoch
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.obs_shape[0],
            self.obs_shape[1],
            self.action_dim,
            self.deter,
            self.stoch,
            self.rssm_hidden,
        ]
        .into_iter()
        .chain(self.encoder_hidden)
        .chain(self.decoder_hidden)
        .chain(self.head_hidden);
        for w in widths {
            if w == 0 {
                return Err(Error::config(format!(
                    "layer width must be >= 1 in {self:?}"
                )));
            }
        }
        if !(self.min_std > 0.0 && self.actor_min_std > 0.0 && self.actor_mean_scale > 0.0) {
            return Err(Error::config("std floors and mean scale must be positive"));
        }
        Ok(())
    }

    /// Every parameter tensor with its shape and transfer role, in path order.
    pub fn layout(&self) -> Vec<ParamSlot> {
        use ParamRole::*;
        let mut slots = Vec::new();
        let mut dense = |prefix: &str, dims: &[usize], head_role: ParamRole| {
            let last = dims.len() - 2;
            for (i, w) in dims.windows(2).enumerate() {
                let role = if i == last {
                    head_role
                } else {
                    FeatureExtraction
                };
                let layer = format!("{prefix}/fc{}", i + 1);
                slots.push(ParamSlot {
                    path: format!("{layer}/weight"),
                    shape: vec![w[0], w[1]],
                    role,
                });
                slots.push(ParamSlot {
                    path: format!("{layer}/bias"),
                    shape: vec![w[1]],
                    role,
                });
            }
        };
        let s = self.latent_dim();
        let [e1, e2, e3] = self.encoder_hidden;
        let [d1, d2, d3] = self.decoder_hidden;
        let [h1, h2] = self.head_hidden;
        dense(
            "encoder",
            &[self.obs_dim(), e1, e2, e3, self.embed_dim()],
            FeatureExtraction,
        );
        dense(
            "decoder",
            &[s, d1, d2, d3, self.obs_dim()],
            FeatureExtraction,
        );
        dense(
            "reward",
            &[s + self.reward_extra_inputs, h1, h2, 1],
            OutputHead,
        );
        dense("value", &[s, h1, h2, 1], OutputHead);
        dense("actor", &[s, h1, h2, 2 * self.action_dim], OutputHead);

        let (h, z, r) = (self.deter, self.stoch, self.rssm_hidden);
        let mut t = |name: &str, shape: Vec<usize>, role: ParamRole| {
            slots.push(ParamSlot {
                path: format!("transition/{name}"),
                shape,
                role,
            })
        };
        t("img_in/weight", vec![z, r], FeatureExtraction);
        t(
            "img_in/action_weight",
            vec![self.action_dim, r],
            ActionInput,
        );
        t("img_in/bias", vec![r], FeatureExtraction);
        t("gru/weight", vec![r + h, 3 * h], FeatureExtraction);
        t("gru/bias", vec![3 * h], FeatureExtraction);
        t("prior_fc1/weight", vec![h, r], FeatureExtraction);
        t("prior_fc1/bias", vec![r], FeatureExtraction);
        t("prior_fc2/weight", vec![r, 2 * z], FeatureExtraction);
        t("prior_fc2/bias", vec![2 * z], FeatureExtraction);
        t(
            "post_fc1/weight",
            vec![h + self.embed_dim(), r],
            FeatureExtraction,
        );
        t("post_fc1/bias", vec![r], FeatureExtraction);
        t("post_fc2/weight", vec![r, 2 * z], FeatureExtraction);
        t("post_fc2/bias", vec![2 * z], FeatureExtraction);

        slots.sort_by(|a, b| a.path.cmp(&b.path));
        slots
    }
}
