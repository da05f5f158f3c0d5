//! Role-tagged parameters and the dense model stacks of the agent.

mod params;
mod spec;

pub use params::{path_has_prefix, Bound, NamedParamSet, ParamEntry, ParamRole};
pub use spec::{ModelSpec, ParamSlot};

use crate::error::{Error, Result};
use crate::tensor::{RngStream, Tape, Tensor, Var};

/// Model prefixes, in path order.
pub const MODELS: [&str; 6] = [
    "actor",
    "decoder",
    "encoder",
    "reward",
    "transition",
    "value",
];

/// Fresh value for one parameter: Glorot-uniform weights, zero biases.
///
/// Draws come from `rng.split(path)`, so a path's initial value does not
/// depend on which other paths were drawn first.
pub fn init_param(path: &str, shape: &[usize], rng: &RngStream) -> Tensor {
    if path.ends_with("bias") || shape.len() < 2 {
        return Tensor::zeros(shape);
    }
    let (fan_in, fan_out) = (shape[0], shape[shape.len() - 1]);
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut stream = rng.split(path);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = stream.uniform(-limit, limit);
    }
    t
}

/// Freshly initialized parameters for encoder, decoder, transition, reward,
/// value and actor.
pub fn build_agent(spec: &ModelSpec, rng: &RngStream) -> Result<NamedParamSet> {
    spec.validate()?;
    let mut params = NamedParamSet::new();
    for slot in spec.layout() {
        let t = init_param(&slot.path, &slot.shape, rng);
        params.insert(slot.path, t, slot.role);
    }
    Ok(params)
}

/// Output transform of a dense stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Linear,
    Elu,
}

/// Dense stack `prefix/fc1 .. prefix/fc{layers}` with ELU between layers.
pub fn forward_mlp(
    tape: &mut Tape,
    bound: &Bound,
    prefix: &str,
    layers: usize,
    input: Var,
    head: Head,
) -> Result<Var> {
    let mut x = input;
    for i in 1..=layers {
        let w = bound.var(&format!("{prefix}/fc{i}/weight"))?;
        let b = bound.var(&format!("{prefix}/fc{i}/bias"))?;
        let (in_w, w_rows) = (tape.shape(x)[1], tape.shape(w)[0]);
        if in_w != w_rows {
            return Err(Error::dim(format!(
                "{prefix}/fc{i} expects width {w_rows}, got {in_w}"
            )));
        }
        x = tape.matmul(x, w)?;
        x = tape.add_bias(x, b)?;
        if i < layers || head == Head::Elu {
            x = tape.elu(x);
        }
    }
    Ok(x)
}

/// Observation frames `[B, obs_dim]` to embeddings `[B, 2·stoch]`.
pub fn encode(tape: &mut Tape, bound: &Bound, obs: Var) -> Result<Var> {
    forward_mlp(tape, bound, "encoder", 4, obs, Head::Linear)
}

/// Latent features `[B, |s|]` to the pixel means `[B, obs_dim]`.
pub fn decode(tape: &mut Tape, bound: &Bound, features: Var) -> Result<Var> {
    forward_mlp(tape, bound, "decoder", 4, features, Head::Linear)
}

/// Predicted reward `[B, 1]` from the reward model's full input.
pub fn reward(tape: &mut Tape, bound: &Bound, input: Var) -> Result<Var> {
    forward_mlp(tape, bound, "reward", 3, input, Head::Linear)
}

pub fn value(tape: &mut Tape, bound: &Bound, features: Var) -> Result<Var> {
    forward_mlp(tape, bound, "value", 3, features, Head::Linear)
}

/// Actor distribution before squashing: mean `scale·tanh(raw/scale)` and
/// std `softplus(raw) + min_std`, each `[B, action_dim]`.
pub fn actor_dist(
    tape: &mut Tape,
    bound: &Bound,
    spec: &ModelSpec,
    features: Var,
) -> Result<(Var, Var)> {
    let out = forward_mlp(tape, bound, "actor", 3, features, Head::Linear)?;
    let a = spec.action_dim;
    let raw_mean = tape.slice_cols(out, 0, a)?;
    let raw_std = tape.slice_cols(out, a, 2 * a)?;
    let s = spec.actor_mean_scale;
    let m = tape.scale(raw_mean, 1.0 / s);
    let m = tape.tanh(m);
    let mean = tape.scale(m, s);
    let std = tape.softplus(raw_std);
    let std = tape.add_const(std, spec.actor_min_std);
    Ok((mean, std))
}

/// Splits a `[B, 2n]` head into mean and `softplus + min_std` std.
pub fn gaussian_head(tape: &mut Tape, out: Var, min_std: f64) -> Result<(Var, Var)> {
    let n = tape.shape(out)[1] / 2;
    let mean = tape.slice_cols(out, 0, n)?;
    let raw = tape.slice_cols(out, n, 2 * n)?;
    let std = tape.softplus(raw);
    let std = tape.add_const(std, min_std);
    Ok((mean, std))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn slot_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    #[test]
    fn default_parameter_count_matches_closed_form() {
        let spec = ModelSpec::default();
        let p = build_agent(&spec, &RngStream::new(0, "init")).unwrap();
        // encoder 256→128→64→32→16
        let encoder = (256 * 128 + 128) + (128 * 64 + 64) + (64 * 32 + 32) + (32 * 16 + 16);
        // decoder 40→32→64→128→256
        let decoder = (40 * 32 + 32) + (32 * 64 + 64) + (64 * 128 + 128) + (128 * 256 + 256);
        // reward, value 40→64→64→1; actor 40→64→64→2
        let head = (40 * 64 + 64) + (64 * 64 + 64);
        let reward = head + (64 + 1);
        let value = head + (64 + 1);
        let actor = head + (64 * 2 + 2);
        // img_in 8→64 plus 1→64 action block, GRU (64+32)→96, prior 32→64→16, posterior 48→64→16
        let transition = (8 * 64 + 64 + 64)
            + (96 * 96 + 96)
            + (32 * 64 + 64 + 64 * 16 + 16)
            + (48 * 64 + 64 + 64 * 16 + 16);
        assert_eq!(encoder, 43_760);
        assert_eq!(
            p.num_values(),
            encoder + decoder + reward + value + actor + transition
        );
        for (model, dims) in [
            ("encoder", vec![256, 128, 64, 32, 16]),
            ("decoder", vec![40, 32, 64, 128, 256]),
            ("reward", vec![40, 64, 64, 1]),
            ("actor", vec![40, 64, 64, 2]),
        ] {
            assert_eq!(p.subset(model).num_values(), slot_count(&dims), "{model}");
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = ModelSpec::default();
        let a = build_agent(&spec, &RngStream::new(3, "init")).unwrap();
        let b = build_agent(&spec, &RngStream::new(3, "init")).unwrap();
        let c = build_agent(&spec, &RngStream::new(4, "init")).unwrap();
        assert!(a.bit_eq_under(&b, ""));
        assert!(!a.bit_eq_under(&c, ""));
    }

    #[test]
    fn role_partition_is_structural() {
        let p = build_agent(&ModelSpec::with_action_dim(2), &RngStream::new(0, "i")).unwrap();
        let parts = p.partition();
        let heads: BTreeSet<String> = ["reward", "value", "actor"]
            .iter()
            .flat_map(|m| [format!("{m}/fc3/weight"), format!("{m}/fc3/bias")])
            .collect();
        assert_eq!(parts[&ParamRole::OutputHead], heads);
        assert_eq!(
            parts[&ParamRole::ActionInput],
            BTreeSet::from(["transition/img_in/action_weight".to_string()])
        );
        let total: usize = parts.values().map(BTreeSet::len).sum();
        assert_eq!(total, p.len());
        for path in &parts[&ParamRole::FeatureExtraction] {
            assert!(!heads.contains(path));
        }
        for m in MODELS {
            assert!(!p.subset(m).is_empty(), "{m}");
        }
    }

    #[test]
    fn layer_counts() {
        let spec = ModelSpec::default();
        let p = build_agent(&spec, &RngStream::new(0, "i")).unwrap();
        let layers = |m: &str| {
            p.subset(m)
                .paths()
                .filter(|k| k.ends_with("/weight"))
                .count()
        };
        assert_eq!(layers("reward"), 3);
        assert_eq!(layers("value"), 3);
        assert_eq!(layers("actor"), 3);
        assert_eq!(layers("encoder"), 4);
        assert_eq!(layers("decoder"), 4);
    }

    #[test]
    fn zero_width_is_config_error() {
        let mut spec = ModelSpec::default();
        spec.head_hidden[1] = 0;
        assert!(matches!(
            build_agent(&spec, &RngStream::new(0, "i")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_net_linear_head_outputs_zero() {
        let mut p = NamedParamSet::new();
        p.insert(
            "m/fc1/weight",
            Tensor::zeros(&[3, 4]),
            ParamRole::FeatureExtraction,
        );
        p.insert(
            "m/fc1/bias",
            Tensor::zeros(&[4]),
            ParamRole::FeatureExtraction,
        );
        p.insert(
            "m/fc2/weight",
            Tensor::zeros(&[4, 2]),
            ParamRole::OutputHead,
        );
        p.insert("m/fc2/bias", Tensor::zeros(&[2]), ParamRole::OutputHead);
        let mut tape = Tape::new();
        let b = Bound::with(&mut tape, &p, "m", false);
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap());
        let y = forward_mlp(&mut tape, &b, "m", 2, x, Head::Linear).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_layer_reproduces_input() {
        let mut p = NamedParamSet::new();
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        p.insert("m/fc1/weight", eye, ParamRole::FeatureExtraction);
        p.insert(
            "m/fc1/bias",
            Tensor::zeros(&[2]),
            ParamRole::FeatureExtraction,
        );
        let mut tape = Tape::new();
        let b = Bound::with(&mut tape, &p, "m", false);
        let x = tape.constant(Tensor::from_rows(&[vec![0.5, -7.0]]).unwrap());
        let y = forward_mlp(&mut tape, &b, "m", 1, x, Head::Linear).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -7.0]);
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let p = build_agent(&ModelSpec::default(), &RngStream::new(0, "i")).unwrap();
        let mut tape = Tape::new();
        let b = Bound::with(&mut tape, &p, "reward", false);
        let x = tape.constant(Tensor::zeros(&[1, 39]));
        assert!(matches!(reward(&mut tape, &b, x), Err(Error::Dimension(_))));
    }
}
