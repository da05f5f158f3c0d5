mod common;

use std::collections::BTreeSet;

use common::random_tensor;
use proptest::prelude::*;
use wmtransfer_core::checkpoint::AgentCheckpoint;
use wmtransfer_core::nets::Bound;
use wmtransfer_core::nets::{init_param, NamedParamSet, ParamRole};
use wmtransfer_core::tensor::{AdamConfig, AdamState};
use wmtransfer_core::transfer::{
    apply_transfer, assemble_meta_sources, default_plan, fractional_blend, ftl_plan, make_universal_encoder,
    MetaMode, TransferMode, TransferPlan,
};
use wmtransfer_core::worldmodel::{predict_reward, RewardSources};
use wmtransfer_core::{build_agent, Error, ModelSpec, RngStream, Tape, Tensor};

fn source(seed: u64, spec: &ModelSpec) -> NamedParamSet {
    build_agent(spec, &RngStream::new(seed, "source")).unwrap()
}

#[test]
fn fractional_blend_examples() {
    let r = Tensor::row(&[0.1, -0.2]);
    let s = Tensor::row(&[0.5, 1.0]);
    assert_eq!(fractional_blend(&r, &s, 0.0).unwrap(), r);
    assert_eq!(fractional_blend(&r, &s, 0.2).unwrap().data(), [0.2, 0.0]);
    assert_eq!(
        fractional_blend(&r, &s, 1.0).unwrap().data(),
        [0.1 + 0.5, -0.2 + 1.0]
    );
    assert!(matches!(
        fractional_blend(&r, &Tensor::row(&[1.0]), 0.5),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        fractional_blend(&r, &s, 1.5),
        Err(Error::Config(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    // Values on a coarse dyadic grid make every product and sum exact.
    #[test]
    fn blend_is_linear_in_omega(
        pairs in prop::collection::vec((-4096i32..4096, -4096i32..4096), 1..16),
        w1 in 0u32..=64,
        w2 in 0u32..=64,
    ) {
        let r = Tensor::row(&pairs.iter().map(|p| p.0 as f64 / 1024.0).collect::<Vec<_>>());
        let s = Tensor::row(&pairs.iter().map(|p| p.1 as f64 / 1024.0).collect::<Vec<_>>());
        let (o1, o2) = (w1 as f64 / 64.0, w2 as f64 / 64.0);
        let a = fractional_blend(&r, &s, o1).unwrap();
        let b = fractional_blend(&r, &s, o2).unwrap();
        for i in 0..r.len() {
            prop_assert_eq!(a.data()[i] + (o2 - o1) * s.data()[i], b.data()[i]);
        }
    }
}

#[test]
fn default_plan_contracts() {
    let spec = ModelSpec::default();
    let src = source(1, &spec);
    let rng = RngStream::new(2, "target");
    let out = apply_transfer(&spec, &src, &default_plan(0.2).unwrap(), &rng).unwrap();

    assert!(out.bit_eq_under(&src, "encoder"));
    assert!(out.bit_eq_under(&src, "decoder"));

    let w = "actor/fc3/weight";
    let fresh = init_param(w, out.tensor(w).unwrap().shape(), &rng);
    assert!(out.tensor(w).unwrap().bit_eq(&fresh));
    assert!(!out.tensor(w).unwrap().bit_eq(src.tensor(w).unwrap()));

    for w in ["reward/fc3/weight", "value/fc3/weight"] {
        let shape = src.tensor(w).unwrap().shape().to_vec();
        let fresh = init_param(w, &shape, &rng);
        let got = out.tensor(w).unwrap();
        for ((g, f), s) in got
            .data()
            .iter()
            .zip(fresh.data())
            .zip(src.tensor(w).unwrap().data())
        {
            assert_eq!(*g, f + 0.2 * s);
        }
    }
}

#[test]
fn omega_one_adds_unless_full_copy_is_requested() {
    let spec = ModelSpec::default();
    let src = source(1, &spec);
    let rng = RngStream::new(2, "target");
    let head = "value/fc3/weight";
    let fresh = init_param(head, src.tensor(head).unwrap().shape(), &rng);
    let added = apply_transfer(&spec, &src, &ftl_plan(1.0, false).unwrap(), &rng).unwrap();
    for ((g, f), s) in added
        .tensor(head)
        .unwrap()
        .data()
        .iter()
        .zip(fresh.data())
        .zip(src.tensor(head).unwrap().data())
    {
        assert_eq!(*g, f + s);
    }
    let copied = apply_transfer(&spec, &src, &ftl_plan(1.0, true).unwrap(), &rng).unwrap();
    assert!(copied.bit_eq_under(&src, "value/fc3"));
    assert!(copied.bit_eq_under(&src, "reward/fc3"));
    assert!(!copied.bit_eq_under(&src, "actor/fc3"));
    assert_eq!(
        ftl_plan(0.5, true).unwrap(),
        default_plan(0.5).unwrap()
    );
}

#[test]
fn uniform_plans_copy_or_reinitialize() {
    let spec = ModelSpec::default();
    let src = source(1, &spec);
    let rng = RngStream::new(5, "target");
    let full = apply_transfer(
        &spec,
        &src,
        &TransferPlan::uniform(TransferMode::Full),
        &rng,
    )
    .unwrap();
    assert!(full.bit_eq_under(&src, ""));
    let random = apply_transfer(
        &spec,
        &src,
        &TransferPlan::uniform(TransferMode::Random),
        &rng,
    )
    .unwrap();
    assert!(random.bit_eq_under(&build_agent(&spec, &rng).unwrap(), ""));
}

#[test]
fn action_width_change_needs_random_action_groups() {
    let src = source(1, &ModelSpec::with_action_dim(1));
    let target = ModelSpec::with_action_dim(2);
    let rng = RngStream::new(3, "target");
    let out = apply_transfer(&target, &src, &default_plan(0.3).unwrap(), &rng).unwrap();
    assert_eq!(
        out.tensor("transition/img_in/action_weight")
            .unwrap()
            .shape(),
        [2, 64]
    );
    assert_eq!(out.tensor("actor/fc3/weight").unwrap().shape(), [64, 4]);
    let err = apply_transfer(
        &target,
        &src,
        &TransferPlan::uniform(TransferMode::Full),
        &rng,
    )
    .unwrap_err();
    match err {
        Error::Transfer { path, .. } => assert_eq!(path, "actor/fc3/bias"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn apply_transfer_is_pure() {
    let spec = ModelSpec::default();
    let src = source(1, &spec);
    let before = AgentCheckpoint::new(src.clone(), spec.clone(), vec![], 0)
        .to_bytes()
        .unwrap();
    let rng = RngStream::new(4, "target");
    let plan = default_plan(0.4).unwrap();
    let a = apply_transfer(&spec, &src, &plan, &rng).unwrap();
    let b = apply_transfer(&spec, &src, &plan, &rng).unwrap();
    assert!(a.bit_eq_under(&b, ""));
    let after = AgentCheckpoint::new(src, spec, vec![], 0)
        .to_bytes()
        .unwrap();
    assert_eq!(before, after);
}

#[test]
fn default_plan_partition_matches_architecture_figure() {
    let spec = ModelSpec::default();
    let modes = default_plan(0.2)
        .unwrap()
        .resolve_all(&spec.layout())
        .unwrap();
    let pick = |f: fn(&TransferMode) -> bool| -> BTreeSet<String> {
        modes
            .iter()
            .filter(|(_, m)| f(m))
            .map(|(p, _)| p.clone())
            .collect()
    };
    let random = pick(|m| *m == TransferMode::Random);
    let fractional = pick(|m| matches!(m, TransferMode::Fractional(w) if *w == 0.2));
    let full = pick(|m| *m == TransferMode::Full);
    let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();

    assert_eq!(
        random,
        set(&[
            "actor/fc3/bias",
            "actor/fc3/weight",
            "transition/img_in/action_weight"
        ])
    );
    assert_eq!(
        fractional,
        set(&[
            "reward/fc3/bias",
            "reward/fc3/weight",
            "value/fc3/bias",
            "value/fc3/weight"
        ])
    );
    let mut expected_full = BTreeSet::new();
    for (model, layers) in [
        ("encoder", 4),
        ("decoder", 4),
        ("reward", 2),
        ("value", 2),
        ("actor", 2),
    ] {
        for i in 1..=layers {
            expected_full.insert(format!("{model}/fc{i}/weight"));
            expected_full.insert(format!("{model}/fc{i}/bias"));
        }
    }
    for p in [
        "img_in/weight",
        "img_in/bias",
        "gru/weight",
        "gru/bias",
        "prior_fc1/weight",
        "prior_fc1/bias",
        "prior_fc2/weight",
        "prior_fc2/bias",
        "post_fc1/weight",
        "post_fc1/bias",
        "post_fc2/weight",
        "post_fc2/bias",
    ] {
        expected_full.insert(format!("transition/{p}"));
    }
    assert_eq!(full, expected_full);
    assert_eq!(
        random.len() + fractional.len() + full.len(),
        spec.layout().len()
    );
}

#[test]
fn incomplete_plans_fail_to_resolve() {
    let mut plan = TransferPlan::new();
    plan.set_role(ParamRole::FeatureExtraction, TransferMode::Full);
    let err = plan
        .resolve_all(&ModelSpec::default().layout())
        .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn plan_text_round_trip_and_precedence() {
    let text = "\
        # transfer plan
        feature_extraction = full
        action_input = random
        output_head = fractional:0.2
        output_head.actor = random
        output_head.reward = fractional:0.5
        decoder = random
    ";
    let plan = TransferPlan::parse(text).unwrap();
    assert_eq!(TransferPlan::parse(&plan.to_text()).unwrap(), plan);
    let r = |p, role| plan.resolve(p, role).unwrap();
    assert_eq!(
        r("reward/fc3/weight", ParamRole::OutputHead),
        TransferMode::Fractional(0.5)
    );
    assert_eq!(
        r("reward/fc1/weight", ParamRole::FeatureExtraction),
        TransferMode::Full
    );
    assert_eq!(
        r("value/fc3/bias", ParamRole::OutputHead),
        TransferMode::Fractional(0.2)
    );
    assert_eq!(
        r("actor/fc3/bias", ParamRole::OutputHead),
        TransferMode::Random
    );
    assert_eq!(
        r("decoder/fc2/bias", ParamRole::FeatureExtraction),
        TransferMode::Random
    );
    // "decoder" must not capture "decoderx/…".
    assert_eq!(
        r("decoderx/w", ParamRole::FeatureExtraction),
        TransferMode::Full
    );

    let default_text = default_plan(0.2).unwrap().to_text();
    assert!(default_text.contains("output_head.actor = random"));
    for bad in [
        "output_head fractional:0.2",
        "output_head = fractional:1.5",
        "bogus.actor = full",
        "x = copy",
    ] {
        assert!(TransferPlan::parse(bad).is_err(), "{bad}");
    }
}

fn checkpoint(params: NamedParamSet, spec: &ModelSpec, domains: &[&str]) -> AgentCheckpoint {
    AgentCheckpoint::new(
        params,
        spec.clone(),
        domains.iter().map(|d| d.to_string()).collect(),
        0,
    )
}

#[test]
fn universal_encoder_is_shared_by_fingerprint() {
    let spec = ModelSpec::default();
    let multi = checkpoint(source(1, &spec), &spec, &["pendulum_swingup", "reacher2"]);
    let uae = make_universal_encoder(&multi).unwrap();
    assert_eq!(uae.fingerprint(), multi.meta.encoder_fingerprint);

    let mut a = source(2, &ModelSpec::with_action_dim(2));
    let mut b = source(3, &spec);
    uae.install(&mut a).unwrap();
    uae.install(&mut b).unwrap();
    let ca = checkpoint(a.clone(), &spec, &["x"]);
    let cb = checkpoint(b, &spec, &["y"]);
    assert_eq!(ca.meta.encoder_fingerprint, cb.meta.encoder_fingerprint);
    assert!(a.bit_eq_under(&multi.params, "encoder"));

    // Allowed, only warned about.
    assert!(make_universal_encoder(&checkpoint(source(4, &spec), &spec, &["x"])).is_ok());

    let small = ModelSpec {
        encoder_hidden: [64, 64, 32],
        ..ModelSpec::default()
    };
    let mut other = source(5, &small);
    assert!(matches!(
        uae.install(&mut other),
        Err(Error::Transfer { .. })
    ));
}

fn meta_setup(
    mode: MetaMode,
    n: usize,
) -> (wmtransfer_core::transfer::MetaSources, Vec<AgentCheckpoint>) {
    let spec = ModelSpec::default();
    let multi = checkpoint(source(1, &spec), &spec, &["a", "b"]);
    let uae = make_universal_encoder(&multi).unwrap();
    let pool: Vec<AgentCheckpoint> = (0..n)
        .map(|i| {
            let mut p = source(10 + i as u64, &spec);
            uae.install(&mut p).unwrap();
            checkpoint(p, &spec, &["src"])
        })
        .collect();
    (assemble_meta_sources(&pool, &uae, mode).unwrap(), pool)
}

#[test]
fn meta_source_widths() {
    let (feature, _) = meta_setup(MetaMode::Feature, 4);
    assert_eq!(
        (feature.count(), feature.width(), feature.extra_inputs()),
        (4, 64, 256)
    );
    let (scalar, _) = meta_setup(MetaMode::Scalar, 4);
    assert_eq!(scalar.extra_inputs(), 4);

    let mut tape = Tape::new();
    let s = tape.constant(random_tensor(&[3, 40], 1.0, &mut RngStream::new(0, "s")));
    let feats = feature.features(&mut tape, s).unwrap();
    assert!(feats.iter().all(|f| tape.shape(*f) == [3, 64]));
    let feats = scalar.features(&mut tape, s).unwrap();
    assert!(feats.iter().all(|f| tape.shape(*f) == [3, 1]));
}

#[test]
fn meta_sources_reject_foreign_encoders() {
    let spec = ModelSpec::default();
    let uae = make_universal_encoder(&checkpoint(source(1, &spec), &spec, &["a", "b"])).unwrap();
    let foreign = checkpoint(source(9, &spec), &spec, &["c"]);
    let err = assemble_meta_sources(&[foreign], &uae, MetaMode::Feature).unwrap_err();
    assert!(matches!(err, Error::Transfer { .. }));
    assert!(matches!(
        assemble_meta_sources(&[], &uae, MetaMode::Feature),
        Err(Error::Config(_))
    ));
}

#[test]
fn meta_training_leaves_sources_untouched() {
    let (sources, pool) = meta_setup(MetaMode::Feature, 3);
    let before: Vec<Vec<u8>> = pool.iter().map(|c| c.to_bytes().unwrap()).collect();
    let spec = ModelSpec {
        reward_extra_inputs: sources.extra_inputs(),
        ..ModelSpec::default()
    };
    let mut params = build_agent(&spec, &RngStream::new(0, "meta")).unwrap();
    let paths: Vec<String> = params
        .paths()
        .filter(|p| p.starts_with("reward/"))
        .map(String::from)
        .collect();
    let mut opt = AdamState::new(
        AdamConfig::with_lr(1e-2),
        &params,
        paths.iter().map(String::as_str),
    )
    .unwrap();
    let mut rng = RngStream::new(1, "data");
    let s_val = random_tensor(&[16, 40], 1.0, &mut rng);
    let target = random_tensor(&[16, 1], 1.0, &mut rng);
    let mut losses = Vec::new();
    for _ in 0..25 {
        let mut tape = Tape::new();
        let bound = Bound::with(&mut tape, &params, "reward", true);
        let s = tape.constant(s_val.clone());
        let r = predict_reward(&mut tape, &bound, s, Some(&sources)).unwrap();
        let t = tape.constant(target.clone());
        let d = tape.sub(r, t).unwrap();
        let sq = tape.square(d);
        let loss = tape.mean(sq);
        losses.push(tape.value(loss).item().unwrap());
        let grads = tape.backward(loss).unwrap();
        opt.step(&mut params, &bound.grads(&tape, &grads, "reward"))
            .unwrap();
    }
    assert!(losses[24] < losses[0]);
    for (ckpt, bytes) in pool.iter().zip(&before) {
        assert_eq!(&ckpt.to_bytes().unwrap(), bytes);
    }
    for (src, ckpt) in sources.reward_params().iter().zip(&pool) {
        assert!(src.bit_eq_under(&ckpt.params.subset("reward"), "reward"));
    }
}
