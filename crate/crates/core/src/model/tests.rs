use super::*;
use crate::autodiff::gradcheck::{finite_diff_check, CheckOptions};
use crate::rng::seeded;
use proptest::prelude::*;
use rand::Rng;

fn random_sample(config: &ModelConfig, seed: u64) -> Sample {
    let mut rng = seeded(seed);
    let mut s = Sample {
        sentinel: rng.random_range(0..config.cameras),
        label: rng.random_range(0..2),
        ..Sample::default()
    };
    for f in Feature::ALL {
        let mut dims = config.input_dims(f);
        if !f.is_kinematic() {
            // raw, unpooled extents
            let side = if matches!(f, Feature::LocalContent | Feature::LocalMotion) {
                config.crop_side
            } else {
                config.raster
            };
            dims[2] = side;
            dims[3] = side;
        }
        *s.slot(f) = Some(Tensor::from_fn(&dims, |_| rng.random_range(0.0..1.0)));
    }
    s.speed = s.speed.map(|t| t.map(|v| 60.0 * v));
    s
}

fn eval_prob(sample: &Sample, params: &ModelParams<f32>, config: &ModelConfig) -> f32 {
    forward(sample, params, config, false, &mut seeded(0)).unwrap()
}

fn every_feature(variant: Variant) -> ModelConfig {
    ModelConfig {
        features: FeatureSet::ALL,
        ..ModelConfig::tiny(variant)
    }
}

#[test]
fn presets_validate() {
    for v in [Variant::Alpha, Variant::Beta] {
        ModelConfig::full(v).validate().unwrap();
        ModelConfig::desk(v).validate().unwrap();
        ModelConfig::tiny(v).validate().unwrap();
        every_feature(v).validate().unwrap();
    }
    let mut bad = ModelConfig::desk(Variant::Beta);
    bad.cameras = 1;
    assert!(matches!(bad.validate(), Err(Error::BadConfig(_))));
    let mut none = ModelConfig::desk(Variant::Alpha);
    none.features = FeatureSet::default();
    assert!(matches!(none.validate(), Err(Error::BadConfig(_))));
    let mut rate = ModelConfig::desk(Variant::Alpha);
    rate.dropout = 1.0;
    assert!(matches!(rate.validate(), Err(Error::BadRate(_))));
}

#[test]
fn full_preset_hidden_units_shape_the_first_gru() {
    let params = build_model(&ModelConfig::full(Variant::Alpha), 0).unwrap();
    assert_eq!(params.get("kin.0.w_xz").unwrap().dims(), &[4, 256]);
    assert_eq!(params.get("kin.0.w_hz").unwrap().dims(), &[256, 256]);
    assert_eq!(params.get("kin.1.w_xz").unwrap().dims(), &[256 + POSE_LEN, 256]);
    assert_eq!(params.get(OUTPUT_WEIGHT).unwrap().dims(), &[1, 256]);
}

#[test]
fn build_is_deterministic() {
    for v in [Variant::Alpha, Variant::Beta] {
        let c = ModelConfig::desk(v);
        assert_eq!(build_model(&c, 3).unwrap(), build_model(&c, 3).unwrap());
        assert_ne!(build_model(&c, 3).unwrap(), build_model(&c, 4).unwrap());
    }
}

#[test]
fn only_beta_has_aggregation_weights() {
    let alpha = build_model(&every_feature(Variant::Alpha), 0).unwrap();
    assert!(alpha.names().all(|n| !n.ends_with(".agg")));
    let beta = build_model(&every_feature(Variant::Beta), 0).unwrap();
    let agg: Vec<&str> = beta.names().filter(|n| n.ends_with(".agg")).collect();
    assert_eq!(agg.len(), 4);
    assert_eq!(beta.get("semantic.agg").unwrap().dims(), &[19, 3 * 19 + 3]);
}

#[test]
fn zero_network_outputs_one_half() {
    for v in [Variant::Alpha, Variant::Beta] {
        let c = every_feature(v);
        let mut params = build_model(&c, 1).unwrap();
        for t in params.tensors.values_mut() {
            *t = Tensor::zeros(t.dims());
        }
        let p = eval_prob(&random_sample(&c, 2), &params, &c);
        assert_eq!(p, 0.5);
    }
}

#[test]
fn evaluation_is_bitwise_deterministic() {
    for v in [Variant::Alpha, Variant::Beta] {
        let c = ModelConfig::desk(v);
        let params = build_model(&c, 5).unwrap();
        let s = random_sample(&c, 6);
        let a = forward(&s, &params, &c, false, &mut seeded(1)).unwrap();
        let b = forward(&s, &params, &c, false, &mut seeded(2)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn training_mode_applies_dropout() {
    let c = ModelConfig::tiny(Variant::Alpha);
    let params = build_model(&c, 5).unwrap();
    let s = random_sample(&c, 6);
    let eval = eval_prob(&s, &params, &c);
    let outs: Vec<f32> = (0..8)
        .map(|k| forward(&s, &params, &c, true, &mut seeded(k)).unwrap())
        .collect();
    assert!(outs.iter().any(|&p| p != eval));
    assert_eq!(forward(&s, &params, &c, true, &mut seeded(3)).unwrap(), outs[3]);
}

#[test]
fn prepared_and_raw_samples_agree() {
    let c = ModelConfig::desk(Variant::Beta);
    let params = build_model(&c, 7).unwrap();
    let s = random_sample(&c, 8);
    let prepared = c.prepare(&s).unwrap();
    assert_eq!(prepared.semantic.as_ref().unwrap().dims(), &[57, 10, 8, 8]);
    assert_eq!(prepared.local_content.as_ref().unwrap().dims(), &[3, 10, 8, 8]);
    assert_eq!(c.prepare(&prepared).unwrap(), prepared);
    assert_eq!(eval_prob(&s, &params, &c), eval_prob(&prepared, &params, &c));
}

#[test]
fn missing_and_misshapen_inputs_are_rejected() {
    let c = ModelConfig::tiny(Variant::Alpha);
    let params = build_model(&c, 0).unwrap();
    let mut s = random_sample(&c, 1);
    s.pose = None;
    assert!(matches!(
        forward(&s, &params, &c, false, &mut seeded(0)),
        Err(Error::MissingFeature("pose"))
    ));
    let mut s = random_sample(&c, 1);
    s.bbox = Some(Tensor::zeros(&[c.m + 1, 4]));
    assert!(matches!(
        forward(&s, &params, &c, false, &mut seeded(0)),
        Err(Error::DimMismatch { .. })
    ));
    // disabled features may be absent
    let mut s = random_sample(&c, 1);
    s.global_motion = None;
    s.raw_depth = None;
    assert!(forward(&s, &params, &c, false, &mut seeded(0)).is_ok());
}

#[test]
fn disabled_features_do_not_influence_the_output() {
    for v in [Variant::Alpha, Variant::Beta] {
        for off in Feature::ALL {
            let c = ModelConfig {
                features: FeatureSet::ALL.with(off, false),
                ..ModelConfig::tiny(v)
            };
            let params = build_model(&c, 11).unwrap();
            let base = random_sample(&c, 12);
            let p0 = eval_prob(&base, &params, &c);
            for seed in 0..3 {
                let mut other = base.clone();
                *other.slot(off) = random_sample(&c, 100 + seed).get(off).cloned();
                assert_eq!(eval_prob(&other, &params, &c).to_bits(), p0.to_bits(), "{off:?}");
            }
            let mut gone = base.clone();
            *gone.slot(off) = None;
            assert_eq!(eval_prob(&gone, &params, &c).to_bits(), p0.to_bits());
        }
    }
}

#[test]
fn enabled_features_do_influence_the_output() {
    let c = every_feature(Variant::Alpha);
    let params = build_model(&c, 11).unwrap();
    let base = random_sample(&c, 12);
    let p0 = eval_prob(&base, &params, &c);
    for f in Feature::ALL {
        let mut other = base.clone();
        *other.slot(f) = random_sample(&c, 99).get(f).cloned();
        assert_ne!(eval_prob(&other, &params, &c), p0, "{f:?}");
    }
}

/// Replaces every non-sentinel camera's channels of the scene rasters.
fn scramble_other_cameras(s: &Sample, c: &ModelConfig, seed: u64) -> Sample {
    let mut rng = seeded(seed);
    let mut out = s.clone();
    for f in [
        Feature::Semantic,
        Feature::CatDepth,
        Feature::GlobalMotion,
        Feature::RawDepth,
    ] {
        if let Some(t) = out.slot(f).as_mut() {
            let per = t.dims()[0] / c.cameras;
            let block = t.len() / t.dims()[0];
            for cam in (0..c.cameras).filter(|&k| k != s.sentinel) {
                for v in &mut t.data_mut()[cam * per * block..(cam + 1) * per * block] {
                    *v = rng.random_range(0.0..1.0);
                }
            }
        }
    }
    out
}

#[test]
fn zeroed_aggregation_ignores_other_cameras() {
    let c = every_feature(Variant::Beta);
    let mut params = build_model(&c, 21).unwrap();
    for sentinel in 0..3 {
        let mut s = random_sample(&c, 22);
        s.sentinel = sentinel;
        let live = eval_prob(&s, &params, &c);
        assert_ne!(eval_prob(&scramble_other_cameras(&s, &c, 5), &params, &c), live);
    }
    for (name, t) in params.tensors.iter_mut() {
        if name.ends_with(".agg") {
            *t = Tensor::zeros(t.dims());
        }
    }
    for sentinel in 0..3 {
        let mut s = random_sample(&c, 23);
        s.sentinel = sentinel;
        let p0 = eval_prob(&s, &params, &c);
        for seed in 0..3 {
            let other = scramble_other_cameras(&s, &c, seed);
            assert_eq!(eval_prob(&other, &params, &c).to_bits(), p0.to_bits());
        }
    }
}

#[test]
fn predict_examples() {
    assert_eq!(predict(0.43, 0.5), Intent::NotCross);
    assert_eq!(predict(0.5, 0.5), Intent::Cross);
    assert_eq!(predict(0.88, 0.5), Intent::Cross);
    assert_eq!(predict(0.0, 0.5), Intent::NotCross);
    assert_eq!(predict(1.0, 0.5), Intent::Cross);
}

fn model_gradcheck(config: &ModelConfig, seed: u64) -> f64 {
    let params = build_model_as::<f64>(config, seed).unwrap();
    let sample = random_sample(config, seed + 1);
    let label = sample.label as f64;
    let report = finite_diff_check(
        |g, vars| {
            let bound = BoundParams::from_vars(&params, vars);
            let out = forward_graph(g, &bound, &sample, config, true, &mut seeded(seed))?;
            g.bce(out.prob, label)
        },
        &params.to_vec(),
        &CheckOptions {
            eps: 1e-5,
            max_coords_per_param: Some(24),
            floor: 1e-6,
        },
    )
    .unwrap();
    let worst = report.worst().unwrap();
    assert!(
        report.max_rel_err() < 1e-4,
        "worst {:?} in {}",
        worst,
        params.names().nth(worst.param).unwrap()
    );
    report.max_rel_err()
}

#[test]
fn full_alpha_model_gradients() {
    for seed in 0..3 {
        model_gradcheck(&ModelConfig::tiny(Variant::Alpha), seed);
    }
    model_gradcheck(&every_feature(Variant::Alpha), 9);
}

#[test]
fn full_beta_model_gradients() {
    for seed in 0..3 {
        model_gradcheck(&ModelConfig::tiny(Variant::Beta), seed);
    }
    model_gradcheck(&every_feature(Variant::Beta), 9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn outputs_are_probabilities(seed in 0u64..1_000_000, beta in proptest::bool::ANY) {
        let c = ModelConfig::tiny(if beta { Variant::Beta } else { Variant::Alpha });
        let params = build_model(&c, seed).unwrap();
        let p = eval_prob(&random_sample(&c, seed ^ 0xAB), &params, &c);
        prop_assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn positive_output_scaling_keeps_the_decision(seed in 0u64..1_000_000, k in 0.1f32..10.0) {
        let c = ModelConfig::tiny(Variant::Alpha);
        let params = build_model(&c, seed).unwrap();
        let s = random_sample(&c, seed + 1);
        let mut scaled = params.clone();
        for name in [OUTPUT_WEIGHT, OUTPUT_BIAS] {
            let t = scaled.get_mut(name).unwrap();
            *t = t.map(|v| v * k);
        }
        let (a, b) = (eval_prob(&s, &params, &c), eval_prob(&s, &scaled, &c));
        prop_assert_eq!(predict(a as f64, 0.5), predict(b as f64, 0.5));
    }
}
