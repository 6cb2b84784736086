//! Scenario generation through feature extraction, training and evaluation
//! using only the public API.

use pipnet_core::features::{Feature, FeatureSet, Sample};
use pipnet_core::model::{ModelConfig, Variant};
use pipnet_core::synth::{generate_scenario, GenConfig};
use pipnet_core::train::{evaluate, TrainConfig, Trainer};

fn samples(model: &ModelConfig, seed: u64, n: u64) -> Vec<Sample> {
    let cfg = GenConfig::default();
    let layout = cfg.layout().unwrap();
    let spec = model.sample_spec();
    (0..n)
        .map(|i| {
            let sc = generate_scenario(seed, i, &cfg).unwrap();
            let s = sc.sample(&cfg, &layout, &spec, sc.sample_frame).unwrap();
            model.prepare(&s).unwrap()
        })
        .collect()
}

fn kinematic_model() -> ModelConfig {
    let features = FeatureSet {
        bbox: true,
        pose: true,
        speed: true,
        ..FeatureSet::default()
    };
    ModelConfig {
        features,
        ..ModelConfig::desk(Variant::Alpha)
    }
}

#[test]
fn samples_carry_exactly_the_requested_inputs() {
    let model = kinematic_model();
    for s in samples(&model, 1, 5) {
        for f in Feature::ALL {
            assert_eq!(s.get(f).is_some(), model.features.get(f), "{f:?}");
            if let Some(t) = s.get(f) {
                assert_eq!(t.dims(), model.input_dims(f).as_slice());
                assert!(t.all_finite());
            }
        }
    }
}

#[test]
fn kinematic_model_learns_the_synthetic_rule() {
    let model = kinematic_model();
    let train = samples(&model, 2, 240);
    let val = samples(&model, 3, 80);
    let cfg = TrainConfig {
        epochs: 15,
        seed: 4,
        ..TrainConfig::desk(Variant::Alpha)
    };
    let mut t = Trainer::new(model.clone(), cfg).unwrap();
    let before = evaluate(&t.params, &model, &val).unwrap().loss;
    t.fit(&train, Some(&val)).unwrap();
    let ev = evaluate(t.best_params(), &model, &val).unwrap();
    let report = ev.report(0.5).unwrap();
    assert!(ev.loss < before, "loss {before} -> {}", ev.loss);
    assert!(report.auc.unwrap() > 0.85, "{report:?}");
}

#[test]
fn generation_is_reproducible_across_calls() {
    let model = ModelConfig::desk(Variant::Alpha);
    let a = samples(&model, 9, 3);
    let b = samples(&model, 9, 3);
    assert_eq!(a, b);
}
