use super::*;
use crate::features::{Feature, FeatureSet};
use crate::rng::seeded;
use proptest::prelude::*;
use rand::Rng as _;

fn kinematic_config() -> ModelConfig {
    ModelConfig {
        features: FeatureSet {
            bbox: true,
            speed: true,
            ..FeatureSet::default()
        },
        dropout: 0.0,
        ..ModelConfig::tiny(Variant::Alpha)
    }
}

/// Label-dependent box offset plus noise; linearly separable.
fn separable(config: &ModelConfig, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let shift = if label == 1 { 0.7 } else { 0.3 };
            let mut s = Sample {
                label,
                ..Sample::default()
            };
            for f in [Feature::Bbox, Feature::Speed] {
                let dims = config.input_dims(f);
                *s.slot(f) = Some(Tensor::from_fn(&dims, |_| shift + rng.random_range(-0.1..0.1)));
            }
            s
        })
        .collect()
}

fn trainer(config: ModelConfig, lr: f64, seed: u64) -> Trainer {
    let train = TrainConfig {
        lr,
        seed,
        ..TrainConfig::desk(Variant::Alpha)
    };
    Trainer::new(config, train).unwrap()
}

#[test]
fn full_preset_schedules() {
    let a = TrainConfig::full(Variant::Alpha);
    assert_eq!((a.lr, a.batch_size, a.epochs), (5e-5, 10, 300));
    let b = TrainConfig::full(Variant::Beta);
    assert_eq!((b.lr, b.batch_size, b.epochs), (4e-5, 6, 400));
    assert_eq!((a.rho, a.eps, a.l2), (0.9, 1e-8, 1e-4));
    assert!(matches!(
        TrainConfig { batch_size: 0, ..a }.validate(),
        Err(Error::BadConfig(_))
    ));
}

#[test]
fn bce_examples() {
    let (l, d) = bce_loss(0.5, 1.0);
    assert!((l - core::f64::consts::LN_2).abs() < 1e-15);
    assert!((d + 2.0).abs() < 1e-12);
    let (l, _) = bce_loss(0.0, 1.0);
    assert!((l + (1e-7f64).ln()).abs() < 1e-9);
    let (l, _) = bce_loss(1.0, 0.0);
    assert!(l.is_finite() && l > 16.0);
}

#[test]
fn graph_bce_matches_scalar_oracle() {
    let mut rng = seeded(1);
    for _ in 0..200 {
        let p: f64 = rng.random_range(1e-4..1.0 - 1e-4);
        let y = rng.random_range(0..2) as f64;
        let mut g = Graph::<f64>::new();
        let v = g.param(Tensor::scalar(p));
        let l = g.bce(v, y).unwrap();
        let grads = g.backward(l).unwrap();
        let (want, dwant) = bce_loss(p, y);
        assert!((g.value(l).data()[0] - want).abs() <= 1e-12);
        assert!((grads.wrt(v).data()[0] - dwant).abs() <= 1e-12 * dwant.abs().max(1.0));
    }
}

#[test]
fn l2_example() {
    let w = Tensor::<f64>::scalar(2.0);
    let (pen, grad) = l2_penalty(&w, 1e-4);
    assert!((pen - 4e-4).abs() < 1e-18);
    assert!((grad.data()[0] - 4e-4).abs() < 1e-18);
}

fn one_param(w: f64) -> ModelParams<f64> {
    ModelParams {
        tensors: [("w".into(), Tensor::scalar(w))].into_iter().collect(),
    }
}

#[test]
fn rmsprop_first_step() {
    let mut p = one_param(0.0);
    let mut st = OptimState::default();
    let grads = [("w".into(), Tensor::scalar(1.0))].into_iter().collect();
    rmsprop_step(&mut p, &grads, &mut st, 1e-3, 0.9, 1e-8).unwrap();
    assert!((st.v["w"].data()[0] - 0.1).abs() < 1e-15);
    let step = -p.get("w").unwrap().data()[0];
    assert!((step - 3.162e-3).abs() < 1e-6, "{step}");
    assert_eq!(st.steps, 1);
}

#[test]
fn zero_gradient_only_decays_the_average() {
    let mut p = one_param(0.7);
    let mut st = OptimState::default();
    st.v.insert("w".into(), Tensor::scalar(0.5));
    let grads = [("w".into(), Tensor::scalar(0.0))].into_iter().collect();
    rmsprop_step(&mut p, &grads, &mut st, 1e-2, 0.9, 1e-8).unwrap();
    assert_eq!(p.get("w").unwrap().data()[0], 0.7);
    assert!((st.v["w"].data()[0] - 0.45).abs() < 1e-15);
}

#[test]
fn unknown_gradient_name_is_rejected() {
    let mut p = one_param(0.0);
    let grads = [("nope".into(), Tensor::scalar(1.0))].into_iter().collect();
    assert!(matches!(
        rmsprop_step(&mut p, &grads, &mut OptimState::default(), 1e-3, 0.9, 1e-8),
        Err(Error::UnknownParam(_))
    ));
}

proptest! {
    #[test]
    fn rmsprop_matches_scalar_recurrence(
        w0 in -2.0f64..2.0,
        gs in proptest::collection::vec(-3.0f64..3.0, 1..20),
        lr in 1e-5f64..1e-1,
    ) {
        let mut p = one_param(w0);
        let mut st = OptimState::default();
        let (mut w, mut v) = (w0, 0.0);
        for &g in &gs {
            let grads = [("w".into(), Tensor::scalar(g))].into_iter().collect();
            rmsprop_step(&mut p, &grads, &mut st, lr, 0.9, 1e-8).unwrap();
            v = 0.9 * v + 0.1 * g * g;
            w -= lr * g / (v.sqrt() + 1e-8);
        }
        prop_assert!((p.get("w").unwrap().data()[0] - w).abs() <= 1e-12);
    }
}

#[test]
fn penalty_alone_shrinks_output_weights_monotonically() {
    let config = kinematic_config();
    let mut params = build_model(&config, 3).unwrap();
    let mut st = OptimState::default();
    let mut prev = params.get(OUTPUT_WEIGHT).unwrap().clone();
    for _ in 0..50 {
        let (_, grad) = l2_penalty(params.get(OUTPUT_WEIGHT).unwrap(), 1e-4);
        let grads = [(OUTPUT_WEIGHT.into(), grad)].into_iter().collect();
        rmsprop_step(&mut params, &grads, &mut st, 1e-3, 0.9, 1e-8).unwrap();
        let now = params.get(OUTPUT_WEIGHT).unwrap().clone();
        for (a, b) in now.data().iter().zip(prev.data()) {
            assert!(a.abs() <= b.abs());
        }
        prev = now;
    }
}

#[test]
fn penalty_enters_the_batch_gradient() {
    let config = kinematic_config();
    let data = separable(&config, 4, 0);
    let batch: Vec<&Sample> = data.iter().collect();
    let params = build_model(&config, 0).unwrap();
    let (l0, g0) = batch_gradients(&params, &config, &batch, 0.0, false, &mut seeded(0)).unwrap();
    let (l1, g1) = batch_gradients(&params, &config, &batch, 0.5, false, &mut seeded(0)).unwrap();
    let w = params.get(OUTPUT_WEIGHT).unwrap();
    let sq: f64 = w.data().iter().map(|v| (*v as f64).powi(2)).sum();
    assert!((l1 - l0 - 0.5 * sq).abs() < 1e-5);
    for ((a, b), wi) in g1[OUTPUT_WEIGHT]
        .data()
        .iter()
        .zip(g0[OUTPUT_WEIGHT].data())
        .zip(w.data())
    {
        assert!((a - b - wi).abs() < 1e-5);
    }
    for name in params.names().filter(|n| *n != OUTPUT_WEIGHT) {
        assert_eq!(g0[name], g1[name]);
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_identical() {
    let config = kinematic_config();
    let data = separable(&config, 20, 1);
    let mut t = trainer(config, 0.0, 1);
    let before = t.params.clone();
    t.run_epoch(&data, Some(&data)).unwrap();
    assert_eq!(t.params, before);
}

#[test]
fn separable_data_is_learned() {
    let config = kinematic_config();
    let data = separable(&config, 200, 2);
    let mut t = trainer(config, 1e-2, 2);
    let mut acc = 0.0;
    for _ in 0..50 {
        t.run_epoch(&data, None).unwrap();
        acc = evaluate(&t.params, &t.model, &data).unwrap().report(0.5).unwrap().acc;
        if acc >= 0.95 {
            break;
        }
    }
    assert!(acc >= 0.95, "train accuracy {acc}");
}

#[test]
fn early_steps_reduce_the_loss() {
    let config = ModelConfig {
        dropout: 0.0,
        ..ModelConfig::tiny(Variant::Alpha)
    };
    let mut improved = 0;
    for seed in 0..10 {
        let mut data = separable(&kinematic_config(), 10, 100 + seed);
        let mut rng = seeded(seed);
        for s in &mut data {
            let missing: Vec<Feature> = Feature::ALL
                .into_iter()
                .filter(|&f| config.features.get(f) && s.get(f).is_none())
                .collect();
            for f in missing {
                let dims = config.input_dims(f);
                *s.slot(f) = Some(Tensor::from_fn(&dims, |_| rng.random_range(0.0..1.0)));
            }
        }
        let batch: Vec<&Sample> = data.iter().collect();
        let mut t = trainer(config.clone(), 1e-4, seed);
        let start = evaluate(&t.params, &config, &data).unwrap().loss;
        for _ in 0..5 {
            t.step(&batch).unwrap();
        }
        let end = evaluate(&t.params, &config, &data).unwrap().loss;
        improved += usize::from(end < start);
    }
    assert!(improved >= 9, "{improved}/10");
}

#[test]
fn resuming_from_captured_state_is_bitwise_identical() {
    let config = ModelConfig {
        dropout: 0.3,
        ..kinematic_config()
    };
    let data = separable(&config, 30, 4);
    let val = separable(&config, 10, 5);
    let mut straight = trainer(config.clone(), 1e-3, 4);
    straight.train.batch_size = 7;
    let mut first = straight.clone();
    for _ in 0..3 {
        straight.run_epoch(&data, Some(&val)).unwrap();
    }
    first.run_epoch(&data, Some(&val)).unwrap();
    let mut resumed = Trainer::with_params(first.model.clone(), first.train.clone(), first.params.clone()).unwrap();
    resumed.optim = first.optim.clone();
    resumed.rng = first.rng_state().restore().unwrap();
    resumed.epoch = first.epoch;
    resumed.history = first.history.clone();
    resumed.best = first.best.clone();
    for _ in 0..2 {
        resumed.run_epoch(&data, Some(&val)).unwrap();
    }
    assert_eq!(resumed.params, straight.params);
    assert_eq!(resumed.optim, straight.optim);
    assert_eq!(resumed.history, straight.history);
    assert_eq!(resumed.best, straight.best);
}

#[test]
fn best_snapshot_tracks_lowest_validation_loss() {
    let config = kinematic_config();
    let data = separable(&config, 20, 6);
    let mut t = trainer(config, 3e-2, 6);
    t.train.epochs = 6;
    t.fit(&data, Some(&data)).unwrap();
    assert_eq!(t.history.len(), 6);
    let best = t.best.as_ref().unwrap();
    let min = t
        .history
        .iter()
        .map(|h| h.val_loss.unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(best.val_loss, min);
    assert_eq!(t.history[best.epoch].val_loss, Some(min));
    assert!(t.history.iter().all(|h| h.train_loss.is_finite()));
}

#[test]
fn diverged_and_empty_inputs_are_reported() {
    let config = kinematic_config();
    let data = separable(&config, 12, 7);
    let mut t = trainer(config, 1e-3, 7);
    t.train.batch_size = 5;
    assert!(matches!(t.run_epoch(&[], None), Err(Error::EmptyDataset)));
    for v in t.params.get_mut(OUTPUT_WEIGHT).unwrap().data_mut() {
        *v = f32::NAN;
    }
    match t.run_epoch(&data, None) {
        Err(Error::DivergedLoss { epoch, batch, value }) => {
            assert_eq!((epoch, batch), (0, 0));
            assert!(!value.is_finite());
        }
        other => panic!("{other:?}"),
    }
}
