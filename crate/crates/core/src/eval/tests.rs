use super::*;
use crate::model::{build_model, Variant};
use crate::rng::seeded;
use crate::synth::{generate_scenario, GenConfig};
use crate::tensor::Tensor;
use rand::Rng as _;

/// (id, GM, LM, MD, CD), one row per variant in display order.
const TABLE: [(&str, bool, bool, bool, bool); 7] = [
    ("α⁰", false, false, false, false),
    ("α¹", true, false, false, false),
    ("α²", false, true, false, false),
    ("α³", false, false, true, false),
    ("α⁴", false, false, false, true),
    ("α⁵", true, false, true, false),
    ("α", false, true, false, true),
];

#[test]
fn variant_toggles_match_the_literal_table() {
    assert_eq!(ABLATION_VARIANTS.len(), TABLE.len());
    for (v, (label, gm, lm, md, cd)) in ABLATION_VARIANTS.iter().zip(TABLE) {
        assert_eq!((v.label, v.gm, v.lm, v.md, v.cd), (label, gm, lm, md, cd));
        assert_eq!(AblationVariant::by_name(v.id).unwrap(), *v);
        assert_eq!(AblationVariant::by_name(label).unwrap(), *v);
        let f = v.features();
        assert_eq!(
            (f.global_motion, f.local_motion, f.raw_depth, f.cat_depth),
            (gm, lm, md, cd)
        );
        assert!(f.bbox && f.pose && f.speed && f.local_content && f.semantic);
    }
    assert_eq!(
        AblationVariant::by_name("alpha0").unwrap().features(),
        FeatureSet::BASELINE
    );
    assert!(matches!(AblationVariant::by_name("alpha9"), Err(Error::BadVariant(_))));
}

#[test]
fn observation_times() {
    assert!((observation_time(10, 2, 30.0) - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(observation_time(15, 1, 30.0), 0.5);
}

#[test]
fn decisive_moment_arithmetic() {
    assert_eq!(decisive_moment(Some(300), 400, 2.0, 30.0), 240);
    assert_eq!(decisive_moment(None, 400, 2.0, 30.0), 340);
    assert_eq!(decisive_moment(Some(100), 100, 0.5, 30.0), 85);
}

#[test]
fn half_second_window_spans_fifteen_frames() {
    let cfg = GenConfig::default();
    let layout = cfg.layout().unwrap();
    let sc = generate_scenario(1, 0, &cfg).unwrap();
    let spec = crate::features::SampleSpec {
        m: 15,
        stride: 1,
        crop_side: 8,
        raster: 8,
        crop_scale: None,
        features: FeatureSet {
            bbox: true,
            ..FeatureSet::default()
        },
    };
    // the track starts at frame 0, so [t-14, t] fits exactly when t = 14
    assert!(sc.sample(&cfg, &layout, &spec, 14).is_ok());
    assert!(matches!(
        sc.sample(&cfg, &layout, &spec, 13),
        Err(Error::InsufficientHistory { .. })
    ));
}

fn tiny() -> ModelConfig {
    ModelConfig {
        features: FeatureSet {
            bbox: true,
            speed: true,
            ..FeatureSet::default()
        },
        ..ModelConfig::tiny(Variant::Alpha)
    }
}

fn samples(config: &ModelConfig, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|i| {
            let mut s = Sample {
                label: (i % 2) as u8,
                ..Sample::default()
            };
            for f in Feature::ALL {
                let dims = config.input_dims(f);
                *s.slot(f) = Some(Tensor::from_fn(&dims, |_| rng.random_range(0.0..1.0)));
            }
            s
        })
        .collect()
}

#[test]
fn etc_skips_short_tracks_and_counts_them() {
    let config = tiny();
    let params = build_model(&config, 0).unwrap();
    let pool = samples(&config, 6, 0);
    let anchors = [(Some(100), 100), (None, 50), (Some(70), 70), (None, 200)];
    let mut seen = Vec::new();
    let report = etc_evaluate(&params, &config, &anchors, 2.0, 30.0, 0.5, |i, t| {
        seen.push(t);
        if t < 20 {
            Err(Error::InsufficientHistory { needed: 20, first: 0 })
        } else {
            Ok(pool[i].clone())
        }
    })
    .unwrap();
    assert_eq!(seen, [40, -10, 10, 140]);
    assert_eq!((report.evaluated, report.skipped), (2, 2));
    assert_eq!(report.metrics.unwrap().n, 2);
    let none = etc_evaluate(&params, &config, &anchors[1..2], 2.0, 30.0, 0.5, |_, _| {
        Err(Error::InsufficientHistory { needed: 1, first: 0 })
    })
    .unwrap();
    assert_eq!(none.metrics, None);
}

#[test]
fn permutation_probe_properties() {
    let config = tiny();
    let params = build_model(&config, 1).unwrap();
    let data = samples(&config, 40, 1);
    let disabled = permutation_importance(&params, &config, &data, "local_content", 5, 0.5).unwrap();
    assert_eq!(disabled.delta_acc, 0.0);
    assert_eq!(disabled.delta_auc, Some(0.0));
    let a = permutation_importance(&params, &config, &data, "speed", 5, 0.5).unwrap();
    let b = permutation_importance(&params, &config, &data, "speed", 5, 0.5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.baseline, a.permuted);
    assert!(matches!(
        permutation_importance(&params, &config, &data, "colour", 5, 0.5),
        Err(Error::UnknownFeature(_))
    ));
}
