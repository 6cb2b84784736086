#![allow(clippy::needless_range_loop)]

use super::*;
use crate::multicam::make_layout;
use crate::rng::seeded;
use proptest::prelude::*;
use rand::Rng;

fn track(first: i64, n: usize) -> PedestrianTrack {
    PedestrianTrack {
        ped_id: 7,
        frames: (0..n as i64)
            .map(|i| {
                let f = first + i;
                let x = 10.0 + f as f32;
                let mut pose = vec![0.0; POSE_LEN];
                pose[0] = x;
                pose[1] = 20.0;
                TrackFrame {
                    frame: f,
                    bbox: [x, 10.0, x + 10.0, 40.0],
                    pose,
                    camera: 0,
                    visible: true,
                }
            })
            .collect(),
        label: 1,
        crossing_frame: Some(first + n as i64),
    }
}

#[test]
fn window_examples() {
    assert_eq!(window_frames(10, 3, 2), vec![6, 8, 10]);
    assert_eq!(window_frames(10, 1, 4), vec![10]);
    let w = window_frames(100, 15, 1);
    assert_eq!((w[0], w[14], w.len()), (86, 100, 15));
    assert_eq!(15.0 / 30.0, 0.5);
}

#[test]
fn kinematic_sequence_samples_strided_frames() {
    let tr = track(0, 30);
    let speeds: Vec<f32> = (0..30).map(|i| i as f32).collect();
    let k = assemble_kinematic_seq(&tr, &speeds, 10, 3, 2, (100, 50)).unwrap();
    assert_eq!(k.speed.data(), &[6.0, 8.0, 10.0]);
    assert_eq!(k.bbox.dims(), &[3, 4]);
    assert!((k.bbox.at(&[2, 0]) - 0.20).abs() < 1e-6);
    assert!((k.bbox.at(&[2, 1]) - 0.20).abs() < 1e-6);
    assert_eq!(k.pose.at(&[0, 2]), 0.0);
    assert!((k.pose.at(&[0, 1]) - 0.4).abs() < 1e-6);

    assert!(matches!(
        assemble_kinematic_seq(&track(5, 20), &speeds, 8, 3, 2, (100, 50)),
        Err(Error::InsufficientHistory { needed: 4, first: 5 })
    ));
}

#[test]
fn crop_examples() {
    let mut rng = seeded(1);
    let frame = Tensor::<f32>::from_fn(&[3, 6, 8], |_| rng.random());
    let whole = crop_local_content(&frame, [0.0, 0.0, 8.0, 6.0], 4).unwrap();
    assert_eq!(whole.dims(), &[3, 4, 4]);

    let flat = Tensor::<f32>::full(&[3, 10, 10], 0.3);
    let c = crop_local_content(&flat, [2.5, 1.0, 7.0, 9.0], 5).unwrap();
    assert!(c.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));

    // 2x2 source upsampled to 4x4: sample points at -0.25, 0.25, 0.75, 1.25
    let src = Tensor::<f32>::new(&[1, 2, 2], vec![0.0, 4.0, 8.0, 12.0]).unwrap();
    let up = crop_bilinear(&src, [0.0, 0.0, 2.0, 2.0], 4).unwrap();
    let row = [0.0f32, 1.0, 3.0, 4.0];
    for i in 0..4 {
        let ry = [0.0f32, 0.25, 0.75, 1.0][i];
        for j in 0..4 {
            let want = row[j] + 8.0 * ry;
            assert!((up.at(&[0, i, j]) - want).abs() < 1e-6, "{i},{j}");
        }
    }

    // a box hanging off the canvas reads zeros outside
    let off = crop_bilinear(&Tensor::full(&[1, 4, 4], 1.0), [2.0, 0.0, 6.0, 4.0], 4).unwrap();
    assert_eq!(off.at(&[0, 0, 0]), 1.0);
    assert_eq!(off.at(&[0, 0, 3]), 0.0);

    assert!(matches!(
        crop_local_content(&flat, [3.0, 1.0, 3.0, 5.0], 4),
        Err(Error::DegenerateBox(_))
    ));
}

#[test]
fn motion_crop_examples() {
    let zero = Tensor::<f32>::zeros(&[2, 8, 8]);
    let c = crop_local_motion(&zero, [1.0, 1.0, 5.0, 6.0], 4).unwrap();
    assert!(c.data().iter().all(|&v| v == 0.0));

    let mut uniform = Tensor::<f32>::zeros(&[2, 8, 8]);
    uniform.data_mut()[..64].fill(1.5);
    uniform.data_mut()[64..].fill(-0.5);
    let c = crop_local_motion(&uniform, [1.0, 1.0, 5.0, 6.0], 4).unwrap();
    assert!(c.data()[..16].iter().all(|&v| v == 1.5));
    assert!(c.data()[16..].iter().all(|&v| v == -0.5));
}

fn rect(class: u32, id: u32, w: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Instance {
    let mut pixels = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            pixels.push((y * w + x) as u32);
        }
    }
    Instance { class, id, pixels }
}

#[test]
fn semantic_examples() {
    let empty = build_semantic_context(&[], 8, 8, 4, 4).unwrap();
    assert_eq!(empty.dims(), &[19, 4, 4]);
    assert_eq!(empty.sum(), 0.0);

    let road = build_semantic_context(&[rect(class::ROAD, 1, 8, 0, 0, 8, 8)], 8, 8, 4, 4).unwrap();
    assert!(road.data()[..16].iter().all(|&v| v == 1.0));
    assert_eq!(road.sum(), 16.0);

    // one column of a 2x2 block covered -> half
    let half = build_semantic_context(&[rect(class::PERSON, 2, 4, 0, 0, 1, 2)], 4, 4, 2, 2).unwrap();
    assert_eq!(half.at(&[class::PERSON as usize, 0, 0]), 0.5);
    assert_eq!(half.at(&[class::PERSON as usize, 1, 0]), 0.0);

    let bad = Instance {
        class: 19,
        id: 1,
        pixels: vec![0],
    };
    assert!(matches!(
        build_semantic_context(&[bad], 4, 4, 2, 2),
        Err(Error::UnknownClass(19))
    ));
}

#[test]
fn area_resample_handles_fractional_ratios() {
    let src: Vec<f32> = (0..9).map(|i| i as f32).collect();
    let out = area_resample(&src, 1, 3, 3, 2, 2);
    // cell (0,0) covers source rows/cols [0,1.5)
    let want = (0.0 + 1.0 * 0.5 + 3.0 * 0.5 + 4.0 * 0.25) / 2.25;
    assert!((out[0] - want).abs() < 1e-6);
    let total: f32 = out.iter().sum::<f32>() * 2.25;
    assert!((total - 36.0).abs() < 1e-4);
}

#[test]
fn categorical_depth_examples() {
    let mut depth = Tensor::<f32>::zeros(&[1, 3]);
    depth.data_mut().copy_from_slice(&[0.2, 0.4, 0.6]);
    let ped = Instance {
        class: class::PERSON,
        id: 1,
        pixels: vec![0, 1, 2],
    };
    let cd = build_categorical_depth(&depth, &[ped]).unwrap();
    assert!(cd.data()[..3].iter().all(|&v| (v - 0.4).abs() < 1e-7));
    assert!(cd.data()[3..].iter().all(|&v| v == 0.0));

    let road = rect(class::ROAD, 2, 3, 0, 0, 3, 1);
    assert_eq!(build_categorical_depth(&depth, &[road]).unwrap().sum(), 0.0);

    let empty = Instance {
        class: class::CAR,
        id: 9,
        pixels: vec![],
    };
    assert!(matches!(
        build_categorical_depth(&depth, &[empty]),
        Err(Error::EmptyMask(9))
    ));

    let mut d = Tensor::<f32>::zeros(&[4, 4]);
    let a = rect(class::PERSON, 1, 4, 0, 0, 2, 2);
    let b = rect(class::BUS, 2, 4, 2, 2, 4, 4);
    for (inst, v) in [(&a, 0.3f32), (&b, 0.9)] {
        for &p in &inst.pixels {
            d.data_mut()[p as usize] = v;
        }
    }
    let cd = build_categorical_depth(&d, &[a.clone(), b.clone()]).unwrap();
    for &p in &a.pixels {
        assert_eq!(cd.data()[p as usize], 0.3);
        assert_eq!(cd.data()[16 + p as usize], 0.0);
    }
    for &p in &b.pixels {
        assert_eq!(cd.data()[16 + p as usize], 0.9);
        assert_eq!(cd.data()[p as usize], 0.0);
    }
}

#[test]
fn feature_names_round_trip() {
    for f in Feature::ALL {
        assert_eq!(f.name().parse::<Feature>().unwrap(), f);
    }
    assert!(matches!("wings".parse::<Feature>(), Err(Error::UnknownFeature(_))));
    assert_eq!(FeatureSet::BASELINE.enabled().count(), 5);
}

#[test]
fn build_sample_stacks_cameras_on_channels() {
    let layout = make_layout(3, 8, 6, 0.25).unwrap();
    let mut tr = track(0, 12);
    for f in &mut tr.frames {
        f.bbox = [2.0, 1.0, 6.0, 5.0];
    }
    let speeds = vec![20.0f32; 12];
    let spec = SampleSpec {
        m: 3,
        stride: 2,
        crop_side: 4,
        crop_scale: None,
        raster: 3,
        features: FeatureSet::ALL,
    };
    let frame = |f: i64| -> Result<Vec<FrameContext>> {
        Ok((0..3)
            .map(|cam| FrameContext {
                width: 8,
                height: 6,
                rgb: Tensor::full(&[3, 6, 8], 0.1 * cam as f32),
                depth: Tensor::full(&[6, 8], 0.5),
                instances: vec![rect(class::PERSON, 1, 8, 0, 0, 2, 3)],
                flow: Tensor::full(&[2, 6, 8], f as f32),
            })
            .collect())
    };
    let s = build_sample(&tr, &speeds, 10, &layout, &spec, frame).unwrap();
    assert_eq!(s.semantic.as_ref().unwrap().dims(), &[57, 3, 3, 3]);
    assert_eq!(s.cat_depth.as_ref().unwrap().dims(), &[6, 3, 3, 3]);
    assert_eq!(s.raw_depth.as_ref().unwrap().dims(), &[3, 3, 3, 3]);
    assert_eq!(s.local_content.as_ref().unwrap().dims(), &[3, 3, 4, 4]);
    let gm = s.global_motion.as_ref().unwrap();
    // time axis follows the window frames 6, 8, 10
    assert_eq!(gm.at(&[0, 0, 1, 1]), 6.0);
    assert_eq!(gm.at(&[5, 2, 1, 1]), 10.0);
    let lm = s.local_motion.as_ref().unwrap();
    assert_eq!(lm.at(&[1, 1, 2, 2]), 8.0);
    assert_eq!(s.label, 1);

    let only_kin = SampleSpec {
        features: FeatureSet::BASELINE
            .with(Feature::LocalContent, false)
            .with(Feature::Semantic, false),
        ..spec
    };
    let s = build_sample(&tr, &speeds, 10, &layout, &only_kin, |_| Err(Error::EmptyDataset)).unwrap();
    assert!(s.semantic.is_none() && s.bbox.is_some());
}

fn random_scene(seed: u64) -> (Tensor<f32>, Vec<Instance>) {
    let mut rng = seeded(seed);
    let (w, h) = (rng.random_range(2..12usize), rng.random_range(2..12usize));
    let depth = Tensor::from_fn(&[h, w], |_| rng.random::<f32>());
    let mut owner = vec![false; w * h];
    let mut instances = Vec::new();
    for id in 1..rng.random_range(1..6u32) {
        let class = [class::PERSON, class::CAR, class::ROAD, class::BUS, class::SKY][rng.random_range(0..5)];
        let pixels: Vec<u32> = (0..w * h)
            .filter(|&p| !owner[p] && rng.random_bool(0.3))
            .map(|p| p as u32)
            .collect();
        if pixels.is_empty() {
            continue;
        }
        for &p in &pixels {
            owner[p as usize] = true;
        }
        instances.push(Instance { class, id, pixels });
    }
    (depth, instances)
}

proptest! {
    #[test]
    fn categorical_depth_invariants(seed in 0u64..100_000) {
        let (depth, instances) = random_scene(seed);
        let &[h, w] = depth.dims() else { unreachable!() };
        let cd = build_categorical_depth(&depth, &instances).unwrap();
        let mut covered = vec![false; h * w];
        let mut means = Vec::new();
        for inst in &instances {
            let vals: Vec<f64> = inst.pixels.iter().map(|&p| depth.data()[p as usize] as f64).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            if let Some(ch) = depth_category(inst.class) {
                let first = cd.data()[ch * h * w + inst.pixels[0] as usize];
                for &p in &inst.pixels {
                    prop_assert_eq!(cd.data()[ch * h * w + p as usize], first);
                    prop_assert_eq!(cd.data()[(1 - ch) * h * w + p as usize], 0.0);
                    covered[p as usize] = true;
                }
                means.push((mean, first));
            }
        }
        for p in 0..h * w {
            if !covered[p] {
                prop_assert_eq!(cd.data()[p], 0.0);
                prop_assert_eq!(cd.data()[h * w + p], 0.0);
            }
        }
        for a in &means {
            for b in &means {
                if a.0 > b.0 {
                    prop_assert!(a.1 >= b.1);
                }
            }
        }
    }

    #[test]
    fn kinematic_window_length_is_m(m in 1usize..20, s in 1usize..5, extra in 0i64..10) {
        let t = ((m - 1) * s) as i64 + extra;
        let tr = track(0, t as usize + 1);
        let speeds: Vec<f32> = (0..=t).map(|i| i as f32).collect();
        let k = assemble_kinematic_seq(&tr, &speeds, t, m, s, (200, 100)).unwrap();
        prop_assert_eq!(k.speed.dims(), &[m, 1]);
        prop_assert_eq!(k.speed.data()[m - 1], t as f32);
        prop_assert!(k.bbox.data().iter().chain(k.pose.data()).all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn bbox_normalisation_round_trips(x1 in 0.0f32..500.0, y1 in 0.0f32..300.0, dw in 1.0f32..100.0, dh in 1.0f32..100.0) {
        let b = [x1, y1, x1 + dw, y1 + dh];
        let back = denormalize_bbox(normalize_bbox(b, 640.0, 400.0), 640.0, 400.0);
        for i in 0..4 {
            prop_assert!((back[i] - b[i]).abs() <= 1e-6 * b[i].abs().max(1.0) * 64.0);
        }
    }
}
