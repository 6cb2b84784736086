#![allow(clippy::needless_range_loop)]

use super::*;
use crate::rng::seeded;
use alloc::vec;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn layout_examples() {
    let one = make_layout(1, 100, 50, 0.1).unwrap();
    assert_eq!(one.stitched_width, 100);
    assert_eq!(one.kept[0].offset, 0);

    let three = make_layout(3, 100, 50, 0.10).unwrap();
    let widths: Vec<usize> = three.kept.iter().map(|k| k.width).collect();
    let offsets: Vec<usize> = three.kept.iter().map(|k| k.offset).collect();
    assert_eq!(widths, vec![90, 100, 90]);
    assert_eq!(offsets, vec![0, 90, 190]);
    assert_eq!(three.stitched_width, 280);
    assert_eq!(three.kept[2].crop_left, 10);
    assert_eq!(three.front(), 1);

    let flat = make_layout(3, 100, 50, 0.0).unwrap();
    assert_eq!(flat.stitched_width, 300);
    assert!(flat.kept.iter().all(|k| k.width == 100));
}

#[test]
fn layout_rejects_bad_config() {
    assert!(matches!(make_layout(2, 100, 50, 0.1), Err(Error::BadConfig(_))));
    assert!(matches!(make_layout(3, 100, 50, 0.5), Err(Error::BadConfig(_))));
    assert!(matches!(make_layout(3, 100, 50, -0.1), Err(Error::BadConfig(_))));
}

#[test]
fn stitch_examples() {
    let layout = make_layout(3, 10, 2, 0.2).unwrap();
    let maps: Vec<Tensor<f64>> = (0..3).map(|c| Tensor::full(&[1, 2, 10], c as f64 + 1.0)).collect();
    let pano = stitch(&maps, &layout).unwrap();
    assert_eq!(pano.dims(), &[1, 2, 26]);
    let row: Vec<f64> = pano.data()[..26].to_vec();
    let mut want = vec![1.0; 8];
    want.extend(vec![2.0; 10]);
    want.extend(vec![3.0; 8]);
    assert_eq!(row, want);

    let single = make_layout(1, 4, 3, 0.1).unwrap();
    let m = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
    assert_eq!(stitch(core::slice::from_ref(&m), &single).unwrap(), m);

    let mut rng = seeded(3);
    let maps: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::from_fn(&[2, 2, 10], |_| rng.random())).collect();
    let pano = stitch(&maps, &layout).unwrap();
    for c in 0..2 {
        for y in 0..2 {
            for x in 0..10 {
                assert_eq!(pano.at(&[c, y, 8 + x]), maps[1].at(&[c, y, x]));
            }
        }
    }
    assert!(stitch(&maps[..2], &layout).is_err());
}

#[test]
fn shift_examples() {
    let layout = make_layout(3, 100, 50, 0.10).unwrap();
    assert_eq!(shift_x(20.0, 0, &layout, ShiftDirection::ToGlobal).unwrap(), 20.0);
    assert_eq!(shift_x(50.0, 1, &layout, ShiftDirection::ToGlobal).unwrap(), 140.0);
    assert_eq!(shift_x(10.0, 2, &layout, ShiftDirection::ToGlobal).unwrap(), 190.0);
    assert_eq!(shift_x(140.0, 1, &layout, ShiftDirection::ToLocal).unwrap(), 50.0);
    assert!(matches!(
        shift_x(95.0, 0, &layout, ShiftDirection::ToGlobal),
        Err(Error::OutOfKeptRange { camera: 0, .. })
    ));
    assert!(matches!(
        shift_x(5.0, 2, &layout, ShiftDirection::ToGlobal),
        Err(Error::OutOfKeptRange { camera: 2, .. })
    ));
    assert!(matches!(
        shift_x(5.0, 3, &layout, ShiftDirection::ToGlobal),
        Err(Error::BadIndex { .. })
    ));
    let b = shift_bbox([40.0, 5.0, 60.0, 30.0], 1, &layout, ShiftDirection::ToGlobal).unwrap();
    assert_eq!(b, [130.0, 5.0, 150.0, 30.0]);
}

#[test]
fn camera_assignment_is_a_partition() {
    let layout = make_layout(3, 100, 50, 0.10).unwrap();
    assert_eq!(layout.camera_at(0.0), Some(0));
    assert_eq!(layout.camera_at(89.9), Some(0));
    assert_eq!(layout.camera_at(90.0), Some(1));
    assert_eq!(layout.camera_at(190.0), Some(2));
    assert_eq!(layout.camera_at(280.0), None);
    assert_eq!(layout.window_start(2), 180);
}

#[test]
fn padding_mask_examples() {
    let m: Tensor<f64> = padding_mask(3, 0, 4, 5).unwrap();
    assert!(m.data()[..20].iter().all(|&v| v == 1.0));
    assert!(m.data()[20..].iter().all(|&v| v == 0.0));
    let one: Tensor<f64> = padding_mask(1, 0, 4, 5).unwrap();
    assert!(one.data().iter().all(|&v| v == 1.0));
    for s in 0..3 {
        let m: Tensor<f64> = padding_mask(3, s, 4, 5).unwrap();
        assert_eq!(m.sum(), 20.0);
    }
    assert!(matches!(padding_mask::<f64>(3, 3, 4, 5), Err(Error::BadIndex { .. })));
}

fn run_aggregate(features: &Tensor<f64>, mask: &Tensor<f64>, weights: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let f = g.constant(features.clone());
    let m = g.constant(mask.clone());
    let w = g.constant(weights.clone());
    let out = aggregate(&mut g, f, m, w).unwrap();
    g.value(out).clone()
}

#[test]
fn aggregate_examples() {
    let mut rng = seeded(4);
    let (cams, ch, h, w) = (3, 2, 3, 4);
    let features = Tensor::<f64>::from_fn(&[cams * ch, h, w], |_| rng.random_range(-1.0..1.0));
    let mask = padding_mask(cams, 1, h, w).unwrap();
    let width = cams * ch + cams;

    let mut select = Tensor::zeros(&[ch, width]);
    for c in 0..ch {
        select.set(&[c, c], 1.0);
    }
    let out = run_aggregate(&features, &mask, &select);
    assert_eq!(out.data(), &features.data()[..ch * h * w]);

    let zero = run_aggregate(&features, &mask, &Tensor::zeros(&[ch, width]));
    assert!(zero.data().iter().all(|&v| v == 0.0));

    for _ in 0..100 {
        let weights = Tensor::<f64>::from_fn(&[ch, width], |_| rng.random_range(-1.0..1.0));
        let features = Tensor::<f64>::from_fn(&[cams * ch, h, w], |_| rng.random_range(-1.0..1.0));
        let out = run_aggregate(&features, &mask, &weights);
        for o in 0..ch {
            for p in 0..h * w {
                let mut want = 0.0;
                for i in 0..width {
                    let v = if i < cams * ch {
                        features.data()[i * h * w + p]
                    } else {
                        mask.data()[(i - cams * ch) * h * w + p]
                    };
                    want += weights.at(&[o, i]) * v;
                }
                assert!((out.data()[o * h * w + p] - want).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #[test]
    fn shift_round_trips(x in 0.0f64..100.0, cam in 0usize..3, o in 0.0f64..0.45) {
        let layout = make_layout(3, 100, 40, o).unwrap();
        let k = layout.kept[cam];
        let local = k.crop_left as f64 + x * k.width as f64 / 100.0;
        let global = shift_x(local, cam, &layout, ShiftDirection::ToGlobal).unwrap();
        prop_assert!(global >= k.offset as f64 && global <= (k.offset + k.width) as f64);
        let back = shift_x(global, cam, &layout, ShiftDirection::ToLocal).unwrap();
        prop_assert!((back - local).abs() < 1e-9);
    }

    #[test]
    fn stitched_pixels_have_one_source(w in 4usize..40, o in 0.0f64..0.45) {
        let layout = make_layout(3, w, 2, o).unwrap();
        prop_assert_eq!(layout.stitched_width, layout.kept.iter().map(|k| k.width).sum::<usize>());
        let mut covered = vec![0u8; layout.stitched_width];
        for k in &layout.kept {
            for x in k.offset..k.offset + k.width {
                covered[x] += 1;
            }
        }
        prop_assert!(covered.iter().all(|&c| c == 1));
        prop_assert_eq!(layout.kept[1].width, w);
    }

    #[test]
    fn mask_sentinels_permute_channels(a in 0usize..3, b in 0usize..3) {
        let ma: Tensor<f64> = padding_mask(3, a, 3, 2).unwrap();
        let mb: Tensor<f64> = padding_mask(3, b, 3, 2).unwrap();
        prop_assert_eq!(ma.sum(), 6.0);
        prop_assert_eq!(&ma.data()[a * 6..(a + 1) * 6], &mb.data()[b * 6..(b + 1) * 6]);
    }

    #[test]
    fn aggregate_is_linear_in_features(seed in 0u64..10_000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = seeded(seed);
        let dims = [6, 2, 3];
        let x = Tensor::<f64>::from_fn(&dims, |_| rng.random_range(-1.0..1.0));
        let y = Tensor::<f64>::from_fn(&dims, |_| rng.random_range(-1.0..1.0));
        let w = Tensor::<f64>::from_fn(&[2, 9], |_| rng.random_range(-1.0..1.0));
        let mask = Tensor::<f64>::zeros(&[3, 2, 3]);
        let combo = Tensor::new(&dims, x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let lhs = run_aggregate(&combo, &mask, &w);
        let (fx, fy) = (run_aggregate(&x, &mask, &w), run_aggregate(&y, &mask, &w));
        for i in 0..lhs.len() {
            prop_assert!((lhs.data()[i] - (a * fx.data()[i] + b * fy.data()[i])).abs() < 1e-12);
        }
    }
}
