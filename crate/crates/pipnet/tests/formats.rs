use std::path::Path;

use pipnet::checkpoint::Checkpoint;
use pipnet::dataset::{Dataset, DatasetConfig};
use pipnet::experiments::Splits;
use pipnet::pipt::{self, AnyTensor};
use pipnet::Error;
use pipnet_core::model::{ModelConfig, Variant};
use pipnet_core::train::{TrainConfig, Trainer};
use pipnet_core::Tensor;
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 0..5)
}

proptest! {
    #[test]
    fn pipt_f32_roundtrip_is_bitwise(d in dims(), seed in any::<u32>()) {
        let t = Tensor::<f32>::from_fn(&d, |i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 * 1e-3 - 7.5);
        let bytes = pipt::encode(&t);
        let (back, used) = pipt::decode(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(used, bytes.len());
        match back {
            AnyTensor::F32(b) => {
                prop_assert_eq!(b.dims(), t.dims());
                prop_assert!(b.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
            AnyTensor::F64(_) => prop_assert!(false, "dtype changed"),
        }
    }

    #[test]
    fn pipt_f64_roundtrip_is_bitwise(d in dims(), scale in -1e6f64..1e6) {
        let t = Tensor::<f64>::from_fn(&d, |i| scale / (i as f64 + 0.5));
        let (back, _) = pipt::decode(&pipt::encode(&t), Path::new("mem")).unwrap();
        let b = back.to_f64();
        prop_assert_eq!(b.dims(), t.dims());
        prop_assert!(b.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn pipt_truncation_is_rejected(d in dims(), cut in 1usize..8) {
        let bytes = pipt::encode(&Tensor::<f32>::zeros(&d));
        let short = &bytes[..bytes.len().saturating_sub(cut)];
        prop_assert!(pipt::decode(short, Path::new("mem")).is_err());
    }
}

#[test]
fn pipt_file_rejects_bad_magic_and_trailing_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.pipt");
    let t = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32);
    pipt::write(&p, &t).unwrap();
    assert_eq!(pipt::read(&p).unwrap().to_f32(), t);

    let mut bytes = std::fs::read(&p).unwrap();
    bytes.push(0);
    std::fs::write(&p, &bytes).unwrap();
    assert!(matches!(pipt::read(&p), Err(Error::Format { .. })));

    bytes[0] = b'X';
    std::fs::write(&p, &bytes).unwrap();
    assert!(matches!(pipt::read(&p), Err(Error::Format { .. })));
}

fn tiny_setup() -> (ModelConfig, TrainConfig, Splits) {
    let model = ModelConfig::tiny(Variant::Alpha);
    let mut train = TrainConfig::desk(Variant::Alpha);
    train.batch_size = 4;
    train.seed = 11;
    let ds = Dataset::generate(&DatasetConfig::new(30, 5)).unwrap();
    let splits = Splits::build(&ds, &model).unwrap();
    (model, train, splits)
}

#[test]
fn checkpoint_roundtrip_and_bitwise_resume() {
    let (model, train, data) = tiny_setup();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pipc");

    let mut straight = Trainer::new(model.clone(), train.clone()).unwrap();
    for _ in 0..2 {
        straight.run_epoch(&data.train, Some(&data.val)).unwrap();
    }

    let mut first = Trainer::new(model, train).unwrap();
    first.run_epoch(&data.train, Some(&data.val)).unwrap();
    let ckpt = Checkpoint::from_trainer(&first);
    let digest = ckpt.save(&path).unwrap();
    assert_eq!(digest, pipnet::digest::file_sha256(&path).unwrap());

    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let mut resumed = loaded.into_trainer(&path).unwrap();
    resumed.run_epoch(&data.train, Some(&data.val)).unwrap();

    assert_eq!(resumed.epoch, straight.epoch);
    assert_eq!(resumed.optim.steps, straight.optim.steps);
    for (k, v) in &straight.params.tensors {
        let r = &resumed.params.tensors[k];
        assert!(
            v.data().iter().zip(r.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "{k} diverged after resume"
        );
    }
    assert_eq!(resumed.history, straight.history);
}

#[test]
fn full_preset_hyperparameters_survive_checkpoint() {
    for variant in [Variant::Alpha, Variant::Beta] {
        let model = ModelConfig::tiny(variant);
        let train = TrainConfig::full(variant);
        let t = Trainer::new(model, train.clone()).unwrap();
        let bytes = Checkpoint::from_trainer(&t).encode().unwrap();
        let back = Checkpoint::decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.header.train, train);
        assert_eq!(back.header.train.rho, 0.9);
        assert_eq!(back.header.train.l2, 1e-4);
    }
}

#[test]
fn corrupt_checkpoints_are_format_errors() {
    let t = Trainer::new(ModelConfig::tiny(Variant::Alpha), TrainConfig::desk(Variant::Alpha)).unwrap();
    let bytes = Checkpoint::from_trainer(&t).encode().unwrap();
    let origin = Path::new("mem");
    assert!(matches!(
        Checkpoint::decode(&bytes[..bytes.len() - 3], origin),
        Err(Error::Format { .. })
    ));
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"NOPE");
    assert!(matches!(Checkpoint::decode(&bad, origin), Err(Error::Format { .. })));
    let mut ver = bytes;
    ver[4] = 9;
    assert!(matches!(Checkpoint::decode(&ver, origin), Err(Error::Format { .. })));
}
