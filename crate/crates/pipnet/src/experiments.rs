//! Training runs and the evaluation protocols built on them.

use std::time::Instant;

use pipnet_core::eval::{etc_evaluate, observation_time, AblationVariant, EtcReport};
use pipnet_core::features::Sample;
use pipnet_core::metrics::MetricReport;
use pipnet_core::model::{forward, ModelConfig, ModelParams};
use pipnet_core::rng::seeded;
use pipnet_core::train::{evaluate, TrainConfig, Trainer};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::Result;

/// Stop once validation reaches both targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub acc: f64,
    pub auc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    /// Validation metrics of the returned parameters.
    pub val: MetricReport,
    pub epochs: usize,
    pub seconds: f64,
    pub reached: bool,
}

/// Prepared train, validation and test samples for one model config.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Splits {
    /// Validation falls back to the test split when the dataset has none.
    pub fn build(ds: &Dataset, model: &ModelConfig) -> Result<Self> {
        let train = ds.samples(Split::Train, model)?;
        let test = ds.samples(Split::Test, model)?;
        let val = ds.samples(Split::Val, model)?;
        let val = if val.is_empty() { test.clone() } else { val };
        Ok(Self { train, val, test })
    }
}

/// Trains for `train.epochs` epochs, or until `target` is met on validation.
pub fn train_model(
    model: &ModelConfig,
    train: &TrainConfig,
    data: &Splits,
    target: Option<Target>,
    mut on_epoch: impl FnMut(&pipnet_core::train::EpochMetrics),
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut trainer = Trainer::new(model.clone(), train.clone())?;
    let mut reached = false;
    while trainer.epoch < train.epochs {
        let row = trainer.run_epoch(&data.train, Some(&data.val))?;
        on_epoch(&row);
        if let (Some(t), Some(acc), Some(auc)) = (target, row.val_acc, row.val_auc) {
            if acc >= t.acc && auc >= t.auc {
                reached = true;
                break;
            }
        }
    }
    let params = if reached {
        &trainer.params
    } else {
        trainer.best_params()
    };
    let val = evaluate(params, model, &data.val)?.report(train.threshold)?;
    Ok(TrainOutcome {
        epochs: trainer.epoch,
        val,
        seconds: start.elapsed().as_secs_f64(),
        reached,
        trainer,
    })
}

/// Median wall time of `reps` single-sample inference passes, milliseconds.
pub fn inference_ms(params: &ModelParams<f32>, model: &ModelConfig, sample: &Sample, reps: usize) -> Result<f64> {
    let mut rng = seeded(0);
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        forward(sample, params, model, false, &mut rng)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub label: String,
    pub gm: bool,
    pub lm: bool,
    pub md: bool,
    pub cd: bool,
    pub metrics: MetricReport,
    pub inference_ms: f64,
    pub epochs: usize,
}

/// Trains and tests every variant with identical seed and data.
pub fn ablation_run(
    ds: &Dataset,
    base: &ModelConfig,
    train: &TrainConfig,
    variants: &[AblationVariant],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for v in variants {
        let model = ModelConfig {
            features: v.features(),
            ..base.clone()
        };
        let data = Splits::build(ds, &model)?;
        let out = train_model(&model, train, &data, None, |_| {})?;
        let params = out.trainer.best_params();
        let metrics = evaluate(params, &model, &data.test)?.report(train.threshold)?;
        rows.push(AblationRow {
            variant: v.id.to_string(),
            label: v.label.to_string(),
            gm: v.gm,
            lm: v.lm,
            md: v.md,
            cd: v.cd,
            metrics,
            inference_ms: inference_ms(params, &model, &data.test[0], 100)?,
            epochs: out.epochs,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub stride: usize,
    pub m: usize,
    /// Observation time `m * stride / fps`, seconds.
    pub observation_s: f64,
    pub metrics: MetricReport,
    pub inference_ms: f64,
}

pub const SWEEP_STRIDES: [usize; 5] = [1, 2, 3, 4, 5];
pub const SWEEP_LENGTHS: [usize; 3] = [10, 15, 20];

pub fn sweep_footer(fps: f64) -> String {
    format!(
        "observation time is m*s/fps at {fps} fps, so (s=2, m=10) spans {:.2} s",
        observation_time(10, 2, fps)
    )
}

/// Trains and tests one model per (stride, m) cell.
pub fn temporal_sweep(
    ds: &Dataset,
    base: &ModelConfig,
    train: &TrainConfig,
    strides: &[usize],
    lengths: &[usize],
) -> Result<Vec<SweepRow>> {
    let fps = ds.config.gen.fps;
    let mut rows = Vec::new();
    for &stride in strides {
        for &m in lengths {
            let model = ModelConfig {
                stride,
                m,
                ..base.clone()
            };
            model.validate()?;
            let data = Splits::build(ds, &model)?;
            let out = train_model(&model, train, &data, None, |_| {})?;
            let params = out.trainer.best_params();
            rows.push(SweepRow {
                stride,
                m,
                observation_s: observation_time(m, stride, fps),
                metrics: evaluate(params, &model, &data.test)?.report(train.threshold)?,
                inference_ms: inference_ms(params, &model, &data.test[0], 100)?,
            });
        }
    }
    Ok(rows)
}

/// Evaluates `params` on `split` at each horizon before the crossing event.
pub fn etc_run(
    ds: &Dataset,
    params: &ModelParams<f32>,
    model: &ModelConfig,
    horizons: &[f64],
    split: Split,
    threshold: f64,
) -> Result<Vec<EtcReport>> {
    let (idx, anchors) = ds.anchors(split);
    let fps = ds.config.gen.fps;
    horizons
        .iter()
        .map(|&h| {
            let r = etc_evaluate(params, model, &anchors, h, fps, threshold, |k, t| {
                ds.sample_at(idx[k], model, t).map_err(|e| match e {
                    crate::error::Error::Core(c) => c,
                    other => pipnet_core::Error::BadConfig(other.to_string()),
                })
            })?;
            Ok(r)
        })
        .collect()
}
