//! Evaluation protocols: feature-toggle ablation variants, prediction at a
//! fixed horizon before the crossing event, and permutation importance.

use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Feature, FeatureSet, Sample};
use crate::metrics::MetricReport;
use crate::model::{ModelConfig, ModelParams};
use crate::rng::seeded;
use crate::train::evaluate;

/// Named toggle set over global motion, local motion, raw depth and
/// categorical depth, each added to the baseline features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AblationVariant {
    pub id: &'static str,
    /// Display label with superscript index.
    pub label: &'static str,
    pub gm: bool,
    pub lm: bool,
    pub md: bool,
    pub cd: bool,
}

const fn variant(id: &'static str, label: &'static str, gm: bool, lm: bool, md: bool, cd: bool) -> AblationVariant {
    AblationVariant {
        id,
        label,
        gm,
        lm,
        md,
        cd,
    }
}

pub const ABLATION_VARIANTS: [AblationVariant; 7] = [
    variant("alpha0", "α⁰", false, false, false, false),
    variant("alpha1", "α¹", true, false, false, false),
    variant("alpha2", "α²", false, true, false, false),
    variant("alpha3", "α³", false, false, true, false),
    variant("alpha4", "α⁴", false, false, false, true),
    variant("alpha5", "α⁵", true, false, true, false),
    variant("alpha", "α", false, true, false, true),
];

impl AblationVariant {
    /// Looks up by id (`alpha3`) or display label (`α³`).
    pub fn by_name(name: &str) -> Result<Self> {
        ABLATION_VARIANTS
            .into_iter()
            .find(|v| v.id == name || v.label == name)
            .ok_or_else(|| Error::BadVariant(String::from(name)))
    }

    pub fn features(&self) -> FeatureSet {
        FeatureSet {
            global_motion: self.gm,
            local_motion: self.lm,
            raw_depth: self.md,
            cat_depth: self.cd,
            ..FeatureSet::BASELINE
        }
    }
}

/// Observation time in seconds of `m` frames taken every `stride` frames.
pub fn observation_time(m: usize, stride: usize, fps: f64) -> f64 {
    (m * stride) as f64 / fps
}

/// Frame at which a prediction `horizon` seconds ahead is made: before the
/// crossing frame for crossers, before the last annotated frame otherwise.
pub fn decisive_moment(crossing_frame: Option<i64>, last_frame: i64, horizon: f64, fps: f64) -> i64 {
    crossing_frame.unwrap_or(last_frame) - (horizon * fps).round() as i64
}

/// Metrics at one horizon, with the count of tracks too short to observe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtcReport {
    pub horizon: f64,
    pub evaluated: usize,
    pub skipped: usize,
    pub metrics: Option<MetricReport>,
}

/// Builds one sample per item at its decisive moment and evaluates them.
/// `anchors` holds `(crossing_frame, last_frame)` per item; `build` maps an
/// item index and frame to a sample. Items whose window starts before the
/// track are skipped.
pub fn etc_evaluate(
    params: &ModelParams<f32>,
    model: &ModelConfig,
    anchors: &[(Option<i64>, i64)],
    horizon: f64,
    fps: f64,
    threshold: f64,
    mut build: impl FnMut(usize, i64) -> Result<Sample>,
) -> Result<EtcReport> {
    let mut samples = Vec::new();
    let mut skipped = 0;
    for (i, &(crossing, last)) in anchors.iter().enumerate() {
        let t = decisive_moment(crossing, last, horizon, fps);
        match build(i, t) {
            Ok(s) => samples.push(s),
            Err(Error::InsufficientHistory { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let metrics = if samples.is_empty() {
        None
    } else {
        Some(evaluate(params, model, &samples)?.report(threshold)?)
    };
    Ok(EtcReport {
        horizon,
        evaluated: samples.len(),
        skipped,
        metrics,
    })
}

/// Metric drop after shuffling one feature across samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature: String,
    pub baseline: MetricReport,
    pub permuted: MetricReport,
    pub delta_acc: f64,
    pub delta_auc: Option<f64>,
}

/// Reassigns `feature` of sample `i` from sample `perm[i]` under a seeded
/// permutation and reports the change in metrics.
pub fn permutation_importance(
    params: &ModelParams<f32>,
    model: &ModelConfig,
    samples: &[Sample],
    feature: &str,
    seed: u64,
    threshold: f64,
) -> Result<Importance> {
    let f: Feature = feature.parse()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let baseline = evaluate(params, model, samples)?.report(threshold)?;
    let permuted = if model.features.get(f) {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut seeded(seed));
        let mut shuffled = samples.to_vec();
        for (dst, &src) in shuffled.iter_mut().zip(&order) {
            *dst.slot(f) = samples[src].get(f).cloned();
        }
        evaluate(params, model, &shuffled)?.report(threshold)?
    } else {
        baseline.clone()
    };
    Ok(Importance {
        feature: String::from(f.name()),
        delta_acc: baseline.acc - permuted.acc,
        delta_auc: baseline.auc.zip(permuted.auc).map(|(a, b)| a - b),
        baseline,
        permuted,
    })
}

#[cfg(test)]
mod tests;
