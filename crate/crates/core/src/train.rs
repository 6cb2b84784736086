//! RMSProp training with binary cross-entropy and an L2 penalty on the
//! output layer weights.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::features::Sample;
use crate::metrics::{metrics, MetricReport};
use crate::model::{build_model, forward_graph, ModelConfig, ModelParams, Variant, OUTPUT_WEIGHT};
use crate::rng::{seeded, Rng, RngState};
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// RMSProp decay of the squared-gradient average.
    pub rho: f64,
    pub eps: f64,
    /// L2 coefficient on the output weights.
    pub l2: f64,
    pub seed: u64,
    pub threshold: f64,
}

impl TrainConfig {
    pub fn full(variant: Variant) -> Self {
        let (lr, batch_size, epochs) = match variant {
            Variant::Alpha => (5e-5, 10, 300),
            Variant::Beta => (4e-5, 6, 400),
        };
        Self {
            lr,
            batch_size,
            epochs,
            rho: 0.9,
            eps: 1e-8,
            l2: 1e-4,
            seed: 0,
            threshold: 0.5,
        }
    }

    /// Shortened schedule for the reduced desk model.
    pub fn desk(variant: Variant) -> Self {
        Self {
            lr: 1e-3,
            epochs: 100,
            ..Self::full(variant)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::BadConfig(alloc::format!("learning rate {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::BadConfig("batch size 0".into()));
        }
        if !(0.0..1.0).contains(&self.rho) || self.eps <= 0.0 || self.l2 < 0.0 {
            return Err(Error::BadConfig("rho, eps or l2 out of range".into()));
        }
        Ok(())
    }
}

/// Clamped binary cross-entropy and its derivative with respect to `p`.
pub fn bce_loss(p: f64, y: f64) -> (f64, f64) {
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let loss = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
    let grad = if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        0.0
    } else {
        -y / pc + (1.0 - y) / (1.0 - pc)
    };
    (loss, grad)
}

/// `λ Σ w²` and its gradient `2λw`.
pub fn l2_penalty<T: Real>(w: &Tensor<T>, lambda: f64) -> (f64, Tensor<T>) {
    let sum: f64 = w.data().iter().map(|v| v.as_f64() * v.as_f64()).sum();
    (lambda * sum, w.map(|v| T::from_f64(2.0 * lambda) * v))
}

/// Per-tensor RMSProp running averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimState<T = f32> {
    pub v: BTreeMap<String, Tensor<T>>,
    pub steps: u64,
}

impl<T: Real> Default for OptimState<T> {
    fn default() -> Self {
        Self {
            v: BTreeMap::new(),
            steps: 0,
        }
    }
}

/// `v ← ρv + (1−ρ)g²`, `w ← w − lr·g/(√v + ε)` for every named gradient.
pub fn rmsprop_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut OptimState<T>,
    lr: f64,
    rho: f64,
    eps: f64,
) -> Result<()> {
    let (lr, rho, eps) = (T::from_f64(lr), T::from_f64(rho), T::from_f64(eps));
    for (name, g) in grads {
        let w = params.get_mut(name)?;
        if w.dims() != g.dims() {
            return Err(crate::error::dim_mismatch("rmsprop", w.dims(), g.dims()));
        }
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.dims()));
        for ((wi, vi), &gi) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vi = rho * *vi + (T::one() - rho) * gi * gi;
            *wi = *wi - lr * gi / (vi.sqrt() + eps);
        }
    }
    state.steps += 1;
    Ok(())
}

/// Mean loss over `batch` (BCE plus the L2 term) and gradients keyed by
/// parameter name.
pub fn batch_gradients<T: Real>(
    params: &ModelParams<T>,
    model: &ModelConfig,
    batch: &[&Sample],
    l2: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<(f64, BTreeMap<String, Tensor<T>>)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sums: BTreeMap<String, Tensor<T>> = params
        .tensors
        .iter()
        .map(|(k, v)| (k.clone(), Tensor::zeros(v.dims())))
        .collect();
    let mut loss = 0.0;
    for sample in batch {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let out = forward_graph(&mut g, &bound, sample, model, training, rng)?;
        let l = g.bce(out.prob, T::from_f64(sample.label as f64))?;
        loss += g.value(l).data()[0].as_f64();
        let grads = g.backward(l)?;
        for (name, &var) in &bound.vars {
            let acc = sums.get_mut(name).expect("same names");
            for (a, d) in acc.data_mut().iter_mut().zip(grads.wrt(var).data()) {
                *a += *d;
            }
        }
    }
    let inv = T::from_f64(1.0 / batch.len() as f64);
    for t in sums.values_mut() {
        for a in t.data_mut() {
            *a *= inv;
        }
    }
    let mut loss = loss / batch.len() as f64;
    if l2 > 0.0 {
        let (pen, grad) = l2_penalty(params.get(OUTPUT_WEIGHT)?, l2);
        loss += pen;
        let acc = sums.get_mut(OUTPUT_WEIGHT).expect("output weight");
        for (a, d) in acc.data_mut().iter_mut().zip(grad.data()) {
            *a += *d;
        }
    }
    Ok((loss, sums))
}

/// Inference-mode probabilities, labels and mean BCE over `samples`.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub probs: Vec<f64>,
    pub labels: Vec<u8>,
    pub loss: f64,
}

impl Evaluation {
    pub fn report(&self, threshold: f64) -> Result<MetricReport> {
        metrics(&self.probs, &self.labels, threshold)
    }
}

pub fn evaluate<T: Real>(params: &ModelParams<T>, model: &ModelConfig, samples: &[Sample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    // dropout is off, so the stream is never drawn from
    let mut rng = seeded(0);
    let mut probs = Vec::with_capacity(samples.len());
    let mut loss = 0.0;
    for s in samples {
        let p = crate::model::forward(s, params, model, false, &mut rng)?.as_f64();
        loss += bce_loss(p, s.label as f64).0;
        probs.push(p);
    }
    Ok(Evaluation {
        probs,
        labels: samples.iter().map(|s| s.label).collect(),
        loss: loss / samples.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub val_auc: Option<f64>,
}

/// Parameters at the epoch with the lowest validation loss so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub val_loss: f64,
    pub params: ModelParams<f32>,
}

/// Complete, resumable training state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ModelParams<f32>,
    pub optim: OptimState<f32>,
    pub rng: Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
    pub best: Option<BestSnapshot>,
}

impl Trainer {
    /// Fresh parameters from `train.seed`.
    pub fn new(model: ModelConfig, train: TrainConfig) -> Result<Self> {
        let params = build_model(&model, train.seed)?;
        Self::with_params(model, train, params)
    }

    pub fn with_params(model: ModelConfig, train: TrainConfig, params: ModelParams<f32>) -> Result<Self> {
        model.validate()?;
        train.validate()?;
        let rng = crate::rng::substream(train.seed, u64::MAX);
        Ok(Self {
            model,
            train,
            params,
            optim: OptimState::default(),
            rng,
            epoch: 0,
            history: Vec::new(),
            best: None,
        })
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    /// One optimizer update on `batch`; returns the batch loss.
    pub fn step(&mut self, batch: &[&Sample]) -> Result<f64> {
        let (loss, grads) = batch_gradients(&self.params, &self.model, batch, self.train.l2, true, &mut self.rng)?;
        if !loss.is_finite() {
            return Err(Error::DivergedLoss {
                epoch: self.epoch,
                batch: 0,
                value: loss,
            });
        }
        let t = &self.train;
        rmsprop_step(&mut self.params, &grads, &mut self.optim, t.lr, t.rho, t.eps)?;
        Ok(loss)
    }

    /// One shuffled pass over `train`, then validation on `val` if given.
    pub fn run_epoch(&mut self, train: &[Sample], val: Option<&[Sample]>) -> Result<EpochMetrics> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(self.train.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = self.step(&batch).map_err(|e| match e {
                Error::DivergedLoss { epoch, value, .. } => Error::DivergedLoss { epoch, batch: b, value },
                e => e,
            })?;
            total += loss * batch.len() as f64;
        }
        let mut row = EpochMetrics {
            epoch: self.epoch,
            train_loss: total / train.len() as f64,
            val_loss: None,
            val_acc: None,
            val_auc: None,
        };
        if let Some(val) = val.filter(|v| !v.is_empty()) {
            let ev = evaluate(&self.params, &self.model, val)?;
            let report = ev.report(self.train.threshold)?;
            row.val_loss = Some(ev.loss);
            row.val_acc = Some(report.acc);
            row.val_auc = report.auc;
            if self.best.as_ref().is_none_or(|b| ev.loss < b.val_loss) {
                self.best = Some(BestSnapshot {
                    epoch: self.epoch,
                    val_loss: ev.loss,
                    params: self.params.clone(),
                });
            }
        }
        self.epoch += 1;
        self.history.push(row.clone());
        Ok(row)
    }

    /// Runs every remaining epoch of the schedule.
    pub fn fit(&mut self, train: &[Sample], val: Option<&[Sample]>) -> Result<&[EpochMetrics]> {
        while self.epoch < self.train.epochs {
            self.run_epoch(train, val)?;
        }
        Ok(&self.history)
    }

    /// Best validation snapshot, or the current parameters without one.
    pub fn best_params(&self) -> &ModelParams<f32> {
        self.best.as_ref().map_or(&self.params, |b| &b.params)
    }
}

#[cfg(test)]
mod tests;
