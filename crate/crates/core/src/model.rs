//! The PIP-Net network: a hierarchical kinematic GRU stack, context encoders
//! with their own GRUs, per-branch temporal attention, a final attention over
//! the two branch summaries, dropout and a sigmoid head.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{dim_mismatch, Error, Result};
use crate::features::{Feature, FeatureSet, Sample, SampleSpec, NUM_CLASSES, POSE_LEN};
use crate::multicam::padding_mask_seq;
use crate::nn::{self, GruParams, GruVars, GRU_FIELDS};
use crate::rng::seeded;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Single front camera.
    Alpha,
    /// Three stitched cameras with mask-guided aggregation of scene rasters.
    Beta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub cameras: usize,
    /// Observation sequence length.
    pub m: usize,
    /// Frame gap between observations.
    pub stride: usize,
    pub hidden: usize,
    /// Side of the square pedestrian crop fed to the pipeline.
    pub crop_side: usize,
    /// Average-pooling factor applied to crops before the encoders.
    pub crop_pool: usize,
    /// Side of the scene rasters fed to the pipeline.
    pub raster: usize,
    /// Average-pooling factor applied to scene rasters before the encoders.
    pub context_pool: usize,
    pub classes: usize,
    pub features: FeatureSet,
    /// Output channels of the three per-frame content conv stages.
    pub content_channels: [usize; 3],
    /// Output channels of the local-motion Conv3D.
    pub motion_channels: usize,
    /// Spatial max-pool window after the local-motion Conv3D.
    pub motion_pool: usize,
    /// Output channels of the three scene-raster Conv3D stages.
    pub context_channels: [usize; 3],
    /// Temporal extent of Conv3D kernels.
    pub temporal_kernel: usize,
    /// Width of the FC layer between each conv encoder and its GRU.
    pub fc_width: usize,
    pub dropout: f64,
    /// Multiplier applied to the ego speed (km/h) before the GRU.
    pub speed_scale: f32,
    /// Square crop of this many box sides around the pedestrian; `None`
    /// warps the box itself.
    #[serde(default)]
    pub crop_scale: Option<f32>,
}

impl ModelConfig {
    /// Full-size network: 256 hidden units, 224-pixel crops, 512-pixel scene
    /// rasters reduced 512 → 256 → 128 → 64 by the three pooling stages.
    pub fn full(variant: Variant) -> Self {
        Self {
            variant,
            cameras: if variant == Variant::Beta { 3 } else { 1 },
            m: 10,
            stride: 2,
            hidden: 256,
            crop_side: 224,
            crop_pool: 1,
            raster: 512,
            context_pool: 1,
            classes: NUM_CLASSES,
            features: FeatureSet::BASELINE
                .with(Feature::LocalMotion, true)
                .with(Feature::CatDepth, true),
            content_channels: [16, 32, 64],
            motion_channels: 32,
            motion_pool: 4,
            context_channels: [16, 32, 64],
            temporal_kernel: 3,
            fc_width: 128,
            dropout: 0.5,
            speed_scale: 1.0,
            crop_scale: None,
        }
    }

    /// Desk-scale network trained in minutes on one core.
    pub fn desk(variant: Variant) -> Self {
        Self {
            hidden: 32,
            crop_side: 32,
            crop_pool: 4,
            raster: 64,
            context_pool: 8,
            content_channels: [4, 8, 8],
            motion_channels: 4,
            motion_pool: 2,
            context_channels: [4, 8, 8],
            fc_width: 32,
            speed_scale: 0.02,
            crop_scale: Some(1.5),
            ..Self::full(variant)
        }
    }

    /// Gradient-check scale: hidden 4, crop 8, raster 8, three frames.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            m: 3,
            hidden: 4,
            crop_side: 8,
            crop_pool: 1,
            raster: 8,
            context_pool: 1,
            content_channels: [2, 2, 2],
            motion_channels: 2,
            motion_pool: 4,
            context_channels: [2, 2, 2],
            fc_width: 4,
            ..Self::desk(variant)
        }
    }

    /// Feature-pipeline request matching this network's inputs.
    pub fn sample_spec(&self) -> SampleSpec {
        SampleSpec {
            m: self.m,
            stride: self.stride,
            crop_side: self.crop_side,
            raster: self.raster,
            crop_scale: self.crop_scale,
            features: self.features,
        }
    }

    pub fn crop_in(&self) -> usize {
        self.crop_side / self.crop_pool
    }

    pub fn raster_in(&self) -> usize {
        self.raster / self.context_pool
    }

    fn stage_sides(side: usize) -> [usize; 4] {
        [side, side / 2, side / 4, side / 8]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadConfig(msg));
        match (self.variant, self.cameras) {
            (Variant::Alpha, 1) | (Variant::Beta, 3) => {}
            (v, c) => return bad(format!("{v:?} variant with {c} cameras")),
        }
        if !self.features.any() {
            return bad("no feature enabled".to_string());
        }
        if self.m == 0 || self.stride == 0 || self.hidden == 0 || self.fc_width == 0 {
            return bad("m, stride, hidden and fc width must be positive".to_string());
        }
        if self.crop_pool == 0
            || self.context_pool == 0
            || !self.crop_side.is_multiple_of(self.crop_pool)
            || !self.raster.is_multiple_of(self.context_pool)
        {
            return bad("pooling factors must divide the crop and raster sides".to_string());
        }
        if self.classes != NUM_CLASSES {
            return bad(format!("{} semantic classes, expected {NUM_CLASSES}", self.classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::BadRate(self.dropout));
        }
        if self.temporal_kernel.is_multiple_of(2) {
            return bad("temporal kernel must be odd".to_string());
        }
        let f = &self.features;
        if (f.local_content) && Self::stage_sides(self.crop_in())[3] == 0 {
            return bad(format!(
                "crop side {} too small for three pooling stages",
                self.crop_in()
            ));
        }
        if f.local_motion && (self.motion_pool == 0 || self.crop_in() / self.motion_pool == 0) {
            return bad("motion pool larger than the crop".to_string());
        }
        let scene = f.semantic || f.cat_depth || f.global_motion || f.raw_depth;
        if scene && Self::stage_sides(self.raster_in())[3] == 0 {
            return bad(format!(
                "raster side {} too small for three pooling stages",
                self.raster_in()
            ));
        }
        Ok(())
    }

    fn kinematic_levels(&self) -> Vec<Feature> {
        [Feature::Bbox, Feature::Pose, Feature::Speed]
            .into_iter()
            .filter(|&f| self.features.get(f))
            .collect()
    }

    fn scene_streams(&self) -> Vec<Feature> {
        [
            Feature::Semantic,
            Feature::CatDepth,
            Feature::GlobalMotion,
            Feature::RawDepth,
        ]
        .into_iter()
        .filter(|&f| self.features.get(f))
        .collect()
    }

    fn has_local(&self) -> bool {
        self.features.local_content || self.features.local_motion
    }

    fn context_streams(&self) -> usize {
        self.has_local() as usize + self.scene_streams().len()
    }

    /// Per-camera channel count of a pipeline input.
    fn in_channels(&self, f: Feature) -> usize {
        if f == Feature::Semantic {
            self.classes
        } else {
            f.channels()
        }
    }

    /// Expected extents of each enabled input after [`ModelConfig::prepare`].
    pub fn input_dims(&self, f: Feature) -> Vec<usize> {
        let (m, s, r) = (self.m, self.crop_in(), self.raster_in());
        match f {
            Feature::Bbox => alloc::vec![m, 4],
            Feature::Pose => alloc::vec![m, POSE_LEN],
            Feature::Speed => alloc::vec![m, 1],
            Feature::LocalContent => alloc::vec![3, m, s, s],
            Feature::LocalMotion => alloc::vec![2, m, s, s],
            _ => alloc::vec![self.cameras * self.in_channels(f), m, r, r],
        }
    }

    /// Applies the fixed average pooling to crops and scene rasters so
    /// datasets can cache the reduced tensors. Already reduced tensors pass
    /// through unchanged.
    pub fn prepare(&self, sample: &Sample) -> Result<Sample> {
        let mut out = sample.clone();
        for f in Feature::ALL {
            if f.is_kinematic() {
                continue;
            }
            let pool = if matches!(f, Feature::LocalContent | Feature::LocalMotion) {
                self.crop_pool
            } else {
                self.context_pool
            };
            if let Some(t) = out.slot(f).take() {
                let t = if f.is_scene_raster() {
                    self.select_cameras(f, t)?
                } else {
                    t
                };
                let want = self.input_dims(f);
                let pooled = if t.dims() == want.as_slice() || pool == 1 {
                    t
                } else {
                    avg_pool_spatial(&t, pool)?
                };
                *out.slot(f) = Some(pooled);
            }
        }
        Ok(out)
    }

    /// Keeps the front camera block when a single-camera model reads a
    /// three-camera rig.
    fn select_cameras(&self, f: Feature, t: Tensor<f32>) -> Result<Tensor<f32>> {
        let per = f.channels();
        let have = t.dims()[0] / per;
        if have == self.cameras {
            return Ok(t);
        }
        if self.cameras != 1 || have != 3 {
            return Err(Error::BadConfig(format!(
                "{:?} model expects {} cameras, data has {have}",
                self.variant, self.cameras
            )));
        }
        let mut dims = t.dims().to_vec();
        dims[0] = per;
        let block = t.len() / have;
        Tensor::new(&dims, t.data()[block..2 * block].to_vec())
    }
}

fn avg_pool_spatial(t: &Tensor<f32>, pool: usize) -> Result<Tensor<f32>> {
    let mut g = Graph::<f32>::new();
    let x = g.constant(t.clone());
    let y = g.avgpool3d(x, [1, pool, pool], [1, pool, pool])?;
    Ok(g.value(y).clone())
}

/// Every trainable tensor of the network, keyed by a unique dotted name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T = f32> {
    pub tensors: BTreeMap<String, Tensor<T>>,
}

/// Name of the output layer weight, the only tensor under L2 penalty.
pub const OUTPUT_WEIGHT: &str = "out.w";
pub const OUTPUT_BIAS: &str = "out.b";

impl<T: Real> ModelParams<T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Registers every tensor as a graph parameter.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), g.param(v.clone())))
                .collect(),
        }
    }

    /// Tensors in name order, for flat gradient checks.
    pub fn to_vec(&self) -> Vec<Tensor<T>> {
        self.tensors.values().cloned().collect()
    }

    /// Rebuilds from tensors listed in this collection's name order.
    pub fn with_values(&self, values: &[Tensor<T>]) -> Self {
        Self {
            tensors: self.tensors.keys().cloned().zip(values.iter().cloned()).collect(),
        }
    }
}

/// Graph handles for a bound [`ModelParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Pairs `vars` (in name order) with the names of `params`.
    pub fn from_vars<T: Real>(params: &ModelParams<T>, vars: &[Var]) -> Self {
        Self {
            vars: params.tensors.keys().cloned().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    fn gru(&self, prefix: &str) -> Result<GruVars> {
        let v: Result<Vec<Var>> = GRU_FIELDS.iter().map(|f| self.get(&nn::gru_name(prefix, f))).collect();
        Ok(GruVars::from_slice(&v?))
    }

    fn attention(&self, prefix: &str) -> Result<nn::AttentionVars> {
        Ok(nn::AttentionVars {
            w_p: self.get(&format!("{prefix}.w_p"))?,
            w_c: self.get(&format!("{prefix}.w_c"))?,
        })
    }
}

struct Builder<'a, T, R> {
    rng: &'a mut R,
    out: BTreeMap<String, Tensor<T>>,
}

impl<T: Real, R: Rng> Builder<'_, T, R> {
    fn put(&mut self, name: String, t: Tensor<T>) {
        let fresh = self.out.insert(name, t).is_none();
        debug_assert!(fresh, "duplicate parameter name");
    }

    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) {
        let p = GruParams::<T>::glorot(input, hidden, self.rng);
        for (field, t) in GRU_FIELDS.iter().zip(p.into_tensors()) {
            self.put(nn::gru_name(prefix, field), t);
        }
    }

    fn attention(&mut self, prefix: &str, width: usize, out: usize) {
        let p = nn::AttentionParams::<T>::glorot(width, out, self.rng);
        self.put(format!("{prefix}.w_p"), p.w_p);
        self.put(format!("{prefix}.w_c"), p.w_c);
    }

    fn linear(&mut self, prefix: &str, input: usize, out: usize) {
        let p = nn::LinearParams::<T>::glorot(input, out, self.rng);
        self.put(format!("{prefix}.w"), p.w);
        self.put(format!("{prefix}.b"), p.b);
    }

    fn conv(&mut self, prefix: &str, c_in: usize, c_out: usize, kt: usize) {
        let k = nn::init_glorot(&[c_out, c_in, kt, 3, 3], self.rng);
        self.put(format!("{prefix}.k"), k);
        self.put(format!("{prefix}.b"), Tensor::zeros(&[c_out]));
    }
}

/// Glorot-initialised parameters, deterministic in `seed`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<ModelParams<f32>> {
    build_model_as(config, seed)
}

pub fn build_model_as<T: Real>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut rng = seeded(seed);
    let mut b = Builder::<T, _> {
        rng: &mut rng,
        out: BTreeMap::new(),
    };
    let (h, fc, kt) = (config.hidden, config.fc_width, config.temporal_kernel);

    let levels = config.kinematic_levels();
    for (j, f) in levels.iter().enumerate() {
        let width = config.input_dims(*f)[1];
        let input = if j == 0 { width } else { h + width };
        b.gru(&format!("kin.{j}"), input, h);
    }
    if !levels.is_empty() {
        b.attention("kin_att", h, h);
    }

    let f = &config.features;
    if config.has_local() {
        let mut local_in = 0;
        if f.local_content {
            let mut c_in = 3;
            for (i, &c) in config.content_channels.iter().enumerate() {
                b.conv(&format!("content.conv{i}"), c_in, c, 1);
                c_in = c;
            }
            let side = ModelConfig::stage_sides(config.crop_in())[3];
            b.linear("content.fc", c_in * side * side, fc);
            local_in += fc;
        }
        if f.local_motion {
            b.conv("motion.conv", 2, config.motion_channels, kt);
            let side = config.crop_in() / config.motion_pool;
            b.linear("motion.fc", config.motion_channels * side * side, fc);
            b.gru("motion.gru", fc, h);
            local_in += h;
        }
        b.gru("local.gru", local_in, h);
    }
    for s in config.scene_streams() {
        let name = s.name();
        let c = config.in_channels(s);
        if config.variant == Variant::Beta {
            let cams = config.cameras;
            let w = nn::init_glorot(&[c, cams * c + cams], b.rng);
            b.put(format!("{name}.agg"), w);
        }
        let mut c_in = c;
        for (i, &co) in config.context_channels.iter().enumerate() {
            b.conv(&format!("{name}.conv{i}"), c_in, co, kt);
            c_in = co;
        }
        let side = ModelConfig::stage_sides(config.raster_in())[3];
        b.linear(&format!("{name}.fc"), c_in * side * side, fc);
        b.gru(&format!("{name}.gru"), fc, h);
    }
    let k = config.context_streams();
    if k > 0 {
        b.attention("ctx_att", k * h, h);
    }
    b.attention("final_att", h, h);
    b.linear("out", h, 1);
    Ok(ModelParams { tensors: b.out })
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// Pre-sigmoid output `[1, 1]`.
    pub logit: Var,
    /// Crossing probability `[1, 1]`.
    pub prob: Var,
    /// Final attention weights over (kinematic, context) `[1, branches]`.
    pub branch_weights: Var,
}

fn input<T: Real>(g: &mut Graph<T>, sample: &Sample, config: &ModelConfig, f: Feature) -> Result<Var> {
    let t = sample.get(f).ok_or(Error::MissingFeature(f.name()))?;
    let want = config.input_dims(f);
    if t.dims() != want.as_slice() {
        return Err(dim_mismatch(f.name(), t.dims(), &want));
    }
    Ok(g.constant(t.cast()))
}

/// Conv, channel bias, tanh, then max pooling with `pool` window and stride.
fn conv_stage<T: Real>(g: &mut Graph<T>, p: &BoundParams, prefix: &str, x: Var, pool: [usize; 3]) -> Result<Var> {
    let k = p.get(&format!("{prefix}.k"))?;
    let kt = g.dims(k)[2];
    let y = g.conv3d(x, k, [1, 1, 1], [kt / 2, 1, 1])?;
    let y = g.channel_bias(y, p.get(&format!("{prefix}.b"))?)?;
    let y = g.tanh(y);
    g.maxpool3d(y, pool, pool)
}

/// `[C, m, H, W]` → `[m, C·H·W]`.
fn per_frame<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let d = g.dims(x).to_vec();
    let y = g.permute(x, &[1, 0, 2, 3])?;
    g.reshape(y, &[d[1], d[0] * d[2] * d[3]])
}

fn dense_tanh<T: Real>(g: &mut Graph<T>, p: &BoundParams, prefix: &str, x: Var) -> Result<Var> {
    let y = nn::fully_connected(g, x, p.get(&format!("{prefix}.w"))?, p.get(&format!("{prefix}.b"))?)?;
    Ok(g.tanh(y))
}

fn run_gru<T: Real>(g: &mut Graph<T>, p: &BoundParams, prefix: &str, xs: Var, hidden: usize) -> Result<Var> {
    let vars = p.gru(prefix)?;
    let h0 = nn::zero_state(g, hidden);
    nn::gru_sequence(g, xs, h0, &vars)
}

/// Records the network on `g`. Disabled features are never read.
pub fn forward_graph<T: Real>(
    g: &mut Graph<T>,
    params: &BoundParams,
    sample: &Sample,
    config: &ModelConfig,
    training: bool,
    rng: &mut impl Rng,
) -> Result<ForwardOutput> {
    let sample = config.prepare(sample)?;
    let h = config.hidden;
    let mut summaries = Vec::new();

    let levels = config.kinematic_levels();
    let mut below: Option<Var> = None;
    for (j, &f) in levels.iter().enumerate() {
        let mut x = input(g, &sample, config, f)?;
        if f == Feature::Speed {
            x = g.scale(x, T::from_f64(config.speed_scale as f64));
        }
        let xs = match below {
            Some(prev) => g.concat(&[prev, x], 1)?,
            None => x,
        };
        below = Some(run_gru(g, params, &format!("kin.{j}"), xs, h)?);
    }
    if let Some(states) = below {
        let att = nn::attention(g, states, &params.attention("kin_att")?)?;
        summaries.push(att.output);
    }

    let mut streams = Vec::new();
    if config.has_local() {
        let mut parts = Vec::new();
        if config.features.local_content {
            let mut x = input(g, &sample, config, Feature::LocalContent)?;
            for i in 0..3 {
                x = conv_stage(g, params, &format!("content.conv{i}"), x, [1, 2, 2])?;
            }
            let flat = per_frame(g, x)?;
            parts.push(dense_tanh(g, params, "content.fc", flat)?);
        }
        if config.features.local_motion {
            let x = input(g, &sample, config, Feature::LocalMotion)?;
            let mp = config.motion_pool;
            let y = conv_stage(g, params, "motion.conv", x, [1, mp, mp])?;
            let flat = per_frame(g, y)?;
            let feat = dense_tanh(g, params, "motion.fc", flat)?;
            parts.push(run_gru(g, params, "motion.gru", feat, h)?);
        }
        let joined = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat(&parts, 1)?
        };
        streams.push(run_gru(g, params, "local.gru", joined, h)?);
    }
    for s in config.scene_streams() {
        let name = s.name();
        let mut x = input(g, &sample, config, s)?;
        if config.variant == Variant::Beta {
            let d = g.dims(x).to_vec();
            let mask = padding_mask_seq::<T>(config.cameras, sample.sentinel, &d[1..])?;
            let mask = g.constant(mask);
            x = crate::multicam::aggregate(g, x, mask, params.get(&format!("{name}.agg"))?)?;
        }
        for i in 0..3 {
            x = conv_stage(g, params, &format!("{name}.conv{i}"), x, [1, 2, 2])?;
        }
        let flat = per_frame(g, x)?;
        let feat = dense_tanh(g, params, &format!("{name}.fc"), flat)?;
        streams.push(run_gru(g, params, &format!("{name}.gru"), feat, h)?);
    }
    if !streams.is_empty() {
        let joined = if streams.len() == 1 {
            streams[0]
        } else {
            g.concat(&streams, 1)?
        };
        let att = nn::attention(g, joined, &params.attention("ctx_att")?)?;
        summaries.push(att.output);
    }

    let seq = if summaries.len() == 1 {
        summaries[0]
    } else {
        g.concat(&summaries, 0)?
    };
    let fin = nn::attention(g, seq, &params.attention("final_att")?)?;
    let dropped = nn::dropout(g, fin.output, config.dropout, rng, training)?;
    let logit = nn::fully_connected(g, dropped, params.get(OUTPUT_WEIGHT)?, params.get(OUTPUT_BIAS)?)?;
    let prob = g.sigmoid(logit);
    Ok(ForwardOutput {
        logit,
        prob,
        branch_weights: fin.weights,
    })
}

/// Crossing probability for one sample.
pub fn forward<T: Real>(
    sample: &Sample,
    params: &ModelParams<T>,
    config: &ModelConfig,
    training: bool,
    rng: &mut impl Rng,
) -> Result<T> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = forward_graph(&mut g, &bound, sample, config, training, rng)?;
    Ok(g.value(out.prob).data()[0])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Cross,
    NotCross,
}

/// Crossing iff `p >= threshold`.
pub fn predict(p: f64, threshold: f64) -> Intent {
    if p >= threshold {
        Intent::Cross
    } else {
        Intent::NotCross
    }
}

#[cfg(test)]
mod tests;
