//! Builds the seven model inputs from per-frame records: bounding boxes,
//! poses and ego speed on the kinematic side; local crops, semantic
//! occupancy and depth rasters on the context side.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::str::FromStr;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{dim_mismatch, Error, Result};
use crate::multicam::StitchLayout;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 19;
pub const NUM_KEYPOINTS: usize = 17;
pub const POSE_LEN: usize = 2 * NUM_KEYPOINTS;

/// Eleven static classes followed by eight dynamic ones.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic_light",
    "traffic_sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

pub mod class {
    pub const ROAD: u32 = 0;
    pub const SIDEWALK: u32 = 1;
    pub const BUILDING: u32 = 2;
    pub const POLE: u32 = 5;
    pub const VEGETATION: u32 = 8;
    pub const SKY: u32 = 10;
    pub const PERSON: u32 = 11;
    pub const RIDER: u32 = 12;
    pub const CAR: u32 = 13;
    pub const TRUCK: u32 = 14;
    pub const BUS: u32 = 15;
    pub const TRAIN: u32 = 16;
    pub const MOTORCYCLE: u32 = 17;
    pub const BICYCLE: u32 = 18;
}

/// Channel of the categorical depth map a class writes to, if any.
pub fn depth_category(class: u32) -> Option<usize> {
    match class {
        class::PERSON => Some(0),
        class::CAR | class::TRUCK | class::BUS | class::TRAIN | class::MOTORCYCLE | class::BICYCLE => Some(1),
        _ => None,
    }
}

/// One segmented instance; `pixels` are flat row-major canvas indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub class: u32,
    pub id: u32,
    pub pixels: Vec<u32>,
}

/// Everything observed by one camera in one frame. Rasters are channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameContext {
    pub width: usize,
    pub height: usize,
    /// `[3, H, W]`, values in `[0, 1]`.
    pub rgb: Tensor<f32>,
    /// `[H, W]`, values in `[0, 1]`, higher is nearer.
    pub depth: Tensor<f32>,
    pub instances: Vec<Instance>,
    /// `[2, H, W]` pixel displacement to the next frame.
    pub flow: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub frame: i64,
    /// `[x1, y1, x2, y2]` in stitched pixel coordinates.
    pub bbox: [f32; 4],
    /// 17 `(x, y)` keypoints in stitched pixel coordinates; `(0, 0)` is absent.
    pub pose: Vec<f32>,
    pub camera: usize,
    pub visible: bool,
}

/// Per-pedestrian annotations over consecutive frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PedestrianTrack {
    pub ped_id: u32,
    pub frames: Vec<TrackFrame>,
    pub label: u8,
    pub crossing_frame: Option<i64>,
}

impl PedestrianTrack {
    pub fn first_frame(&self) -> i64 {
        self.frames.first().map_or(0, |f| f.frame)
    }

    pub fn last_frame(&self) -> i64 {
        self.frames.last().map_or(-1, |f| f.frame)
    }

    pub fn at(&self, frame: i64) -> Option<&TrackFrame> {
        let i = frame - self.first_frame();
        if i < 0 {
            return None;
        }
        self.frames.get(i as usize)
    }
}

/// Frames `t-(m-1)s, ..., t-s, t`.
pub fn window_frames(t: i64, m: usize, stride: usize) -> Vec<i64> {
    (0..m).map(|k| t - ((m - 1 - k) * stride) as i64).collect()
}

/// Kinematic inputs for one observation window.
#[derive(Clone, Debug, PartialEq)]
pub struct Kinematics {
    pub bbox: Tensor<f32>,
    pub pose: Tensor<f32>,
    pub speed: Tensor<f32>,
}

pub fn normalize_bbox(b: [f32; 4], canvas_w: f32, canvas_h: f32) -> [f32; 4] {
    [b[0] / canvas_w, b[1] / canvas_h, b[2] / canvas_w, b[3] / canvas_h]
}

pub fn denormalize_bbox(b: [f32; 4], canvas_w: f32, canvas_h: f32) -> [f32; 4] {
    [b[0] * canvas_w, b[1] * canvas_h, b[2] * canvas_w, b[3] * canvas_h]
}

/// Samples bbox, pose and speed at the window ending on frame `t`. Speeds are
/// indexed by absolute frame number and passed through in km/h.
pub fn assemble_kinematic_seq(
    track: &PedestrianTrack,
    speeds: &[f32],
    t: i64,
    m: usize,
    stride: usize,
    canvas: (usize, usize),
) -> Result<Kinematics> {
    if m == 0 || stride == 0 {
        return Err(Error::BadConfig(format!("window m={m}, stride={stride}")));
    }
    let frames = window_frames(t, m, stride);
    let (cw, ch) = (canvas.0 as f32, canvas.1 as f32);
    let mut bbox = Vec::with_capacity(4 * m);
    let mut pose = Vec::with_capacity(POSE_LEN * m);
    let mut speed = Vec::with_capacity(m);
    for &f in &frames {
        let rec = track.at(f).ok_or(Error::InsufficientHistory {
            needed: f,
            first: track.first_frame(),
        })?;
        let s = usize::try_from(f)
            .ok()
            .and_then(|i| speeds.get(i))
            .ok_or(Error::InsufficientHistory { needed: f, first: 0 })?;
        bbox.extend(normalize_bbox(rec.bbox, cw, ch).map(|v| v.clamp(0.0, 1.0)));
        for k in 0..NUM_KEYPOINTS {
            let (x, y) = (rec.pose[2 * k], rec.pose[2 * k + 1]);
            if x == 0.0 && y == 0.0 {
                pose.extend([0.0, 0.0]);
            } else {
                pose.extend([(x / cw).clamp(0.0, 1.0), (y / ch).clamp(0.0, 1.0)]);
            }
        }
        speed.push(*s);
    }
    Ok(Kinematics {
        bbox: Tensor::new(&[m, 4], bbox)?,
        pose: Tensor::new(&[m, POSE_LEN], pose)?,
        speed: Tensor::new(&[m, 1], speed)?,
    })
}

fn check_box(b: [f32; 4]) -> Result<()> {
    if !(b[2] > b[0] && b[3] > b[1]) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateBox(b));
    }
    Ok(())
}

/// Bilinear warp of the region `bbox` of a `[C, H, W]` raster to `[C, S, S]`.
/// Sample points use pixel-centre coordinates; points off the canvas read 0.
pub fn crop_bilinear(src: &Tensor<f32>, bbox: [f32; 4], side: usize) -> Result<Tensor<f32>> {
    check_box(bbox)?;
    let &[channels, h, w] = src.dims() else {
        return Err(dim_mismatch("crop", src.dims(), &[0, 0, 0]));
    };
    let axis = |lo: f32, hi: f32, n: usize| -> Vec<Option<(usize, usize, f32)>> {
        (0..side)
            .map(|j| {
                let p = lo + (j as f32 + 0.5) * (hi - lo) / side as f32 - 0.5;
                if p < -0.5 || p > n as f32 - 0.5 {
                    return None;
                }
                let p = p.clamp(0.0, (n - 1) as f32);
                let i0 = Float::floor(p) as usize;
                let i1 = (i0 + 1).min(n - 1);
                Some((i0, i1, p - i0 as f32))
            })
            .collect()
    };
    let xs = axis(bbox[0], bbox[2], w);
    let ys = axis(bbox[1], bbox[3], h);
    let mut out = vec![0.0f32; channels * side * side];
    for c in 0..channels {
        let plane = &src.data()[c * h * w..(c + 1) * h * w];
        for (i, y) in ys.iter().enumerate() {
            let Some((y0, y1, fy)) = *y else { continue };
            for (j, x) in xs.iter().enumerate() {
                let Some((x0, x1, fx)) = *x else { continue };
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out[(c * side + i) * side + j] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(&[channels, side, side], out)
}

pub fn crop_local_content(frame: &Tensor<f32>, bbox: [f32; 4], side: usize) -> Result<Tensor<f32>> {
    crop_bilinear(frame, bbox, side)
}

pub fn crop_local_motion(flow: &Tensor<f32>, bbox: [f32; 4], side: usize) -> Result<Tensor<f32>> {
    crop_bilinear(flow, bbox, side)
}

/// For each source index, the destination cells it overlaps and the overlap
/// length measured in destination units.
fn area_spans(n_src: usize, n_dst: usize) -> Vec<Vec<(usize, f32)>> {
    let r = n_dst as f64 / n_src as f64;
    (0..n_src)
        .map(|i| {
            let (a, b) = (i as f64 * r, (i + 1) as f64 * r);
            let mut spans = Vec::new();
            let mut d = Float::floor(a) as usize;
            while (d as f64) < b && d < n_dst {
                let overlap = b.min(d as f64 + 1.0) - a.max(d as f64);
                if overlap > 0.0 {
                    spans.push((d, overlap as f32));
                }
                d += 1;
            }
            spans
        })
        .collect()
}

/// Area-weighted resampling of `planes` stacked `[P, H, W]` rasters.
pub fn area_resample(src: &[f32], planes: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let (ys, xs) = (area_spans(h, out_h), area_spans(w, out_w));
    let mut out = vec![0.0f32; planes * out_h * out_w];
    for p in 0..planes {
        for (y, yspans) in ys.iter().enumerate() {
            for (x, xspans) in xs.iter().enumerate() {
                let v = src[(p * h + y) * w + x];
                if v == 0.0 {
                    continue;
                }
                for &(dy, wy) in yspans {
                    for &(dx, wx) in xspans {
                        out[(p * out_h + dy) * out_w + dx] += v * wy * wx;
                    }
                }
            }
        }
    }
    out
}

fn check_pixels(inst: &Instance, n: usize) -> Result<()> {
    if inst.pixels.iter().any(|&p| p as usize >= n) {
        return Err(dim_mismatch("instance mask", &[inst.pixels.len()], &[n]));
    }
    Ok(())
}

/// One-hot class occupancy `[19, out_h, out_w]`, area-weighted from the
/// `w x h` canvas.
pub fn build_semantic_context(
    instances: &[Instance],
    w: usize,
    h: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<f32>> {
    let mut full = vec![0.0f32; NUM_CLASSES * h * w];
    for inst in instances {
        if inst.class as usize >= NUM_CLASSES {
            return Err(Error::UnknownClass(inst.class));
        }
        check_pixels(inst, h * w)?;
        let base = inst.class as usize * h * w;
        for &p in &inst.pixels {
            full[base + p as usize] = 1.0;
        }
    }
    if (out_h, out_w) == (h, w) {
        return Tensor::new(&[NUM_CLASSES, h, w], full);
    }
    Tensor::new(
        &[NUM_CLASSES, out_h, out_w],
        area_resample(&full, NUM_CLASSES, h, w, out_h, out_w),
    )
}

/// Two-channel map where every pedestrian (channel 0) or vehicle (channel 1)
/// pixel holds the mean depth of its instance. Depth is `[H, W]`.
pub fn build_categorical_depth(depth: &Tensor<f32>, instances: &[Instance]) -> Result<Tensor<f32>> {
    let &[h, w] = depth.dims() else {
        return Err(dim_mismatch("categorical depth", depth.dims(), &[0, 0]));
    };
    let mut out = Tensor::zeros(&[2, h, w]);
    for inst in instances {
        if inst.class as usize >= NUM_CLASSES {
            return Err(Error::UnknownClass(inst.class));
        }
        let Some(channel) = depth_category(inst.class) else {
            continue;
        };
        if inst.pixels.is_empty() {
            return Err(Error::EmptyMask(inst.id));
        }
        check_pixels(inst, h * w)?;
        let total: f64 = inst.pixels.iter().map(|&p| depth.data()[p as usize] as f64).sum();
        let mean = (total / inst.pixels.len() as f64) as f32;
        let plane = &mut out.data_mut()[channel * h * w..(channel + 1) * h * w];
        for &p in &inst.pixels {
            plane[p as usize] = mean;
        }
    }
    Ok(out)
}

/// Names of the model inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Bbox,
    Pose,
    Speed,
    LocalContent,
    LocalMotion,
    Semantic,
    CatDepth,
    GlobalMotion,
    RawDepth,
}

impl Feature {
    pub const ALL: [Feature; 9] = [
        Feature::Bbox,
        Feature::Pose,
        Feature::Speed,
        Feature::LocalContent,
        Feature::LocalMotion,
        Feature::Semantic,
        Feature::CatDepth,
        Feature::GlobalMotion,
        Feature::RawDepth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Bbox => "bbox",
            Feature::Pose => "pose",
            Feature::Speed => "speed",
            Feature::LocalContent => "local_content",
            Feature::LocalMotion => "local_motion",
            Feature::Semantic => "semantic",
            Feature::CatDepth => "cat_depth",
            Feature::GlobalMotion => "global_motion",
            Feature::RawDepth => "raw_depth",
        }
    }

    pub fn is_kinematic(self) -> bool {
        matches!(self, Feature::Bbox | Feature::Pose | Feature::Speed)
    }

    /// Context rasters built per camera and fused across cameras.
    pub fn is_scene_raster(self) -> bool {
        matches!(
            self,
            Feature::Semantic | Feature::CatDepth | Feature::GlobalMotion | Feature::RawDepth
        )
    }

    /// Channels per camera of the context inputs.
    pub fn channels(self) -> usize {
        match self {
            Feature::Bbox => 4,
            Feature::Pose => POSE_LEN,
            Feature::Speed => 1,
            Feature::LocalContent => 3,
            Feature::LocalMotion | Feature::CatDepth | Feature::GlobalMotion => 2,
            Feature::Semantic => NUM_CLASSES,
            Feature::RawDepth => 1,
        }
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFeature(String::from(s)))
    }
}

/// Which inputs are built and consumed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub bbox: bool,
    pub pose: bool,
    pub speed: bool,
    pub local_content: bool,
    pub local_motion: bool,
    pub semantic: bool,
    pub cat_depth: bool,
    pub global_motion: bool,
    pub raw_depth: bool,
}

impl FeatureSet {
    /// Bounding box, pose, speed, local content and semantic context.
    pub const BASELINE: FeatureSet = FeatureSet {
        bbox: true,
        pose: true,
        speed: true,
        local_content: true,
        local_motion: false,
        semantic: true,
        cat_depth: false,
        global_motion: false,
        raw_depth: false,
    };

    pub const ALL: FeatureSet = FeatureSet {
        bbox: true,
        pose: true,
        speed: true,
        local_content: true,
        local_motion: true,
        semantic: true,
        cat_depth: true,
        global_motion: true,
        raw_depth: true,
    };

    pub fn get(&self, f: Feature) -> bool {
        match f {
            Feature::Bbox => self.bbox,
            Feature::Pose => self.pose,
            Feature::Speed => self.speed,
            Feature::LocalContent => self.local_content,
            Feature::LocalMotion => self.local_motion,
            Feature::Semantic => self.semantic,
            Feature::CatDepth => self.cat_depth,
            Feature::GlobalMotion => self.global_motion,
            Feature::RawDepth => self.raw_depth,
        }
    }

    pub fn set(&mut self, f: Feature, on: bool) {
        let slot = match f {
            Feature::Bbox => &mut self.bbox,
            Feature::Pose => &mut self.pose,
            Feature::Speed => &mut self.speed,
            Feature::LocalContent => &mut self.local_content,
            Feature::LocalMotion => &mut self.local_motion,
            Feature::Semantic => &mut self.semantic,
            Feature::CatDepth => &mut self.cat_depth,
            Feature::GlobalMotion => &mut self.global_motion,
            Feature::RawDepth => &mut self.raw_depth,
        };
        *slot = on;
    }

    pub fn with(mut self, f: Feature, on: bool) -> Self {
        self.set(f, on);
        self
    }

    pub fn enabled(&self) -> impl Iterator<Item = Feature> + '_ {
        Feature::ALL.into_iter().filter(|&f| self.get(f))
    }

    pub fn any(&self) -> bool {
        self.enabled().next().is_some()
    }
}

/// One model input. Kinematic tensors are `[m, k]`; context tensors are
/// `[C, m, H, W]`, with scene rasters stacking cameras on the channel axis.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sample {
    pub bbox: Option<Tensor<f32>>,
    pub pose: Option<Tensor<f32>>,
    pub speed: Option<Tensor<f32>>,
    pub local_content: Option<Tensor<f32>>,
    pub local_motion: Option<Tensor<f32>>,
    pub semantic: Option<Tensor<f32>>,
    pub cat_depth: Option<Tensor<f32>>,
    pub global_motion: Option<Tensor<f32>>,
    pub raw_depth: Option<Tensor<f32>>,
    pub sentinel: usize,
    pub label: u8,
}

impl Sample {
    pub fn get(&self, f: Feature) -> Option<&Tensor<f32>> {
        match f {
            Feature::Bbox => self.bbox.as_ref(),
            Feature::Pose => self.pose.as_ref(),
            Feature::Speed => self.speed.as_ref(),
            Feature::LocalContent => self.local_content.as_ref(),
            Feature::LocalMotion => self.local_motion.as_ref(),
            Feature::Semantic => self.semantic.as_ref(),
            Feature::CatDepth => self.cat_depth.as_ref(),
            Feature::GlobalMotion => self.global_motion.as_ref(),
            Feature::RawDepth => self.raw_depth.as_ref(),
        }
    }

    pub fn slot(&mut self, f: Feature) -> &mut Option<Tensor<f32>> {
        match f {
            Feature::Bbox => &mut self.bbox,
            Feature::Pose => &mut self.pose,
            Feature::Speed => &mut self.speed,
            Feature::LocalContent => &mut self.local_content,
            Feature::LocalMotion => &mut self.local_motion,
            Feature::Semantic => &mut self.semantic,
            Feature::CatDepth => &mut self.cat_depth,
            Feature::GlobalMotion => &mut self.global_motion,
            Feature::RawDepth => &mut self.raw_depth,
        }
    }
}

/// Extents used when turning frame records into a [`Sample`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub m: usize,
    pub stride: usize,
    pub crop_side: usize,
    pub raster: usize,
    /// When set, crops a square of this many times the longer box side
    /// around the box centre instead of the box itself.
    #[serde(default)]
    pub crop_scale: Option<f32>,
    pub features: FeatureSet,
}

/// Square crop window of `scale` times the longer side of `b`.
pub fn squarify(b: [f32; 4], scale: f32) -> [f32; 4] {
    let (cx, cy) = ((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0);
    let half = scale * (b[2] - b[0]).max(b[3] - b[1]) / 2.0;
    [cx - half, cy - half, cx + half, cy + half]
}

/// Builds every enabled feature for the window ending at frame `t`.
/// `frames(f)` returns one context per camera for frame `f`.
pub fn build_sample<F>(
    track: &PedestrianTrack,
    speeds: &[f32],
    t: i64,
    layout: &StitchLayout,
    spec: &SampleSpec,
    mut frames: F,
) -> Result<Sample>
where
    F: FnMut(i64) -> Result<Vec<FrameContext>>,
{
    let canvas = (layout.stitched_width, layout.height);
    let kin = assemble_kinematic_seq(track, speeds, t, spec.m, spec.stride, canvas)?;
    let fs = spec.features;
    let window = window_frames(t, spec.m, spec.stride);
    let sentinel = track.at(t).map_or(0, |r| r.camera);
    let cams = layout.cameras;
    let (s, r, m) = (spec.crop_side, spec.raster, spec.m);

    let needs_context =
        fs.local_content || fs.local_motion || fs.semantic || fs.cat_depth || fs.global_motion || fs.raw_depth;
    let mut content = Vec::new();
    let mut motion = Vec::new();
    let mut raster: [Vec<Vec<f32>>; 4] = Default::default();
    if needs_context {
        for &f in &window {
            let ctx = frames(f)?;
            if ctx.len() != cams {
                return Err(dim_mismatch("frame contexts", &[ctx.len()], &[cams]));
            }
            let bbox = track.at(f).map(|r| r.bbox).ok_or(Error::InsufficientHistory {
                needed: f,
                first: track.first_frame(),
            })?;
            let bbox = spec.crop_scale.map_or(bbox, |k| squarify(bbox, k));
            if fs.local_content {
                let rgb: Vec<_> = ctx.iter().map(|c| c.rgb.clone()).collect();
                let pano = crate::multicam::stitch(&rgb, layout)?;
                content.push(crop_local_content(&pano, bbox, s)?);
            }
            if fs.local_motion {
                let flow: Vec<_> = ctx.iter().map(|c| c.flow.clone()).collect();
                let pano = crate::multicam::stitch(&flow, layout)?;
                motion.push(crop_local_motion(&pano, bbox, s)?);
            }
            for cam in &ctx {
                let (w, h) = (cam.width, cam.height);
                if fs.semantic {
                    raster[0].push(build_semantic_context(&cam.instances, w, h, r, r)?.into_data());
                }
                if fs.cat_depth {
                    let cd = build_categorical_depth(&cam.depth, &cam.instances)?;
                    raster[1].push(area_resample(cd.data(), 2, h, w, r, r));
                }
                if fs.global_motion {
                    raster[2].push(area_resample(cam.flow.data(), 2, h, w, r, r));
                }
                if fs.raw_depth {
                    raster[3].push(area_resample(cam.depth.data(), 1, h, w, r, r));
                }
            }
        }
    }

    let mut sample = Sample {
        sentinel,
        label: track.label,
        ..Sample::default()
    };
    if fs.bbox {
        sample.bbox = Some(kin.bbox);
    }
    if fs.pose {
        sample.pose = Some(kin.pose);
    }
    if fs.speed {
        sample.speed = Some(kin.speed);
    }
    if fs.local_content {
        sample.local_content = Some(time_major_to_channel_major(&content, 3, s)?);
    }
    if fs.local_motion {
        sample.local_motion = Some(time_major_to_channel_major(&motion, 2, s)?);
    }
    let kinds = [
        Feature::Semantic,
        Feature::CatDepth,
        Feature::GlobalMotion,
        Feature::RawDepth,
    ];
    for (frames_cams, kind) in raster.iter().zip(kinds) {
        if !fs.get(kind) {
            continue;
        }
        // frames_cams is ordered (frame, camera); each entry is [C, r, r].
        let per = kind.channels();
        let plane = r * r;
        let mut data = vec![0.0f32; cams * per * m * plane];
        for (idx, block) in frames_cams.iter().enumerate() {
            let (t_i, cam) = (idx / cams, idx % cams);
            for c in 0..per {
                let dst = ((cam * per + c) * m + t_i) * plane;
                data[dst..dst + plane].copy_from_slice(&block[c * plane..(c + 1) * plane]);
            }
        }
        *sample.slot(kind) = Some(Tensor::new(&[cams * per, m, r, r], data)?);
    }
    Ok(sample)
}

/// Stacks per-frame `[C, ...]` tensors into `[C, T, ...]`.
fn time_major_to_channel_major(frames: &[Tensor<f32>], channels: usize, side: usize) -> Result<Tensor<f32>> {
    let m = frames.len();
    let plane = side * side;
    let mut data = vec![0.0f32; channels * m * plane];
    for (t, f) in frames.iter().enumerate() {
        for c in 0..channels {
            let dst = (c * m + t) * plane;
            data[dst..dst + plane].copy_from_slice(&f.data()[c * plane..(c + 1) * plane]);
        }
    }
    Tensor::new(&[channels, m, side, side], data)
}

#[cfg(test)]
mod tests;
