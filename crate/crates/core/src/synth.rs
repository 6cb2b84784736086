//! Deterministic street-scene generator. Each scenario follows one
//! pedestrian beside the road while the ego vehicle drives towards them;
//! frames are rendered through a planar pinhole camera into boxes, poses,
//! panoptic masks, depth, optical flow and colour.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    self, class, FrameContext, Instance, PedestrianTrack, Sample, SampleSpec, TrackFrame, NUM_KEYPOINTS, POSE_LEN,
};
use crate::multicam::{make_layout, StitchLayout};
use crate::rng::{substream, Rng as ChaRng};
use crate::tensor::Tensor;

/// Lateral speed a crossing pedestrian exceeds, metres per frame.
pub const CROSS_SPEED: f64 = 0.15;
/// Frames over which the lateral speed must hold.
pub const SUSTAIN_FRAMES: usize = 5;
/// Kerb distance below which a pedestrian can cross, metres.
pub const CROSS_DISTANCE: f64 = 5.0;
/// Ego speed below which drivers yield regardless of braking, km/h.
pub const SLOW_EGO: f64 = 30.0;
/// Speed drop over [`SUSTAIN_FRAMES`] that counts as braking, km/h.
pub const DECEL_EPS: f64 = 0.05;

/// Declared labelling rule evaluated at the decisive frame.
pub fn label_rule(v_lat: &[f64], kerb_distance: f64, speed_now: f64, speed_before: f64) -> bool {
    let sustained = v_lat.len() >= SUSTAIN_FRAMES && v_lat.iter().all(|&v| v > CROSS_SPEED);
    let yielding = speed_now < speed_before - DECEL_EPS || speed_now < SLOW_EGO;
    sustained && kerb_distance < CROSS_DISTANCE && yielding
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Accelerates towards the kerb and steps out in front of a slow or
    /// braking vehicle.
    Crossing,
    /// Waits near the kerb.
    Idle,
    /// Approaches like a crosser while the ego vehicle stays fast.
    FastEgo,
    /// Strolls towards the kerb below the crossing speed.
    SlowApproach,
    /// Approaches fast but is still far from the kerb.
    Far,
    /// Walks away from the road.
    WalkingAway,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EgoProfile {
    Constant,
    /// Speed falls at `rate` km/h per second over the last `duration` seconds.
    Braking {
        rate: f64,
        duration: f64,
    },
    /// Speed rises at `rate` km/h per second over the last `duration` seconds.
    Accelerating {
        rate: f64,
        duration: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub fps: f64,
    pub cameras: usize,
    pub width: usize,
    pub height: usize,
    pub overlap: f64,
    /// Focal length as a multiple of the camera width.
    pub focal_scale: f64,
    pub camera_height: f64,
    pub ped_height: f64,
    pub ped_width: f64,
    /// Lateral distance from the lane centre to each kerb, metres.
    pub kerb: f64,
    /// Lateral distance of the building facades, metres.
    pub facade: f64,
    pub facade_height: f64,
    /// Depth encoding `1 / (1 + z / z_scale)`.
    pub z_scale: f64,
    pub depth_noise: f64,
    pub crossing_fraction: f64,
    /// Non-crossing regime weights: idle, fast ego, slow approach, far,
    /// walking away.
    pub regime_weights: [f64; 5],
    /// Frame on which the label rule is evaluated; crossers step out here.
    pub decision_frame: i64,
    /// Range of prediction horizons, seconds, for the decisive moment of
    /// training samples.
    pub horizon: (f64, f64),
    /// Longest history any consumer will request before a decisive moment,
    /// seconds; the pedestrian stays in view over it.
    pub history: f64,
    /// Standard deviation of per-frame box centre noise, pixels.
    pub bbox_jitter: f64,
    /// Standard deviation of per-frame relative box size noise.
    pub bbox_scale_jitter: f64,
    pub max_parked: usize,
    pub lead_vehicle_prob: f64,
    pub max_bystanders: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            cameras: 1,
            width: 128,
            height: 128,
            overlap: 0.1,
            focal_scale: 1.0,
            camera_height: 1.5,
            ped_height: 1.7,
            ped_width: 0.5,
            kerb: 2.0,
            facade: 16.0,
            facade_height: 12.0,
            z_scale: 10.0,
            depth_noise: 0.03,
            crossing_fraction: 0.35,
            regime_weights: [0.3, 0.25, 0.15, 0.15, 0.15],
            decision_frame: 240,
            horizon: (0.5, 1.0),
            history: 7.5,
            bbox_jitter: 0.0,
            bbox_scale_jitter: 0.0,
            max_parked: 2,
            lead_vehicle_prob: 0.5,
            max_bystanders: 2,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::BadConfig(format!("generator: {msg}")));
        if self.fps.is_nan() || self.fps <= 0.0 {
            return bad("fps must be positive");
        }
        if !(0.0..=1.0).contains(&self.crossing_fraction) {
            return bad("crossing fraction outside [0, 1]");
        }
        if self.regime_weights.iter().any(|w| *w < 0.0) || self.regime_weights.iter().sum::<f64>() <= 0.0 {
            return bad("regime weights must be non-negative with a positive sum");
        }
        if !(self.horizon.0 >= 0.0 && self.horizon.1 >= self.horizon.0) {
            return bad("horizon range");
        }
        let history = (self.history * self.fps).ceil() as i64;
        if self.decision_frame < history {
            return bad("decision frame leaves too little history");
        }
        if self.focal_scale <= 0.0 || self.z_scale <= 0.0 || self.ped_height <= 0.0 || self.ped_width <= 0.0 {
            return bad("geometry must be positive");
        }
        if self.bbox_jitter < 0.0 || self.bbox_scale_jitter < 0.0 || self.depth_noise < 0.0 {
            return bad("noise levels must be non-negative");
        }
        make_layout(self.cameras, self.width, self.height, self.overlap).map(|_| ())
    }

    pub fn layout(&self) -> Result<StitchLayout> {
        make_layout(self.cameras, self.width, self.height, self.overlap)
    }

    pub fn focal(&self) -> f64 {
        self.focal_scale * self.width as f64
    }

    /// Largest |X / Z| that still projects inside the stitched canvas.
    pub fn half_fov_tan(&self) -> f64 {
        let sw = self.layout().map_or(self.width, |l| l.stitched_width);
        0.5 * sw as f64 / self.focal()
    }

    pub fn depth_value(&self, z: f64) -> f64 {
        1.0 / (1.0 + z / self.z_scale)
    }
}

/// Knobs that fully determine a scenario's pedestrian and ego motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub regime: Regime,
    /// +1 for the right kerb, -1 for the left.
    pub side: f64,
    /// Kerb distance at the decision frame, metres.
    pub kerb_distance: f64,
    /// Peak lateral speed towards the road, metres per frame; negative walks
    /// away.
    pub v_peak: f64,
    /// Time constant of the approach ramp, seconds.
    pub ramp: f64,
    pub sway_amp: f64,
    pub sway_period: f64,
    pub ego_speed: f64,
    pub ego: EgoProfile,
    /// Distance ahead of the ego vehicle at the decision frame, metres; when
    /// `None` the nearest distance that keeps the pedestrian in view is used.
    pub z_decision: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub class: u32,
    pub x: f64,
    /// Parked vehicles sit at a fixed road position; a lead vehicle keeps a
    /// fixed gap.
    pub z: f64,
    pub parked: bool,
    pub width: f64,
    pub height: f64,
    pub color: [f32; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bystander {
    pub x: f64,
    pub z: f64,
    pub color: [f32; 3],
}

/// One generated episode. Arrays are indexed by frame and run one frame past
/// the decision frame so flow is defined on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub index: u64,
    pub noise_seed: u64,
    pub params: ScenarioParams,
    pub decision_frame: i64,
    /// Decisive moment used for training samples.
    pub sample_frame: i64,
    pub kerb_distance: Vec<f64>,
    pub ego_speed: Vec<f64>,
    /// Distance travelled by the ego vehicle, metres.
    pub ego_travel: Vec<f64>,
    pub walk_phase: Vec<f64>,
    /// Road position of the pedestrian, measured from the ego start.
    pub ped_z: f64,
    pub color: [f32; 3],
    pub vehicles: Vec<Vehicle>,
    pub bystanders: Vec<Bystander>,
    pub label: u8,
    pub crossing_frame: Option<i64>,
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn any_ego(rng: &mut impl Rng) -> (f64, EgoProfile) {
    let speed = uniform(rng, 8.0, 50.0);
    let r: f64 = rng.random();
    let ego = if r < 0.5 {
        EgoProfile::Constant
    } else if r < 0.85 {
        EgoProfile::Braking {
            rate: uniform(rng, 2.0, 5.0),
            duration: uniform(rng, 1.0, 4.0),
        }
    } else {
        EgoProfile::Accelerating {
            rate: uniform(rng, 1.0, 3.0),
            duration: uniform(rng, 1.0, 3.0),
        }
    };
    (speed, ego)
}

/// Samples a regime and its motion parameters.
pub fn sample_params(rng: &mut impl Rng, cfg: &GenConfig) -> ScenarioParams {
    let regime = if rng.random_bool(cfg.crossing_fraction) {
        Regime::Crossing
    } else {
        let total: f64 = cfg.regime_weights.iter().sum();
        let mut pick = uniform(rng, 0.0, total);
        let regimes = [
            Regime::Idle,
            Regime::FastEgo,
            Regime::SlowApproach,
            Regime::Far,
            Regime::WalkingAway,
        ];
        let mut chosen = Regime::Idle;
        for (r, w) in regimes.into_iter().zip(cfg.regime_weights) {
            if pick < w {
                chosen = r;
                break;
            }
            pick -= w;
        }
        chosen
    };
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let sway_amp = uniform(rng, 0.0, 0.008);
    let sway_period = uniform(rng, 20.0, 60.0);
    let ramp = uniform(rng, 0.4, 1.2);
    fn fast(rng: &mut impl Rng) -> f64 {
        uniform(rng, 0.17, 0.25)
    }
    let (kerb_distance, v_peak, ego_speed, ego) = match regime {
        Regime::Crossing => {
            let d = uniform(rng, 0.3, 2.0);
            let v = fast(rng);
            let speed = uniform(rng, 5.0, 22.0);
            let ego = if rng.random_bool(0.5) {
                EgoProfile::Constant
            } else {
                EgoProfile::Braking {
                    rate: uniform(rng, 2.0, 5.0),
                    duration: uniform(rng, 1.0, 4.0),
                }
            };
            (d, v, speed, ego)
        }
        Regime::FastEgo => {
            let d = uniform(rng, 0.3, 2.0);
            let v = fast(rng);
            let speed = uniform(rng, 40.0, 60.0);
            let ego = if rng.random_bool(0.7) {
                EgoProfile::Constant
            } else {
                EgoProfile::Accelerating {
                    rate: uniform(rng, 1.0, 3.0),
                    duration: uniform(rng, 1.0, 3.0),
                }
            };
            (d, v, speed, ego)
        }
        Regime::Idle => {
            let (speed, ego) = any_ego(rng);
            (uniform(rng, 0.3, 4.0), 0.0, speed, ego)
        }
        Regime::SlowApproach => {
            let (speed, ego) = any_ego(rng);
            (uniform(rng, 0.3, 2.0), uniform(rng, 0.01, 0.07), speed, ego)
        }
        Regime::Far => {
            let (speed, ego) = any_ego(rng);
            (uniform(rng, 6.0, 9.0), fast(rng), speed, ego)
        }
        Regime::WalkingAway => {
            let (speed, ego) = any_ego(rng);
            (uniform(rng, 4.0, 9.0), -uniform(rng, 0.015, 0.04), speed, ego)
        }
    };
    ScenarioParams {
        regime,
        side,
        kerb_distance,
        v_peak,
        ramp,
        sway_amp,
        sway_period,
        ego_speed,
        ego,
        z_decision: None,
    }
}

fn ego_speed_at(p: &ScenarioParams, frames_before: f64, fps: f64) -> f64 {
    let secs = frames_before / fps;
    let s = match p.ego {
        EgoProfile::Constant => p.ego_speed,
        EgoProfile::Braking { rate, duration } => p.ego_speed + rate * secs.min(duration),
        EgoProfile::Accelerating { rate, duration } => p.ego_speed - rate * secs.min(duration),
    };
    s.max(0.0)
}

/// Lateral speed towards the road `k` frames before the decision frame.
fn lateral_speed(p: &ScenarioParams, k: f64, fps: f64) -> f64 {
    let sway = p.sway_amp * (core::f64::consts::TAU * k / p.sway_period).sin();
    let base = match p.regime {
        Regime::Idle => 0.0,
        Regime::WalkingAway => p.v_peak,
        _ => {
            let hold = (SUSTAIN_FRAMES - 1) as f64;
            if k <= hold {
                p.v_peak
            } else {
                p.v_peak * (-(k - hold) / (p.ramp * fps)).exp()
            }
        }
    };
    base + sway
}

/// Deterministically expands parameters into per-frame kinematics and scene
/// dressing. `rng` only draws the dressing and the training horizon.
pub fn build_scenario(params: ScenarioParams, cfg: &GenConfig, index: u64, rng: &mut impl Rng) -> Result<Scenario> {
    cfg.validate()?;
    let td = cfg.decision_frame;
    let n = td as usize + 2;
    let fps = cfg.fps;

    let ego_speed: Vec<f64> = (0..n)
        .map(|f| ego_speed_at(&params, (td - f as i64) as f64, fps))
        .collect();
    let mut ego_travel = vec![0.0; n];
    for f in 1..n {
        ego_travel[f] = ego_travel[f - 1] + ego_speed[f - 1] / 3.6 / fps;
    }

    // integrate kerb distance backwards from the decision frame
    let mut kerb_distance = vec![0.0; n];
    kerb_distance[td as usize] = params.kerb_distance;
    kerb_distance[td as usize + 1] = (params.kerb_distance - lateral_speed(&params, -1.0, fps)).max(0.0);
    for f in (0..td as usize).rev() {
        let v_next = lateral_speed(&params, (td - f as i64 - 1) as f64, fps);
        kerb_distance[f] = (kerb_distance[f + 1] + v_next).max(0.3);
    }
    let mut walk_phase = vec![0.0; n];
    walk_phase[0] = uniform(rng, 0.0, core::f64::consts::TAU);
    for f in 1..n {
        let step = (kerb_distance[f - 1] - kerb_distance[f]).abs();
        walk_phase[f] = walk_phase[f - 1] + core::f64::consts::TAU * step / 1.4;
    }

    // nearest decision distance keeping the pedestrian in view over the history
    let first = td - (cfg.history * fps).ceil() as i64;
    let tan = 0.9 * cfg.half_fov_tan();
    let mut z_min: f64 = 8.0;
    for f in first.max(0)..=td {
        let x = cfg.kerb + kerb_distance[f as usize] + cfg.ped_width;
        let travel = ego_travel[td as usize] - ego_travel[f as usize];
        z_min = z_min.max(x / tan - travel);
    }
    let z_decision = match params.z_decision {
        Some(z) => z,
        None => z_min + uniform(rng, 0.0, 20.0),
    };
    let ped_z = z_decision + ego_travel[td as usize];

    let label = {
        let v: Vec<f64> = (0..SUSTAIN_FRAMES)
            .map(|k| kerb_distance[(td - k as i64) as usize - 1] - kerb_distance[(td - k as i64) as usize])
            .collect();
        let now = ego_speed[td as usize];
        let before = ego_speed[(td - SUSTAIN_FRAMES as i64) as usize];
        label_rule(&v, kerb_distance[td as usize], now, before)
    };

    let horizon = uniform(rng, cfg.horizon.0, cfg.horizon.1);
    let sample_frame = td - (horizon * fps).round() as i64;
    let color = random_color(rng);

    let mut vehicles = Vec::new();
    for _ in 0..rng.random_range(0..=cfg.max_parked) {
        let (class, width, height) = vehicle_shape(rng);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        vehicles.push(Vehicle {
            class,
            x: side * (cfg.kerb - width / 2.0 - 0.1),
            z: uniform(rng, 10.0, 90.0),
            parked: true,
            width,
            height,
            color: random_color(rng),
        });
    }
    if rng.random_bool(cfg.lead_vehicle_prob) {
        let (class, width, height) = vehicle_shape(rng);
        vehicles.push(Vehicle {
            class,
            x: 0.0,
            z: uniform(rng, 15.0, 40.0),
            parked: false,
            width,
            height,
            color: random_color(rng),
        });
    }
    let bystanders = (0..rng.random_range(0..=cfg.max_bystanders))
        .map(|_| {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Bystander {
                x: side * (cfg.kerb + uniform(rng, 1.0, 10.0)),
                z: uniform(rng, 20.0, 90.0),
                color: random_color(rng),
            }
        })
        .collect();

    Ok(Scenario {
        index,
        noise_seed: rng.random(),
        decision_frame: td,
        sample_frame,
        kerb_distance,
        ego_speed,
        ego_travel,
        walk_phase,
        ped_z,
        color,
        vehicles,
        bystanders,
        label: label as u8,
        crossing_frame: if label { Some(td) } else { None },
        params,
    })
}

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn vehicle_shape(rng: &mut impl Rng) -> (u32, f64, f64) {
    match rng.random_range(0..10) {
        0..=6 => (class::CAR, 1.8, 1.5),
        7 | 8 => (class::TRUCK, 2.4, 3.0),
        _ => (class::BUS, 2.5, 3.2),
    }
}

/// Draws scenario `index` of the dataset seeded with `seed`.
pub fn generate_scenario(seed: u64, index: u64, cfg: &GenConfig) -> Result<Scenario> {
    let mut rng = substream(seed, index);
    let params = sample_params(&mut rng, cfg);
    build_scenario(params, cfg, index, &mut rng)
}

/// Panoptic rendering of the whole stitched canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct Panorama {
    pub width: usize,
    pub height: usize,
    pub classes: Vec<u8>,
    /// Instance id per pixel, 0 for background.
    pub instances: Vec<u32>,
    pub depth: Vec<f32>,
    /// `[2, H, W]`.
    pub flow: Vec<f32>,
    /// `[3, H, W]`.
    pub rgb: Vec<f32>,
}

pub const TARGET_ID: u32 = 1;

#[derive(Clone, Copy, Debug)]
struct Object {
    id: u32,
    class: u32,
    now: [f64; 4],
    next: [f64; 4],
    z: f64,
    color: [f32; 3],
}

fn class_color(c: u32) -> [f32; 3] {
    match c {
        class::ROAD => [0.3, 0.3, 0.32],
        class::SIDEWALK => [0.62, 0.6, 0.55],
        class::BUILDING => [0.55, 0.4, 0.33],
        class::SKY => [0.55, 0.72, 0.92],
        _ => [0.5, 0.5, 0.5],
    }
}

impl Scenario {
    pub fn frames(&self) -> usize {
        self.ego_speed.len()
    }

    /// Lateral speed towards the road arriving at frame `f`, metres per frame.
    pub fn lateral_velocity(&self, f: i64) -> f64 {
        let i = f.clamp(1, self.frames() as i64 - 1) as usize;
        self.kerb_distance[i - 1] - self.kerb_distance[i]
    }

    /// Re-derives the label from the stored kinematics.
    pub fn rule_label(&self) -> u8 {
        let td = self.decision_frame;
        let v: Vec<f64> = (0..SUSTAIN_FRAMES as i64)
            .map(|k| self.lateral_velocity(td - k))
            .collect();
        let now = self.ego_speed[td as usize];
        let before = self.ego_speed[(td - SUSTAIN_FRAMES as i64) as usize];
        label_rule(&v, self.kerb_distance[td as usize], now, before) as u8
    }

    /// Camera-frame position `(X, Z)` of the pedestrian's footprint centre.
    pub fn ped_position(&self, cfg: &GenConfig, f: i64) -> (f64, f64) {
        let i = f.clamp(0, self.frames() as i64 - 1) as usize;
        let x = self.params.side * (cfg.kerb + self.kerb_distance[i] + cfg.ped_width / 2.0);
        (x, self.ped_z - self.ego_travel[i])
    }

    fn vehicle_z(&self, v: &Vehicle, i: usize) -> f64 {
        if v.parked {
            v.z - self.ego_travel[i]
        } else {
            v.z
        }
    }

    fn objects(&self, cfg: &GenConfig, f: i64) -> Vec<Object> {
        let i = f as usize;
        let j = (i + 1).min(self.frames() - 1);
        let mut out = Vec::new();
        let (x0, z0) = self.ped_position(cfg, i as i64);
        let (x1, z1) = self.ped_position(cfg, j as i64);
        let (w, h) = (cfg.ped_width, cfg.ped_height);
        out.push(Object {
            id: TARGET_ID,
            class: class::PERSON,
            now: project_box(cfg, x0, z0, w, h),
            next: project_box(cfg, x1, z1, w, h),
            z: z0,
            color: self.color,
        });
        for (k, b) in self.bystanders.iter().enumerate() {
            let (za, zb) = (b.z - self.ego_travel[i], b.z - self.ego_travel[j]);
            if za > 1.0 {
                out.push(Object {
                    id: 2 + k as u32,
                    class: class::PERSON,
                    now: project_box(cfg, b.x, za, w, h),
                    next: project_box(cfg, b.x, zb.max(0.5), w, h),
                    z: za,
                    color: b.color,
                });
            }
        }
        for (k, v) in self.vehicles.iter().enumerate() {
            let (za, zb) = (self.vehicle_z(v, i), self.vehicle_z(v, j));
            if za > 1.0 {
                out.push(Object {
                    id: 10 + k as u32,
                    class: v.class,
                    now: project_box(cfg, v.x, za, v.width, v.height),
                    next: project_box(cfg, v.x, zb.max(0.5), v.width, v.height),
                    z: za,
                    color: v.color,
                });
            }
        }
        out
    }

    /// Ground-truth box of the pedestrian in stitched pixels.
    pub fn true_bbox(&self, cfg: &GenConfig, f: i64) -> [f64; 4] {
        let (x, z) = self.ped_position(cfg, f);
        project_box(cfg, x, z, cfg.ped_width, cfg.ped_height)
    }

    fn frame_rng(&self, f: i64, salt: u64) -> ChaRng {
        substream(self.noise_seed ^ salt, f as u64)
    }

    /// Annotated box: the true box with the configured detector noise.
    pub fn annotated_bbox(&self, cfg: &GenConfig, f: i64) -> [f64; 4] {
        let b = self.true_bbox(cfg, f);
        if cfg.bbox_jitter == 0.0 && cfg.bbox_scale_jitter == 0.0 {
            return b;
        }
        let mut rng = self.frame_rng(f, 0xB0B0);
        let n = |rng: &mut ChaRng| -> f64 { StandardNormal.sample(rng) };
        let (cx, cy) = (
            (b[0] + b[2]) / 2.0 + cfg.bbox_jitter * n(&mut rng),
            (b[1] + b[3]) / 2.0 + cfg.bbox_jitter * n(&mut rng),
        );
        let scale = (1.0 + cfg.bbox_scale_jitter * n(&mut rng)).max(0.3);
        let (hw, hh) = ((b[2] - b[0]) * scale / 2.0, (b[3] - b[1]) * scale / 2.0);
        [cx - hw, cy - hh, cx + hw, cy + hh]
    }

    /// 17 keypoints in COCO order laid out inside `bbox`, with limbs swinging
    /// in step with the walk phase.
    pub fn pose(&self, f: i64, bbox: [f64; 4]) -> Vec<f32> {
        let i = f.clamp(0, self.frames() as i64 - 1) as usize;
        let speed = if i > 0 {
            (self.kerb_distance[i - 1] - self.kerb_distance[i]).abs()
        } else {
            0.0
        };
        let swing = (speed / 0.05).min(1.0) * self.walk_phase[i].sin();
        let (arm, leg) = (0.15 * swing, 0.22 * swing);
        let template: [(f64, f64); NUM_KEYPOINTS] = [
            (0.5, 0.06),
            (0.45, 0.04),
            (0.55, 0.04),
            (0.38, 0.06),
            (0.62, 0.06),
            (0.25, 0.2),
            (0.75, 0.2),
            (0.18 + arm, 0.35),
            (0.82 - arm, 0.35),
            (0.15 + 2.0 * arm, 0.5),
            (0.85 - 2.0 * arm, 0.5),
            (0.35, 0.52),
            (0.65, 0.52),
            (0.35 - leg, 0.75),
            (0.65 + leg, 0.75),
            (0.35 - 2.0 * leg, 0.98),
            (0.65 + 2.0 * leg, 0.98),
        ];
        let (w, h) = (bbox[2] - bbox[0], bbox[3] - bbox[1]);
        let mut out = Vec::with_capacity(POSE_LEN);
        for (u, v) in template {
            out.push((bbox[0] + u * w) as f32);
            out.push((bbox[1] + v * h) as f32);
        }
        out
    }

    /// Annotated track over frames `0..=decision_frame`.
    pub fn track(&self, cfg: &GenConfig, layout: &StitchLayout) -> PedestrianTrack {
        let (sw, h) = (layout.stitched_width as f64, layout.height as f64);
        let frames = (0..=self.decision_frame)
            .map(|f| {
                let b = self.annotated_bbox(cfg, f);
                let cx = (b[0] + b[2]) / 2.0;
                let visible = b[2] > 0.0 && b[0] < sw && b[3] > 0.0 && b[1] < h;
                let mut pose = self.pose(f, b);
                for k in 0..NUM_KEYPOINTS {
                    let (x, y) = (pose[2 * k] as f64, pose[2 * k + 1] as f64);
                    if !(0.0..sw).contains(&x) || !(0.0..h).contains(&y) {
                        pose[2 * k] = 0.0;
                        pose[2 * k + 1] = 0.0;
                    }
                }
                TrackFrame {
                    frame: f,
                    bbox: b.map(|v| v as f32),
                    pose,
                    camera: layout.camera_at(cx.clamp(0.0, sw - 1.0)).unwrap_or(layout.front()),
                    visible,
                }
            })
            .collect();
        PedestrianTrack {
            ped_id: self.index as u32,
            frames,
            label: self.label,
            crossing_frame: self.crossing_frame,
        }
    }

    /// Ego speed per frame in km/h.
    pub fn speeds(&self) -> Vec<f32> {
        self.ego_speed.iter().map(|&s| s as f32).collect()
    }

    /// Renders frame `f` over the whole stitched canvas.
    pub fn render(&self, cfg: &GenConfig, layout: &StitchLayout, f: i64) -> Panorama {
        let (w, h) = (layout.stitched_width, layout.height);
        let i = f.clamp(0, self.frames() as i64 - 1) as usize;
        let step = self.ego_speed[i] / 3.6 / cfg.fps;
        let focal = cfg.focal();
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let n = w * h;
        let mut classes = vec![class::SKY as u8; n];
        let mut instances = vec![0u32; n];
        let mut depth = vec![0.0f32; n];
        let mut flow = vec![0.0f32; 2 * n];

        for y in 0..h {
            let b = (y as f64 + 0.5 - cy) / focal;
            for x in 0..w {
                let a = (x as f64 + 0.5 - cx) / focal;
                let p = y * w + x;
                let z_ground = if b > 0.0 { cfg.camera_height / b } else { f64::INFINITY };
                let z_facade = if a != 0.0 { cfg.facade / a.abs() } else { f64::INFINITY };
                let (c, z, height) = if z_ground < z_facade {
                    let lateral = (a * z_ground).abs();
                    let c = if lateral < cfg.kerb {
                        class::ROAD
                    } else {
                        class::SIDEWALK
                    };
                    (c, z_ground, 0.0)
                } else {
                    let height = cfg.camera_height - b * z_facade;
                    if (0.0..=cfg.facade_height).contains(&height) {
                        (class::BUILDING, z_facade, height)
                    } else {
                        continue;
                    }
                };
                classes[p] = c as u8;
                depth[p] = cfg.depth_value(z) as f32;
                let z2 = (z - step).max(0.5);
                let (u1, v1) = (cx + focal * a * z / z2, cy + focal * (cfg.camera_height - height) / z2);
                flow[p] = (u1 - (x as f64 + 0.5)) as f32;
                flow[n + p] = (v1 - (y as f64 + 0.5)) as f32;
            }
        }

        let mut objects = self.objects(cfg, f);
        objects.sort_by(|a, b| b.z.total_cmp(&a.z));
        let mut colors: Vec<(u32, [f32; 3])> = Vec::new();
        for o in &objects {
            let d = cfg.depth_value(o.z) as f32;
            let b = o.now;
            let x0 = ((b[0] - 0.5).ceil().max(0.0)) as usize;
            let x1 = ((b[2] - 0.5).ceil().min(w as f64)).max(0.0) as usize;
            let y0 = ((b[1] - 0.5).ceil().max(0.0)) as usize;
            let y1 = ((b[3] - 0.5).ceil().min(h as f64)).max(0.0) as usize;
            let mut cells: Vec<(usize, usize)> = Vec::new();
            for y in y0..y1 {
                for x in x0..x1 {
                    cells.push((x, y));
                }
            }
            if cells.is_empty() {
                let (mx, my) = ((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0);
                if (0.0..w as f64).contains(&mx) && (0.0..h as f64).contains(&my) {
                    cells.push((mx as usize, my as usize));
                }
            }
            let (bw, bh) = (b[2] - b[0], b[3] - b[1]);
            let (nw, nh) = (o.next[2] - o.next[0], o.next[3] - o.next[1]);
            for (x, y) in cells {
                let p = y * w + x;
                classes[p] = o.class as u8;
                instances[p] = o.id;
                depth[p] = d;
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let u1 = o.next[0] + (px - b[0]) * nw / bw;
                let v1 = o.next[1] + (py - b[1]) * nh / bh;
                flow[p] = (u1 - px) as f32;
                flow[n + p] = (v1 - py) as f32;
            }
            colors.push((o.id, o.color));
        }

        if cfg.depth_noise > 0.0 {
            let mut rng = self.frame_rng(f, 0xDE97);
            for v in depth.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v = (*v + (cfg.depth_noise * e) as f32).clamp(0.0, 1.0);
            }
        }

        let mut rgb = vec![0.0f32; 3 * n];
        for p in 0..n {
            let col = if instances[p] != 0 {
                colors
                    .iter()
                    .find(|(id, _)| *id == instances[p])
                    .map_or([0.5; 3], |c| c.1)
            } else {
                class_color(classes[p] as u32)
            };
            for c in 0..3 {
                rgb[c * n + p] = col[c];
            }
        }
        Panorama {
            width: w,
            height: h,
            classes,
            instances,
            depth,
            flow,
            rgb,
        }
    }

    /// Per-camera views of frame `f`.
    pub fn frame_contexts(&self, cfg: &GenConfig, layout: &StitchLayout, f: i64) -> Vec<FrameContext> {
        let pano = self.render(cfg, layout, f);
        (0..layout.cameras).map(|cam| camera_view(&pano, layout, cam)).collect()
    }

    /// Model input for the window ending at frame `t`.
    pub fn sample(&self, cfg: &GenConfig, layout: &StitchLayout, spec: &SampleSpec, t: i64) -> Result<Sample> {
        let track = self.track(cfg, layout);
        features::build_sample(&track, &self.speeds(), t, layout, spec, |f| {
            Ok(self.frame_contexts(cfg, layout, f))
        })
    }
}

/// Projects an upright box of footprint centre `(x, z)` into stitched pixels.
pub fn project_box(cfg: &GenConfig, x: f64, z: f64, width: f64, height: f64) -> [f64; 4] {
    let sw = cfg.layout().map_or(cfg.width, |l| l.stitched_width) as f64;
    let (cx, cy) = (sw / 2.0, cfg.height as f64 / 2.0);
    let f = cfg.focal();
    let z = z.max(0.5);
    [
        cx + f * (x - width / 2.0) / z,
        cy + f * (cfg.camera_height - height) / z,
        cx + f * (x + width / 2.0) / z,
        cy + f * cfg.camera_height / z,
    ]
}

/// Cuts camera `cam`'s canvas out of the stitched rendering.
pub fn camera_view(pano: &Panorama, layout: &StitchLayout, cam: usize) -> FrameContext {
    let (w, h, pw) = (layout.width, layout.height, pano.width);
    let start = layout.window_start(cam) as usize;
    let n = w * h;
    let pn = pw * h;
    let mut rgb = vec![0.0f32; 3 * n];
    let mut flow = vec![0.0f32; 2 * n];
    let mut depth = vec![0.0f32; n];
    let mut by_id: Vec<Instance> = Vec::new();
    let mut stuff: Vec<Instance> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (p, q) = (y * w + x, y * pw + start + x);
            depth[p] = pano.depth[q];
            for c in 0..3 {
                rgb[c * n + p] = pano.rgb[c * pn + q];
            }
            for c in 0..2 {
                flow[c * n + p] = pano.flow[c * pn + q];
            }
            let id = pano.instances[q];
            let class = pano.classes[q] as u32;
            let bucket = if id != 0 { &mut by_id } else { &mut stuff };
            let key = if id != 0 { id } else { 1000 + class };
            match bucket.iter_mut().find(|i| i.id == key) {
                Some(inst) => inst.pixels.push(p as u32),
                None => bucket.push(Instance {
                    class,
                    id: key,
                    pixels: vec![p as u32],
                }),
            }
        }
    }
    stuff.sort_by_key(|i| i.id);
    by_id.sort_by_key(|i| i.id);
    stuff.extend(by_id);
    FrameContext {
        width: w,
        height: h,
        rgb: Tensor::new(&[3, h, w], rgb).expect("extents"),
        depth: Tensor::new(&[h, w], depth).expect("extents"),
        instances: stuff,
        flow: Tensor::new(&[2, h, w], flow).expect("extents"),
    }
}

/// The three features the label rule reads, in the order
/// (mean lateral speed, kerb distance, mean ego speed) over the last
/// [`SUSTAIN_FRAMES`] frames before the decision.
pub fn rule_features(s: &Scenario) -> [f64; 3] {
    let td = s.decision_frame;
    let k = SUSTAIN_FRAMES as i64;
    let v = (0..k).map(|j| s.lateral_velocity(td - j)).sum::<f64>() / k as f64;
    let e = (0..k).map(|j| s.ego_speed[(td - j) as usize]).sum::<f64>() / k as f64;
    [v, s.kerb_distance[td as usize], e]
}
