//! Synthetic dataset on disk: JSON-lines annotations, per-camera `.pipt`
//! maps and a manifest with file digests. Scenarios are regenerated from the
//! manifest's seed and generator config when a dataset is loaded.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pipnet_core::features::{FrameContext, Instance, Sample};
use pipnet_core::model::ModelConfig;
use pipnet_core::multicam::StitchLayout;
use pipnet_core::rng::substream;
use pipnet_core::synth::{camera_view, generate_scenario, GenConfig, Scenario};
use pipnet_core::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::digest::{file_sha256, sha256_hex};
use crate::error::{Error, Result};
use crate::pipt;

pub const MANIFEST: &str = "manifest.json";
pub const ANNOTATIONS: &str = "annotations.jsonl";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Val => "val",
        }
    }
}

/// Split proportions: `pie` is 50/40/10 train/test/val, `urban` 80/20
/// train/test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    #[default]
    Pie,
    Urban,
}

impl SplitMode {
    pub fn ratios(self) -> &'static [(Split, f64)] {
        match self {
            SplitMode::Pie => &[(Split::Train, 0.5), (Split::Test, 0.4), (Split::Val, 0.1)],
            SplitMode::Urban => &[(Split::Train, 0.8), (Split::Test, 0.2)],
        }
    }
}

/// Seeded split assignment. Each split gets `floor(ratio * n)` scenarios and
/// the remainder goes to training.
pub fn assign_splits(n: usize, mode: SplitMode, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, u64::MAX - 1));
    let mut out = vec![Split::Train; n];
    let mut pos = 0;
    for &(split, ratio) in mode.ratios() {
        if split == Split::Train {
            continue;
        }
        let k = (ratio * n as f64 + 1e-9).floor() as usize;
        for &i in &order[pos..pos + k] {
            out[i] = split;
        }
        pos += k;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub mode: SplitMode,
    #[serde(default)]
    pub gen: GenConfig,
    /// Scenarios, from index 0, whose decisive-frame maps are written.
    #[serde(default = "default_max_maps")]
    pub max_maps: usize,
}

fn default_max_maps() -> usize {
    100
}

impl DatasetConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            mode: SplitMode::Pie,
            gen: GenConfig::default(),
            max_maps: default_max_maps(),
        }
    }
}

/// One annotated (frame, pedestrian) record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub frame: i64,
    pub cam: usize,
    pub ped_id: u32,
    pub bbox: [f32; 4],
    pub pose: Vec<f32>,
    pub speed: f32,
    pub label: u8,
    pub crossing_frame: Option<i64>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: DatasetConfig,
    pub counts: BTreeMap<Split, usize>,
    pub positives: usize,
    pub splits: Vec<Split>,
    pub files: Vec<FileEntry>,
    /// SHA-256 over the manifest with this field empty.
    pub digest: String,
}

impl Manifest {
    fn compute_digest(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.digest.clear();
        Ok(sha256_hex(&serde_json::to_vec(&copy)?))
    }
}

/// Maps of one camera at one frame: depth `[H, W]`, labels `[2, H, W]`
/// (class id, instance id) and flow `[2, H, W]`.
pub fn camera_maps(ctx: &FrameContext) -> [(&'static str, Tensor<f32>); 3] {
    let (h, w) = (ctx.height, ctx.width);
    let mut labels = Tensor::zeros(&[2, h, w]);
    for inst in &ctx.instances {
        for &p in &inst.pixels {
            labels.data_mut()[p as usize] = inst.class as f32;
            labels.data_mut()[h * w + p as usize] = inst.id as f32;
        }
    }
    [
        ("depth", ctx.depth.clone()),
        ("labels", labels),
        ("flow", ctx.flow.clone()),
    ]
}

/// Rebuilds instances from a `[2, H, W]` labels map.
pub fn instances_from_labels(labels: &Tensor<f32>) -> Result<Vec<Instance>> {
    let d = labels.dims();
    if d.len() != 3 || d[0] != 2 {
        return Err(pipnet_core::Error::DimMismatch {
            op: "labels",
            lhs: d.to_vec(),
            rhs: vec![2, 0, 0],
        }
        .into());
    }
    let plane = d[1] * d[2];
    let mut by_id: BTreeMap<u32, Instance> = BTreeMap::new();
    for p in 0..plane {
        let class = labels.data()[p] as u32;
        let id = labels.data()[plane + p] as u32;
        by_id
            .entry(id)
            .or_insert_with(|| Instance {
                class,
                id,
                pixels: Vec::new(),
            })
            .pixels
            .push(p as u32);
    }
    Ok(by_id.into_values().collect())
}

pub fn map_path(index: usize, cam: usize, kind: &str) -> String {
    format!("maps/{index:05}_cam{cam}_{kind}.pipt")
}

/// Generates and writes the dataset under `out`.
pub fn emit_dataset(out: &Path, config: &DatasetConfig) -> Result<Manifest> {
    if config.n < 10 {
        return Err(pipnet_core::Error::BadConfig(format!("dataset needs n >= 10, got {}", config.n)).into());
    }
    let ds = Dataset::generate(config)?;
    fs::create_dir_all(out.join("maps")).map_err(|e| Error::io(out, e))?;

    let ann_path = out.join(ANNOTATIONS);
    let file = fs::File::create(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let mut w = BufWriter::new(file);
    let mut files = Vec::new();
    for (i, sc) in ds.scenarios.iter().enumerate() {
        let track = sc.track(&config.gen, &ds.layout);
        for f in &track.frames {
            let rec = Annotation {
                frame: f.frame,
                cam: f.camera,
                ped_id: track.ped_id,
                bbox: f.bbox,
                pose: f.pose.clone(),
                speed: sc.ego_speed[f.frame as usize] as f32,
                label: track.label,
                crossing_frame: track.crossing_frame,
                split: ds.splits[i],
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(&ann_path, e))?;
        }
        if i < config.max_maps {
            let pano = sc.render(&config.gen, &ds.layout, sc.sample_frame);
            for cam in 0..ds.layout.cameras {
                let ctx = camera_view(&pano, &ds.layout, cam);
                for (kind, t) in camera_maps(&ctx) {
                    let rel = map_path(i, cam, kind);
                    pipt::write(&out.join(&rel), &t)?;
                    files.push(rel);
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(&ann_path, e))?;
    drop(w);
    files.insert(0, ANNOTATIONS.to_string());

    let entries = files
        .into_iter()
        .map(|rel| {
            let p = out.join(&rel);
            let bytes = fs::metadata(&p).map_err(|e| Error::io(&p, e))?.len();
            Ok(FileEntry {
                sha256: file_sha256(&p)?,
                path: rel,
                bytes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = Manifest {
        version: FORMAT_VERSION,
        config: config.clone(),
        counts: ds.counts(),
        positives: ds.scenarios.iter().filter(|s| s.label == 1).count(),
        splits: ds.splits.clone(),
        files: entries,
        digest: String::new(),
    };
    manifest.digest = manifest.compute_digest()?;
    let mpath = out.join(MANIFEST);
    fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

/// Scenarios with their split assignment.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: Option<PathBuf>,
    pub config: DatasetConfig,
    pub layout: StitchLayout,
    pub scenarios: Vec<Scenario>,
    pub splits: Vec<Split>,
}

impl Dataset {
    /// In-memory dataset, identical to what [`emit_dataset`] writes.
    pub fn generate(config: &DatasetConfig) -> Result<Self> {
        let layout = config.gen.layout()?;
        let scenarios = (0..config.n as u64)
            .map(|i| generate_scenario(config.seed, i, &config.gen))
            .collect::<pipnet_core::Result<Vec<_>>>()?;
        Ok(Self {
            root: None,
            config: config.clone(),
            layout,
            splits: assign_splits(config.n, config.mode, config.seed),
            scenarios,
        })
    }

    /// Reads the manifest, checks every listed file digest and regenerates
    /// the scenarios.
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let bytes = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::format(
                &mpath,
                format!("unsupported version {}", manifest.version),
            ));
        }
        if manifest.compute_digest()? != manifest.digest {
            return Err(Error::Digest(mpath));
        }
        for f in &manifest.files {
            let p = dir.join(&f.path);
            if file_sha256(&p)? != f.sha256 {
                return Err(Error::Digest(p));
            }
        }
        let mut ds = Self::generate(&manifest.config)?;
        if ds.splits != manifest.splits {
            return Err(Error::format(&mpath, "split assignment does not match the seed"));
        }
        ds.root = Some(dir.to_path_buf());
        Ok(ds)
    }

    pub fn counts(&self) -> BTreeMap<Split, usize> {
        let mut c = BTreeMap::new();
        for &(s, _) in self.config.mode.ratios() {
            c.insert(s, 0);
        }
        for s in &self.splits {
            *c.entry(*s).or_insert(0) += 1;
        }
        c
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.scenarios.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Model input for scenario `i` with the window ending at frame `t`.
    pub fn sample_at(&self, i: usize, model: &ModelConfig, t: i64) -> Result<Sample> {
        let sc = &self.scenarios[i];
        let s = sc.sample(&self.config.gen, &self.layout, &model.sample_spec(), t)?;
        Ok(model.prepare(&s)?)
    }

    /// Prepared samples of `split` at each scenario's training decisive moment.
    pub fn samples(&self, split: Split, model: &ModelConfig) -> Result<Vec<Sample>> {
        self.indices(split)
            .into_iter()
            .map(|i| self.sample_at(i, model, self.scenarios[i].sample_frame))
            .collect()
    }

    /// `(crossing frame, last annotated frame)` per scenario of `split`.
    pub fn anchors(&self, split: Split) -> (Vec<usize>, Vec<(Option<i64>, i64)>) {
        let idx = self.indices(split);
        let anchors = idx
            .iter()
            .map(|&i| {
                let s = &self.scenarios[i];
                (s.crossing_frame, s.decision_frame)
            })
            .collect();
        (idx, anchors)
    }
}
