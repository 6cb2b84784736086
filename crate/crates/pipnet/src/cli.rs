//! Command-line surface. Every command prints a JSON report to stdout and a
//! table to stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use pipnet_core::check::gradient_suite;
use pipnet_core::eval::{permutation_importance, AblationVariant, ABLATION_VARIANTS};
use pipnet_core::features::build_categorical_depth;
use pipnet_core::model::{ModelConfig, Variant};
use pipnet_core::multicam::stitch;
use pipnet_core::train::{evaluate, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::dataset::{emit_dataset, instances_from_labels, map_path, Dataset, DatasetConfig, Split, SplitMode};
use crate::digest::config_digest;
use crate::error::{Error, Result};
use crate::experiments::{
    ablation_run, etc_run, sweep_footer, temporal_sweep, train_model, Splits, SWEEP_LENGTHS, SWEEP_STRIDES,
};
use crate::pipt;
use crate::report::{print_json, render_table, tabulate, write_csv, Report};

#[derive(Debug, Parser)]
#[command(
    name = "pipnet",
    version,
    about = "Pedestrian crossing-intention experiments on synthetic scenes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dataset directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output path.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Checkpoint file.
    #[arg(long, global = true)]
    pub ckpt: Option<PathBuf>,
    /// Horizons in seconds, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub horizon: Vec<f64>,
    /// Model variant (`alpha`, `beta`) or, for `ablate`, ablation variant ids.
    #[arg(long, global = true, value_delimiter = ',')]
    pub variant: Vec<String>,
    /// CSV copy of the report rows.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<SplitMode>,
        /// Camera count of the synthetic rig.
        #[arg(long)]
        cameras: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train on the train split, validate on val, write a checkpoint.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Metrics of a checkpoint on a split.
    Eval {
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[command(flatten)]
        common: Common,
    },
    /// Metrics at fixed horizons before the crossing event.
    Etc {
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[command(flatten)]
        common: Common,
    },
    /// Train and test the feature-toggle ablation variants.
    Ablate {
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train and test every (stride, sequence length) cell.
    Sweep {
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference gradient checks of every op and both models.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Categorical depth map from a camera's depth and label maps.
    Depthmap {
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 0)]
        cam: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Stitch per-camera maps into one panorama.
    Stitch {
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "depth")]
        kind: String,
        #[command(flatten)]
        common: Common,
    },
    /// Permutation importance of one feature.
    Perm {
        #[arg(long, default_value = "speed")]
        feature: String,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        "val" => Ok(Split::Val),
        _ => Err(format!("unknown split {s}")),
    }
}

fn parse_mode(s: &str) -> std::result::Result<SplitMode, String> {
    match s {
        "pie" => Ok(SplitMode::Pie),
        "urban" => Ok(SplitMode::Urban),
        _ => Err(format!("unknown split mode {s}")),
    }
}

/// Optional overrides read from `--config`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `desk` (default), `full` or `tiny`.
    pub preset: Option<String>,
    pub dataset: Option<DatasetConfig>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                Ok(serde_json::from_slice(&bytes)?)
            }
        }
    }

    fn variant(common: &Common) -> Result<Variant> {
        match common.variant.as_slice() {
            [] => Ok(Variant::Alpha),
            [v] if v == "alpha" => Ok(Variant::Alpha),
            [v] if v == "beta" => Ok(Variant::Beta),
            other => Err(Error::Usage(format!("--variant {}", other.join(",")))),
        }
    }

    fn model(&self, variant: Variant) -> Result<ModelConfig> {
        if let Some(m) = &self.model {
            return Ok(m.clone());
        }
        Ok(match self.preset.as_deref().unwrap_or("desk") {
            "desk" => ModelConfig::desk(variant),
            "full" => ModelConfig::full(variant),
            "tiny" => ModelConfig::tiny(variant),
            other => return Err(Error::Usage(format!("unknown preset {other}"))),
        })
    }

    fn train(&self, variant: Variant, seed: Option<u64>, epochs: Option<usize>) -> TrainConfig {
        let mut t = self.train.clone().unwrap_or_else(|| match self.preset.as_deref() {
            Some("full") => TrainConfig::full(variant),
            _ => TrainConfig::desk(variant),
        });
        if let Some(s) = seed {
            t.seed = s;
        }
        if let Some(e) = epochs {
            t.epochs = e;
        }
        t
    }
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::Usage(format!("missing {flag}")))
}

fn reject(present: bool, flag: &str) -> Result<()> {
    if present {
        Err(Error::Usage(format!("{flag} is not accepted by this command")))
    } else {
        Ok(())
    }
}

struct Output {
    report: Report,
    columns: Vec<&'static str>,
    footer: Option<String>,
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    let start = Instant::now();
    let (common, out) = match command {
        Command::Gen {
            n,
            mode,
            cameras,
            common,
        } => {
            let o = cmd_gen(&common, n, mode, cameras)?;
            (common, o)
        }
        Command::Train { epochs, common } => {
            let o = cmd_train(&common, epochs)?;
            (common, o)
        }
        Command::Eval { split, common } => {
            let o = cmd_eval(&common, split)?;
            (common, o)
        }
        Command::Etc { split, common } => {
            let o = cmd_etc(&common, split)?;
            (common, o)
        }
        Command::Ablate { epochs, common } => {
            let o = cmd_ablate(&common, epochs)?;
            (common, o)
        }
        Command::Sweep { epochs, common } => {
            let o = cmd_sweep(&common, epochs)?;
            (common, o)
        }
        Command::Gradcheck { common } => {
            let o = cmd_gradcheck(&common)?;
            (common, o)
        }
        Command::Depthmap { index, cam, common } => {
            let o = cmd_depthmap(&common, index, cam)?;
            (common, o)
        }
        Command::Stitch { index, kind, common } => {
            let o = cmd_stitch(&common, index, &kind)?;
            (common, o)
        }
        Command::Perm { feature, split, common } => {
            let o = cmd_perm(&common, &feature, split)?;
            (common, o)
        }
    };
    let mut report = out.report;
    report.timing = json!({ "seconds": start.elapsed().as_secs_f64() });
    let cells = tabulate(&report.rows, &out.columns);
    eprint!("{}", render_table(&out.columns, &cells));
    if let Some(f) = &out.footer {
        eprintln!("note: {f}");
    }
    if let Some(path) = &common.csv {
        write_csv(path, &out.columns, &cells)?;
    }
    print_json(&report)
}

fn report(command: &str, config: &impl Serialize, metrics: Value, rows: Vec<Value>) -> Result<Report> {
    Ok(Report {
        command: command.to_string(),
        config_digest: config_digest(config)?,
        metrics,
        rows,
        timing: Value::Null,
    })
}

fn cmd_gen(c: &Common, n: usize, mode: Option<SplitMode>, cameras: Option<usize>) -> Result<Output> {
    reject(c.ckpt.is_some(), "--ckpt")?;
    reject(c.data.is_some(), "--data")?;
    let out = require(&c.out, "--out")?;
    let rc = RunConfig::load(c.config.as_deref())?;
    let mut cfg = rc.dataset.unwrap_or_else(|| DatasetConfig::new(n, 0));
    cfg.n = n;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(k) = cameras {
        cfg.gen.cameras = k;
    }
    let manifest = emit_dataset(out, &cfg)?;
    let rows = manifest
        .counts
        .iter()
        .map(|(s, k)| json!({ "split": s.name(), "count": k }))
        .collect();
    Ok(Output {
        report: report(
            "gen",
            &cfg,
            json!({ "manifest_digest": manifest.digest, "n": cfg.n, "positives": manifest.positives, "files": manifest.files.len() }),
            rows,
        )?,
        columns: vec!["split", "count"],
        footer: Some(format!("manifest digest {}", manifest.digest)),
    })
}

fn history_rows(h: &[pipnet_core::train::EpochMetrics]) -> Vec<Value> {
    h.iter()
        .map(|r| serde_json::to_value(r).expect("plain struct"))
        .collect()
}

fn cmd_train(c: &Common, epochs: Option<usize>) -> Result<Output> {
    reject(c.ckpt.is_some(), "--ckpt")?;
    let data = require(&c.data, "--data")?;
    let out = require(&c.out, "--out")?;
    let rc = RunConfig::load(c.config.as_deref())?;
    let variant = RunConfig::variant(c)?;
    let model = rc.model(variant)?;
    let train = rc.train(variant, c.seed, epochs);
    let ds = Dataset::load(data)?;
    let splits = Splits::build(&ds, &model)?;
    let outcome = train_model(&model, &train, &splits, None, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  val acc {:.3}",
            r.epoch,
            r.train_loss,
            r.val_acc.unwrap_or(f64::NAN)
        );
    })?;
    let ckpt = Checkpoint::from_trainer(&outcome.trainer);
    let digest = ckpt.save(out)?;
    Ok(Output {
        report: report(
            "train",
            &(&model, &train, &ds.config),
            json!({ "val": outcome.val, "checkpoint_digest": digest, "epochs": outcome.epochs }),
            history_rows(&outcome.trainer.history),
        )?,
        columns: vec!["epoch", "train_loss", "val_loss", "val_acc", "val_auc"],
        footer: None,
    })
}

fn load_eval(c: &Common) -> Result<(Checkpoint, Dataset)> {
    reject(c.out.is_some(), "--out")?;
    let ckpt = Checkpoint::load(require(&c.ckpt, "--ckpt")?)?;
    let ds = Dataset::load(require(&c.data, "--data")?)?;
    Ok((ckpt, ds))
}

const METRIC_COLUMNS: [&str; 6] = ["acc", "auc", "f1", "precision", "recall", "n"];

fn cmd_eval(c: &Common, split: Split) -> Result<Output> {
    let (ckpt, ds) = load_eval(c)?;
    let model = &ckpt.header.model;
    let samples = ds.samples(split, model)?;
    let ev = evaluate(ckpt.eval_params(), model, &samples)?;
    let m = ev.report(ckpt.header.train.threshold)?;
    let row = serde_json::to_value(&m)?;
    Ok(Output {
        report: report(
            "eval",
            &(&ckpt.header, &ds.config, split),
            json!({ "split": split.name(), "loss": ev.loss, "report": m }),
            vec![row],
        )?,
        columns: METRIC_COLUMNS.to_vec(),
        footer: None,
    })
}

fn cmd_etc(c: &Common, split: Split) -> Result<Output> {
    let (ckpt, ds) = load_eval(c)?;
    let horizons = if c.horizon.is_empty() {
        vec![1.0, 2.0, 3.0, 4.0]
    } else {
        c.horizon.clone()
    };
    if let Some(h) = horizons.iter().find(|h| !(0.0..=10.0).contains(*h)) {
        return Err(Error::Usage(format!("--horizon {h}")));
    }
    let model = &ckpt.header.model;
    let rows = etc_run(
        &ds,
        ckpt.eval_params(),
        model,
        &horizons,
        split,
        ckpt.header.train.threshold,
    )?;
    let values = rows
        .iter()
        .map(serde_json::to_value)
        .collect::<serde_json::Result<Vec<_>>>()?;
    Ok(Output {
        report: report(
            "etc",
            &(&ckpt.header, &ds.config, &horizons),
            json!({ "split": split.name() }),
            values,
        )?,
        columns: vec![
            "horizon",
            "evaluated",
            "skipped",
            "metrics.acc",
            "metrics.auc",
            "metrics.f1",
        ],
        footer: None,
    })
}

fn experiment_setup(c: &Common, epochs: Option<usize>) -> Result<(Dataset, ModelConfig, TrainConfig)> {
    reject(c.ckpt.is_some(), "--ckpt")?;
    let rc = RunConfig::load(c.config.as_deref())?;
    let ds = Dataset::load(require(&c.data, "--data")?)?;
    let model = rc.model(Variant::Alpha)?;
    let train = rc.train(Variant::Alpha, c.seed, Some(epochs.unwrap_or(20)));
    Ok((ds, model, train))
}

fn cmd_ablate(c: &Common, epochs: Option<usize>) -> Result<Output> {
    let variants = if c.variant.is_empty() {
        ABLATION_VARIANTS.to_vec()
    } else {
        c.variant
            .iter()
            .map(|v| AblationVariant::by_name(v))
            .collect::<pipnet_core::Result<Vec<_>>>()?
    };
    let (ds, model, train) = experiment_setup(c, epochs)?;
    let rows = ablation_run(&ds, &model, &train, &variants)?;
    let values = rows
        .iter()
        .map(serde_json::to_value)
        .collect::<serde_json::Result<Vec<_>>>()?;
    Ok(Output {
        report: report("ablate", &(&model, &train, &ds.config, &c.variant), Value::Null, values)?,
        columns: vec![
            "label",
            "gm",
            "lm",
            "md",
            "cd",
            "metrics.acc",
            "metrics.auc",
            "metrics.f1",
            "inference_ms",
        ],
        footer: None,
    })
}

fn cmd_sweep(c: &Common, epochs: Option<usize>) -> Result<Output> {
    reject(!c.variant.is_empty(), "--variant")?;
    let (ds, model, train) = experiment_setup(c, epochs)?;
    let rows = temporal_sweep(&ds, &model, &train, &SWEEP_STRIDES, &SWEEP_LENGTHS)?;
    let values = rows
        .iter()
        .map(serde_json::to_value)
        .collect::<serde_json::Result<Vec<_>>>()?;
    let footer = sweep_footer(ds.config.gen.fps);
    Ok(Output {
        report: report(
            "sweep",
            &(&model, &train, &ds.config),
            json!({ "footer": footer }),
            values,
        )?,
        columns: vec![
            "stride",
            "m",
            "observation_s",
            "metrics.acc",
            "metrics.auc",
            "metrics.f1",
            "inference_ms",
        ],
        footer: Some(footer),
    })
}

fn cmd_gradcheck(c: &Common) -> Result<Output> {
    reject(c.data.is_some(), "--data")?;
    let seed = c.seed.unwrap_or(0);
    let entries = gradient_suite(seed)?;
    let worst = entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    eprintln!("max rel err {worst:.3e} over {} checks", entries.len());
    let values = entries
        .iter()
        .map(serde_json::to_value)
        .collect::<serde_json::Result<Vec<_>>>()?;
    if worst >= 1e-4 {
        return Err(Error::format(
            "gradcheck",
            format!("max rel err {worst:.3e} exceeds 1e-4"),
        ));
    }
    Ok(Output {
        report: report(
            "gradcheck",
            &seed,
            json!({ "max_rel_err": worst, "checks": entries.len() }),
            values,
        )?,
        columns: vec!["name", "max_rel_err", "coords"],
        footer: None,
    })
}

fn map_file(c: &Common, index: usize, cam: usize, kind: &str) -> Result<PathBuf> {
    Ok(require(&c.data, "--data")?.join(map_path(index, cam, kind)))
}

fn cmd_depthmap(c: &Common, index: usize, cam: usize) -> Result<Output> {
    let out = require(&c.out, "--out")?;
    let depth = pipt::read(&map_file(c, index, cam, "depth")?)?.to_f32();
    let labels = pipt::read(&map_file(c, index, cam, "labels")?)?.to_f32();
    let instances = instances_from_labels(&labels)?;
    let cd = build_categorical_depth(&depth, &instances)?;
    pipt::write(out, &cd)?;
    let row = json!({ "index": index, "cam": cam, "dims": cd.dims(), "nonzero": cd.data().iter().filter(|v| **v != 0.0).count() });
    Ok(Output {
        report: report("depthmap", &(index, cam), Value::Null, vec![row])?,
        columns: vec!["index", "cam", "nonzero"],
        footer: None,
    })
}

fn cmd_stitch(c: &Common, index: usize, kind: &str) -> Result<Output> {
    let out = require(&c.out, "--out")?;
    let ds_dir = require(&c.data, "--data")?;
    let manifest: crate::dataset::Manifest = {
        let p = ds_dir.join(crate::dataset::MANIFEST);
        serde_json::from_slice(&std::fs::read(&p).map_err(|e| Error::io(&p, e))?)?
    };
    let layout = manifest.config.gen.layout()?;
    let maps = (0..layout.cameras)
        .map(|cam| {
            let t = pipt::read(&map_file(c, index, cam, kind)?)?.to_f32();
            // single-plane maps are [H, W]; stitching wants [C, H, W]
            if t.ndim() == 2 {
                let d = t.dims().to_vec();
                Ok(t.reshape(&[1, d[0], d[1]])?)
            } else {
                Ok(t)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let pano = stitch(&maps, &layout)?;
    pipt::write(out, &pano)?;
    let row = json!({ "index": index, "kind": kind, "cameras": layout.cameras, "width": layout.stitched_width, "dims": pano.dims() });
    Ok(Output {
        report: report("stitch", &(index, kind, &layout), Value::Null, vec![row])?,
        columns: vec!["index", "kind", "cameras", "width"],
        footer: None,
    })
}

fn cmd_perm(c: &Common, feature: &str, split: Split) -> Result<Output> {
    let (ckpt, ds) = load_eval(c)?;
    let model = &ckpt.header.model;
    let samples = ds.samples(split, model)?;
    let seed = c.seed.unwrap_or(0);
    let imp = permutation_importance(
        ckpt.eval_params(),
        model,
        &samples,
        feature,
        seed,
        ckpt.header.train.threshold,
    )?;
    let row = json!({ "feature": imp.feature, "delta_acc": imp.delta_acc, "delta_auc": imp.delta_auc, "acc": imp.baseline.acc, "permuted_acc": imp.permuted.acc });
    Ok(Output {
        report: report(
            "perm",
            &(&ckpt.header, &ds.config, feature, seed),
            serde_json::to_value(&imp)?,
            vec![row],
        )?,
        columns: vec!["feature", "acc", "permuted_acc", "delta_acc", "delta_auc"],
        footer: None,
    })
}
