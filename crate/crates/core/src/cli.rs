//! The `fibcap` command-line workflow.
//!
//! Subcommands: `phantom`, `preprocess`, `pretrain`, `train`, `segment`,
//! `quantify`, `evaluate`, `report`. Exit codes: 0 success, 2 usage or config
//! error, 3 data error, 4 numeric error (NaN/Inf guard).
//!
//! Frame ranges are half-open: `--frames 2..4` processes frames 2 and 3.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::augment::{spiral_offsets, AugmentConfig};
use crate::phantom::{self, write_phantom};
use crate::postprocess::postprocess;
use crate::preprocess::{
    detect_guidewire_pullback, preprocess_frame_with_shadow, preprocess_pullback, shift_mask, unshift_mask,
    FrameGeometry, PreprocessParams, CROP_ROWS,
};
use crate::pullback::{
    load_pullback, read_mask_pgm, save_pullback, write_mask_pgm, ClassTag, Geometry, Mask, Pullback, RawDtype,
    RawEncoding, Sidecar,
};
use crate::quantify::{export_heatmap, quantify_pullback, thickness_per_aline, arc_angle, ExportSummary, QuantConfig};
use crate::stats::{agreement, confusion, fold_aggregate, metrics, AgreementReport, ConfusionCounts, FoldSummary, Metrics, METRIC_NAMES};
use crate::tensornet::{build_segresnet, load_weights, save_weights, SegModel, SegModelConfig, Tensor};
use crate::train::{fit_with_progress, make_folds, transfer_init, FoldPlan, Sample, TrainConfig};
use crate::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// A command failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFinite(_) => EXIT_NUMERIC,
            Error::InvalidArgument(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Half-open frame range `a..b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameRange {
    pub start: usize,
    pub end: usize,
}

impl FromStr for FrameRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once("..").ok_or_else(|| format!("expected a..b, got {s:?}"))?;
        let start = a.trim().parse().map_err(|_| format!("bad range start {a:?}"))?;
        let end = b.trim().parse().map_err(|_| format!("bad range end {b:?}"))?;
        if end <= start {
            return Err(format!("empty range {s:?}"));
        }
        Ok(Self { start, end })
    }
}

impl FrameRange {
    fn resolve(range: Option<Self>, n_frames: usize) -> CliResult<std::ops::Range<usize>> {
        match range {
            None => Ok(0..n_frames),
            Some(r) if r.end <= n_frames => Ok(r.start..r.end),
            Some(r) => Err(CliError::usage(format!(
                "--frames {}..{} exceeds the {n_frames} frames of the pullback",
                r.start, r.end
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub runs: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Number of pullback-level folds.
    pub folds: usize,
    /// Batch size used for inference.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { folds: 5, batch_size: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    /// Rows of each preprocessed frame fed to the network, counted from the lumen.
    /// Deeper rows are labelled background. Set this to the training crop height
    /// when the model was trained on crops shallower than the full frame.
    pub rows: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { rows: CROP_ROWS }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.rows == 0 || self.rows > CROP_ROWS {
            return Err(Error::InvalidArgument(format!("segment.rows {} outside 1..={CROP_ROWS}", self.rows)));
        }
        Ok(())
    }
}

/// Experiment configuration, read from JSON or TOML (by extension). Unknown keys
/// are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub preprocess: PreprocessParams,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub model: SegModelConfig,
    pub segment: SegmentConfig,
    pub quantify: QuantConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?,
            _ => serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.segment.validate()?;
        self.quantify.validate()?;
        self.augment.validate(None)?;
        for (name, p) in [("data", &self.paths.data), ("runs", &self.paths.runs), ("reports", &self.paths.reports)] {
            if let Some(p) = p {
                if name == "data" && !p.exists() {
                    return Err(CliError::usage(format!("paths.data {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Applies a `--seed` override to every seeded component.
    fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
            self.train.seed = s;
            self.augment.seed = s ^ 0x5a5a;
        }
        self
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(cfg.with_seed(seed))
}

#[derive(Parser, Debug)]
#[command(name = "fibcap", version, about = "Fibrous-cap segmentation and quantification for IVOCT pullbacks")]
pub struct Cli {
    /// Worker threads (falls back to FIBCAP_THREADS, then all cores).
    #[arg(long, global = true, env = "FIBCAP_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (JSON or TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic phantom suite with truth masks.
    Phantom {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Guidewire/lumen detection, pixel shift, crop and filter.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        frames: Option<FrameRange>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on calcification masks to produce transfer weights.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Directory of phantom-layout pullbacks (overrides paths.data).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train FC models over pullback-level folds.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Weights used to initialize every fold.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        /// Train only this fold.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Preprocess, run the network and postprocess every frame.
    Segment {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        frames: Option<FrameRange>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure FC thickness, arc, area and surface area from segmented masks.
    Quantify {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        pullback: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pixel metrics per fold and thickness/arc agreement against truth masks.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        folds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Consolidate metrics and quantification outputs of a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args`, runs the command and returns the exit code. Messages go to
/// stdout/stderr.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be positive"));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Phantom { suite, seed, out } => cmd_phantom(&suite, seed, &out),
        Command::Preprocess {
            input,
            frames,
            config,
            out,
        } => cmd_preprocess(&input, frames, config.as_deref(), &out),
        Command::Pretrain { common, data } => cmd_pretrain(&common, data.as_deref()),
        Command::Train {
            common,
            data,
            pretrained,
            fold,
        } => cmd_train(&common, data.as_deref(), pretrained.as_deref(), fold),
        Command::Segment {
            weights,
            input,
            frames,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref(), None)?;
            cmd_segment(&weights, &input, frames, &cfg, &out).map(|_| ())
        }
        Command::Quantify {
            masks,
            pullback,
            config,
            out,
        } => cmd_quantify(&masks, &pullback, config.as_deref(), &out).map(|_| ()),
        Command::Evaluate { pred, truth, folds, out } => cmd_evaluate(&pred, &truth, folds.as_deref(), &out).map(|_| ()),
        Command::Report { run, out } => cmd_report(&run, out.as_deref()).map(|_| ()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

/// Reads JSON, reporting the parse location on failure.
fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::data(format!(
            "{}: parse error at line {} column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

// ---------------------------------------------------------------- phantom

pub fn cmd_phantom(suite: &str, seed: Option<u64>, out: &Path) -> CliResult<()> {
    let specs = phantom::standard_suite(suite)?;
    create_dir(out)?;
    for (i, mut spec) in specs.into_iter().enumerate() {
        if let Some(s) = seed {
            spec.seed = s.wrapping_add(i as u64);
        }
        let (pb, truth) = phantom::generate(&spec)?;
        let files = write_phantom(out, &spec, &pb, &truth)?;
        println!("{}", files.pullback.display());
    }
    Ok(())
}

// ---------------------------------------------------------------- preprocess

fn select_frames(pullback: &Pullback, range: std::ops::Range<usize>) -> CliResult<Pullback> {
    let arrays = pullback.frames()[range].iter().map(|f| f.data().clone()).collect();
    Ok(Pullback::from_arrays(arrays, pullback.geometry().clone(), pullback.pullback_id())?)
}

pub fn cmd_preprocess(input: &Path, frames: Option<FrameRange>, config: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg = load_config(config, None)?;
    let pullback = load_pullback(input)?;
    let range = FrameRange::resolve(frames, pullback.n_frames())?;
    let offset = range.start;
    let sub = select_frames(&pullback, range)?;
    let pre = preprocess_pullback(&sub, &cfg.preprocess)?;
    let geometry: Vec<FrameGeometry> = pre
        .iter()
        .map(|p| FrameGeometry {
            frame_index: p.source_frame_index + offset,
            ..FrameGeometry::from(p)
        })
        .collect();
    let processed = Pullback::from_arrays(
        pre.into_iter().map(|p| p.data).collect(),
        pullback.geometry().clone(),
        pullback.pullback_id(),
    )?;
    create_dir(out)?;
    let ivp = out.join(format!("{}.ivp", pullback.pullback_id()));
    save_pullback(
        &processed,
        &ivp,
        RawEncoding {
            dtype: RawDtype::F32,
            max_raw: 1.0,
        },
    )?;
    write_json(&out.join("preprocess.json"), &geometry)?;
    println!("{} ({} frames)", ivp.display(), geometry.len());
    Ok(())
}

// ---------------------------------------------------------------- training data

/// A pullback with one mask per frame, read from the phantom directory layout
/// (`<id>.ivp` next to `<id>_masks_fc/` or `<id>_masks_cal/`).
#[derive(Clone, Debug)]
pub struct LabeledPullback {
    pub id: String,
    pub pullback: Pullback,
    pub masks: Vec<Mask>,
}

fn mask_dir_suffix(tag: ClassTag) -> &'static str {
    match tag {
        ClassTag::Fc => "fc",
        ClassTag::Calcification => "cal",
    }
}

/// Every labeled pullback in `dir`, sorted by file name.
pub fn load_labeled(dir: &Path, tag: ClassTag) -> CliResult<Vec<LabeledPullback>> {
    let mut ivps: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ivp"))
        .collect();
    ivps.sort();
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for ivp in ivps {
        let stem = ivp.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let mdir = dir.join(format!("{stem}_masks_{}", mask_dir_suffix(tag)));
        if !mdir.is_dir() {
            missing.push(mdir.display().to_string());
            continue;
        }
        let pullback = load_pullback(&ivp)?;
        let masks = (0..pullback.n_frames())
            .map(|i| read_mask_pgm(mdir.join(phantom::frame_file(i)), tag))
            .collect::<crate::Result<Vec<_>>>()?;
        out.push(LabeledPullback {
            id: pullback.pullback_id().to_string(),
            pullback,
            masks,
        });
    }
    if out.is_empty() {
        let detail = if missing.is_empty() {
            "no .ivp files".to_string()
        } else {
            format!("missing mask directories: {}", missing.join(", "))
        };
        return Err(CliError::data(format!("no labeled pullbacks in {}: {detail}", dir.display())));
    }
    Ok(out)
}

/// Preprocessed samples of one pullback, expanded by spiral reframing at each offset.
pub fn pullback_samples(lp: &LabeledPullback, offsets: &[usize], params: &PreprocessParams) -> CliResult<Vec<Sample>> {
    let mut out = Vec::new();
    for &o in offsets {
        let (pb, masks) = spiral_offsets(&lp.pullback, &lp.masks, o)?;
        let pre = preprocess_pullback(&pb, params)?;
        for (p, m) in pre.iter().zip(&masks) {
            out.push(Sample::new(p.data.clone(), p.align_mask(m)?)?);
        }
    }
    Ok(out)
}

fn samples_for(set: &[&LabeledPullback], offsets: &[usize], params: &PreprocessParams) -> CliResult<Vec<Sample>> {
    let mut out = Vec::new();
    for lp in set {
        out.extend(pullback_samples(lp, offsets, params)?);
    }
    Ok(out)
}

fn data_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.paths.data.clone())
        .ok_or_else(|| CliError::usage("no data directory: pass --data or set paths.data"))
}

fn epoch_printer(label: String) -> impl FnMut(&crate::train::EpochRecord) {
    move |e| println!("{label} epoch {:>3} train {:.4} val {:.4}", e.epoch, e.train_loss, e.val_loss)
}

// ---------------------------------------------------------------- pretrain / train

pub fn cmd_pretrain(common: &Common, data: Option<&Path>) -> CliResult<()> {
    let cfg = load_config(common.config.as_deref(), common.seed)?;
    let dir = data_dir(data, &cfg)?;
    let set = load_labeled(&dir, ClassTag::Calcification)?;
    if set.len() < 2 {
        return Err(CliError::data("pretraining needs at least two pullbacks (train and validation)"));
    }
    let n_val = (set.len() / 5).max(1);
    let (train_set, val_set) = set.split_at(set.len() - n_val);
    let train = samples_for(&train_set.iter().collect::<Vec<_>>(), &cfg.augment.offsets, &cfg.preprocess)?;
    let val = samples_for(&val_set.iter().collect::<Vec<_>>(), &[0], &cfg.preprocess)?;
    let mut model = build_segresnet::<f32>(cfg.model.clone(), cfg.seed)?;
    let log = fit_with_progress(&mut model, &train, &val, &cfg.train, Some(&cfg.augment), epoch_printer("pretrain".into()))?;
    create_dir(&common.out)?;
    save_weights(&model, &common.out.join("pretrained.fcw"))?;
    log.write_csv(&common.out.join("pretrain_log.csv"))?;
    println!(
        "best epoch {} val loss {:.4}; weights in {}",
        log.best_epoch,
        log.best_val_loss,
        common.out.join("pretrained.fcw").display()
    );
    Ok(())
}

pub fn cmd_train(common: &Common, data: Option<&Path>, pretrained: Option<&Path>, only: Option<usize>) -> CliResult<()> {
    let cfg = load_config(common.config.as_deref(), common.seed)?;
    let dir = data_dir(data, &cfg)?;
    let set = load_labeled(&dir, ClassTag::Fc)?;
    let ids: Vec<String> = set.iter().map(|lp| lp.id.clone()).collect();
    let plan = make_folds(&ids, cfg.eval.folds, cfg.seed)?;
    if let Some(f) = only.filter(|&f| f >= plan.k) {
        return Err(CliError::usage(format!("--fold {f} outside 0..{}", plan.k)));
    }
    create_dir(&common.out)?;
    write_json(&common.out.join("folds.json"), &plan)?;
    let pick = |names: &[String]| -> Vec<&LabeledPullback> { set.iter().filter(|lp| names.contains(&lp.id)).collect() };
    for (i, fold) in plan.folds.iter().enumerate() {
        if only.is_some_and(|f| f != i) {
            continue;
        }
        let train = samples_for(&pick(&fold.train), &cfg.augment.offsets, &cfg.preprocess)?;
        let val = samples_for(&pick(&fold.val), &[0], &cfg.preprocess)?;
        let mut model = build_segresnet::<f32>(cfg.model.clone(), cfg.seed.wrapping_add(i as u64))?;
        if let Some(p) = pretrained {
            let report = transfer_init(&mut model, p)?;
            println!(
                "fold {i}: transferred {} layers, {} random",
                report.matched.len(),
                report.random_init.len()
            );
        }
        let log = fit_with_progress(&mut model, &train, &val, &cfg.train, Some(&cfg.augment), epoch_printer(format!("fold {i}")))?;
        save_weights(&model, &common.out.join(format!("fold{i}.fcw")))?;
        log.write_csv(&common.out.join(format!("fold{i}_log.csv")))?;
        println!("fold {i}: best epoch {} val loss {:.4}", log.best_epoch, log.best_val_loss);
    }
    Ok(())
}

// ---------------------------------------------------------------- segment

/// Per-frame wall-clock statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub per_frame_s: Vec<f64>,
    pub mean_s: f64,
    pub p95_s: f64,
}

impl Timing {
    pub fn from_samples(per_frame_s: Vec<f64>) -> Self {
        let n = per_frame_s.len().max(1);
        let mean_s = per_frame_s.iter().sum::<f64>() / n as f64;
        let mut sorted = per_frame_s.clone();
        sorted.sort_by(f64::total_cmp);
        // nearest-rank percentile
        let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, n);
        let p95_s = sorted.get(rank - 1).copied().unwrap_or(0.0);
        Self {
            per_frame_s,
            mean_s,
            p95_s,
        }
    }
}

/// Output of [`segment_pullback`]: raw-coordinate masks plus the geometry needed to
/// realign them.
#[derive(Clone, Debug)]
pub struct Segmentation {
    pub masks: Vec<Mask>,
    pub geometry: Vec<FrameGeometry>,
    pub timing: Timing,
}

impl Segmentation {
    /// Masks shifted back to lumen-aligned coordinates, as quantification expects.
    pub fn aligned_masks(&self) -> crate::Result<Vec<Mask>> {
        self.masks
            .iter()
            .zip(&self.geometry)
            .map(|(m, g)| shift_mask(m, &g.lumen, &g.shadow, CROP_ROWS))
            .collect()
    }
}

/// Preprocess → forward → binarize → postprocess for `frames` of a pullback, one
/// frame at a time. The guidewire pass over the selected frames is charged evenly
/// to each frame's time.
pub fn segment_pullback(
    model: &SegModel<f32>,
    pullback: &Pullback,
    frames: std::ops::Range<usize>,
    params: &PreprocessParams,
    seg: &SegmentConfig,
) -> crate::Result<Segmentation> {
    seg.validate()?;
    let offset = frames.start;
    let arrays = pullback.frames()[frames].iter().map(|f| f.data().clone()).collect();
    let sub = Pullback::from_arrays(arrays, pullback.geometry().clone(), pullback.pullback_id())?;
    let t0 = Instant::now();
    let shadows = detect_guidewire_pullback(&sub, &params.guidewire)?;
    let shared = t0.elapsed().as_secs_f64() / sub.n_frames() as f64;
    let mut masks = Vec::with_capacity(sub.n_frames());
    let mut geometry = Vec::with_capacity(sub.n_frames());
    let mut times = Vec::with_capacity(sub.n_frames());
    for (frame, shadow) in sub.frames().iter().zip(shadows) {
        let t = Instant::now();
        let pre = preprocess_frame_with_shadow(frame, shadow, params)?;
        let (h, w) = pre.data.dim();
        let rows = seg.rows.min(h);
        let x = Tensor::from_vec([1, 1, rows, w], pre.data.slice(ndarray::s![..rows, ..]).iter().copied().collect())?;
        let y = model.predict(&x)?;
        let mut prob = ndarray::Array2::<f32>::zeros((h, w));
        prob.slice_mut(ndarray::s![..rows, ..]).assign(
            &ndarray::ArrayView2::from_shape((rows, w), y.data()).map_err(|e| Error::Shape(e.to_string()))?,
        );
        let aligned = postprocess(&prob, ClassTag::Fc)?;
        masks.push(unshift_mask(&aligned, &pre.lumen, frame.n_r())?);
        geometry.push(FrameGeometry {
            frame_index: pre.source_frame_index + offset,
            ..FrameGeometry::from(&pre)
        });
        times.push(t.elapsed().as_secs_f64() + shared);
    }
    Ok(Segmentation {
        masks,
        geometry,
        timing: Timing::from_samples(times),
    })
}

/// Segments `input` with the model described by `cfg.model`, writing
/// `<out>/<id>/frame_XXXX.pgm`, `preprocess.json` and `timing.json`.
pub fn cmd_segment(
    weights: &Path,
    input: &Path,
    frames: Option<FrameRange>,
    cfg: &ExperimentConfig,
    out: &Path,
) -> CliResult<Segmentation> {
    let mut model = build_segresnet::<f32>(cfg.model.clone(), cfg.seed)?;
    let report = load_weights(&mut model, weights)?;
    if !report.random_init.is_empty() {
        return Err(CliError::data(format!(
            "weights {} do not cover layers {:?}",
            weights.display(),
            report.random_init
        )));
    }
    let pullback = load_pullback(input)?;
    let range = FrameRange::resolve(frames, pullback.n_frames())?;
    let seg = segment_pullback(&model, &pullback, range, &cfg.preprocess, &cfg.segment)?;
    let dir = out.join(pullback.pullback_id());
    create_dir(&dir)?;
    for (m, g) in seg.masks.iter().zip(&seg.geometry) {
        write_mask_pgm(dir.join(phantom::frame_file(g.frame_index)), m)?;
    }
    write_json(&dir.join("preprocess.json"), &seg.geometry)?;
    write_json(&dir.join("timing.json"), &seg.timing)?;
    println!(
        "segmented {} frames: mean {:.4} s/frame, p95 {:.4} s",
        seg.masks.len(),
        seg.timing.mean_s,
        seg.timing.p95_s
    );
    Ok(seg)
}

// ---------------------------------------------------------------- quantify

fn parse_frame_file(name: &str) -> Option<usize> {
    name.strip_prefix("frame_")?.strip_suffix(".pgm")?.parse().ok()
}

/// `(frame index, path)` of every `frame_XXXX.pgm` in `dir`, ascending.
fn frame_files(dir: &Path) -> CliResult<Vec<(usize, PathBuf)>> {
    let mut out: Vec<(usize, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name();
            parse_frame_file(name.to_str()?).map(|i| (i, e.path()))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Returns `None` when no frame holds FC (only `quantification.json` is written).
pub fn cmd_quantify(masks: &Path, pullback: &Path, config: Option<&Path>, out: &Path) -> CliResult<Option<ExportSummary>> {
    let cfg = load_config(config, None)?;
    let pb = load_pullback(pullback)?;
    let files = frame_files(masks)?;
    if files.is_empty() {
        return Err(CliError::data(format!("no frame_XXXX.pgm masks in {}", masks.display())));
    }
    let geo_path = masks.join("preprocess.json");
    let geometry: Vec<FrameGeometry> = if geo_path.exists() {
        read_json(&geo_path)?
    } else {
        preprocess_pullback(&pb, &cfg.preprocess)?.iter().map(FrameGeometry::from).collect()
    };
    let by_index: BTreeMap<usize, &FrameGeometry> = geometry.iter().map(|g| (g.frame_index, g)).collect();
    let mut aligned = Vec::with_capacity(files.len());
    let mut lumens = Vec::with_capacity(files.len());
    for (i, path) in &files {
        let g = by_index
            .get(i)
            .ok_or_else(|| CliError::data(format!("no lumen/shadow record for frame {i}")))?;
        let m = read_mask_pgm(path, ClassTag::Fc)?;
        aligned.push(shift_mask(&m, &g.lumen, &g.shadow, CROP_ROWS)?);
        lumens.push(g.lumen.clone());
    }
    let quant = quantify_pullback(&aligned, &lumens, pb.geometry(), &cfg.quantify)?;
    create_dir(out)?;
    write_json(&out.join("quantification.json"), &quant)?;
    let summary = match export_heatmap(&quant, &lumens, pb.geometry(), out) {
        Ok(s) => s,
        Err(Error::NothingToExport) => {
            println!("no fibrous cap found; only quantification.json written");
            return Ok(None);
        }
        Err(e) => return Err(e.into()),
    };
    println!(
        "length {:.2} mm, max arc {:.1} deg, surface {:.3} mm2, min cap {:.0} um, TCFA {}",
        summary.length_mm,
        summary.max_angle_deg,
        summary.surface_area_mm2,
        summary.min_cap_um,
        summary.tcfa
    );
    Ok(Some(summary))
}

// ---------------------------------------------------------------- evaluate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub name: String,
    pub pullbacks: Vec<String>,
    pub frames: usize,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementSection {
    pub thickness_um: Option<AgreementReport>,
    pub arc_deg: Option<AgreementReport>,
}

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// One entry per fold when a fold plan was given.
    pub folds: Vec<GroupMetrics>,
    pub fold_summary: Option<FoldSummary>,
    /// All evaluated frames pooled.
    pub pooled: GroupMetrics,
    /// Per-frame macro averages; frames with an undefined metric are excluded.
    pub frame_macro: [Option<f64>; 6],
    pub agreement: Option<AgreementSection>,
}

struct PredFrame {
    pullback: String,
    counts: ConfusionCounts,
    thickness: Option<(f64, f64)>,
    arc: Option<(f64, f64)>,
}

fn mean_defined(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn frame_mean_thickness(mask: &Mask, geometry: &Geometry) -> crate::Result<Option<f64>> {
    Ok(mean_defined(thickness_per_aline(mask, geometry)?.into_iter().flatten()))
}

fn group(name: &str, ids: &[String], frames: &[PredFrame]) -> crate::Result<GroupMetrics> {
    let sel: Vec<&PredFrame> = frames.iter().filter(|f| ids.contains(&f.pullback)).collect();
    let counts: ConfusionCounts = sel.iter().map(|f| f.counts).sum();
    Ok(GroupMetrics {
        name: name.to_string(),
        pullbacks: ids.to_vec(),
        frames: sel.len(),
        metrics: metrics(&counts)?,
        counts,
    })
}

pub fn cmd_evaluate(pred: &Path, truth: &Path, folds: Option<&Path>, out: &Path) -> CliResult<EvaluationReport> {
    let mut ids: Vec<String> = fs::read_dir(pred)
        .map_err(|e| Error::io(pred, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().map(String::from))
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(CliError::data(format!("no per-pullback directories in {}", pred.display())));
    }
    let mut frames = Vec::new();
    for id in &ids {
        let tdir = truth.join(format!("{id}_masks_fc"));
        if !tdir.is_dir() {
            return Err(CliError::data(format!("missing truth masks {}", tdir.display())));
        }
        let side = truth.join(format!("{id}.ivp"));
        let geometry = if Sidecar::path_for(&side).exists() {
            Some(Sidecar::read(&side)?.geometry())
        } else {
            None
        };
        for (i, path) in frame_files(&pred.join(id))? {
            let p = read_mask_pgm(&path, ClassTag::Fc)?;
            let t = read_mask_pgm(tdir.join(phantom::frame_file(i)), ClassTag::Fc)?;
            let g = geometry.clone().unwrap_or_else(|| Geometry::with_theta_count(p.dim().1));
            let pair = |a: Option<f64>, b: Option<f64>| a.zip(b);
            frames.push(PredFrame {
                pullback: id.clone(),
                counts: confusion(&p, &t)?,
                thickness: pair(frame_mean_thickness(&p, &g)?, frame_mean_thickness(&t, &g)?),
                arc: (t.count() > 0 && p.count() > 0)
                    .then(|| Ok::<_, Error>((arc_angle(&p, &g)?, arc_angle(&t, &g)?)))
                    .transpose()?,
            });
        }
    }

    let mut fold_groups = Vec::new();
    if let Some(path) = folds {
        let plan: FoldPlan = read_json(path)?;
        for (i, f) in plan.folds.iter().enumerate() {
            let test: Vec<String> = f.test.iter().filter(|id| ids.contains(id)).cloned().collect();
            if !test.is_empty() {
                fold_groups.push(group(&format!("fold {i}"), &test, &frames)?);
            }
        }
    }
    let fold_summary = if fold_groups.len() >= 2 {
        Some(fold_aggregate(&fold_groups.iter().map(|g| g.metrics).collect::<Vec<_>>())?)
    } else {
        None
    };
    let per_frame: Vec<[Option<f64>; 6]> = frames
        .iter()
        .map(|f| metrics(&f.counts).map(|m| m.values()))
        .collect::<crate::Result<_>>()?;
    let frame_macro = std::array::from_fn(|k| mean_defined(per_frame.iter().filter_map(|v| v[k])));

    let paired = |sel: &dyn Fn(&PredFrame) -> Option<(f64, f64)>| {
        let (a, t): (Vec<f64>, Vec<f64>) = frames.iter().filter_map(sel).unzip();
        (a.len() >= 3).then(|| agreement(&a, &t).ok()).flatten()
    };
    let thickness = paired(&|f| f.thickness);
    let arc = paired(&|f| f.arc);
    let report = EvaluationReport {
        folds: fold_groups,
        fold_summary,
        pooled: group("pooled", &ids, &frames)?,
        frame_macro,
        agreement: (thickness.is_some() || arc.is_some()).then_some(AgreementSection {
            thickness_um: thickness,
            arc_deg: arc,
        }),
    };
    write_json(out, &report)?;
    let csv = out.with_extension("csv");
    fs::write(&csv, evaluation_csv(&report)).map_err(|e| Error::io(&csv, e))?;
    println!("{}", evaluation_csv(&report).trim_end());
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{v:.4}"))
}

/// Table rows: one per fold, the fold mean ± sd, then the pooled row.
pub fn evaluation_csv(report: &EvaluationReport) -> String {
    let mut s = format!("group,{}\n", METRIC_NAMES.join(","));
    for g in &report.folds {
        let cells: Vec<String> = g.metrics.values().into_iter().map(fmt_opt).collect();
        s += &format!("{},{}\n", g.name, cells.join(","));
    }
    if let Some(sum) = &report.fold_summary {
        let cells: Vec<String> = sum
            .values()
            .into_iter()
            .map(|v| v.map_or_else(|| "NA".into(), |m| m.to_string()))
            .collect();
        s += &format!("mean ± sd,{}\n", cells.join(","));
    }
    let cells: Vec<String> = report.pooled.metrics.values().into_iter().map(fmt_opt).collect();
    s += &format!("{},{}\n", report.pooled.name, cells.join(","));
    s
}

// ---------------------------------------------------------------- report

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionRow {
    pub source: String,
    #[serde(flatten)]
    pub summary: ExportSummary,
}

/// The consolidated `report.json`. Absent sections are `None` and listed in
/// `warnings`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub folds: Vec<GroupMetrics>,
    pub fold_summary: Option<FoldSummary>,
    pub held_out: GroupMetrics,
    pub agreement: Option<AgreementSection>,
    pub lesions: Vec<LesionRow>,
    pub warnings: Vec<String>,
}

fn summaries_in(run: &Path) -> CliResult<Vec<LesionRow>> {
    let mut candidates = vec![(String::from("."), run.join("summary.json"))];
    let mut dirs: Vec<PathBuf> = fs::read_dir(run)
        .map_err(|e| Error::io(run, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for d in dirs {
        let name = d.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        candidates.push((name, d.join("summary.json")));
    }
    candidates
        .into_iter()
        .filter(|(_, p)| p.exists())
        .map(|(source, p)| Ok(LesionRow { source, summary: read_json(&p)? }))
        .collect()
}

pub fn render_report(r: &RunReport) -> String {
    let mut s = String::from("Segmentation metrics\n");
    s += &format!("  {:<12}{}\n", "", METRIC_NAMES.map(|n| format!("{n:>14}")).join(""));
    for g in &r.folds {
        let cells: String = g.metrics.values().into_iter().map(|v| format!("{:>14}", fmt_opt(v))).collect();
        s += &format!("  {:<12}{cells}\n", g.name);
    }
    if let Some(sum) = &r.fold_summary {
        let cells: String = sum
            .values()
            .into_iter()
            .map(|v| format!("{:>14}", v.map_or_else(|| "NA".into(), |m| m.to_string())))
            .collect();
        s += &format!("  {:<12}{cells}\n", "mean ± sd");
    }
    let cells: String = r.held_out.metrics.values().into_iter().map(|v| format!("{:>14}", fmt_opt(v))).collect();
    s += &format!("  {:<12}{cells}\n", "held-out");
    match &r.agreement {
        Some(a) => {
            for (name, rep) in [("thickness (um)", &a.thickness_um), ("arc (deg)", &a.arc_deg)] {
                if let Some(rep) = rep {
                    s += &format!(
                        "Agreement {name}: n={} R2={} bias={:.2} LoA [{:.2}, {:.2}] within {:.1}%\n",
                        rep.n,
                        fmt_opt(rep.r_squared),
                        rep.ba_bias,
                        rep.ba_loa_low,
                        rep.ba_loa_high,
                        rep.pct_within_loa
                    );
                }
            }
        }
        None => s += "Agreement: absent\n",
    }
    if !r.lesions.is_empty() {
        s += "Lesions\n  source          length_mm  max_angle_deg  surface_mm2  min_cap_um  TCFA\n";
        for l in &r.lesions {
            let x = &l.summary;
            s += &format!(
                "  {:<15} {:>9.2} {:>14.1} {:>12.3} {:>11} {:>5}\n",
                l.source,
                x.length_mm,
                x.max_angle_deg,
                x.surface_area_mm2,
                format!("{:.0}", x.min_cap_um),
                if x.tcfa { "yes" } else { "no" }
            );
        }
    }
    s
}

/// Builds `report.json` (or `out`) from `<run>/metrics.json` and any `summary.json`
/// in `run` or its immediate subdirectories.
pub fn cmd_report(run: &Path, out: Option<&Path>) -> CliResult<RunReport> {
    let metrics_path = run.join("metrics.json");
    if !metrics_path.exists() {
        return Err(CliError::data(format!("missing input: {}", metrics_path.display())));
    }
    let eval: EvaluationReport = read_json(&metrics_path)?;
    let lesions = summaries_in(run)?;
    let mut warnings = Vec::new();
    if eval.agreement.is_none() {
        warnings.push("agreement data absent".to_string());
    }
    if lesions.is_empty() {
        warnings.push("no summary.json found: lesion table absent".to_string());
    }
    let report = RunReport {
        folds: eval.folds,
        fold_summary: eval.fold_summary,
        held_out: eval.pooled,
        agreement: eval.agreement,
        lesions,
        warnings,
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let path = out.map_or_else(|| run.join("report.json"), Path::to_path_buf);
    write_json(&path, &report)?;
    print!("{}", render_report(&report));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_range_is_half_open() {
        let r: FrameRange = "2..4".parse().unwrap();
        assert_eq!(FrameRange::resolve(Some(r), 5).unwrap(), 2..4);
        assert!(FrameRange::resolve(Some(r), 3).is_err());
        assert!("4..4".parse::<FrameRange>().is_err());
        assert!("x..4".parse::<FrameRange>().is_err());
        assert_eq!(FrameRange::resolve(None, 3).unwrap(), 0..3);
    }

    #[test]
    fn timing_percentile() {
        let t = Timing::from_samples((1..=20).map(f64::from).collect());
        assert_eq!(t.mean_s, 10.5);
        assert_eq!(t.p95_s, 19.0);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"train": {"lr": 0.001, "bogus": 1}}"#).unwrap();
        assert_eq!(ExperimentConfig::load(&p).unwrap_err().code, EXIT_USAGE);
        let t = dir.path().join("c.toml");
        fs::write(&t, "seed = 3\n[train]\nlr = 0.001\nmax_epochs = 5\npatience = 2\n").unwrap();
        let cfg = ExperimentConfig::load(&t).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.max_epochs, 5);
    }

    #[test]
    fn seed_override_reaches_components() {
        let cfg = ExperimentConfig::default().with_seed(Some(9));
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::NonFinite("x".into())).code, EXIT_NUMERIC);
        assert_eq!(CliError::from(Error::NoLumen).code, EXIT_DATA);
    }
}
