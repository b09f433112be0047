//! The `samaug` command line.
//!
//! `samaug [--config FILE] [--root DIR] [--seed N] <command> [overrides]`
//! with commands `synth`, `build-priors`, `augment`, `train`, `infer` and
//! `evaluate`. Exit codes: 0 success, 1 runtime failure, 2 usage or
//! configuration error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::data::{
    self, load_dataset, mask_set_path, prior_cache_paths, ClassScheme, DatasetManifest, Layout,
    Sample, Split, SynthDatasetParams,
};
use crate::deployment::{activate, infer, mean_entropy, Chosen, DeployStrategy, ProbMap};
use crate::error::Error;
use crate::fusion::RawImage;
use crate::masks::{load_mask_set, SynthMaskParams};
use crate::metrics::{Connectivity, EvalReport, ImageMetrics};
use crate::model::{SegModel, UNet, UNetSpec};
use crate::priors::{build_priors, PriorKind, PriorMap};
use crate::tensor::Tensor;
use crate::training::{history_csv, train, Checkpoint, LossKind, TrainConfig};

/// Errors surfaced by commands, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Dataset(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn runtime(e: impl Into<Error>) -> CliError {
    CliError::Runtime(e.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_train_dir")]
    pub train: PathBuf,
    #[serde(default = "default_test_dir")]
    pub test: PathBuf,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default)]
    pub class_scheme: ClassScheme,
}

fn default_train_dir() -> PathBuf {
    PathBuf::from("data/train")
}

fn default_test_dir() -> PathBuf {
    PathBuf::from("data/test")
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            train: default_train_dir(),
            test: default_test_dir(),
            layout: Layout::default(),
            class_scheme: ClassScheme::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_base_channels")]
    pub base_channels: usize,
}

fn default_base_channels() -> usize {
    8
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            base_channels: default_base_channels(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferSection {
    #[serde(default = "default_strategy")]
    pub strategy: DeployStrategy,
    /// Defaults to `<output>/checkpoint.json`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Defaults to `<output>/predictions`.
    #[serde(default)]
    pub predictions: Option<PathBuf>,
    /// Run a strategy even when the checkpoint was trained without the inputs it needs.
    #[serde(default)]
    pub allow_mismatch: bool,
}

fn default_strategy() -> DeployStrategy {
    DeployStrategy::EntropySelect
}

impl Default for InferSection {
    fn default() -> Self {
        InferSection {
            strategy: default_strategy(),
            checkpoint: None,
            predictions: None,
            allow_mismatch: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// 4 or 8.
    #[serde(default = "default_connectivity")]
    pub connectivity: u8,
}

fn default_connectivity() -> u8 {
    8
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            connectivity: default_connectivity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_blobs")]
    pub blobs_per_image: usize,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    #[serde(default)]
    pub masks: SynthMaskParams,
}

fn default_n_train() -> usize {
    40
}
fn default_n_test() -> usize {
    10
}
fn default_image_size() -> usize {
    128
}
fn default_blobs() -> usize {
    6
}
fn default_noise() -> f64 {
    SynthDatasetParams::default().noise_sigma
}
fn default_contrast() -> f64 {
    SynthDatasetParams::default().contrast
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            n_train: default_n_train(),
            n_test: default_n_test(),
            image_size: default_image_size(),
            blobs_per_image: default_blobs(),
            noise_sigma: default_noise(),
            contrast: default_contrast(),
            masks: SynthMaskParams::default(),
        }
    }
}

/// Everything a run needs; serialized as TOML, unknown keys rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub infer: InferSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output: default_output(),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            infer: InferSection::default(),
            evaluate: EvaluateSection::default(),
            synth: SynthSection::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> crate::Result<()> {
        self.train.validate()?;
        Connectivity::try_from(self.evaluate.connectivity)?;
        if self.model.base_channels == 0 {
            return Err(Error::Config("model.base_channels must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "samaug", version, about = "Prior-map input augmentation for segmentation")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    pub root: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `output` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/test dataset in the generic layout.
    Synth(SynthArgs),
    /// Build and cache prior maps from mask-set files.
    BuildPriors(BuildPriorsArgs),
    /// Write fused images as 8-bit PNGs.
    Augment(SplitArgs),
    /// Train the reference U-Net.
    Train(TrainArgs),
    /// Run a deployment strategy over the test split.
    Infer(InferArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub blobs: Option<usize>,
    #[arg(long)]
    pub dilate: Option<usize>,
    #[arg(long)]
    pub drop: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Which split(s) to process; both when omitted.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
}

#[derive(Debug, Args)]
pub struct BuildPriorsArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    /// Fail on the first image without a mask set instead of writing zero priors.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub crop_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub base_channels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<DeployStrategy>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub allow_mismatch: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub connectivity: Option<u8>,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s:?} (train or test)")),
    }
}

fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    match s {
        "spatial-cross-entropy" | "ce" => Ok(LossKind::SpatialCrossEntropy),
        "dice" => Ok(LossKind::Dice),
        _ => Err(format!("unknown loss {s:?} (spatial-cross-entropy or dice)")),
    }
}

fn parse_strategy(s: &str) -> std::result::Result<DeployStrategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Resolved environment for one invocation.
struct Ctx {
    root: PathBuf,
    cfg: RunConfig,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn output(&self) -> PathBuf {
        self.path(&self.cfg.output)
    }

    fn manifest(&self, split: Split) -> DatasetManifest {
        let dir = match split {
            Split::Train => &self.cfg.data.train,
            Split::Test => &self.cfg.data.test,
        };
        DatasetManifest {
            root: self.path(dir),
            split,
            layout: self.cfg.data.layout,
            class_scheme: self.cfg.data.class_scheme,
        }
    }

    fn splits(&self, only: Option<Split>) -> Vec<Split> {
        match only {
            Some(s) => vec![s],
            None => vec![Split::Train, Split::Test],
        }
    }

    fn snapshot(&self, dir: &Path, command: &str) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(format!("{command}.config.toml"));
        let text = toml::to_string(&self.cfg).map_err(|e| CliError::Usage(e.to_string()))?;
        fs::write(&path, text).map_err(io_err(&path))
    }
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let p = if p.is_absolute() { p.clone() } else { cli.root.join(p) };
            let text = fs::read_to_string(&p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str::<RunConfig>(&text)
                .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    match &cli.command {
        Command::Synth(a) => {
            let s = &mut cfg.synth;
            s.n_train = a.n_train.unwrap_or(s.n_train);
            s.n_test = a.n_test.unwrap_or(s.n_test);
            s.image_size = a.size.unwrap_or(s.image_size);
            s.blobs_per_image = a.blobs.unwrap_or(s.blobs_per_image);
            s.masks.dilate_px = a.dilate.unwrap_or(s.masks.dilate_px);
            s.masks.drop_prob = a.drop.unwrap_or(s.masks.drop_prob);
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            t.total_iters = a.iters.unwrap_or(t.total_iters);
            t.beta = a.beta.unwrap_or(t.beta);
            t.lambda = a.lambda.unwrap_or(t.lambda);
            t.loss = a.loss.unwrap_or(t.loss);
            t.batch_size = a.batch_size.unwrap_or(t.batch_size);
            t.crop_size = a.crop_size.unwrap_or(t.crop_size);
            t.lr = a.lr.unwrap_or(t.lr);
            cfg.model.base_channels = a.base_channels.unwrap_or(cfg.model.base_channels);
        }
        Command::Infer(a) => {
            let i = &mut cfg.infer;
            i.strategy = a.strategy.unwrap_or(i.strategy);
            if a.checkpoint.is_some() {
                i.checkpoint = a.checkpoint.clone();
            }
            if a.predictions.is_some() {
                i.predictions = a.predictions.clone();
            }
            i.allow_mismatch |= a.allow_mismatch;
        }
        Command::Evaluate(a) => {
            if a.predictions.is_some() {
                cfg.infer.predictions = a.predictions.clone();
            }
            cfg.evaluate.connectivity = a.connectivity.unwrap_or(cfg.evaluate.connectivity);
        }
        Command::BuildPriors(_) | Command::Augment(_) => {}
    }
    // The run seed drives both initialization and batch sampling.
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    let ctx = Ctx {
        root: cli.root.clone(),
        cfg,
    };
    match &cli.command {
        Command::Synth(_) => cmd_synth(&ctx),
        Command::BuildPriors(a) => cmd_build_priors(&ctx, a.split.split, a.strict),
        Command::Augment(a) => cmd_augment(&ctx, a.split),
        Command::Train(_) => cmd_train(&ctx),
        Command::Infer(_) => cmd_infer(&ctx),
        Command::Evaluate(_) => cmd_evaluate(&ctx),
    }
}

fn cmd_synth(ctx: &Ctx) -> CliResult<()> {
    let s = &ctx.cfg.synth;
    for (split, n, seed_offset) in [(Split::Train, s.n_train, 0u64), (Split::Test, s.n_test, 1)] {
        let params = SynthDatasetParams {
            n_images: n,
            image_size: s.image_size,
            blobs_per_image: s.blobs_per_image,
            noise_sigma: s.noise_sigma,
            contrast: s.contrast,
            masks: s.masks,
            class_scheme: ctx.cfg.data.class_scheme,
        };
        let seed = ctx.cfg.seed.wrapping_mul(2).wrapping_add(seed_offset);
        let ds = data::synth_dataset(&params, seed)?;
        let dir = ctx.manifest(split).root;
        data::save_generic(&ds.samples, &dir)?;
        log::info!("wrote {} synthetic images to {}", ds.samples.len(), dir.display());
    }
    ctx.snapshot(&ctx.output(), "synth")
}

/// Ids and image paths in a split, without decoding labels.
fn split_images(m: &DatasetManifest) -> CliResult<Vec<(String, PathBuf)>> {
    if !m.root.is_dir() {
        return Err(CliError::Usage(format!("dataset root {} does not exist", m.root.display())));
    }
    Ok(data::discover_images(m)?)
}

fn cmd_build_priors(ctx: &Ctx, only: Option<Split>, strict: bool) -> CliResult<()> {
    for split in ctx.splits(only) {
        let m = ctx.manifest(split);
        let images = split_images(&m)?;
        let dir = m.root.join("priors");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (id, img_path) in images {
            let mpath = mask_set_path(&m.root, &id);
            let (seg, bnd) = if mpath.is_file() {
                let ms = load_mask_set(&mpath).map_err(runtime)?;
                build_priors(&ms)
            } else if strict {
                return Err(CliError::Runtime(Error::Dataset(format!(
                    "missing mask set {}",
                    mpath.display()
                ))));
            } else {
                log::warn!("{id}: no mask set at {}, writing zero priors", mpath.display());
                let (w, h) = RawImage::load(&img_path).map_err(runtime)?.dims();
                (
                    PriorMap::zeros(PriorKind::Segmentation, w, h),
                    PriorMap::zeros(PriorKind::Boundary, w, h),
                )
            };
            let (seg_p, bnd_p) = prior_cache_paths(&m.root, &id);
            seg.save_png(&seg_p).map_err(runtime)?;
            bnd.save_png(&bnd_p).map_err(runtime)?;
        }
        ctx.snapshot(&dir, "build-priors")?;
    }
    Ok(())
}

fn cmd_augment(ctx: &Ctx, only: Option<Split>) -> CliResult<()> {
    let out = ctx.output().join("augmented");
    for split in ctx.splits(only) {
        let samples = load_dataset(&ctx.manifest(split))?;
        let dir = out.join(match split {
            Split::Train => "train",
            Split::Test => "test",
        });
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for s in &samples {
            s.augmented().save_png(dir.join(format!("{}.png", s.id))).map_err(runtime)?;
        }
    }
    ctx.snapshot(&out, "augment")
}

fn cmd_train(ctx: &Ctx) -> CliResult<()> {
    let samples = load_dataset(&ctx.manifest(Split::Train))?;
    if samples.is_empty() && ctx.cfg.train.total_iters > 0 {
        return Err(CliError::Usage("training split contains no images".into()));
    }
    let pairs: Vec<_> = samples.iter().map(Sample::to_train_sample).collect();
    let spec = UNetSpec {
        base_channels: ctx.cfg.model.base_channels,
        num_classes: ctx.cfg.data.class_scheme.num_classes(),
    };
    let mut net = UNet::new(spec, ctx.cfg.seed)?;
    let history = train(&mut net, &pairs, &ctx.cfg.train).map_err(|e| match e {
        Error::Config(_) => CliError::from(e),
        other => CliError::Runtime(other),
    })?;
    let out = ctx.output();
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    Checkpoint::new(&net, &ctx.cfg.train, history.len())
        .save(out.join("checkpoint.json"))
        .map_err(runtime)?;
    let csv = out.join("loss.csv");
    fs::write(&csv, history_csv(&history)).map_err(io_err(&csv))?;
    if let Some(last) = history.last() {
        log::info!("trained {} iterations, final loss {last:.6}", history.len());
    }
    ctx.snapshot(&out, "train")
}

/// Per-image sidecar written next to the probability maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferSidecar {
    pub id: String,
    pub strategy: DeployStrategy,
    pub chosen: Option<Chosen>,
    pub entropy_raw: Option<f64>,
    pub entropy_aug: Option<f64>,
}

fn check_strategy(strategy: DeployStrategy, cfg: &TrainConfig) -> Option<String> {
    match strategy {
        DeployStrategy::AugOnly if cfg.lambda == 0.0 => Some(
            "aug-only inference needs a model trained on augmented inputs (lambda > 0)".into(),
        ),
        DeployStrategy::Ensemble | DeployStrategy::EntropySelect if cfg.beta == 0.0 => Some(
            format!("{strategy:?} needs a model trained on raw and augmented inputs (beta > 0)"),
        ),
        DeployStrategy::Ensemble | DeployStrategy::EntropySelect if cfg.lambda == 0.0 => Some(
            format!("{strategy:?} needs a model trained on raw and augmented inputs (lambda > 0)"),
        ),
        _ => None,
    }
}

/// `<dir>/<id>.c<k>.png` for class `k`.
pub fn prob_map_path(dir: &Path, id: &str, class: usize) -> PathBuf {
    dir.join(format!("{id}.c{class}.png"))
}

fn save_prob_map(p: &ProbMap, dir: &Path, id: &str) -> crate::Result<()> {
    let t = p.tensor();
    let (w, h) = p.dims();
    for c in 0..t.channels() {
        let raw: Vec<u16> = t.plane(c).iter().map(|&v| (v * 65535.0).round() as u16).collect();
        let path = prob_map_path(dir, id, c);
        ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(w as u32, h as u32, raw)
            .expect("buffer size")
            .save(&path)
            .map_err(|e| Error::Image { path, source: e })?;
    }
    Ok(())
}

/// Read per-class maps until a class file is missing; renormalizes each pixel
/// to undo 16-bit quantization.
pub fn load_prob_map(dir: &Path, id: &str) -> crate::Result<ProbMap> {
    let mut planes = Vec::new();
    loop {
        let path = prob_map_path(dir, id, planes.len());
        if !path.is_file() {
            break;
        }
        planes.push(PriorMap::load_png(PriorKind::Segmentation, &path)?.values().clone());
    }
    if planes.len() < 2 {
        return Err(Error::Dataset(format!("no probability maps for {id} in {}", dir.display())));
    }
    let refs: Vec<_> = planes.iter().collect();
    let mut t = Tensor::from_planes(&refs)?;
    let (c, h, w) = t.shape();
    let n = h * w;
    let data = t.as_mut_slice();
    for i in 0..n {
        let sum: f64 = (0..c).map(|ch| data[ch * n + i]).sum();
        for ch in 0..c {
            data[ch * n + i] = if sum > 0.0 { data[ch * n + i] / sum } else { 1.0 / c as f64 };
        }
    }
    ProbMap::new(t)
}

fn cmd_infer(ctx: &Ctx) -> CliResult<()> {
    let icfg = &ctx.cfg.infer;
    let out = ctx.output();
    let ckpt_path = icfg
        .checkpoint
        .as_ref()
        .map(|p| ctx.path(p))
        .unwrap_or_else(|| out.join("checkpoint.json"));
    if !ckpt_path.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} not found", ckpt_path.display())));
    }
    let ckpt = Checkpoint::load(&ckpt_path).map_err(runtime)?;
    if let Some(msg) = check_strategy(icfg.strategy, &ckpt.config) {
        if icfg.allow_mismatch {
            log::warn!("{msg}");
        } else {
            return Err(CliError::Usage(format!("{msg}; pass --allow-mismatch to override")));
        }
    }
    let net = ckpt.to_model()?;
    let samples = load_dataset(&ctx.manifest(Split::Test))?;
    let pred_dir = icfg
        .predictions
        .as_ref()
        .map(|p| ctx.path(p))
        .unwrap_or_else(|| out.join("predictions"));
    fs::create_dir_all(&pred_dir).map_err(io_err(&pred_dir))?;
    for s in &samples {
        let x = s.image.to_model_input();
        let x_aug = s.augmented().into_tensor();
        let (probs, chosen) = infer(&net, icfg.strategy, &x, &x_aug).map_err(runtime)?;
        let (entropy_raw, entropy_aug) = if icfg.strategy == DeployStrategy::EntropySelect {
            let e = |t: &Tensor| mean_entropy(&activate(&net.forward(t), net.activation()));
            (Some(e(&x).map_err(runtime)?), Some(e(&x_aug).map_err(runtime)?))
        } else {
            (None, None)
        };
        save_prob_map(&probs, &pred_dir, &s.id).map_err(runtime)?;
        let sidecar = InferSidecar {
            id: s.id.clone(),
            strategy: icfg.strategy,
            chosen,
            entropy_raw,
            entropy_aug,
        };
        let path = pred_dir.join(format!("{}.json", s.id));
        fs::write(&path, serde_json::to_string_pretty(&sidecar).expect("sidecar"))
            .map_err(io_err(&path))?;
    }
    log::info!("wrote {} predictions to {}", samples.len(), pred_dir.display());
    ctx.snapshot(&pred_dir, "infer")
}

fn cmd_evaluate(ctx: &Ctx) -> CliResult<()> {
    let out = ctx.output();
    let pred_dir = ctx
        .cfg
        .infer
        .predictions
        .as_ref()
        .map(|p| ctx.path(p))
        .unwrap_or_else(|| out.join("predictions"));
    let connectivity = Connectivity::try_from(ctx.cfg.evaluate.connectivity)?;
    let samples = load_dataset(&ctx.manifest(Split::Test))?;
    let mut missing = Vec::new();
    for s in &samples {
        if !prob_map_path(&pred_dir, &s.id, 0).is_file() {
            missing.push(s.id.clone());
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Usage(format!(
            "no predictions in {} for: {}",
            pred_dir.display(),
            missing.join(", ")
        )));
    }
    let mut per_image = Vec::with_capacity(samples.len());
    for s in &samples {
        let p = load_prob_map(&pred_dir, &s.id).map_err(runtime)?;
        if p.dims() != s.instances.dims() {
            return Err(CliError::Usage(format!("prediction for {} has the wrong size", s.id)));
        }
        per_image.push(
            ImageMetrics::compute(s.id.clone(), &p.foreground(), &p.instances(connectivity), &s.instances)
                .map_err(runtime)?,
        );
    }
    let report = EvalReport::new(per_image);
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let json = out.join("report.json");
    fs::write(&json, serde_json::to_string_pretty(&report).expect("report")).map_err(io_err(&json))?;
    let csv = out.join("per_image.csv");
    fs::write(&csv, report.per_image_csv()).map_err(io_err(&csv))?;
    print!("{}", report.table());
    ctx.snapshot(&out, "evaluate")
}
