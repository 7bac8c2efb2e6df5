//! Training run configuration: a TOML file is the source of truth, and every
//! file key has exactly one corresponding command-line flag that overrides
//! it. The pairing policy is never stated here — it travels inside the pair
//! manifest, so a run cannot contradict its data.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use typeshift_core::error::Error;
use typeshift_core::pairset::PairManifest;
use typeshift_core::trainkit::TrainConfig;
use typeshift_core::{ModelSpec, Result};

/// On-disk schema. Every field is optional; anything absent falls back to
/// the canvas-appropriate defaults. Unknown keys are rejected so typos
/// surface as validation errors instead of silently ignored settings.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    /// Training pair manifest path, relative to the config file.
    pub pairs: Option<PathBuf>,
    /// Run directory for logs, grids, and checkpoints.
    pub out_dir: Option<PathBuf>,
    pub model: ModelTable,
    pub train: TrainTable,
    pub optimizer: OptimizerTable,
    pub weights: WeightsTable,
    pub augment: AugmentTable,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelTable {
    pub canvas: Option<usize>,
    pub base_channels: Option<usize>,
    pub style_embed_dim: Option<usize>,
    pub n_styles: Option<usize>,
    pub dropout_p: Option<f64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainTable {
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub freeze_encoder_steps: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub sample_every: Option<u64>,
    pub warm_start: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerTable {
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsTable {
    pub w_gan: Option<f64>,
    pub w_const: Option<f64>,
    pub w_tid: Option<f64>,
    pub w_tv: Option<f64>,
    pub w_l2: Option<f64>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentTable {
    pub enabled: Option<bool>,
    pub max_shift_px: Option<usize>,
    pub scale_lo: Option<f64>,
    pub scale_hi: Option<f64>,
    pub fill: Option<f64>,
}

/// Flag twins of the file keys, plus the run-control flags that have no
/// business in a config file (--config, --resume, --force).
#[derive(Debug, Args)]
pub struct TrainFlags {
    /// TOML config file; flags below override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training pair manifest (overrides `pairs`).
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Run directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Resume from this checkpoint; the run config must hash identically.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Seed encoder weights from this checkpoint (overrides `train.warm_start`).
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    /// Allow writing into a run directory that already holds a training log.
    #[arg(long)]
    pub force: bool,

    /// Square image side in pixels (overrides `model.canvas`).
    #[arg(long)]
    pub canvas: Option<usize>,
    /// First-stage channel count (overrides `model.base_channels`).
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Style embedding length (overrides `model.style_embed_dim`).
    #[arg(long)]
    pub style_embed_dim: Option<usize>,
    /// Style table rows (overrides `model.n_styles`).
    #[arg(long)]
    pub n_styles: Option<usize>,
    /// Decoder dropout probability (overrides `model.dropout_p`).
    #[arg(long)]
    pub dropout_p: Option<f64>,

    /// Images per step (overrides `train.batch_size`).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Passes over the corpus (overrides `train.epochs`).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Master seed for all randomness (overrides `train.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Steps with encoder parameters held fixed (overrides `train.freeze_encoder_steps`).
    #[arg(long)]
    pub freeze_encoder_steps: Option<u64>,
    /// Checkpoint interval in steps, 0 = final only (overrides `train.checkpoint_every`).
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Sample-grid interval in steps, 0 = never (overrides `train.sample_every`).
    #[arg(long)]
    pub sample_every: Option<u64>,

    /// Adam learning rate (overrides `optimizer.learning_rate`).
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Adam beta1 (overrides `optimizer.beta1`).
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Adam beta2 (overrides `optimizer.beta2`).
    #[arg(long)]
    pub beta2: Option<f64>,

    /// Adversarial weight (overrides `weights.w_gan`).
    #[arg(long)]
    pub w_gan: Option<f64>,
    /// Code-consistency weight (overrides `weights.w_const`).
    #[arg(long)]
    pub w_const: Option<f64>,
    /// Target-identity weight (overrides `weights.w_tid`).
    #[arg(long)]
    pub w_tid: Option<f64>,
    /// Total-variation weight (overrides `weights.w_tv`).
    #[arg(long)]
    pub w_tv: Option<f64>,
    /// Supervised pixel weight, Strong pairs only (overrides `weights.w_l2`).
    #[arg(long)]
    pub w_l2: Option<f64>,

    /// Enable input augmentation (overrides `augment.enabled`).
    #[arg(long)]
    pub augment: Option<bool>,
    /// Largest augmentation shift in pixels (overrides `augment.max_shift_px`).
    #[arg(long)]
    pub max_shift_px: Option<usize>,
    /// Lower augmentation scale bound (overrides `augment.scale_lo`).
    #[arg(long)]
    pub scale_lo: Option<f64>,
    /// Upper augmentation scale bound (overrides `augment.scale_hi`).
    #[arg(long)]
    pub scale_hi: Option<f64>,
    /// Pixel value exposed outside shifted images (overrides `augment.fill`).
    #[arg(long)]
    pub fill: Option<f64>,
}

/// A fully merged run: the validated training config, the manifest it
/// trains on, and where artifacts go.
pub struct ResolvedRun {
    pub cfg: TrainConfig,
    pub manifest: PairManifest,
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    pub force: bool,
}

pub fn load_file(path: &Path) -> Result<FileConfig> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::FileNotFound(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    toml::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Merges file keys and flag overrides into a validated `TrainConfig`.
/// Paths inside the file resolve relative to the file's directory; paths
/// given as flags resolve relative to the working directory.
pub fn resolve(flags: &TrainFlags) -> Result<ResolvedRun> {
    let (file, file_dir) = match &flags.config {
        Some(path) => (
            load_file(path)?,
            path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        ),
        None => (FileConfig::default(), PathBuf::from(".")),
    };
    let from_file = |p: &PathBuf| file_dir.join(p);

    let pairs = flags
        .pairs
        .clone()
        .or_else(|| file.pairs.as_ref().map(from_file))
        .ok_or_else(|| Error::InvalidConfig("no pair manifest: set `pairs` or --pairs".into()))?;
    let out_dir = flags
        .out
        .clone()
        .or_else(|| file.out_dir.as_ref().map(from_file))
        .ok_or_else(|| Error::InvalidConfig("no run directory: set `out_dir` or --out".into()))?;
    let manifest = PairManifest::load(&pairs)?;

    // Canvas picks the base profile; everything else overrides from there.
    let canvas = flags.canvas.or(file.model.canvas).unwrap_or(256);
    let mut spec = if canvas <= 32 { ModelSpec::micro() } else { ModelSpec::full() };
    spec.canvas = canvas;
    let m = &file.model;
    if let Some(v) = flags.base_channels.or(m.base_channels) {
        spec.base_channels = v;
    }
    if let Some(v) = flags.style_embed_dim.or(m.style_embed_dim) {
        spec.style_embed_dim = v;
    }
    if let Some(v) = flags.n_styles.or(m.n_styles) {
        spec.n_styles = v;
    }
    if let Some(v) = flags.dropout_p.or(m.dropout_p) {
        spec.dropout_p = v;
    }

    let mut cfg = TrainConfig::defaults(spec, manifest.policy);
    let t = &file.train;
    if let Some(v) = flags.batch_size.or(t.batch_size) {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.epochs.or(t.epochs) {
        cfg.epochs = v;
    }
    if let Some(v) = flags.seed.or(t.seed) {
        cfg.seed = v;
    }
    if let Some(v) = flags.freeze_encoder_steps.or(t.freeze_encoder_steps) {
        cfg.freeze_encoder_steps = v;
    }
    if let Some(v) = flags.checkpoint_every.or(t.checkpoint_every) {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = flags.sample_every.or(t.sample_every) {
        cfg.sample_every = v;
    }
    cfg.warm_start = flags
        .warm_start
        .clone()
        .or_else(|| t.warm_start.as_ref().map(from_file));

    let o = &file.optimizer;
    if let Some(v) = flags.learning_rate.or(o.learning_rate) {
        cfg.optimizer.learning_rate = v;
    }
    if let Some(v) = flags.beta1.or(o.beta1) {
        cfg.optimizer.beta1 = v;
    }
    if let Some(v) = flags.beta2.or(o.beta2) {
        cfg.optimizer.beta2 = v;
    }

    let w = &file.weights;
    if let Some(v) = flags.w_gan.or(w.w_gan) {
        cfg.weights.w_gan = v;
    }
    if let Some(v) = flags.w_const.or(w.w_const) {
        cfg.weights.w_const = v;
    }
    if let Some(v) = flags.w_tid.or(w.w_tid) {
        cfg.weights.w_tid = v;
    }
    if let Some(v) = flags.w_tv.or(w.w_tv) {
        cfg.weights.w_tv = v;
    }
    if let Some(v) = flags.w_l2.or(w.w_l2) {
        cfg.weights.w_l2 = v;
    }

    let a = &file.augment;
    if let Some(v) = flags.augment.or(a.enabled) {
        cfg.augment.enabled = v;
    }
    if let Some(v) = flags.max_shift_px.or(a.max_shift_px) {
        cfg.augment.max_shift_px = v;
    }
    if let Some(v) = flags.scale_lo.or(a.scale_lo) {
        cfg.augment.scale_range.0 = v;
    }
    if let Some(v) = flags.scale_hi.or(a.scale_hi) {
        cfg.augment.scale_range.1 = v;
    }
    if let Some(v) = flags.fill.or(a.fill) {
        cfg.augment.fill = v;
    }

    cfg.validate()?;
    Ok(ResolvedRun {
        cfg,
        manifest,
        out_dir,
        resume: flags.resume.clone(),
        force: flags.force,
    })
}
