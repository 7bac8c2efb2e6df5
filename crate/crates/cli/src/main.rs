//! `typeshift` — one binary driving the whole pipeline: render a two-font
//! glyph corpus, pair it under a policy, train the transfer model, and
//! inspect the result (transfers, scores, grids, feature maps, quiz
//! packets).
//!
//! Exit codes: 0 success; 2 configuration or validation error; 3 missing or
//! unreadable inputs; 4 numerical failure during training.

mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array4;
use typeshift_core::elem::Elem;
use typeshift_core::error::Error;
use typeshift_core::glyphrender::{
    self, cp_label, open_font, rasterize, render_corpus, shared_codepoints, CorpusManifest,
    RenderConfig,
};
use typeshift_core::pairset::{
    build_pairs_split, measure_overlap, split_corpus, PairManifest, PairPolicy, Split,
};
use typeshift_core::rngs::{derive, Stream};
use typeshift_core::trainkit::checkpoint::peek_meta;
use typeshift_core::trainkit::{fit, Dataset};
use typeshift_core::{evalkit, Phase, Result};

/// Version string carries the config-hash algorithm so runs are auditable.
const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (config hash: sha-256)");

#[derive(Parser)]
#[command(
    name = "typeshift",
    version = VERSION,
    about = "Typography style transfer: render, pair, train, infer, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Rasterize the codepoints two fonts share into a paired glyph corpus.
    Render(RenderArgs),
    /// Split a corpus and pair it under a policy (strong, soft, random).
    Pair(PairArgs),
    /// Train the transfer model from a TOML config with flag overrides.
    Train(config::TrainFlags),
    /// Transfer glyphs with a trained checkpoint (from text or a manifest).
    Infer(InferArgs),
    /// Score a checkpoint against ground truth (pixel L2 per glyph).
    Eval(EvalArgs),
    /// Write a source | truth | generated comparison grid.
    Grid(GridArgs),
    /// Write a per-channel feature-map montage for one layer.
    Featmaps(FeatmapsArgs),
    /// Deal a shuffled real-vs-generated quiz packet with a sealed key.
    Turing(TuringArgs),
}

#[derive(clap::Args)]
struct RenderArgs {
    /// Font glyphs are transferred from.
    #[arg(long)]
    src_font: PathBuf,
    /// Font whose style is the transfer target.
    #[arg(long)]
    tgt_font: PathBuf,
    /// Corpus directory (PNGs plus manifest.jsonl).
    #[arg(long)]
    out: PathBuf,
    /// Render only this many shared codepoints, sampled with --seed.
    #[arg(long)]
    n: Option<usize>,
    /// Sampling seed for --n.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Square output side in pixels.
    #[arg(long, default_value_t = 256)]
    canvas: usize,
    /// Em box side in pixels (defaults to canvas*220/256).
    #[arg(long)]
    glyph_extent: Option<usize>,
    /// Supersampling factor for anti-aliasing.
    #[arg(long, default_value_t = 2)]
    supersample: usize,
    /// Face index inside collection files.
    #[arg(long, default_value_t = 0)]
    face_index: u32,
    /// Overwrite an existing corpus manifest.
    #[arg(long)]
    force: bool,
}

#[derive(clap::Args)]
struct PairArgs {
    /// Corpus manifest from `render`.
    #[arg(long)]
    corpus: PathBuf,
    /// Directory receiving pairs_train.jsonl (and pairs_test.jsonl).
    #[arg(long)]
    out: PathBuf,
    /// Pairing policy for the training split.
    #[arg(long, value_enum)]
    policy: PolicyArg,
    /// Target source/target codepoint overlap; random policy only.
    #[arg(long)]
    overlap: Option<f64>,
    /// Split and pairing seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training glyph count.
    #[arg(long, default_value_t = 900)]
    train: usize,
    /// Held-out glyph count (0 skips the test manifest).
    #[arg(long, default_value_t = 100)]
    test: usize,
    /// Overwrite existing pair manifests.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Strong,
    Soft,
    Random,
}

#[derive(clap::Args)]
struct InferArgs {
    /// Trained model archive.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Characters to transfer, rasterized from --src-font.
    #[arg(long, conflicts_with = "manifest", requires = "src_font")]
    text: Option<String>,
    /// Font supplying --text glyphs.
    #[arg(long)]
    src_font: Option<PathBuf>,
    /// Pair manifest whose source images are transferred instead of --text.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory receiving one PNG per glyph.
    #[arg(long)]
    out: PathBuf,
    /// Face index inside collection files.
    #[arg(long, default_value_t = 0)]
    face_index: u32,
    /// Overwrite existing transfer PNGs.
    #[arg(long)]
    force: bool,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Trained model archive.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Ground-truth (strong) pair manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Normalization phase to score at.
    #[arg(long, value_enum, default_value_t = PhaseArg::Infer)]
    phase: PhaseArg,
    /// Also write the JSON report here (it always prints to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite an existing report.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Train,
    Infer,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Phase {
        match p {
            PhaseArg::Train => Phase::Train,
            PhaseArg::Infer => Phase::Infer,
        }
    }
}

#[derive(clap::Args)]
struct GridArgs {
    /// Trained model archive.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Pair manifest supplying the rows.
    #[arg(long)]
    manifest: PathBuf,
    /// Glyph rows to draw (clamped to the manifest size).
    #[arg(long, default_value_t = 8)]
    rows: usize,
    /// Output PNG path.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing grid.
    #[arg(long)]
    force: bool,
}

#[derive(clap::Args)]
struct FeatmapsArgs {
    /// Trained model archive.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Grayscale glyph PNG at the model's canvas size.
    #[arg(long)]
    glyph: PathBuf,
    /// Layer to inspect: conv1..convN or deconvN (N = model stage count).
    #[arg(long)]
    layer: String,
    /// Output PNG path.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing montage.
    #[arg(long)]
    force: bool,
}

#[derive(clap::Args)]
struct TuringArgs {
    /// Trained model archive.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Ground-truth (strong) pair manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Glyphs per side; the packet holds n real + n generated images.
    #[arg(long)]
    n: usize,
    /// Glyph choice and shuffle seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving the images and the sealed key.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing packet.
    #[arg(long)]
    force: bool,
}

fn main() {
    let cli = Cli::parse();
    let run = match cli.cmd {
        Cmd::Render(a) => cmd_render(a),
        Cmd::Pair(a) => cmd_pair(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Infer(a) => cmd_infer(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Grid(a) => cmd_grid(a),
        Cmd::Featmaps(a) => cmd_featmaps(a),
        Cmd::Turing(a) => cmd_turing(a),
    };
    if let Err(e) = run {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

/// Refuses to clobber `path` unless the caller passed --force.
fn guard(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::WouldOverwrite(path.to_path_buf()));
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let manifest_path = a.out.join("manifest.jsonl");
    guard(&manifest_path, a.force)?;
    let src = open_font(&a.src_font, a.face_index)?;
    let tgt = open_font(&a.tgt_font, a.face_index)?;
    let mut cps = shared_codepoints(&src, &tgt);
    if let Some(n) = a.n {
        if n > cps.len() {
            return Err(Error::InsufficientCorpus(format!(
                "requested {n} glyphs but the fonts share only {}",
                cps.len()
            )));
        }
        // Seeded subset; drawn one stream past the corpus splitter so the
        // same master seed never reuses a stream.
        use rand::seq::SliceRandom;
        cps.shuffle(&mut derive(a.seed, Stream::Split, 1));
        cps.truncate(n);
    }
    let cfg = RenderConfig {
        canvas: a.canvas,
        glyph_extent: a.glyph_extent.unwrap_or((a.canvas * 220 / 256).max(1)),
        supersample: a.supersample,
    };
    let path = render_corpus(&src, &tgt, &cps, &cfg, &a.out)?;
    println!("rendered {} glyph pairs -> {}", cps.len(), path.display());
    Ok(())
}

fn cmd_pair(a: PairArgs) -> Result<()> {
    let train_path = a.out.join("pairs_train.jsonl");
    let test_path = a.out.join("pairs_test.jsonl");
    guard(&train_path, a.force)?;
    if a.test > 0 {
        guard(&test_path, a.force)?;
    }

    let policy = match a.policy {
        PolicyArg::Strong | PolicyArg::Soft => {
            if let Some(overlap) = a.overlap {
                if overlap != 1.0 {
                    return Err(Error::InvalidConfig(format!(
                        "--overlap {overlap} is only meaningful with --policy random; \
                         strong and soft pairing always overlap fully"
                    )));
                }
            }
            match a.policy {
                PolicyArg::Strong => PairPolicy::strong(a.seed),
                _ => PairPolicy::soft(a.seed),
            }
        }
        PolicyArg::Random => PairPolicy::random(a.overlap.unwrap_or(1.0), a.seed),
    };

    let corpus = CorpusManifest::load(&a.corpus)?;
    let (train_cps, test_cps) = split_corpus(&corpus, a.train, a.test, a.seed)?;
    let mut train = build_pairs_split(&train_cps, policy, &corpus, Split::Train)?;
    std::fs::create_dir_all(&a.out)?;
    rebase_paths(&mut train, &a.out)?;
    train.save(&train_path)?;
    let overlap = measure_overlap(&train)?;
    println!(
        "paired {} training glyphs under {} (overlap {:.3}) -> {}",
        train.pairs.len(),
        policy.kind.as_str(),
        overlap,
        train_path.display()
    );

    if a.test > 0 {
        // The held-out split always pairs same-codepoint so evaluation has
        // ground truth, whatever policy trained the model.
        let mut test =
            build_pairs_split(&test_cps, PairPolicy::strong(a.seed), &corpus, Split::Test)?;
        rebase_paths(&mut test, &a.out)?;
        test.save(&test_path)?;
        println!("held out {} test glyphs -> {}", test.pairs.len(), test_path.display());
    }
    Ok(())
}

/// Pair-record paths are relative to the manifest's directory. When the
/// manifest is written somewhere other than the corpus directory, switch
/// the records to absolute paths so they stay resolvable.
fn rebase_paths(m: &mut PairManifest, out_dir: &Path) -> Result<()> {
    let corpus_dir = std::fs::canonicalize(&m.base_dir)?;
    if std::fs::canonicalize(out_dir)? == corpus_dir {
        return Ok(());
    }
    for p in &mut m.pairs {
        p.src_path = corpus_dir.join(&p.src_path).to_string_lossy().into_owned();
        p.tgt_path = corpus_dir.join(&p.tgt_path).to_string_lossy().into_owned();
    }
    Ok(())
}

fn cmd_train(flags: config::TrainFlags) -> Result<()> {
    let run = config::resolve(&flags)?;
    let log_path = run.out_dir.join("train_log.csv");
    if run.resume.is_none() {
        guard(&log_path, run.force)?;
    }
    let data = Dataset::load(&run.manifest)?;
    std::fs::create_dir_all(&run.out_dir)?;
    // The resolved config and its hash ride along with every run so any
    // artifact can be traced back to exact settings.
    let stamp = serde_json::json!({
        "config": run.cfg,
        "config_hash": run.cfg.config_hash(),
    });
    std::fs::write(
        run.out_dir.join("config_used.json"),
        serde_json::to_string_pretty(&stamp).expect("plain values"),
    )?;

    let outcome = fit::<f32>(&run.cfg, &data, &run.out_dir, run.resume.as_deref())?;
    let steps = outcome.reports.len();
    match outcome.reports.last() {
        Some(last) => println!(
            "trained {} steps (total g {:.4}, d {:.4}) -> {}",
            steps,
            last.total_g,
            last.total_d,
            outcome.final_checkpoint.display()
        ),
        None => println!(
            "nothing left to train -> {}",
            outcome.final_checkpoint.display()
        ),
    }
    Ok(())
}

/// Runs `body` with the checkpoint's archived element type.
macro_rules! with_checkpoint_dtype {
    ($path:expr, $f:ident, $($args:expr),* $(,)?) => {{
        let meta = peek_meta($path)?;
        match meta.dtype.as_str() {
            "f32" => $f::<f32>($($args),*),
            "f64" => $f::<f64>($($args),*),
            other => Err(Error::BadCheckpoint {
                path: $path.to_path_buf(),
                reason: format!("unsupported element type {other:?}"),
            }),
        }
    }};
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    with_checkpoint_dtype!(&a.checkpoint, infer_typed, &a)
}

fn infer_typed<F: Elem>(a: &InferArgs) -> Result<()> {
    use typeshift_core::trainkit::checkpoint::{load_generator, Checkpoint};
    let ck = Checkpoint::<F>::load(&a.checkpoint)?;
    let canvas = ck.meta.spec.canvas;
    let mut gen = load_generator(&ck)?;
    gen.set_phase(Phase::Infer);

    let (batch, labels): (Array4<F>, Vec<String>) = match (&a.text, &a.manifest) {
        (Some(text), None) => {
            let font = open_font(
                a.src_font.as_ref().expect("clap enforces --src-font with --text"),
                a.face_index,
            )?;
            let cfg = RenderConfig {
                canvas,
                glyph_extent: (canvas * 220 / 256).max(1),
                supersample: 2,
            };
            let cps: Vec<u32> = text.chars().map(|c| c as u32).collect();
            if cps.is_empty() {
                return Err(Error::InvalidConfig("--text is empty".into()));
            }
            let mut batch = Array4::<F>::zeros((cps.len(), 3, canvas, canvas));
            for (i, &cp) in cps.iter().enumerate() {
                let img = rasterize(&font, cp, &cfg)?;
                for r in 0..canvas {
                    for c in 0..canvas {
                        let v = F::of_f64(img.pixels[(r, c, 0)] as f64);
                        for ch in 0..3 {
                            batch[(i, ch, r, c)] = v;
                        }
                    }
                }
            }
            (batch, cps.iter().map(|&cp| cp_label(cp)).collect())
        }
        (None, Some(manifest)) => {
            let manifest = PairManifest::load(manifest)?;
            let data = Dataset::load(&manifest)?;
            if data.canvas() != canvas {
                return Err(Error::ConfigMismatch(format!(
                    "manifest canvas {} differs from checkpoint canvas {canvas}",
                    data.canvas()
                )));
            }
            let idxs: Vec<usize> = (0..data.len()).collect();
            let (src, _) = data.batch::<F>(&idxs);
            let labels = data.pairs.iter().map(|p| cp_label(p.src_cp)).collect();
            (src, labels)
        }
        _ => {
            return Err(Error::InvalidConfig(
                "pass exactly one of --text or --manifest".into(),
            ))
        }
    };

    std::fs::create_dir_all(&a.out)?;
    let mut written = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        let path = a.out.join(format!("{label}.png"));
        guard(&path, a.force)?;
        written.push((i, path));
    }
    let out = gen.generate(&batch, 0, None)?;
    for (i, path) in written {
        let plane = ndarray::Array2::from_shape_fn((canvas, canvas), |(r, c)| {
            out[(i, 0, r, c)].as_f64() as f32
        });
        glyphrender::save_png_gray(&path, &plane)?;
    }
    println!("transferred {} glyphs -> {}", labels.len(), a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let manifest = PairManifest::load(&a.manifest)?;
    let report = with_checkpoint_dtype!(
        &a.checkpoint,
        eval_typed,
        &a.checkpoint,
        &manifest,
        a.phase.into()
    )?;
    println!("{}", report.to_json());
    if let Some(out) = &a.out {
        guard(out, a.force)?;
        report.write_json(out)?;
    }
    Ok(())
}

fn eval_typed<F: Elem>(
    ckpt: &Path,
    manifest: &PairManifest,
    phase: Phase,
) -> Result<evalkit::EvalReport> {
    evalkit::evaluate::<F>(ckpt, manifest, phase)
}

fn cmd_grid(a: GridArgs) -> Result<()> {
    guard(&a.out, a.force)?;
    let manifest = PairManifest::load(&a.manifest)?;
    with_checkpoint_dtype!(&a.checkpoint, grid_typed, &a, &manifest)?;
    println!("grid -> {}", a.out.display());
    Ok(())
}

fn grid_typed<F: Elem>(a: &GridArgs, manifest: &PairManifest) -> Result<()> {
    evalkit::sample_grid::<F>(&a.checkpoint, manifest, a.rows, &a.out)
}

fn cmd_featmaps(a: FeatmapsArgs) -> Result<()> {
    guard(&a.out, a.force)?;
    with_checkpoint_dtype!(&a.checkpoint, featmaps_typed, &a)?;
    println!("feature maps for {} -> {}", a.layer, a.out.display());
    Ok(())
}

fn featmaps_typed<F: Elem>(a: &FeatmapsArgs) -> Result<()> {
    let img = glyphrender::load_png(&a.glyph)?;
    let (h, w, _) = img.dim();
    let mut glyph = Array4::<F>::zeros((1, 3, h, w));
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                glyph[(0, ch, r, c)] = F::of_f64(img[(r, c, ch)] as f64);
            }
        }
    }
    evalkit::feature_maps::<F>(&a.checkpoint, &glyph, &a.layer, &a.out)
}

fn cmd_turing(a: TuringArgs) -> Result<()> {
    guard(&a.out.join(evalkit::TURING_KEY_FILENAME), a.force)?;
    let manifest = PairManifest::load(&a.manifest)?;
    let packet = with_checkpoint_dtype!(&a.checkpoint, turing_typed, &a, &manifest)?;
    println!(
        "dealt {} images (seed {}) -> {}\nsealed key: {}",
        packet.images.len(),
        packet.seed,
        a.out.display(),
        packet.key_path.display()
    );
    Ok(())
}

fn turing_typed<F: Elem>(a: &TuringArgs, manifest: &PairManifest) -> Result<evalkit::TuringPacket> {
    evalkit::turing_packet::<F>(&a.checkpoint, manifest, a.n, a.seed, &a.out)
}
