//! Evaluation and inspection: pixel-L2 scoring against ground truth,
//! comparison grids, per-channel feature-map montages, and shuffled
//! real-vs-generated test packets with a sealed answer key.
//!
//! Everything here is read-only over checkpoints: operations load the
//! archived generator into a private instance and never write model state
//! back. Scores are computed in the same [-1, 1] pixel space the training
//! losses use, so an evaluation L2 is directly comparable to the logged
//! pixel term.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::elem::Elem;
use crate::error::Error;
use crate::glyphrender::{cp_label, save_png_gray};
use crate::netarch::Generator;
use crate::nn::Phase;
use crate::pairset::{PairManifest, PolicyKind};
use crate::rngs::{derive, Stream};
use crate::trainkit::checkpoint::{load_generator, Checkpoint};
use crate::trainkit::Dataset;
use crate::Result;

/// Images scored per forward pass. Fixed so train-phase evaluation, whose
/// normalization statistics depend on batch composition, is reproducible.
const EVAL_BATCH: usize = 16;

/// All models trained here carry a single style slot; evaluation always
/// selects it.
const EVAL_STYLE: usize = 0;

/// Pixel-L2 scores for one checkpoint over one ground-truth manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean of `per_glyph_l2` values.
    pub mean_l2: f64,
    /// Codepoint label (`U+XXXX`) → mean squared pixel error in [-1, 1]
    /// space for that glyph.
    pub per_glyph_l2: BTreeMap<String, f64>,
    /// Number of glyphs scored.
    pub n: usize,
    /// Normalization phase the generator ran at.
    pub phase_used: Phase,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

fn require_ground_truth(manifest: &PairManifest, what: &str) -> Result<()> {
    if manifest.policy.kind != PolicyKind::Strong {
        return Err(Error::MissingGroundTruth(format!(
            "{what} needs same-codepoint ground truth; manifest policy is {}",
            manifest.policy.kind.as_str()
        )));
    }
    Ok(())
}

fn load_scored_dataset<F: Elem>(
    ck: &Checkpoint<F>,
    manifest: &PairManifest,
) -> Result<(Generator<F>, Dataset)> {
    let gen = load_generator(ck)?;
    let data = Dataset::load(manifest)?;
    if data.canvas() != ck.meta.spec.canvas {
        return Err(Error::ConfigMismatch(format!(
            "manifest canvas {} differs from checkpoint canvas {}",
            data.canvas(),
            ck.meta.spec.canvas
        )));
    }
    Ok((gen, data))
}

/// Scores a checkpoint against a ground-truth manifest: runs the archived
/// generator over every source glyph at the requested normalization phase
/// and reports the per-glyph and mean squared pixel error against the
/// target-font render, in [-1, 1] space.
///
/// The result is a pure function of (checkpoint bytes, manifest, phase):
/// scoring walks the manifest in order, `EVAL_BATCH` images at a time, and
/// train-phase dropout masks are drawn from a probe stream derived from the
/// checkpoint's own seed.
pub fn evaluate<F: Elem>(
    checkpoint: &Path,
    manifest: &PairManifest,
    phase: Phase,
) -> Result<EvalReport> {
    require_ground_truth(manifest, "evaluation")?;
    let ck = Checkpoint::<F>::load(checkpoint)?;
    let (mut gen, data) = load_scored_dataset(&ck, manifest)?;
    gen.set_phase(phase);

    let mut per_glyph_l2 = BTreeMap::new();
    let idxs: Vec<usize> = (0..data.len()).collect();
    for (chunk_no, chunk) in idxs.chunks(EVAL_BATCH).enumerate() {
        let (src, tgt) = data.batch::<F>(chunk);
        let out = if phase == Phase::Train {
            let mut rng = derive(ck.meta.seed, Stream::Probe, chunk_no as u64);
            gen.generate(&src, EVAL_STYLE, Some(&mut rng))?
        } else {
            gen.generate(&src, EVAL_STYLE, None)?
        };
        let pixels_per_image = (tgt.len() / chunk.len()) as f64;
        for (row, &idx) in chunk.iter().enumerate() {
            let se: f64 = out
                .index_axis(ndarray::Axis(0), row)
                .iter()
                .zip(tgt.index_axis(ndarray::Axis(0), row).iter())
                .map(|(&y, &t)| {
                    let d = y.as_f64() - t.as_f64();
                    d * d
                })
                .sum();
            per_glyph_l2.insert(cp_label(data.pairs[idx].src_cp), se / pixels_per_image);
        }
    }
    let n = per_glyph_l2.len();
    let mean_l2 = per_glyph_l2.values().sum::<f64>() / n as f64;
    Ok(EvalReport { mean_l2, per_glyph_l2, n, phase_used: phase })
}

/// Renders a comparison montage: one row per glyph, columns
/// source | ground truth (when given) | generated. Cells are channel 0 of
/// each image. The generator runs at the inference phase and is restored to
/// its previous phase afterwards; no parameter or statistic moves.
pub fn grid_pixels<F: Elem>(
    gen: &mut Generator<F>,
    src: &Array4<F>,
    truth: Option<&Array4<F>>,
    style: usize,
) -> Result<Array2<f32>> {
    let (b, _c, h, w) = src.dim();
    if b == 0 {
        return Err(Error::ShapeTooSmall("sample grid needs at least one glyph".into()));
    }
    if let Some(t) = truth {
        if t.dim() != src.dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", src.dim()),
                got: format!("{:?}", t.dim()),
            });
        }
    }
    let prior = gen.phase();
    gen.set_phase(Phase::Infer);
    let out = gen.generate(src, style, None);
    gen.set_phase(prior);
    let out = out?;

    let ncols = if truth.is_some() { 3 } else { 2 };
    let mut grid = Array2::zeros((b * h, ncols * w));
    let mut blit = |row: usize, col: usize, img: &Array4<F>| {
        for r in 0..h {
            for c in 0..w {
                grid[(row * h + r, col * w + c)] = img[(row, 0, r, c)].as_f64() as f32;
            }
        }
    };
    for bi in 0..b {
        blit(bi, 0, src);
        if let Some(t) = truth {
            blit(bi, 1, t);
        }
        blit(bi, ncols - 1, &out);
    }
    Ok(grid)
}

/// Writes `grid_pixels` to a grayscale PNG.
pub fn write_sample_grid<F: Elem>(
    gen: &mut Generator<F>,
    src: &Array4<F>,
    truth: Option<&Array4<F>>,
    style: usize,
    path: &Path,
) -> Result<()> {
    let grid = grid_pixels(gen, src, truth, style)?;
    save_png_gray(path, &grid)
}

/// Checkpoint-level comparison grid: transfers the first `rows` manifest
/// glyphs (clamped to the manifest size) and writes a PNG with columns
/// source | ground truth | generated; the truth column appears only for
/// same-codepoint (strong) manifests. Read-only over the checkpoint.
pub fn sample_grid<F: Elem>(
    checkpoint: &Path,
    manifest: &PairManifest,
    rows: usize,
    out: &Path,
) -> Result<()> {
    if rows == 0 {
        return Err(Error::ShapeTooSmall("sample grid needs at least one row".into()));
    }
    let ck = Checkpoint::<F>::load(checkpoint)?;
    let (mut gen, data) = load_scored_dataset(&ck, manifest)?;
    let idxs: Vec<usize> = (0..rows.min(data.len())).collect();
    let (src, tgt) = data.batch::<F>(&idxs);
    let truth =
        if manifest.policy.kind == PolicyKind::Strong { Some(&tgt) } else { None };
    write_sample_grid(&mut gen, &src, truth, EVAL_STYLE, out)
}

/// One tile per channel of the requested layer's activation for a single
/// glyph, each min-max normalized to [0, 1] (constant channels map to 0.5).
/// Layers are named `conv1..convN` (post-norm encoder stage outputs) and
/// `deconvN` (the final image), N being the stage count of the archived
/// model — 8 at full scale.
pub fn feature_map_tiles<F: Elem>(
    checkpoint: &Path,
    glyph: &Array4<F>,
    layer: &str,
) -> Result<Vec<Array2<f32>>> {
    let ck = Checkpoint::<F>::load(checkpoint)?;
    let spec = ck.meta.spec.clone();
    let want = (1, 3, spec.canvas, spec.canvas);
    if glyph.dim() != want {
        return Err(Error::ShapeMismatch {
            expected: format!("{want:?}"),
            got: format!("{:?}", glyph.dim()),
        });
    }
    let n = spec.n_stages();
    let unknown = || {
        Error::UnknownLayer(format!(
            "layer {layer:?} is not inspectable; valid names are conv1..conv{n} and deconv{n}"
        ))
    };
    let mut gen = load_generator(&ck)?;
    gen.set_phase(Phase::Infer);
    let activation: Array4<F> = if let Some(stage) = layer.strip_prefix("conv") {
        let i: usize = stage.parse().map_err(|_| unknown())?;
        if i < 1 || i > n {
            return Err(unknown());
        }
        let (_, _, cache) = gen.encode(glyph)?;
        cache.stage_outputs()[i - 1].clone()
    } else if layer == format!("deconv{n}") {
        gen.generate(glyph, EVAL_STYLE, None)?
    } else {
        return Err(unknown());
    };

    let (_, channels, h, w) = activation.dim();
    let mut tiles = Vec::with_capacity(channels);
    for c in 0..channels {
        let plane = activation.index_axis(ndarray::Axis(0), 0);
        let plane = plane.index_axis(ndarray::Axis(0), c);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in plane.iter() {
            lo = lo.min(v.as_f64());
            hi = hi.max(v.as_f64());
        }
        let tile = Array2::from_shape_fn((h, w), |(r, cc)| {
            let v = plane[(r, cc)].as_f64();
            if hi > lo { ((v - lo) / (hi - lo)) as f32 } else { 0.5 }
        });
        tiles.push(tile);
    }
    Ok(tiles)
}

/// Writes the per-channel tiles of `feature_map_tiles` as one PNG montage:
/// tiles flow row-major through a near-square grid (⌈√C⌉ columns), unused
/// cells are black.
pub fn feature_maps<F: Elem>(
    checkpoint: &Path,
    glyph: &Array4<F>,
    layer: &str,
    out: &Path,
) -> Result<()> {
    let tiles = feature_map_tiles::<F>(checkpoint, glyph, layer)?;
    let (th, tw) = tiles[0].dim();
    let ncols = (tiles.len() as f64).sqrt().ceil() as usize;
    let nrows = tiles.len().div_ceil(ncols);
    let mut montage = Array2::from_elem((nrows * th, ncols * tw), -1.0f32);
    for (t, tile) in tiles.iter().enumerate() {
        let (row, col) = (t / ncols, t % ncols);
        for r in 0..th {
            for c in 0..tw {
                // Tiles are in [0, 1]; the PNG writer expects [-1, 1].
                montage[(row * th + r, col * tw + c)] = tile[(r, c)] * 2.0 - 1.0;
            }
        }
    }
    save_png_gray(out, &montage)
}

/// Whether a packet slot holds a target-font render or a transferred one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuringLabel {
    Real,
    Generated,
}

/// One sealed-key entry: which image, what it is, which glyph it shows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuringSlot {
    pub image: String,
    pub label: TuringLabel,
    pub codepoint: String,
}

/// The sealed answer key as written to disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuringKey {
    pub seed: u64,
    pub n: usize,
    pub slots: Vec<TuringSlot>,
}

/// A shuffled real-vs-generated quiz: 2n images on disk plus the in-memory
/// key (also sealed into a spoiler-named JSON next to the images).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TuringPacket {
    /// Slot-ordered image paths; filenames carry no label information.
    pub images: Vec<PathBuf>,
    /// Per-slot truth, same order as `images`.
    pub key: Vec<TuringLabel>,
    pub seed: u64,
    /// Where the sealed key was written.
    pub key_path: PathBuf,
}

/// Name of the sealed answer key file; the name itself is the spoiler
/// warning.
pub const TURING_KEY_FILENAME: &str = "answer_key_SPOILERS.json";

/// Builds a real-vs-generated quiz from a ground-truth manifest: draws `n`
/// glyphs with a seeded permutation, renders each glyph's target-font image
/// ("real") and its inference-phase transfer ("generated"), shuffles the 2n
/// slots with the same seeded stream, and writes label-free numbered PNGs
/// plus a sealed key file into `out_dir`. Label balance is exact: n of each.
pub fn turing_packet<F: Elem>(
    checkpoint: &Path,
    manifest: &PairManifest,
    n: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<TuringPacket> {
    use rand::seq::SliceRandom;
    if n == 0 {
        return Err(Error::InvalidConfig("a quiz packet needs n >= 1".into()));
    }
    require_ground_truth(manifest, "a real-vs-generated quiz")?;
    let ck = Checkpoint::<F>::load(checkpoint)?;
    let (mut gen, data) = load_scored_dataset(&ck, manifest)?;
    if data.len() < n {
        return Err(Error::InsufficientCorpus(format!(
            "packet needs {n} glyphs, manifest supplies {}",
            data.len()
        )));
    }
    gen.set_phase(Phase::Infer);

    let mut rng = derive(seed, Stream::Turing, 0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let chosen = &order[..n];

    let mut slots: Vec<(usize, TuringLabel)> = Vec::with_capacity(2 * n);
    for (row, _) in chosen.iter().enumerate() {
        slots.push((row, TuringLabel::Real));
        slots.push((row, TuringLabel::Generated));
    }
    slots.shuffle(&mut rng);

    let (src, tgt) = data.batch::<F>(chosen);
    let out = gen.generate(&src, EVAL_STYLE, None)?;
    std::fs::create_dir_all(out_dir)?;

    let mut images = Vec::with_capacity(2 * n);
    let mut key = Vec::with_capacity(2 * n);
    let mut key_slots = Vec::with_capacity(2 * n);
    for (slot, &(row, label)) in slots.iter().enumerate() {
        let name = format!("glyph_{slot:03}.png");
        let path = out_dir.join(&name);
        let source = match label {
            TuringLabel::Real => &tgt,
            TuringLabel::Generated => &out,
        };
        let (_, _, h, w) = source.dim();
        let plane = Array2::from_shape_fn((h, w), |(r, c)| {
            source[(row, 0, r, c)].as_f64() as f32
        });
        save_png_gray(&path, &plane)?;
        key_slots.push(TuringSlot {
            image: name,
            label,
            codepoint: cp_label(data.pairs[chosen[row]].tgt_cp),
        });
        images.push(path);
        key.push(label);
    }

    let key_path = out_dir.join(TURING_KEY_FILENAME);
    let sealed = TuringKey { seed, n, slots: key_slots };
    std::fs::write(&key_path, serde_json::to_string_pretty(&sealed).expect("key serializes"))?;
    Ok(TuringPacket { images, key, seed, key_path })
}

/// Reads a sealed answer key back.
pub fn read_key(path: &Path) -> Result<TuringKey> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::FileNotFound(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::InvalidConfig(format!("answer key is not valid JSON: {e}")))
}

/// Fraction of responses that match the key. Responses are slot-ordered.
pub fn score_key(key: &[TuringLabel], responses: &[TuringLabel]) -> Result<f64> {
    if key.is_empty() {
        return Err(Error::ShapeTooSmall("cannot score an empty key".into()));
    }
    if key.len() != responses.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} responses", key.len()),
            got: format!("{}", responses.len()),
        });
    }
    let hits = key.iter().zip(responses).filter(|(k, r)| k == r).count();
    Ok(hits as f64 / key.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netarch::ModelSpec;
    use crate::nn::uniform;
    use crate::pairset::PairPolicy;
    use crate::rngs::{derive, Stream};
    use crate::trainkit::dataset::synthetic_manifest;
    use crate::trainkit::{TrainConfig, TrainState};
    use tempfile::TempDir;

    fn rand_batch(spec: &ModelSpec, b: usize, seed: u64) -> Array4<f32> {
        let mut rng = derive(seed, Stream::Probe, 3);
        Array4::from_shape_simple_fn((b, 3, spec.canvas, spec.canvas), || {
            uniform(&mut rng, -1.0, 1.0) as f32
        })
    }

    /// Fresh micro checkpoint file plus a strong manifest of `n` glyphs.
    fn micro_fixture(dir: &TempDir, n: usize) -> (PathBuf, PairManifest) {
        let cfg = TrainConfig::defaults(ModelSpec::micro(), PairPolicy::strong(5));
        let state = TrainState::<f32>::new(&cfg).unwrap();
        let ck = state.checkpoint(&cfg.config_hash());
        let path = dir.path().join("model.ckpt");
        ck.save(&path).unwrap();
        let manifest = synthetic_manifest(&dir.path().join("data"), n, 32, PolicyKind::Strong);
        (path, manifest)
    }

    #[test]
    fn grid_layout_matches_column_count_and_is_deterministic() {
        let spec = ModelSpec::micro();
        let mut gen = Generator::<f32>::init(&spec, 5).unwrap();
        let src = rand_batch(&spec, 2, 1);
        let tgt = rand_batch(&spec, 2, 2);
        let with_truth = grid_pixels(&mut gen, &src, Some(&tgt), 0).unwrap();
        assert_eq!(with_truth.dim(), (2 * 32, 3 * 32));
        let without = grid_pixels(&mut gen, &src, None, 0).unwrap();
        assert_eq!(without.dim(), (2 * 32, 2 * 32));
        let again = grid_pixels(&mut gen, &src, Some(&tgt), 0).unwrap();
        assert_eq!(with_truth, again, "fixed inputs must give identical grids");
        // Source column is copied through untouched.
        assert_eq!(with_truth[(0, 0)], src[(0, 0, 0, 0)]);
        assert_eq!(with_truth[(0, 32)], tgt[(0, 0, 0, 0)]);
    }

    #[test]
    fn grid_emission_leaves_generator_state_untouched() {
        let spec = ModelSpec::micro();
        let mut gen = Generator::<f32>::init(&spec, 5).unwrap();
        gen.set_phase(Phase::Train);
        let before: Vec<(String, ndarray::ArrayD<f32>)> = gen
            .tensors()
            .into_iter()
            .map(|(n, v)| (n, v.to_owned()))
            .collect();
        let src = rand_batch(&spec, 1, 4);
        grid_pixels(&mut gen, &src, None, 0).unwrap();
        assert_eq!(gen.phase(), Phase::Train, "phase must be restored");
        for ((name, now), (_, was)) in gen.tensors().into_iter().zip(before) {
            assert_eq!(now.to_owned(), was, "tensor {name} moved");
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let spec = ModelSpec::micro();
        let mut gen = Generator::<f32>::init(&spec, 5).unwrap();
        let src = Array4::<f32>::zeros((0, 3, 32, 32));
        assert!(grid_pixels(&mut gen, &src, None, 0).is_err());
    }

    #[test]
    fn evaluation_reports_match_a_hand_computed_score_and_round_trip_json() {
        let dir = TempDir::new().unwrap();
        let (ckpt, manifest) = micro_fixture(&dir, 4);
        let report = evaluate::<f32>(&ckpt, &manifest, Phase::Infer).unwrap();
        assert_eq!(report.n, 4);
        assert_eq!(report.per_glyph_l2.len(), 4);
        assert_eq!(report.phase_used, Phase::Infer);
        for (cp, &v) in &report.per_glyph_l2 {
            assert!(v.is_finite() && v >= 0.0, "{cp} scored {v}");
        }
        let mean: f64 = report.per_glyph_l2.values().sum::<f64>() / 4.0;
        assert_eq!(report.mean_l2, mean, "mean must be the mean of the glyph scores");

        // Hand-compute one glyph's score from the raw pieces.
        let ck = Checkpoint::<f32>::load(&ckpt).unwrap();
        let mut gen = load_generator(&ck).unwrap();
        gen.set_phase(Phase::Infer);
        let data = Dataset::load(&manifest).unwrap();
        let (src, tgt) = data.batch::<f32>(&[0, 1, 2, 3]);
        let out = gen.generate(&src, 0, None).unwrap();
        let by_hand: f64 = out
            .index_axis(ndarray::Axis(0), 2)
            .iter()
            .zip(tgt.index_axis(ndarray::Axis(0), 2).iter())
            .map(|(&y, &t)| ((y - t) as f64).powi(2))
            .sum::<f64>()
            / (3 * 32 * 32) as f64;
        let label = cp_label(data.pairs[2].src_cp);
        let got = report.per_glyph_l2[&label];
        assert!(
            (got - by_hand).abs() < 1e-9,
            "glyph {label}: report {got} vs hand {by_hand}"
        );

        // Pure function of fixed inputs, and JSON round-trips losslessly.
        let again = evaluate::<f32>(&ckpt, &manifest, Phase::Infer).unwrap();
        assert_eq!(report, again);
        let json_path = dir.path().join("report.json");
        report.write_json(&json_path).unwrap();
        let parsed: EvalReport =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn evaluation_requires_ground_truth() {
        let dir = TempDir::new().unwrap();
        let (ckpt, _) = micro_fixture(&dir, 3);
        let soft = synthetic_manifest(&dir.path().join("soft"), 3, 32, PolicyKind::Soft);
        match evaluate::<f32>(&ckpt, &soft, Phase::Infer) {
            Err(Error::MissingGroundTruth(_)) => {}
            other => panic!("expected MissingGroundTruth, got {other:?}"),
        }
    }

    #[test]
    fn both_normalization_phases_are_scoreable_and_recorded() {
        let dir = TempDir::new().unwrap();
        let (ckpt, manifest) = micro_fixture(&dir, 4);
        let infer = evaluate::<f32>(&ckpt, &manifest, Phase::Infer).unwrap();
        let train = evaluate::<f32>(&ckpt, &manifest, Phase::Train).unwrap();
        assert_eq!(infer.phase_used, Phase::Infer);
        assert_eq!(train.phase_used, Phase::Train);
        assert!(infer.mean_l2.is_finite() && train.mean_l2.is_finite());
        // Batch statistics and dropout differ from running statistics, so
        // the two phases score differently on an untrained model.
        assert_ne!(infer.mean_l2, train.mean_l2);
        // Train-phase scoring is reproducible too.
        let train2 = evaluate::<f32>(&ckpt, &manifest, Phase::Train).unwrap();
        assert_eq!(train, train2);
    }

    #[test]
    fn checkpoint_grids_clamp_rows_and_leave_the_file_untouched() {
        let dir = TempDir::new().unwrap();
        let (ckpt, manifest) = micro_fixture(&dir, 3);
        let before = std::fs::read(&ckpt).unwrap();

        let out = dir.path().join("grid.png");
        sample_grid::<f32>(&ckpt, &manifest, 2, &out).unwrap();
        let (_, w, h) = crate::glyphrender::load_png_bytes(&out).unwrap();
        assert_eq!((w, h), (3 * 32, 2 * 32), "2 rows, truth column present");

        // Requesting more rows than the manifest has clamps to the corpus.
        let out_all = dir.path().join("grid_all.png");
        sample_grid::<f32>(&ckpt, &manifest, 99, &out_all).unwrap();
        let (_, w, h) = crate::glyphrender::load_png_bytes(&out_all).unwrap();
        assert_eq!((w, h), (3 * 32, 3 * 32));

        // A policy without ground truth drops the middle column.
        let soft = synthetic_manifest(&dir.path().join("soft"), 3, 32, PolicyKind::Soft);
        let out_soft = dir.path().join("grid_soft.png");
        sample_grid::<f32>(&ckpt, &soft, 2, &out_soft).unwrap();
        let (_, w, h) = crate::glyphrender::load_png_bytes(&out_soft).unwrap();
        assert_eq!((w, h), (2 * 32, 2 * 32));

        assert!(matches!(
            sample_grid::<f32>(&ckpt, &manifest, 0, &out),
            Err(Error::ShapeTooSmall(_))
        ));
        assert_eq!(before, std::fs::read(&ckpt).unwrap(), "grids must not write model state");
    }

    #[test]
    fn feature_montages_tile_every_channel_and_reject_unknown_layers() {
        let dir = TempDir::new().unwrap();
        let (ckpt, _) = micro_fixture(&dir, 1);
        let spec = ModelSpec::micro();
        let glyph = rand_batch(&spec, 1, 7);

        // Micro stage 1 halves the canvas and emits base_channels maps.
        let tiles = feature_map_tiles::<f32>(&ckpt, &glyph, "conv1").unwrap();
        assert_eq!(tiles.len(), spec.enc_out_channels(1));
        assert_eq!(tiles[0].dim(), (16, 16));
        for tile in &tiles {
            let lo = tile.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = tile.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
            // Non-constant channels use the full normalized range.
            if hi > lo {
                assert!(lo == 0.0 && hi == 1.0, "min-max normalization must hit 0 and 1");
            }
        }

        // The last decoder stage is the image itself: 3 channels, full size.
        let tiles = feature_map_tiles::<f32>(&ckpt, &glyph, "deconv5").unwrap();
        assert_eq!(tiles.len(), 3);
        assert_eq!(tiles[0].dim(), (32, 32));

        // Montage of 4 tiles lays out as a 2x2 sheet.
        let out = dir.path().join("conv1.png");
        feature_maps::<f32>(&ckpt, &glyph, "conv1", &out).unwrap();
        let (_, w, h) = crate::glyphrender::load_png_bytes(&out).unwrap();
        assert_eq!((w, h), (2 * 16, 2 * 16));

        for bad in ["conv0", "conv6", "deconv1", "pool1", "convX"] {
            match feature_map_tiles::<f32>(&ckpt, &glyph, bad) {
                Err(Error::UnknownLayer(msg)) => {
                    assert!(msg.contains("conv1..conv5"), "layer list missing in: {msg}")
                }
                other => panic!("layer {bad:?}: expected UnknownLayer, got {other:?}"),
            }
        }

        let wrong = rand_batch(&spec, 2, 8);
        assert!(matches!(
            feature_map_tiles::<f32>(&ckpt, &wrong, "conv1"),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn quiz_packets_balance_labels_shuffle_reproducibly_and_score() {
        let dir = TempDir::new().unwrap();
        let (ckpt, manifest) = micro_fixture(&dir, 6);

        let out_a = dir.path().join("quiz_a");
        let packet = turing_packet::<f32>(&ckpt, &manifest, 3, 9, &out_a).unwrap();
        assert_eq!(packet.images.len(), 6);
        assert_eq!(packet.key.len(), 6);
        let reals = packet.key.iter().filter(|l| **l == TuringLabel::Real).count();
        assert_eq!(reals, 3, "label balance must be exact");
        for img in &packet.images {
            assert!(img.exists(), "missing quiz image {img:?}");
            assert!(
                !img.file_name().unwrap().to_string_lossy().contains("real"),
                "filenames must not leak labels"
            );
        }

        // The sealed key round-trips and agrees with the in-memory packet.
        let sealed = read_key(&packet.key_path).unwrap();
        assert_eq!(sealed.seed, 9);
        assert_eq!(sealed.n, 3);
        let sealed_labels: Vec<TuringLabel> = sealed.slots.iter().map(|s| s.label).collect();
        assert_eq!(sealed_labels, packet.key);

        // Same seed → identical slot assignment; different seed → different.
        let out_b = dir.path().join("quiz_b");
        let replay = turing_packet::<f32>(&ckpt, &manifest, 3, 9, &out_b).unwrap();
        assert_eq!(replay.key, packet.key);
        assert_eq!(
            read_key(&replay.key_path).unwrap().slots,
            sealed.slots,
            "same seed must reproduce the same sealed key"
        );
        let out_c = dir.path().join("quiz_c");
        let other = turing_packet::<f32>(&ckpt, &manifest, 3, 10, &out_c).unwrap();
        assert_ne!(
            read_key(&other.key_path).unwrap().slots,
            sealed.slots,
            "a different seed should deal a different packet"
        );

        // Scoring: perfect, inverted, and chance-level responses.
        assert_eq!(score_key(&packet.key, &packet.key).unwrap(), 1.0);
        let flipped: Vec<TuringLabel> = packet
            .key
            .iter()
            .map(|l| match l {
                TuringLabel::Real => TuringLabel::Generated,
                TuringLabel::Generated => TuringLabel::Real,
            })
            .collect();
        assert_eq!(score_key(&packet.key, &flipped).unwrap(), 0.0);
        let big: Vec<TuringLabel> = (0..1000)
            .map(|i| if i % 2 == 0 { TuringLabel::Real } else { TuringLabel::Generated })
            .collect();
        let all_real = vec![TuringLabel::Real; 1000];
        assert_eq!(score_key(&big, &all_real).unwrap(), 0.5);
        assert!(score_key(&packet.key, &packet.key[..3]).is_err());
    }

    #[test]
    fn quiz_packets_reject_thin_or_truthless_corpora() {
        let dir = TempDir::new().unwrap();
        let (ckpt, manifest) = micro_fixture(&dir, 2);
        let out = dir.path().join("quiz");
        match turing_packet::<f32>(&ckpt, &manifest, 3, 1, &out) {
            Err(Error::InsufficientCorpus(_)) => {}
            other => panic!("expected InsufficientCorpus, got {other:?}"),
        }
        assert!(matches!(
            turing_packet::<f32>(&ckpt, &manifest, 0, 1, &out),
            Err(Error::InvalidConfig(_))
        ));
        let soft = synthetic_manifest(&dir.path().join("soft"), 4, 32, PolicyKind::Soft);
        assert!(matches!(
            turing_packet::<f32>(&ckpt, &soft, 2, 1, &out),
            Err(Error::MissingGroundTruth(_))
        ));
    }
}
