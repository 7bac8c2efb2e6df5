//! Font parsing and glyph rasterization into normalized image tensors.
//!
//! Values live in [-1, 1]: background +1, full ink -1, grayscale replicated
//! across 3 channels. Rasterization is a pure function of (font bytes,
//! codepoint, config).

mod raster;
mod ttf;

use crate::error::Error;
use crate::Result;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

/// An opened font face with its usable codepoints enumerated.
pub struct FontHandle {
    pub path: PathBuf,
    pub face_index: u32,
    pub units_per_em: u32,
    /// Codepoints mapped to glyphs with at least one contour. Blank glyphs
    /// (space) stay renderable on demand but are excluded here so corpus
    /// sampling never picks empty images.
    pub codepoint_set: BTreeSet<u32>,
    font_id: String,
    face: ttf::Face,
}

impl FontHandle {
    /// Stable identifier used in manifests and image provenance: file stem,
    /// plus the face index for collection files.
    pub fn font_id(&self) -> &str {
        &self.font_id
    }
}

impl std::fmt::Debug for FontHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FontHandle")
            .field("path", &self.path)
            .field("face_index", &self.face_index)
            .field("units_per_em", &self.units_per_em)
            .field("codepoints", &self.codepoint_set.len())
            .finish()
    }
}

/// One rasterized character.
#[derive(Debug, Clone)]
pub struct GlyphImage {
    /// `[canvas, canvas, 3]`, all channels equal.
    pub pixels: Array3<f32>,
    pub codepoint: u32,
    pub font_id: String,
    pub canvas: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Output side length in pixels.
    pub canvas: usize,
    /// Em box side in output pixels; the rest is margin for augmentation.
    pub glyph_extent: usize,
    /// Integer supersampling factor for anti-aliasing.
    pub supersample: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            canvas: 256,
            glyph_extent: 220,
            supersample: 2,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.canvas == 0 {
            return Err(Error::InvalidConfig("canvas must be positive".into()));
        }
        if self.glyph_extent == 0 || self.glyph_extent > self.canvas {
            return Err(Error::InvalidConfig(format!(
                "glyph_extent {} must be in 1..=canvas ({})",
                self.glyph_extent, self.canvas
            )));
        }
        if self.supersample == 0 {
            return Err(Error::InvalidConfig("supersample must be >= 1".into()));
        }
        Ok(())
    }
}

/// Formats a codepoint as `U+XXXX` (at least 4 hex digits).
pub fn cp_label(cp: u32) -> String {
    format!("U+{cp:04X}")
}

/// Parses a `U+XXXX` label back to a codepoint.
pub fn parse_cp_label(s: &str) -> Option<u32> {
    let hex = s.strip_prefix("U+")?;
    u32::from_str_radix(hex, 16).ok()
}

pub fn open_font(path: &Path, face_index: u32) -> Result<FontHandle> {
    let data = match std::fs::read(path) {
        Ok(d) => d,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::FileNotFound(path.to_path_buf()))
        }
        Err(e) => return Err(Error::Io(e)),
    };
    let face = ttf::Face::parse(data, face_index).map_err(|reason| Error::UnparsableFont {
        path: path.to_path_buf(),
        reason,
    })?;
    let codepoint_set = face
        .mapped_codepoints()
        .filter(|&(_, gid)| face.has_ink(gid))
        .map(|(cp, _)| cp)
        .collect();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "font".into());
    let font_id = if face_index == 0 {
        stem
    } else {
        format!("{stem}#{face_index}")
    };
    Ok(FontHandle {
        path: path.to_path_buf(),
        face_index,
        units_per_em: face.units_per_em as u32,
        codepoint_set,
        font_id,
        face,
    })
}

pub fn rasterize(font: &FontHandle, codepoint: u32, cfg: &RenderConfig) -> Result<GlyphImage> {
    cfg.validate()?;
    let gid = font
        .face
        .glyph_id(codepoint)
        .ok_or_else(|| Error::MissingGlyph(vec![codepoint]))?;
    let outline = font.face.outline(gid).map_err(|reason| Error::UnparsableFont {
        path: font.path.clone(),
        reason,
    })?;

    let ss = cfg.supersample;
    let side = cfg.canvas * ss;
    let scale = (cfg.glyph_extent * ss) as f64 / font.units_per_em as f64;
    // Flattening tolerance: a quarter of an output pixel.
    let mut polys = raster::flatten(&outline, scale, 0.25 * ss as f64);

    let coverage = match raster::bounds(&polys) {
        None => ndarray::Array2::zeros((cfg.canvas, cfg.canvas)),
        Some((x0, y0, x1, y1)) => {
            let target = side as f64 / 2.0;
            raster::translate(&mut polys, target - (x0 + x1) / 2.0, target - (y0 + y1) / 2.0);
            let bitmap = raster::fill(&polys, side, side);
            raster::downsample(&bitmap, side, side, ss)
        }
    };

    let mut pixels = Array3::zeros((cfg.canvas, cfg.canvas, 3));
    for ((r, c), &cov) in coverage.indexed_iter() {
        let v = (1.0 - 2.0 * cov).clamp(-1.0, 1.0);
        pixels[(r, c, 0)] = v;
        pixels[(r, c, 1)] = v;
        pixels[(r, c, 2)] = v;
    }
    Ok(GlyphImage {
        pixels,
        codepoint,
        font_id: font.font_id.clone(),
        canvas: cfg.canvas,
    })
}

/// Sorted intersection of the two fonts' usable codepoints.
pub fn shared_codepoints(a: &FontHandle, b: &FontHandle) -> Vec<u32> {
    a.codepoint_set.intersection(&b.codepoint_set).copied().collect()
}

/// One corpus manifest row: a codepoint and the two rendered image paths
/// (relative to the manifest's directory).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorpusRow {
    pub cp: String,
    pub src: String,
    pub tgt: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub rows: Vec<CorpusRow>,
    /// Directory the row paths are relative to.
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<CorpusManifest> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::FileNotFound(path.to_path_buf()))
            }
            Err(e) => return Err(Error::Io(e)),
        };
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: CorpusRow = serde_json::from_str(line).map_err(|e| Error::BadManifest {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })?;
            if parse_cp_label(&row.cp).is_none() {
                return Err(Error::BadManifest {
                    path: path.to_path_buf(),
                    reason: format!("line {}: bad codepoint label {:?}", i + 1, row.cp),
                });
            }
            rows.push(row);
        }
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(CorpusManifest { rows, base_dir })
    }

    pub fn codepoints(&self) -> Vec<u32> {
        self.rows
            .iter()
            .filter_map(|r| parse_cp_label(&r.cp))
            .collect()
    }
}

/// Render every codepoint in both fonts, write PNGs plus a JSONL manifest
/// (rows sorted by codepoint), and return the manifest path.
pub fn render_corpus(
    a: &FontHandle,
    b: &FontHandle,
    codepoints: &[u32],
    cfg: &RenderConfig,
    out_dir: &Path,
) -> Result<PathBuf> {
    cfg.validate()?;
    let missing: Vec<u32> = codepoints
        .iter()
        .copied()
        .filter(|&cp| a.face.glyph_id(cp).is_none() || b.face.glyph_id(cp).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGlyph(missing));
    }

    let mut cps: Vec<u32> = codepoints.to_vec();
    cps.sort_unstable();
    cps.dedup();

    std::fs::create_dir_all(out_dir.join("src"))?;
    std::fs::create_dir_all(out_dir.join("tgt"))?;
    let mut manifest = String::new();
    for &cp in &cps {
        let label = cp_label(cp);
        let src_rel = format!("src/{label}.png");
        let tgt_rel = format!("tgt/{label}.png");
        save_png(&out_dir.join(&src_rel), &rasterize(a, cp, cfg)?)?;
        save_png(&out_dir.join(&tgt_rel), &rasterize(b, cp, cfg)?)?;
        let row = CorpusRow {
            cp: label,
            src: src_rel,
            tgt: tgt_rel,
        };
        writeln!(manifest, "{}", serde_json::to_string(&row).expect("plain strings")).unwrap();
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    std::fs::write(&manifest_path, manifest)?;

    let meta = serde_json::json!({
        "render": cfg,
        "src_font": a.font_id(),
        "tgt_font": b.font_id(),
        "rows": cps.len(),
    });
    std::fs::write(
        out_dir.join("render_meta.json"),
        serde_json::to_string_pretty(&meta).expect("plain values"),
    )?;
    Ok(manifest_path)
}

/// Writes channel 0 as 8-bit grayscale: pixel = round((value+1)/2*255).
pub fn save_png(path: &Path, img: &GlyphImage) -> Result<()> {
    save_png_gray(path, &img.pixels.index_axis(ndarray::Axis(2), 0).to_owned())
}

/// Grayscale writer for any single-channel [-1,1] image (sample grids,
/// feature maps).
pub fn save_png_gray(path: &Path, gray: &ndarray::Array2<f32>) -> Result<()> {
    let (h, w) = gray.dim();
    let bytes: Vec<u8> = gray
        .iter()
        .map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0).round() as u8)
        .collect();
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(io_from_png)?;
    writer.write_image_data(&bytes).map_err(io_from_png)?;
    Ok(())
}

/// Reads an 8-bit grayscale PNG as raw pixel bytes in row-major order.
pub fn load_png_bytes(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::FileNotFound(path.to_path_buf()))
        }
        Err(e) => return Err(Error::Io(e)),
    };
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::BadManifest {
        path: path.to_path_buf(),
        reason: format!("png: {e}"),
    })?;
    let mut buf = vec![0u8; reader.output_buffer_size().expect("bounded image")];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::BadManifest {
        path: path.to_path_buf(),
        reason: format!("png: {e}"),
    })?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::BadManifest {
            path: path.to_path_buf(),
            reason: "expected 8-bit grayscale png".into(),
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    buf.truncate(w * h);
    Ok((buf, w, h))
}

/// Reads an 8-bit grayscale PNG back to a 3-channel tensor:
/// value = pixel/255*2-1, replicated across channels.
pub fn load_png(path: &Path) -> Result<Array3<f32>> {
    let (buf, w, h) = load_png_bytes(path)?;
    let mut pixels = Array3::zeros((h, w, 3));
    for r in 0..h {
        for c in 0..w {
            let v = buf[r * w + c] as f32 / 255.0 * 2.0 - 1.0;
            pixels[(r, c, 0)] = v;
            pixels[(r, c, 1)] = v;
            pixels[(r, c, 2)] = v;
        }
    }
    Ok(pixels)
}

fn io_from_png(e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_path(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
    }

    fn sans() -> FontHandle {
        open_font(&fixture_path("fixture-sans.ttf"), 0).unwrap()
    }

    fn serif() -> FontHandle {
        open_font(&fixture_path("fixture-serif.ttf"), 0).unwrap()
    }

    fn small_cfg() -> RenderConfig {
        RenderConfig {
            canvas: 64,
            glyph_extent: 56,
            supersample: 2,
        }
    }

    #[test]
    fn open_font_populates_codepoint_set() {
        let f = sans();
        assert!(f.codepoint_set.contains(&0x6C38));
        assert!(f.codepoint_set.contains(&0x4E00));
        assert!(!f.codepoint_set.contains(&0x20), "blank glyph excluded");
        assert_eq!(f.units_per_em, 1024);
        assert_eq!(f.font_id(), "fixture-sans");
    }

    #[test]
    fn open_font_error_paths() {
        let err = open_font(Path::new("/nonexistent/f.ttf"), 0).unwrap_err();
        assert!(matches!(err, Error::FileNotFound(_)));

        let dir = tempfile::tempdir().unwrap();
        let fake = dir.path().join("fake.ttf");
        std::fs::write(&fake, b"definitely not a font").unwrap();
        let err = open_font(&fake, 0).unwrap_err();
        assert!(matches!(err, Error::UnparsableFont { .. }), "{err}");
    }

    #[test]
    fn rasterize_invariants_hold_on_fixture_glyphs() {
        let f = sans();
        let cfg = small_cfg();
        for cp in [0x6C38u32, 0x4E00, 0x4E0D, 0x41] {
            let img = rasterize(&f, cp, &cfg).unwrap();
            assert_eq!(img.pixels.dim(), (64, 64, 3));
            let min = img.pixels.iter().cloned().fold(f32::MAX, f32::min);
            let max = img.pixels.iter().cloned().fold(f32::MIN, f32::max);
            assert!(min >= -1.0 && max <= 1.0);
            assert!(min < 0.0, "ink present for {}", cp_label(cp));
            for r in [0, 63] {
                for c in [0, 63] {
                    assert_eq!(img.pixels[(r, c, 0)], 1.0, "corner background");
                }
            }
            for ((r, c, _), &v) in img.pixels.indexed_iter() {
                assert_eq!(v, img.pixels[(r, c, 0)], "channel equality");
            }
        }
    }

    #[test]
    fn rasterize_centers_ink_bounding_box() {
        let f = sans();
        let cfg = small_cfg();
        for cp in [0x6C38u32, 0x4E07, 0x61] {
            let img = rasterize(&f, cp, &cfg).unwrap();
            let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
            for ((r, c, ch), &v) in img.pixels.indexed_iter() {
                if ch == 0 && v < 1.0 {
                    r0 = r0.min(r);
                    r1 = r1.max(r);
                    c0 = c0.min(c);
                    c1 = c1.max(c);
                }
            }
            let rc = (r0 + r1 + 1) as f64 / 2.0;
            let cc = (c0 + c1 + 1) as f64 / 2.0;
            assert!((rc - 32.0).abs() <= 1.0, "{}: row center {rc}", cp_label(cp));
            assert!((cc - 32.0).abs() <= 1.0, "{}: col center {cc}", cp_label(cp));
        }
    }

    #[test]
    fn rasterize_is_deterministic_and_blank_for_space() {
        let f = sans();
        let cfg = small_cfg();
        let a = rasterize(&f, 0x6C38, &cfg).unwrap();
        let b = rasterize(&f, 0x6C38, &cfg).unwrap();
        assert_eq!(a.pixels, b.pixels);

        let space = rasterize(&f, 0x20, &cfg).unwrap();
        assert!(space.pixels.iter().all(|&v| v == 1.0));

        let err = rasterize(&f, 0xFFFE, &cfg).unwrap_err();
        assert!(matches!(err, Error::MissingGlyph(ref v) if v == &vec![0xFFFE]));
    }

    #[test]
    fn serif_differs_from_sans_on_shared_skeleton() {
        let cfg = small_cfg();
        let a = rasterize(&sans(), 0x4E01, &cfg).unwrap();
        let b = rasterize(&serif(), 0x4E01, &cfg).unwrap();
        assert_ne!(a.pixels, b.pixels);
        // Styles share a skeleton, so ink overlaps substantially.
        let both = a
            .pixels
            .iter()
            .zip(b.pixels.iter())
            .filter(|(&x, &y)| x < 0.0 && y < 0.0)
            .count();
        let a_ink = a.pixels.iter().filter(|&&x| x < 0.0).count();
        assert!(both * 2 > a_ink, "shared skeleton overlaps");
    }

    #[test]
    fn shared_codepoints_is_sorted_intersection() {
        let a = sans();
        let b = serif();
        let shared = shared_codepoints(&a, &b);
        assert!(shared.windows(2).all(|w| w[0] < w[1]));
        assert!(shared.contains(&0x6C38));
        assert!(!shared.contains(&0xE000), "sans-only glyph excluded");
        assert!(!shared.contains(&0xE001), "serif-only glyph excluded");
        let self_shared = shared_codepoints(&a, &a);
        assert_eq!(self_shared.len(), a.codepoint_set.len());
    }

    #[test]
    fn png_round_trip_quantizes_within_half_step() {
        let f = sans();
        let img = rasterize(&f, 0x6C38, &small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("glyph.png");
        save_png(&p, &img).unwrap();
        let back = load_png(&p).unwrap();
        assert_eq!(back.dim(), img.pixels.dim());
        let max_err = img
            .pixels
            .iter()
            .zip(back.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0f32, f32::max)
            ;
        assert!(max_err <= 1.0 / 255.0 + 1e-6, "max_err={max_err}");
    }

    #[test]
    fn render_corpus_writes_sorted_manifest_and_is_reproducible() {
        let a = sans();
        let b = serif();
        let cfg = small_cfg();
        let cps = [0x4E05u32, 0x4E01, 0x4E03];
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let m1 = render_corpus(&a, &b, &cps, &cfg, dir1.path()).unwrap();
        let m2 = render_corpus(&a, &b, &cps, &cfg, dir2.path()).unwrap();
        assert_eq!(
            std::fs::read(&m1).unwrap(),
            std::fs::read(&m2).unwrap(),
            "byte-identical manifests"
        );
        let manifest = CorpusManifest::load(&m1).unwrap();
        assert_eq!(manifest.codepoints(), vec![0x4E01, 0x4E03, 0x4E05]);
        for row in &manifest.rows {
            let src = manifest.base_dir.join(&row.src);
            let tgt = manifest.base_dir.join(&row.tgt);
            assert!(src.exists() && tgt.exists());
            assert_eq!(
                std::fs::read(src).unwrap(),
                std::fs::read(dir2.path().join(&row.src)).unwrap(),
                "byte-identical images"
            );
        }

        let err = render_corpus(&a, &b, &[0x4E01, 0xE000, 0xFFFE], &cfg, dir1.path()).unwrap_err();
        match err {
            Error::MissingGlyph(cps) => assert_eq!(cps, vec![0xE000, 0xFFFE]),
            other => panic!("expected MissingGlyph, got {other}"),
        }

        let empty_dir = tempfile::tempdir().unwrap();
        let m = render_corpus(&a, &b, &[], &cfg, empty_dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(m).unwrap(), "");
    }

    #[test]
    fn collection_face_index_selects_style() {
        let ttc = fixture_path("fixture.ttc");
        let f0 = open_font(&ttc, 0).unwrap();
        let f1 = open_font(&ttc, 1).unwrap();
        assert_eq!(f0.font_id(), "fixture");
        assert_eq!(f1.font_id(), "fixture#1");
        assert!(f0.codepoint_set.contains(&0xE000));
        assert!(f1.codepoint_set.contains(&0xE001));
    }

    #[test]
    fn cp_labels_round_trip() {
        for cp in [0x20u32, 0x41, 0x4E00, 0x6C38, 0x20000] {
            assert_eq!(parse_cp_label(&cp_label(cp)), Some(cp));
        }
        assert_eq!(cp_label(0x41), "U+0041");
        assert_eq!(cp_label(0x20000), "U+20000");
        assert_eq!(parse_cp_label("4E00"), None);
    }
}
