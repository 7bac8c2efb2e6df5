//! In-memory training corpus: the pixel payloads referenced by a pairing
//! manifest, cached as raw grayscale bytes and expanded into [B, 3, H, W]
//! batches on demand.

use ndarray::Array4;
use rand::seq::SliceRandom;

use crate::elem::Elem;
use crate::error::Error;
use crate::Result;
use crate::glyphrender::load_png_bytes;
use crate::pairset::{PairManifest, PairRecord};
use crate::rngs::{derive, Stream};

pub struct Dataset {
    canvas: usize,
    /// Row-major grayscale bytes, one buffer per pair side.
    src: Vec<Vec<u8>>,
    tgt: Vec<Vec<u8>>,
    pub pairs: Vec<PairRecord>,
}

impl Dataset {
    /// Reads every image a pairing manifest references, relative to its
    /// base directory. All images must be square and share one canvas size.
    pub fn load(manifest: &PairManifest) -> Result<Self> {
        if manifest.pairs.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let mut canvas: Option<usize> = None;
        let mut read_side = |rel: &str| -> Result<Vec<u8>> {
            let path = manifest.base_dir.join(rel);
            let (bytes, w, h) = load_png_bytes(&path)?;
            if w != h {
                return Err(Error::BadManifest {
                    path,
                    reason: format!("glyph image must be square, got {w}x{h}"),
                });
            }
            match canvas {
                None => canvas = Some(w),
                Some(c) if c != w => {
                    return Err(Error::BadManifest {
                        path,
                        reason: format!("mixed canvas sizes: {c} and {w}"),
                    })
                }
                Some(_) => {}
            }
            Ok(bytes)
        };
        let mut src = Vec::with_capacity(manifest.pairs.len());
        let mut tgt = Vec::with_capacity(manifest.pairs.len());
        for rec in &manifest.pairs {
            src.push(read_side(&rec.src_path)?);
            tgt.push(read_side(&rec.tgt_path)?);
        }
        Ok(Dataset {
            canvas: canvas.expect("at least one pair"),
            src,
            tgt,
            pairs: manifest.pairs.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn canvas(&self) -> usize {
        self.canvas
    }

    /// Assembles (source, target) batches for the given pair indices.
    /// Pixels map to byte/255*2-1, replicated across the three channels.
    pub fn batch<F: Elem>(&self, idxs: &[usize]) -> (Array4<F>, Array4<F>) {
        (self.side_batch(&self.src, idxs), self.side_batch(&self.tgt, idxs))
    }

    fn side_batch<F: Elem>(&self, side: &[Vec<u8>], idxs: &[usize]) -> Array4<F> {
        let c = self.canvas;
        let mut out = Array4::zeros((idxs.len(), 3, c, c));
        for (bi, &i) in idxs.iter().enumerate() {
            let bytes = &side[i];
            for r in 0..c {
                for col in 0..c {
                    let v = F::of_f64(bytes[r * c + col] as f64 / 255.0 * 2.0 - 1.0);
                    out[(bi, 0, r, col)] = v;
                    out[(bi, 1, r, col)] = v;
                    out[(bi, 2, r, col)] = v;
                }
            }
        }
        out
    }
}

/// Batches per epoch: the last batch may be short.
pub fn steps_per_epoch(n_pairs: usize, batch_size: usize) -> u64 {
    assert!(batch_size >= 1, "batch_size >= 1");
    n_pairs.div_ceil(batch_size) as u64
}

/// The order pairs are visited in one epoch; a pure function of
/// (seed, epoch).
pub fn epoch_permutation(seed: u64, epoch: u64, n_pairs: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n_pairs).collect();
    idx.shuffle(&mut derive(seed, Stream::EpochShuffle, epoch));
    idx
}

/// Test support: writes a small synthetic corpus of flat-gray glyph pairs
/// and the manifest that references it.
#[cfg(test)]
pub(crate) fn synthetic_manifest(
    dir: &std::path::Path,
    n: usize,
    size: usize,
    kind: crate::pairset::PolicyKind,
) -> PairManifest {
    use crate::glyphrender::save_png_gray;
    use crate::pairset::{PairPolicy, Split};
    use ndarray::Array2;

    std::fs::create_dir_all(dir).unwrap();
    let write_gray = |path: &std::path::Path, level: f32| {
        let mut img = Array2::from_elem((size, size), level);
        // Center ink block plus a corner block keyed to the gray level, so
        // every image carries spatial structure.
        let q = size / 4;
        for r in 0..q {
            for c in 0..q {
                img[(r + q, c + q)] = -1.0;
                img[(r, c)] = if level > 0.0 { -0.5 } else { 0.5 };
            }
        }
        save_png_gray(path, &img).unwrap();
    };
    let mut pairs = Vec::new();
    for i in 0..n {
        let sp = format!("s{i}.png");
        let tp = format!("t{i}.png");
        let level = -1.0 + 2.0 * i as f32 / n.max(2) as f32;
        write_gray(&dir.join(&sp), level);
        write_gray(&dir.join(&tp), -level);
        pairs.push(PairRecord {
            src_cp: 65 + i as u32,
            tgt_cp: 65 + i as u32,
            src_path: sp,
            tgt_path: tp,
        });
    }
    PairManifest {
        pairs,
        policy: PairPolicy {
            kind,
            overlap_ratio: 1.0,
            seed: 0,
        },
        split: Split::Train,
        base_dir: dir.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyphrender::save_png_gray;
    use crate::pairset::PolicyKind;
    use ndarray::Array2;
    use std::path::Path;

    fn write_gray(path: &Path, size: usize, level: f32) {
        save_png_gray(path, &Array2::from_elem((size, size), level)).unwrap();
    }

    fn tiny_manifest(dir: &Path, n: usize, size: usize) -> PairManifest {
        let mut pairs = Vec::new();
        for i in 0..n {
            let sp = format!("s{i}.png");
            let tp = format!("t{i}.png");
            // Source images step through gray levels; targets are inverted.
            let level = -1.0 + 2.0 * i as f32 / n.max(2) as f32;
            write_gray(&dir.join(&sp), size, level);
            write_gray(&dir.join(&tp), size, -level);
            pairs.push(PairRecord {
                src_cp: 65 + i as u32,
                tgt_cp: 65 + i as u32,
                src_path: sp,
                tgt_path: tp,
            });
        }
        PairManifest {
            pairs,
            policy: crate::pairset::PairPolicy {
                kind: PolicyKind::Strong,
                overlap_ratio: 1.0,
                seed: 0,
            },
            split: crate::pairset::Split::Train,
            base_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn load_and_batch_round_trip_pixel_values() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_manifest(dir.path(), 3, 8);
        let data = Dataset::load(&m).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.canvas(), 8);
        let (src, tgt) = data.batch::<f32>(&[0, 2]);
        assert_eq!(src.dim(), (2, 3, 8, 8));
        assert_eq!(tgt.dim(), (2, 3, 8, 8));
        // save_png_gray quantizes to byte = round((v+1)/2*255); undo it here.
        let expect = |level: f32| -> f32 {
            let byte = ((level + 1.0) / 2.0 * 255.0).round();
            byte / 255.0 * 2.0 - 1.0
        };
        assert!((src[(0, 0, 3, 3)] - expect(-1.0)).abs() < 1e-6);
        assert!((tgt[(0, 1, 0, 0)] - expect(1.0)).abs() < 1e-6);
        assert!((src[(1, 2, 7, 7)] - expect(-1.0 + 4.0 / 3.0)).abs() < 1e-6);
        for v in src.iter().chain(tgt.iter()) {
            assert!((-1.0..=1.0).contains(v));
        }
    }

    #[test]
    fn empty_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = tiny_manifest(dir.path(), 1, 4);
        m.pairs.clear();
        let err = Dataset::load(&m).err().expect("empty manifest");
        assert!(matches!(err, Error::EmptyManifest), "{err}");
    }

    #[test]
    fn missing_image_and_mixed_sizes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = tiny_manifest(dir.path(), 2, 8);
        m.pairs[1].tgt_path = "missing.png".into();
        let err = Dataset::load(&m).err().expect("missing file");
        assert!(matches!(err, Error::FileNotFound(_)), "{err}");

        let m2 = tiny_manifest(dir.path(), 2, 8);
        write_gray(&dir.path().join("s1.png"), 16, 0.0);
        let err = Dataset::load(&m2).err().expect("mixed sizes");
        assert!(matches!(err, Error::BadManifest { .. }), "{err}");
    }

    #[test]
    fn epoch_permutations_are_deterministic_and_cover_all_indices() {
        let a = epoch_permutation(5, 0, 100);
        let b = epoch_permutation(5, 0, 100);
        let c = epoch_permutation(5, 1, 100);
        assert_eq!(a, b);
        assert_ne!(a, c, "different epochs should reshuffle");
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn steps_per_epoch_rounds_up() {
        assert_eq!(steps_per_epoch(900, 16), 57);
        assert_eq!(steps_per_epoch(16, 16), 1);
        assert_eq!(steps_per_epoch(17, 16), 2);
        assert_eq!(steps_per_epoch(1, 16), 1);
    }
}
