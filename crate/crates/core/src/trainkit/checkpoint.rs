//! Checkpoint archive: every named tensor of the generator, discriminator,
//! and both optimizers' moments, plus a JSON metadata header. The byte
//! layout is fully deterministic — sorted tensor names, fixed-width
//! little-endian fields — so saving identical state twice produces
//! byte-identical files, and save -> load -> save round-trips exactly.
//!
//! There is no separate rng blob: every random stream is re-derived from
//! (seed, stream, step-or-epoch counter), so `seed`, `step`, and `epoch` in
//! the metadata fully determine the rng state at the resume point.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::elem::Elem;
use crate::error::Error;
use crate::Result;
use crate::netarch::{Discriminator, Generator, ModelSpec};
use crate::nn::adam::Adam;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GLYPHCK1";

/// Prefixes under which optimizer moments are archived, alongside the plain
/// model tensor names.
const OPT_PREFIXES: [(&str, &str); 2] = [("opt_gen", "gen"), ("opt_disc", "disc")];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    /// Element type of every tensor payload: "f32" or "f64".
    pub dtype: String,
    /// Completed optimization steps.
    pub step: u64,
    pub epoch: u64,
    /// Master seed; combined with `step`/`epoch` it reconstructs every
    /// derived rng stream.
    pub seed: u64,
    /// Hex digest of the training configuration that produced this state.
    pub config_hash: String,
    /// Adam bias-correction clocks.
    pub adam_t_gen: u64,
    pub adam_t_disc: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F: Elem> {
    pub meta: CheckpointMeta,
    /// Model tensors (running statistics included) plus optimizer moments
    /// under `opt_gen/{m,v}/...` and `opt_disc/{m,v}/...`. Sorted order is
    /// the serialization order.
    pub tensors: BTreeMap<String, ArrayD<F>>,
}

fn bad<P: Into<PathBuf>>(path: P, reason: impl Into<String>) -> Error {
    Error::BadCheckpoint {
        path: path.into(),
        reason: reason.into(),
    }
}

impl<F: Elem> Checkpoint<F> {
    /// Serializes to the deterministic archive layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&((t.len() * F::BYTES) as u64).to_le_bytes());
            for &v in t.iter() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut cur = Cursor {
            bytes,
            pos: 0,
            origin,
        };
        let magic = cur.take(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(bad(origin, "bad magic; not a checkpoint archive"));
        }
        let meta_len = cur.u64()? as usize;
        let meta_bytes = cur.take(meta_len)?;
        let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)
            .map_err(|e| bad(origin, format!("metadata: {e}")))?;
        if meta.dtype != F::DTYPE {
            return Err(bad(
                origin,
                format!("dtype mismatch: archive holds {}, requested {}", meta.dtype, F::DTYPE),
            ));
        }
        let count = cur.u64()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| bad(origin, "tensor name is not utf-8"))?
                .to_string();
            let ndim = cur.u32()? as usize;
            if ndim > 8 {
                return Err(bad(origin, format!("tensor {name}: implausible ndim {ndim}")));
            }
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(cur.u64()? as usize);
            }
            let elems: usize = dims.iter().product();
            let data_len = cur.u64()? as usize;
            if data_len != elems * F::BYTES {
                return Err(bad(
                    origin,
                    format!("tensor {name}: payload {data_len} bytes, shape wants {}", elems * F::BYTES),
                ));
            }
            let raw = cur.take(data_len)?;
            let data: Vec<F> = raw.chunks_exact(F::BYTES).map(F::read_le).collect();
            let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| bad(origin, format!("tensor {name}: {e}")))?;
            if tensors.insert(name.clone(), arr).is_some() {
                return Err(bad(origin, format!("duplicate tensor {name}")));
            }
        }
        if cur.pos != bytes.len() {
            return Err(bad(origin, "trailing bytes after the last tensor"));
        }
        Ok(Checkpoint { meta, tensors })
    }

    /// Atomic save: writes a sibling temp file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let mut tmp_name = path.as_os_str().to_owned();
        tmp_name.push(".tmp");
        let tmp = PathBuf::from(tmp_name);
        std::fs::write(&tmp, &bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::FileNotFound(path.to_path_buf()))
            }
            Err(e) => return Err(Error::Io(e)),
        };
        Self::from_bytes(&bytes, path)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(bad(self.origin, "archive truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Snapshots live training state into an archive value.
pub fn collect<F: Elem>(
    gen: &Generator<F>,
    disc: &Discriminator<F>,
    adam_gen: &Adam<F>,
    adam_disc: &Adam<F>,
    meta: CheckpointMeta,
) -> Checkpoint<F> {
    let mut tensors = BTreeMap::new();
    for (name, view) in gen.tensors() {
        tensors.insert(name, view.to_owned());
    }
    for (name, view) in disc.tensors() {
        tensors.insert(name, view.to_owned());
    }
    for (prefix, adam) in [("opt_gen", adam_gen), ("opt_disc", adam_disc)] {
        for (name, m) in &adam.m {
            tensors.insert(format!("{prefix}/m/{name}"), m.clone());
        }
        for (name, v) in &adam.v {
            tensors.insert(format!("{prefix}/v/{name}"), v.clone());
        }
    }
    Checkpoint { meta, tensors }
}

fn assign_model_tensors<'a, F: Elem>(
    ck: &Checkpoint<F>,
    views: Vec<(String, ndarray::ArrayViewMutD<'a, F>)>,
) -> Result<()> {
    for (name, mut view) in views {
        let src = ck
            .tensors
            .get(&name)
            .ok_or_else(|| Error::ConfigMismatch(format!("checkpoint lacks tensor {name}")))?;
        if src.shape() != view.shape() {
            return Err(Error::ConfigMismatch(format!(
                "tensor {name}: checkpoint shape {:?} vs model shape {:?}",
                src.shape(),
                view.shape()
            )));
        }
        view.assign(src);
    }
    Ok(())
}

/// Full state restore: model tensors, optimizer moments, and clocks. The
/// checkpoint's spec must equal the live models' spec.
pub fn apply<F: Elem>(
    ck: &Checkpoint<F>,
    gen: &mut Generator<F>,
    disc: &mut Discriminator<F>,
    adam_gen: &mut Adam<F>,
    adam_disc: &mut Adam<F>,
) -> Result<()> {
    if ck.meta.spec != *gen.spec() {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint spec {:?} differs from model spec {:?}",
            ck.meta.spec,
            gen.spec()
        )));
    }
    assign_model_tensors(ck, gen.tensors_mut())?;
    assign_model_tensors(ck, disc.tensors_mut())?;
    load_moments(ck, "opt_gen", adam_gen);
    load_moments(ck, "opt_disc", adam_disc);
    adam_gen.t = ck.meta.adam_t_gen;
    adam_disc.t = ck.meta.adam_t_disc;
    Ok(())
}

fn load_moments<F: Elem>(ck: &Checkpoint<F>, prefix: &str, adam: &mut Adam<F>) {
    adam.m.clear();
    adam.v.clear();
    let m_prefix = format!("{prefix}/m/");
    let v_prefix = format!("{prefix}/v/");
    for (name, t) in &ck.tensors {
        if let Some(rest) = name.strip_prefix(&m_prefix) {
            adam.m.insert(rest.to_string(), t.clone());
        } else if let Some(rest) = name.strip_prefix(&v_prefix) {
            adam.v.insert(rest.to_string(), t.clone());
        }
    }
}

/// Rebuilds an inference-ready generator from a checkpoint alone: a model of
/// the archived spec with every `gen/*` tensor (running statistics included)
/// restored. Callers set the phase they need.
pub fn load_generator<F: Elem>(ck: &Checkpoint<F>) -> Result<Generator<F>> {
    let mut gen = Generator::zeroed(&ck.meta.spec)?;
    assign_model_tensors(ck, gen.tensors_mut())?;
    Ok(gen)
}

/// Reads only the metadata header of a checkpoint file, without requiring
/// the caller to commit to an element type first. Useful for dispatching on
/// the archived dtype.
pub fn peek_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::FileNotFound(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    let bad = |reason: &str| Error::BadCheckpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < CHECKPOINT_MAGIC.len() + 8 || !bytes.starts_with(CHECKPOINT_MAGIC) {
        return Err(bad("missing archive magic"));
    }
    let at = CHECKPOINT_MAGIC.len();
    let meta_len =
        u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes")) as usize;
    let meta_bytes = bytes
        .get(at + 8..at + 8 + meta_len)
        .ok_or_else(|| bad("metadata extends past end of file"))?;
    serde_json::from_slice(meta_bytes).map_err(|e| bad(&format!("metadata is not valid JSON: {e}")))
}

/// Warm start: copies only the encoder tensors (the `gen/conv*` stack,
/// batch-norm parameters and running statistics included) into a freshly
/// initialized generator, leaving decoder, style, and discriminator state
/// untouched. The checkpoint's spec must equal the generator's.
pub fn warm_start_encoder<F: Elem>(ck: &Checkpoint<F>, gen: &mut Generator<F>) -> Result<()> {
    if ck.meta.spec != *gen.spec() {
        return Err(Error::ConfigMismatch(format!(
            "warm-start checkpoint spec {:?} differs from model spec {:?}",
            ck.meta.spec,
            gen.spec()
        )));
    }
    let encoder_views = gen
        .tensors_mut()
        .into_iter()
        .filter(|(name, _)| name.starts_with("gen/conv"))
        .collect::<Vec<_>>();
    assert!(!encoder_views.is_empty(), "generator always has encoder tensors");
    assign_model_tensors(ck, encoder_views)
}

/// Names every archive entry must use for optimizer moments; exposed so the
/// trainer can sanity-check prefix collisions in tests.
pub fn optimizer_prefixes() -> [(&'static str, &'static str); 2] {
    OPT_PREFIXES
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netarch::ModelSpec;

    fn micro_meta() -> CheckpointMeta {
        CheckpointMeta {
            spec: ModelSpec::micro(),
            dtype: f32::DTYPE.to_string(),
            step: 42,
            epoch: 3,
            seed: 7,
            config_hash: "deadbeef".into(),
            adam_t_gen: 42,
            adam_t_disc: 42,
        }
    }

    fn micro_checkpoint() -> Checkpoint<f32> {
        let spec = ModelSpec::micro();
        let gen = Generator::<f32>::init(&spec, 7).unwrap();
        let disc = Discriminator::<f32>::init(&spec, 7).unwrap();
        let mut adam_gen = Adam::<f32>::new(1e-3, 0.5);
        let mut adam_disc = Adam::<f32>::new(1e-3, 0.5);
        // Seed some moments so the optimizer sections are non-empty.
        adam_gen.begin_step();
        adam_disc.begin_step();
        for (name, view) in gen.tensors().into_iter().take(3) {
            adam_gen.m.insert(name.clone(), view.to_owned());
            adam_gen.v.insert(name, view.mapv(|v| v * v));
        }
        for (name, view) in disc.tensors().into_iter().take(2) {
            adam_disc.m.insert(name.clone(), view.to_owned());
            adam_disc.v.insert(name, view.mapv(|v| v * v));
        }
        let mut meta = micro_meta();
        meta.adam_t_gen = adam_gen.t;
        meta.adam_t_disc = adam_disc.t;
        collect(&gen, &disc, &adam_gen, &adam_disc, meta)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = micro_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        ck.save(&p1).unwrap();
        let loaded = Checkpoint::<f32>::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2, "save -> load -> save must round-trip bytes");
        assert_eq!(ck.meta, loaded.meta);
        assert_eq!(ck.tensors.len(), loaded.tensors.len());
    }

    #[test]
    fn loading_as_the_wrong_dtype_is_rejected() {
        let ck = micro_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        ck.save(&p).unwrap();
        let err = Checkpoint::<f64>::load(&p).err().expect("dtype must mismatch");
        assert!(matches!(err, Error::BadCheckpoint { .. }), "{err}");
    }

    #[test]
    fn truncated_and_corrupt_archives_are_rejected() {
        let ck = micro_checkpoint();
        let bytes = ck.to_bytes();
        let origin = Path::new("mem.ckpt");
        for cut in [0, 4, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::<f32>::from_bytes(&bytes[..cut], origin)
                .err()
                .expect("truncation must fail");
            assert!(matches!(err, Error::BadCheckpoint { .. }), "cut {cut}: {err}");
        }
        let mut garbled = bytes.clone();
        garbled[0] ^= 0xFF;
        assert!(Checkpoint::<f32>::from_bytes(&garbled, origin).is_err());
        let mut padded = bytes;
        padded.push(0);
        assert!(Checkpoint::<f32>::from_bytes(&padded, origin).is_err());
    }

    #[test]
    fn apply_restores_models_and_moments_exactly() {
        let spec = ModelSpec::micro();
        let ck = micro_checkpoint();
        let mut gen = Generator::<f32>::init(&spec, 999).unwrap();
        let mut disc = Discriminator::<f32>::init(&spec, 999).unwrap();
        let mut adam_gen = Adam::<f32>::new(1e-3, 0.5);
        let mut adam_disc = Adam::<f32>::new(1e-3, 0.5);
        apply(&ck, &mut gen, &mut disc, &mut adam_gen, &mut adam_disc).unwrap();
        for (name, view) in gen.tensors().into_iter().chain(disc.tensors()) {
            assert_eq!(view.to_owned(), ck.tensors[&name], "tensor {name}");
        }
        assert_eq!(adam_gen.t, ck.meta.adam_t_gen);
        assert_eq!(adam_gen.m.len(), 3);
        assert_eq!(adam_disc.v.len(), 2);
    }

    #[test]
    fn apply_and_warm_start_reject_a_mismatched_spec() {
        let ck = micro_checkpoint();
        let mut other = ModelSpec::micro();
        other.base_channels = 8;
        let mut gen = Generator::<f32>::init(&other, 0).unwrap();
        let mut disc = Discriminator::<f32>::init(&other, 0).unwrap();
        let mut ag = Adam::<f32>::new(1e-3, 0.5);
        let mut ad = Adam::<f32>::new(1e-3, 0.5);
        let err = apply(&ck, &mut gen, &mut disc, &mut ag, &mut ad)
            .err()
            .expect("spec mismatch");
        assert!(matches!(err, Error::ConfigMismatch(_)), "{err}");
        let err = warm_start_encoder(&ck, &mut gen).err().expect("spec mismatch");
        assert!(matches!(err, Error::ConfigMismatch(_)), "{err}");
    }

    #[test]
    fn warm_start_copies_only_encoder_tensors() {
        let spec = ModelSpec::micro();
        let ck = micro_checkpoint();
        let mut gen = Generator::<f32>::init(&spec, 999).unwrap();
        let before: Vec<(String, ndarray::ArrayD<f32>)> = gen
            .tensors()
            .into_iter()
            .map(|(n, v)| (n, v.to_owned()))
            .collect();
        warm_start_encoder(&ck, &mut gen).unwrap();
        for ((name, now), (_, was)) in gen.tensors().into_iter().zip(before) {
            if name.starts_with("gen/conv") {
                assert_eq!(now.to_owned(), ck.tensors[&name], "encoder tensor {name}");
            } else {
                assert_eq!(now.to_owned(), was, "non-encoder tensor {name} must not move");
            }
        }
    }
}
