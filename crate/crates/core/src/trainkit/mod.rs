//! Training orchestration: configuration, the alternating GAN step, encoder
//! pretraining and warm starts, and the epoch loop with checkpointing,
//! sample grids, and CSV logging.
//!
//! Determinism contract: every random decision is drawn from an rng derived
//! as (seed, stream, counter) — parameter init, per-step augmentation and
//! dropout, per-epoch shuffles — so a (config, dataset) pair maps to exactly
//! one loss trajectory, and a checkpoint's (seed, step, epoch) restores the
//! rng state with no serialized rng blob.

pub mod augment;
pub mod checkpoint;
pub mod dataset;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array4, Ix4};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use augment::{augment, AugmentConfig};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use dataset::{epoch_permutation, steps_per_epoch, Dataset};

use crate::elem::Elem;
use crate::error::Error;
use crate::Result;
use crate::losses::{
    const_loss, gan_losses, pixel_l2, tid_loss, total_discriminator_loss, total_generator_loss,
    tv_loss, LossReport, LossWeights,
};
use crate::netarch::{Discriminator, Generator, ModelSpec};
use crate::nn::adam::{Adam, GradMap};
use crate::nn::Phase;
use crate::pairset::{PairPolicy, PolicyKind};
use crate::rngs::{derive, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub spec: ModelSpec,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimConfig,
    pub policy: PairPolicy,
    pub weights: LossWeights,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Checkpoint whose encoder tensors seed this run (everything else
    /// keeps its fresh initialization).
    pub warm_start: Option<PathBuf>,
    /// Steps during which encoder (`gen/conv*`) parameters receive no
    /// optimizer updates; their running statistics still track batches.
    pub freeze_encoder_steps: u64,
    /// Write a checkpoint every this many steps (0 = final only).
    pub checkpoint_every: u64,
    /// Write a sample grid every this many steps (0 = never).
    pub sample_every: u64,
}

impl TrainConfig {
    /// Canvas-aware defaults: batch 16, 100 epochs, Adam(beta1 0.5) at
    /// 1e-3 for desk-scale canvases (<= 32) and 2e-4 at full scale.
    pub fn defaults(spec: ModelSpec, policy: PairPolicy) -> Self {
        let lr = if spec.canvas <= 32 { 1e-3 } else { 2e-4 };
        TrainConfig {
            augment: AugmentConfig::for_canvas(spec.canvas),
            spec,
            batch_size: 16,
            epochs: 100,
            optimizer: OptimConfig {
                learning_rate: lr,
                ..OptimConfig::default()
            },
            policy,
            weights: LossWeights::default(),
            seed: 0,
            warm_start: None,
            freeze_encoder_steps: 0,
            checkpoint_every: 0,
            sample_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate.is_finite() && o.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                o.learning_rate
            )));
        }
        for (nm, b) in [("beta1", o.beta1), ("beta2", o.beta2)] {
            if !(b.is_finite() && (0.0..1.0).contains(&b)) {
                return Err(Error::InvalidConfig(format!("{nm} must lie in [0, 1), got {b}")));
            }
        }
        self.weights.validate()?;
        self.augment.validate()?;
        if self.weights.w_l2 > 0.0 && self.policy.kind != PolicyKind::Strong {
            return Err(Error::InvalidConfig(format!(
                "w_l2 > 0 requires the strong pairing policy (targets are ground truth); got {:?}",
                self.policy.kind
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding; checkpoints record it so
    /// resumes against a different configuration are rejected.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Everything that evolves during training.
pub struct TrainState<F: Elem> {
    pub cfg: TrainConfig,
    pub gen: Generator<F>,
    pub disc: Discriminator<F>,
    pub adam_gen: Adam<F>,
    pub adam_disc: Adam<F>,
    /// Completed optimization steps.
    pub step: u64,
    pub epoch: u64,
}

impl<F: Elem> TrainState<F> {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let gen = Generator::init(&cfg.spec, cfg.seed)?;
        let disc = Discriminator::init(&cfg.spec, cfg.seed)?;
        let o = &cfg.optimizer;
        let mut adam_gen = Adam::new(o.learning_rate, o.beta1);
        adam_gen.beta2 = F::of_f64(o.beta2);
        let mut adam_disc = Adam::new(o.learning_rate, o.beta1);
        adam_disc.beta2 = F::of_f64(o.beta2);
        Ok(TrainState {
            cfg: cfg.clone(),
            gen,
            disc,
            adam_gen,
            adam_disc,
            step: 0,
            epoch: 0,
        })
    }

    /// One alternating optimization step on a (source, target) batch pair:
    /// a discriminator update on (real target, G(source), G(target)) with
    /// classes (0, 1, 2), then a generator update on the weighted sum of
    /// adversarial, consistency, identity, variation, and (Strong policy)
    /// pixel terms. Both gradients are evaluated at the pre-step parameters;
    /// the discriminator's update is applied first. Advances `step` by one.
    pub fn train_step(&mut self, src: &Array4<F>, tgt: &Array4<F>) -> Result<LossReport> {
        self.train_step_inner(src, tgt).map_err(|e| match e {
            Error::NonFiniteInput(what) => self.non_finite(&what),
            other => other,
        })
    }

    fn train_step_inner(&mut self, src: &Array4<F>, tgt: &Array4<F>) -> Result<LossReport> {
        if src.dim() != tgt.dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", src.dim()),
                got: format!("{:?}", tgt.dim()),
            });
        }
        let w = self.cfg.weights;
        self.gen.set_phase(Phase::Train);
        self.disc.set_phase(Phase::Train);
        let mut drop_rng = derive(self.cfg.seed, Stream::Dropout, self.step);

        // Generator forwards (batch statistics update here and only here).
        let (fake_s, enc_s, dec_s) = self.gen.forward_train(src, 0, &mut drop_rng)?;
        let (fake_t, enc_t, dec_t) = self.gen.forward_train(tgt, 0, &mut drop_rng)?;

        // Discriminator forwards; its running statistics update on its own
        // step, once per logit batch.
        let (logits_real, c_real) = self.disc.discriminate(tgt)?;
        let (logits_fs, c_fs) = self.disc.discriminate(&fake_s)?;
        let (logits_ft, c_ft) = self.disc.discriminate(&fake_t)?;
        let gan = gan_losses(&logits_real, &logits_fs, &logits_ft)?;

        // Discriminator gradients (its objective carries no user weight).
        let mut grads_d = GradMap::new();
        self.disc.backward(&c_real, &gan.d_grad_real_tgt, &mut grads_d, true);
        self.disc.backward(&c_fs, &gan.d_grad_gen_src, &mut grads_d, true);
        self.disc.backward(&c_ft, &gan.d_grad_gen_tgt, &mut grads_d, true);

        // Adversarial gradients w.r.t. the generated images, while the
        // discriminator still holds its pre-update parameters.
        let mut sink = GradMap::new();
        let w_gan = F::of_f64(w.w_gan);
        let dy_fs_gan = self
            .disc
            .backward(&c_fs, &(&gan.g_grad_gen_src * w_gan), &mut sink, false);
        let dy_ft_gan = self
            .disc
            .backward(&c_ft, &(&gan.g_grad_gen_tgt * w_gan), &mut sink, false);

        // Consistency: re-encode G(source) with frozen batch statistics and
        // pull the two codes together. Gradients flow into both encoder
        // applications and, through the second one, back into the decoder.
        let code_s = enc_s
            .stage_outputs()
            .last()
            .expect("n_stages >= 1")
            .clone()
            .into_dyn();
        let (code_fs, _skips_fs, enc_fs) = self.gen.reencode(&fake_s)?;
        let (const_v, dcode_fs) = const_loss(&code_s, &code_fs.into_dyn())?;
        let dcode_fs: Array4<F> = (dcode_fs * F::of_f64(w.w_const))
            .into_dimensionality::<Ix4>()
            .expect("code gradient is 4-d");
        let mut grads_g = GradMap::new();
        let dx_const = self
            .gen
            .encoder_backward(&enc_fs, &dcode_fs, &[], &mut grads_g, true);
        let extra_dcode = dcode_fs.mapv(|v| -v);

        // Identity: G should leave real target glyphs unchanged.
        let (tid_v, dtid) = tid_loss(&tgt.clone().into_dyn(), &fake_t.clone().into_dyn())?;
        let dtid: Array4<F> = (dtid * F::of_f64(w.w_tid))
            .into_dimensionality::<Ix4>()
            .expect("tid gradient is 4-d");

        // Total variation on the transferred batch.
        let (tv_v, dtv) = tv_loss(&fake_s)?;

        // Supervised pixel term, meaningful only when targets are ground
        // truth (Strong policy; enforced by validate).
        let (l2_v, dl2) = if w.w_l2 > 0.0 {
            let (v, g) = pixel_l2(&fake_s.clone().into_dyn(), &tgt.clone().into_dyn())?;
            let g: Array4<F> = (g * F::of_f64(w.w_l2))
                .into_dimensionality::<Ix4>()
                .expect("pixel gradient is 4-d");
            (v.as_f64(), Some(g))
        } else {
            (0.0, None)
        };

        let mut dy_fs = dy_fs_gan;
        dy_fs += &dx_const;
        dy_fs += &(&dtv * F::of_f64(w.w_tv));
        if let Some(g) = &dl2 {
            dy_fs += g;
        }
        let mut dy_ft = dy_ft_gan;
        dy_ft += &dtid;

        self.gen
            .backward(&enc_s, &dec_s, &dy_fs, Some(&extra_dcode), &mut grads_g);
        self.gen.backward(&enc_t, &dec_t, &dy_ft, None, &mut grads_g);

        let report = LossReport {
            step: self.step + 1,
            gan_d: gan.d_loss.as_f64(),
            gan_g: gan.g_loss.as_f64(),
            const_term: const_v.as_f64(),
            tid: tid_v.as_f64(),
            tv: tv_v.as_f64(),
            l2: l2_v,
            total_g: total_generator_loss(
                &w,
                gan.g_loss.as_f64(),
                const_v.as_f64(),
                tid_v.as_f64(),
                tv_v.as_f64(),
                l2_v,
            ),
            total_d: total_discriminator_loss(&w, gan.d_loss.as_f64()),
        };
        if !report.is_finite() {
            return Err(self.non_finite("loss report"));
        }

        // Apply updates: discriminator first, then generator.
        let frozen = self.step < self.cfg.freeze_encoder_steps;
        self.adam_disc.begin_step();
        for (name, view) in self.disc.tensors_mut() {
            if let Some(g) = grads_d.get(&name) {
                self.adam_disc.update(&name, view, g);
            }
        }
        self.adam_gen.begin_step();
        for (name, view) in self.gen.tensors_mut() {
            if frozen && name.starts_with("gen/conv") {
                continue;
            }
            if let Some(g) = grads_g.get(&name) {
                self.adam_gen.update(&name, view, g);
            }
        }
        self.step += 1;
        Ok(report)
    }

    /// Diagnostic for aborting on numerical blow-up: names every tensor
    /// holding non-finite values.
    fn non_finite(&self, what: &str) -> Error {
        let mut bad: Vec<String> = Vec::new();
        for (name, t) in self.gen.tensors().into_iter().chain(self.disc.tensors()) {
            let n = t.iter().filter(|v| !v.is_finite()).count();
            if n > 0 {
                bad.push(format!("{name} ({n} values)"));
            }
        }
        let detail = if bad.is_empty() {
            format!("{what}: non-finite with all parameters finite (activation overflow)")
        } else {
            format!("{what}: non-finite tensors: {}", bad.join(", "))
        };
        Error::NonFiniteLoss {
            step: self.step,
            detail,
        }
    }

    /// Snapshot of the complete training state.
    pub fn checkpoint(&self, config_hash: &str) -> Checkpoint<F> {
        let meta = CheckpointMeta {
            spec: self.cfg.spec.clone(),
            dtype: F::DTYPE.to_string(),
            step: self.step,
            epoch: self.epoch,
            seed: self.cfg.seed,
            config_hash: config_hash.to_string(),
            adam_t_gen: self.adam_gen.t,
            adam_t_disc: self.adam_disc.t,
        };
        checkpoint::collect(&self.gen, &self.disc, &self.adam_gen, &self.adam_disc, meta)
    }

    /// Full restore from a checkpoint: tensors, moments, clocks, position.
    pub fn restore(&mut self, ck: &Checkpoint<F>) -> Result<()> {
        checkpoint::apply(
            ck,
            &mut self.gen,
            &mut self.disc,
            &mut self.adam_gen,
            &mut self.adam_disc,
        )?;
        self.step = ck.meta.step;
        self.epoch = ck.meta.epoch;
        Ok(())
    }
}

/// Result of a completed `fit` run.
pub struct FitOutcome<F: Elem> {
    pub state: TrainState<F>,
    /// One report per step executed in this call (a resumed run reports
    /// only the steps it ran itself).
    pub reports: Vec<LossReport>,
    pub final_checkpoint: PathBuf,
}

/// Runs `epochs × ceil(n_pairs / batch_size)` optimization steps, logging
/// one CSV row per step to `train_log.csv`, checkpointing every
/// `checkpoint_every` steps plus a terminal `final.ckpt`, and writing a
/// sample grid `step_<N>.png` every `sample_every` steps. `resume` continues
/// from a checkpoint written by the *same* configuration and reproduces the
/// uninterrupted run's remaining trajectory exactly.
pub fn fit<F: Elem>(
    cfg: &TrainConfig,
    data: &Dataset,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<FitOutcome<F>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyManifest);
    }
    if data.canvas() != cfg.spec.canvas {
        return Err(Error::ConfigMismatch(format!(
            "dataset canvas {} vs model canvas {}",
            data.canvas(),
            cfg.spec.canvas
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let hash = cfg.config_hash();
    let mut state = TrainState::<F>::new(cfg)?;

    let mut resumed = false;
    if let Some(ck_path) = resume {
        let ck = Checkpoint::<F>::load(ck_path)?;
        if ck.meta.config_hash != hash {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint {} was written by config {}, this run is {}",
                ck_path.display(),
                &ck.meta.config_hash[..12.min(ck.meta.config_hash.len())],
                &hash[..12]
            )));
        }
        state.restore(&ck)?;
        resumed = true;
    } else if let Some(ws) = &cfg.warm_start {
        let ck = Checkpoint::<F>::load(ws)?;
        checkpoint::warm_start_encoder(&ck, &mut state.gen)?;
    }

    let n = data.len();
    let spe = steps_per_epoch(n, cfg.batch_size);
    let total_steps = cfg.epochs as u64 * spe;

    let log_path = out_dir.join("train_log.csv");
    let mut log = if resumed && log_path.exists() {
        std::io::BufWriter::new(std::fs::OpenOptions::new().append(true).open(&log_path)?)
    } else {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
        writeln!(f, "{}", LossReport::CSV_HEADER)?;
        f
    };

    // Fixed panel for sample grids: the first few pairs, unaugmented, so
    // grids stay comparable across steps.
    let panel: Vec<usize> = (0..n.min(8)).collect();

    let mut reports = Vec::new();
    while state.step < total_steps {
        let epoch = state.step / spe;
        state.epoch = epoch;
        let perm = epoch_permutation(cfg.seed, epoch, n);
        let batch_idx = (state.step % spe) as usize;
        let lo = batch_idx * cfg.batch_size;
        let hi = usize::min(lo + cfg.batch_size, n);
        let (mut src, mut tgt) = data.batch::<F>(&perm[lo..hi]);
        if cfg.augment.enabled {
            let mut arng = derive(cfg.seed, Stream::Augment, state.step);
            src = augment(&src, &cfg.augment, &mut arng);
            tgt = augment(&tgt, &cfg.augment, &mut arng);
        }
        let report = state.train_step(&src, &tgt)?;
        writeln!(log, "{}", report.csv_row())?;
        log.flush()?;
        reports.push(report);

        if cfg.sample_every > 0 && state.step % cfg.sample_every == 0 {
            let (ps, pt) = data.batch::<F>(&panel);
            let truth = if cfg.policy.kind == PolicyKind::Strong {
                Some(&pt)
            } else {
                None
            };
            let path = out_dir.join(format!("step_{}.png", state.step));
            crate::evalkit::write_sample_grid(&mut state.gen, &ps, truth, 0, &path)?;
        }
        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < total_steps
        {
            let path = out_dir.join(format!("ckpt_step_{:06}.ckpt", state.step));
            state.checkpoint(&hash).save(&path)?;
        }
    }
    state.epoch = cfg.epochs as u64;

    let final_checkpoint = out_dir.join("final.ckpt");
    state.checkpoint(&hash).save(&final_checkpoint)?;
    Ok(FitOutcome {
        state,
        reports,
        final_checkpoint,
    })
}

/// Supervised warm-up: trains with a purely pixel objective on strong pairs
/// and emits a checkpoint whose encoder seeds unsupervised runs through
/// `TrainConfig::warm_start`. Adversarial, consistency, identity, and
/// variation terms are switched off; everything else (batching, logging,
/// checkpoints) matches `fit`.
pub fn pretrain_encoder<F: Elem>(
    cfg: &TrainConfig,
    data: &Dataset,
    out_dir: &Path,
) -> Result<FitOutcome<F>> {
    if cfg.policy.kind != PolicyKind::Strong {
        return Err(Error::InvalidConfig(
            "encoder pretraining is supervised and needs strong pairs".into(),
        ));
    }
    let mut pre = cfg.clone();
    pre.weights = LossWeights {
        w_gan: 0.0,
        w_const: 0.0,
        w_tid: 0.0,
        w_tv: 0.0,
        w_l2: 1.0,
    };
    pre.warm_start = None;
    fit(&pre, data, out_dir, None)
}

#[cfg(test)]
mod tests {
    use super::dataset::synthetic_manifest;
    use super::*;
    use std::path::Path;

    fn micro_cfg(seed: u64) -> TrainConfig {
        let policy = PairPolicy {
            kind: PolicyKind::Strong,
            overlap_ratio: 1.0,
            seed: 0,
        };
        let mut cfg = TrainConfig::defaults(ModelSpec::micro(), policy);
        cfg.batch_size = 2;
        cfg.epochs = 1;
        cfg.seed = seed;
        cfg.augment.max_shift_px = 1;
        cfg
    }

    fn micro_dataset(dir: &Path, n: usize) -> Dataset {
        Dataset::load(&synthetic_manifest(dir, n, 32, PolicyKind::Strong)).unwrap()
    }

    fn named_params<F: Elem>(state: &TrainState<F>) -> Vec<(String, ndarray::ArrayD<F>)> {
        state
            .gen
            .tensors()
            .into_iter()
            .chain(state.disc.tensors())
            .filter(|(n, _)| !n.contains("running_"))
            .map(|(n, v)| (n, v.to_owned()))
            .collect()
    }

    #[test]
    fn train_step_is_deterministic_and_advances_the_clock() {
        let dir = tempfile::tempdir().unwrap();
        let data = micro_dataset(dir.path(), 2);
        let cfg = micro_cfg(3);
        let (src, tgt) = data.batch::<f32>(&[0, 1]);

        let mut a = TrainState::<f32>::new(&cfg).unwrap();
        let mut b = TrainState::<f32>::new(&cfg).unwrap();
        let ra = a.train_step(&src, &tgt).unwrap();
        let rb = b.train_step(&src, &tgt).unwrap();
        assert_eq!(ra, rb, "same config and batch must give identical losses");
        assert!(ra.is_finite());
        assert_eq!(ra.step, 1);
        assert_eq!(a.step, 1);
        assert_eq!(named_params(&a), named_params(&b));

        let ra2 = a.train_step(&src, &tgt).unwrap();
        assert_ne!(ra, ra2, "parameters moved, losses should change");
    }

    #[test]
    fn single_image_batches_train_without_error() {
        let dir = tempfile::tempdir().unwrap();
        let data = micro_dataset(dir.path(), 1);
        let cfg = micro_cfg(30);
        let mut state = TrainState::<f32>::new(&cfg).unwrap();
        let (src, tgt) = data.batch::<f32>(&[0]);
        let report = state.train_step(&src, &tgt).unwrap();
        assert!(report.is_finite());
    }

    #[test]
    fn zero_weights_and_zero_learning_rate_leave_parameters_bitwise_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let data = micro_dataset(dir.path(), 2);
        let mut cfg = micro_cfg(4);
        cfg.weights = LossWeights {
            w_gan: 0.0,
            w_const: 0.0,
            w_tid: 0.0,
            w_tv: 0.0,
            w_l2: 0.0,
        };
        let mut state = TrainState::<f32>::new(&cfg).unwrap();
        // A zero learning rate fails validation (it trains nothing), so this
        // degenerate setting is injected after construction.
        state.adam_gen.lr = 0.0;
        state.adam_disc.lr = 0.0;
        let before = named_params(&state);
        let (src, tgt) = data.batch::<f32>(&[0, 1]);
        let report = state.train_step(&src, &tgt).unwrap();
        assert!(report.is_finite());
        assert_eq!(report.total_g, 0.0);
        assert_eq!(
            before,
            named_params(&state),
            "no objective and no step size must move nothing"
        );
    }

    #[test]
    fn nan_in_a_parameter_aborts_with_a_named_diagnostic() {
        let dir = tempfile::tempdir().unwrap();
        let data = micro_dataset(dir.path(), 2);
        let cfg = micro_cfg(5);
        let mut state = TrainState::<f32>::new(&cfg).unwrap();
        for (name, mut view) in state.gen.tensors_mut() {
            if name == "gen/conv1/w" {
                view.as_slice_mut().unwrap()[0] = f32::NAN;
            }
        }
        let (src, tgt) = data.batch::<f32>(&[0, 1]);
        let err = state.train_step(&src, &tgt).err().expect("NaN must abort");
        match &err {
            Error::NonFiniteLoss { step, detail } => {
                assert_eq!(*step, 0);
                assert!(detail.contains("gen/conv1/w"), "diagnostic was: {detail}");
            }
            other => panic!("expected NonFiniteLoss, got {other}"),
        }
    }

    #[test]
    fn mismatched_batch_shapes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let data = micro_dataset(dir.path(), 3);
        let cfg = micro_cfg(6);
        let mut state = TrainState::<f32>::new(&cfg).unwrap();
        let (src, _) = data.batch::<f32>(&[0, 1]);
        let (_, tgt) = data.batch::<f32>(&[0]);
        let err = state.train_step(&src, &tgt).err().expect("shape mismatch");
        assert!(matches!(err, Error::ShapeMismatch { .. }), "{err}");
    }

    #[test]
    fn pixel_weight_without_strong_pairs_fails_validation() {
        let mut cfg = micro_cfg(7);
        cfg.policy.kind = PolicyKind::Soft;
        cfg.weights.w_l2 = 1.0;
        let err = cfg.validate().err().expect("policy guard");
        assert!(matches!(err, Error::InvalidConfig(_)), "{err}");
        cfg.weights.w_l2 = 0.0;
        cfg.validate().unwrap();
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = micro_cfg(8);
        let b = micro_cfg(8);
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 64);
        let mut c = micro_cfg(8);
        c.optimizer.learning_rate *= 2.0;
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn fit_with_zero_epochs_writes_the_initial_checkpoint_and_empty_log() {
        let dir = tempfile::tempdir().unwrap();
        let data = micro_dataset(dir.path(), 2);
        let mut cfg = micro_cfg(9);
        cfg.epochs = 0;
        let out = dir.path().join("run");
        let outcome = fit::<f32>(&cfg, &data, &out, None).unwrap();
        assert!(outcome.reports.is_empty());
        assert!(outcome.final_checkpoint.exists());
        let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
        assert_eq!(log.trim(), LossReport::CSV_HEADER);
        let ck = Checkpoint::<f32>::load(&outcome.final_checkpoint).unwrap();
        assert_eq!(ck.meta.step, 0);
        // The initial checkpoint is exactly the seeded initialization.
        let fresh = TrainState::<f32>::new(&cfg).unwrap();
        for (name, view) in fresh.gen.tensors() {
            assert_eq!(view.to_owned(), ck.tensors[&name], "tensor {name}");
        }
    }

    #[test]
    fn fit_runs_the_step_budget_logs_rows_and_emits_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let data = micro_dataset(dir.path(), 3);
        let mut cfg = micro_cfg(10);
        cfg.epochs = 2; // ceil(3/2) = 2 steps per epoch -> 4 steps
        cfg.sample_every = 2;
        cfg.checkpoint_every = 3;
        let out = dir.path().join("run");
        let outcome = fit::<f32>(&cfg, &data, &out, None).unwrap();
        assert_eq!(outcome.reports.len(), 4);
        assert_eq!(outcome.state.step, 4);
        assert!(outcome.reports.iter().all(LossReport::is_finite));
        let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
        assert_eq!(log.lines().count(), 5, "header + one row per step");
        assert!(out.join("step_2.png").exists());
        assert!(out.join("step_4.png").exists());
        assert!(out.join("ckpt_step_000003.ckpt").exists());
        assert!(out.join("final.ckpt").exists());
    }

    #[test]
    fn identical_configs_reproduce_the_loss_trajectory_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let data = micro_dataset(dir.path(), 3);
        let mut cfg = micro_cfg(11);
        cfg.epochs = 2;
        let a = fit::<f32>(&cfg, &data, &dir.path().join("a"), None).unwrap();
        let b = fit::<f32>(&cfg, &data, &dir.path().join("b"), None).unwrap();
        assert_eq!(a.reports, b.reports);
        let ca = std::fs::read(&a.final_checkpoint).unwrap();
        let cb = std::fs::read(&b.final_checkpoint).unwrap();
        assert_eq!(ca, cb, "final checkpoints must be byte-identical");
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let data = micro_dataset(dir.path(), 3);
        let mut cfg = micro_cfg(12);
        cfg.epochs = 2; // 4 steps
        cfg.checkpoint_every = 2;
        let full = fit::<f32>(&cfg, &data, &dir.path().join("full"), None).unwrap();
        let mid = dir.path().join("full").join("ckpt_step_000002.ckpt");
        assert!(mid.exists());
        let resumed = fit::<f32>(&cfg, &data, &dir.path().join("resumed"), Some(&mid)).unwrap();
        assert_eq!(resumed.reports.len(), 2, "resume runs only the remaining steps");
        assert_eq!(&full.reports[2..], &resumed.reports[..]);
        let ca = std::fs::read(&full.final_checkpoint).unwrap();
        let cb = std::fs::read(&resumed.final_checkpoint).unwrap();
        assert_eq!(ca, cb, "resumed run must land on the identical final state");
    }

    #[test]
    fn resume_rejects_a_checkpoint_from_a_different_config() {
        let dir = tempfile::tempdir().unwrap();
        let data = micro_dataset(dir.path(), 2);
        let cfg = micro_cfg(13);
        let out = fit::<f32>(&cfg, &data, &dir.path().join("a"), None).unwrap();
        let mut other = cfg.clone();
        other.optimizer.learning_rate *= 2.0;
        let err = fit::<f32>(&other, &data, &dir.path().join("b"), Some(&out.final_checkpoint))
            .err()
            .expect("config hash mismatch");
        assert!(matches!(err, Error::ConfigMismatch(_)), "{err}");
    }

    #[test]
    fn checkpoint_round_trip_reproduces_inference_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let data = micro_dataset(dir.path(), 2);
        let cfg = micro_cfg(14);
        let out = fit::<f32>(&cfg, &data, &dir.path().join("run"), None).unwrap();
        let mut trained = out.state;
        let (src, _) = data.batch::<f32>(&[0, 1]);

        trained.gen.set_phase(Phase::Infer);
        let want = trained.gen.generate(&src, 0, None).unwrap();

        let ck = Checkpoint::<f32>::load(&out.final_checkpoint).unwrap();
        let mut fresh = TrainState::<f32>::new(&cfg).unwrap();
        fresh.restore(&ck).unwrap();
        assert_eq!(fresh.step, trained.step);
        fresh.gen.set_phase(Phase::Infer);
        let got = fresh.gen.generate(&src, 0, None).unwrap();
        assert_eq!(want, got, "reloaded generator must reproduce outputs bitwise");
    }

    #[test]
    fn warm_start_seeds_the_encoder_and_rejects_mismatched_specs() {
        let dir = tempfile::tempdir().unwrap();
        let data = micro_dataset(dir.path(), 2);
        let cfg = micro_cfg(15);
        let pre = pretrain_encoder::<f32>(&cfg, &data, &dir.path().join("pre")).unwrap();

        let mut warm = micro_cfg(16);
        warm.warm_start = Some(pre.final_checkpoint.clone());
        warm.epochs = 0;
        let seeded = fit::<f32>(&warm, &data, &dir.path().join("warm"), None).unwrap();
        let pre_ck = Checkpoint::<f32>::load(&pre.final_checkpoint).unwrap();
        for (name, view) in seeded.state.gen.tensors() {
            if name.starts_with("gen/conv") {
                assert_eq!(view.to_owned(), pre_ck.tensors[&name], "encoder tensor {name}");
            }
        }

        let mut mismatched = warm.clone();
        mismatched.spec.base_channels = 8;
        let err = fit::<f32>(&mismatched, &data, &dir.path().join("bad"), None)
            .err()
            .expect("warm start across specs must fail");
        assert!(matches!(err, Error::ConfigMismatch(_)), "{err}");
    }

    #[test]
    fn pretraining_requires_strong_pairs_and_reduces_pixel_loss() {
        let dir = tempfile::tempdir().unwrap();
        let data = micro_dataset(dir.path(), 4);
        let mut cfg = micro_cfg(17);
        cfg.epochs = 10; // 2 steps per epoch -> 20 supervised steps
        cfg.augment.enabled = false;
        let out = pretrain_encoder::<f32>(&cfg, &data, &dir.path().join("pre")).unwrap();
        let first = out.reports.first().unwrap().l2;
        let last = out.reports.last().unwrap().l2;
        assert!(
            last < first,
            "supervised pixel loss should fall: first {first}, last {last}"
        );

        let mut soft = cfg.clone();
        soft.policy.kind = PolicyKind::Soft;
        let err = pretrain_encoder::<f32>(&soft, &data, &dir.path().join("bad"))
            .err()
            .expect("pretraining is supervised");
        assert!(matches!(err, Error::InvalidConfig(_)), "{err}");
    }

    #[test]
    fn frozen_encoder_steps_hold_conv_parameters_still() {
        let dir = tempfile::tempdir().unwrap();
        let data = micro_dataset(dir.path(), 2);
        let mut cfg = micro_cfg(18);
        cfg.freeze_encoder_steps = 1;
        let mut state = TrainState::<f32>::new(&cfg).unwrap();
        let before = named_params(&state);
        let (src, tgt) = data.batch::<f32>(&[0, 1]);
        state.train_step(&src, &tgt).unwrap();
        let mut enc_moved = 0usize;
        let mut dec_moved = 0usize;
        for ((name, now), (_, was)) in named_params(&state).into_iter().zip(&before) {
            let moved = &now != was;
            if name.starts_with("gen/conv") {
                assert!(!moved, "frozen encoder tensor {name} moved");
                enc_moved += moved as usize;
            } else if name.starts_with("gen/") {
                dec_moved += moved as usize;
            }
        }
        assert_eq!(enc_moved, 0);
        assert!(dec_moved > 0, "decoder must keep training while encoder is frozen");

        // Past the freeze horizon the encoder trains again.
        state.train_step(&src, &tgt).unwrap();
        let after = named_params(&state);
        let conv_w_moved = after
            .iter()
            .zip(&before)
            .any(|((name, now), (_, was))| name.starts_with("gen/conv") && now != was);
        assert!(conv_w_moved, "encoder should move once unfrozen");
    }

    #[test]
    fn fit_rejects_a_dataset_whose_canvas_differs_from_the_model() {
        let dir = tempfile::tempdir().unwrap();
        let m = synthetic_manifest(dir.path(), 2, 16, PolicyKind::Strong);
        let data = Dataset::load(&m).unwrap();
        let cfg = micro_cfg(19); // canvas 32
        let err = fit::<f32>(&cfg, &data, &dir.path().join("run"), None)
            .err()
            .expect("canvas mismatch");
        assert!(matches!(err, Error::ConfigMismatch(_)), "{err}");
    }
}
