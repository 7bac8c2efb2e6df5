//! Generator (stride-2 conv encoder, deconv decoder with skip connections)
//! and the trinary discriminator, plus the scalable spec that sizes them.
//!
//! All parameters are addressable by stable names (`gen/conv3/w`,
//! `disc/fc/b`, ...) so the optimizer, checkpoints, and gradient audits share
//! one vocabulary. Backward passes accumulate into a [`GradMap`] keyed by the
//! same names.

use ndarray::{s, Array2, Array4, ArrayViewD, ArrayViewMutD, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elem::Elem;
use crate::error::Error;
use crate::nn::activ::{
    dropout, dropout_backward, leaky_relu, leaky_relu_backward, relu, relu_backward, tanh,
    tanh_backward,
};
use crate::nn::adam::GradMap;
use crate::nn::conv::{Conv2d, ConvCache, ConvTranspose2d, DeconvCache};
use crate::nn::linear::Linear;
use crate::nn::norm::{BatchNorm2d, BnCache, CinCache, CondInstanceNorm};
use crate::nn::{normal, normal_around, Phase};
use crate::rngs::{derive, Stream};
use crate::Result;

/// The discriminator always has four stride-2 stages, independent of canvas.
pub const DISC_STAGES: usize = 4;

/// Negative slope of the encoder/discriminator leaky ReLU.
pub const LRELU_SLOPE: f64 = 0.2;

/// Std of the Gaussian weight init; batch-norm scales use N(1, this).
const INIT_STD: f64 = 0.02;

/// 1-based decoder stages that apply dropout during training.
const DROPOUT_STAGES: [usize; 2] = [2, 3];

/// Architecture description. Every tensor shape in both networks is a pure
/// function of this struct, so recording it in checkpoint metadata pins the
/// model exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Square image side. Power of two, at least 32.
    pub canvas: usize,
    /// Channel count of the first encoder stage; later stages double up to 8x.
    pub base_channels: usize,
    /// Length of the learned style vector concatenated to the encoder code.
    pub style_embed_dim: usize,
    /// Rows in the style embedding / conditional instance norm tables.
    pub n_styles: usize,
    /// Conv and deconv kernel side. Odd.
    pub kernel: usize,
    /// Spatial stride of every conv/deconv stage. Fixed at 2.
    pub stride: usize,
    /// Dropout probability on decoder stages 2 and 3 during training.
    pub dropout_p: f64,
}

impl ModelSpec {
    /// Full-scale configuration: 256 canvas, 8+8 stages, 640-channel
    /// bottleneck input.
    pub fn full() -> Self {
        ModelSpec {
            canvas: 256,
            base_channels: 64,
            style_embed_dim: 128,
            n_styles: 1,
            kernel: 5,
            stride: 2,
            dropout_p: 0.5,
        }
    }

    /// Desk-scale configuration exercising the same code paths: 32 canvas,
    /// 5+5 stages.
    pub fn micro() -> Self {
        ModelSpec {
            canvas: 32,
            base_channels: 4,
            style_embed_dim: 8,
            n_styles: 1,
            kernel: 5,
            stride: 2,
            dropout_p: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.canvas.is_power_of_two() || self.canvas < 32 {
            return Err(Error::InvalidConfig(format!(
                "canvas must be a power of two >= 32, got {}",
                self.canvas
            )));
        }
        if self.base_channels == 0 || self.style_embed_dim == 0 || self.n_styles == 0 {
            return Err(Error::InvalidConfig(
                "base_channels, style_embed_dim, n_styles must be positive".into(),
            ));
        }
        if self.stride != 2 {
            return Err(Error::InvalidConfig(format!(
                "stride is fixed at 2, got {}",
                self.stride
            )));
        }
        if self.kernel < 3 || self.kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel must be odd and >= 3, got {}",
                self.kernel
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// Number of encoder (and decoder) stages: each halves the canvas down
    /// to 1x1, so log2(canvas).
    pub fn n_stages(&self) -> usize {
        self.canvas.trailing_zeros() as usize
    }

    /// Output channels of encoder conv `i` (1-based): base doubling, capped
    /// at 8x base.
    pub fn enc_out_channels(&self, i: usize) -> usize {
        assert!((1..=self.n_stages()).contains(&i), "encoder stage {i}");
        self.base_channels * (1usize << (i - 1)).min(8)
    }

    pub fn enc_in_channels(&self, i: usize) -> usize {
        if i == 1 {
            3
        } else {
            self.enc_out_channels(i - 1)
        }
    }

    /// Output channels of decoder deconv `k` (1-based): twice the mirrored
    /// encoder stage, except the final image-producing stage.
    pub fn dec_out_channels(&self, k: usize) -> usize {
        let n = self.n_stages();
        assert!((1..=n).contains(&k), "decoder stage {k}");
        if k == n {
            3
        } else {
            2 * self.enc_out_channels(n - k)
        }
    }

    /// Input channels of decoder deconv `k`: previous stage output plus the
    /// skip-connected encoder stage, or code plus style embedding for k=1.
    pub fn dec_in_channels(&self, k: usize) -> usize {
        let n = self.n_stages();
        assert!((1..=n).contains(&k), "decoder stage {k}");
        if k == 1 {
            self.enc_out_channels(n) + self.style_embed_dim
        } else {
            self.dec_out_channels(k - 1) + self.enc_out_channels(n - k + 1)
        }
    }

    /// Output channels of discriminator conv `i` (1-based, four stages).
    pub fn disc_out_channels(&self, i: usize) -> usize {
        assert!((1..=DISC_STAGES).contains(&i), "discriminator stage {i}");
        self.base_channels << (i - 1)
    }

    pub fn disc_in_channels(&self, i: usize) -> usize {
        if i == 1 {
            3
        } else {
            self.disc_out_channels(i - 1)
        }
    }

    /// Flattened feature width entering the discriminator's linear head.
    pub fn disc_fc_in(&self) -> usize {
        let side = self.canvas >> DISC_STAGES;
        side * side * self.disc_out_channels(DISC_STAGES)
    }

    /// Total trainable parameter count across generator and discriminator
    /// (batch-norm running statistics excluded). Pure function of the spec.
    pub fn param_count(&self) -> u64 {
        let n = self.n_stages();
        let k2 = (self.kernel * self.kernel) as u64;
        let mut total = 0u64;
        for i in 1..=n {
            let (ic, oc) = (self.enc_in_channels(i) as u64, self.enc_out_channels(i) as u64);
            total += ic * oc * k2 + oc;
            if i >= 2 {
                total += 2 * oc;
            }
        }
        for k in 1..=n {
            let (ic, oc) = (self.dec_in_channels(k) as u64, self.dec_out_channels(k) as u64);
            total += ic * oc * k2 + oc;
            if k < n {
                total += 2 * oc;
            }
        }
        total += 2 * (self.n_styles as u64) * 3; // conditional instance norm
        total += (self.n_styles as u64) * (self.style_embed_dim as u64);
        for i in 1..=DISC_STAGES {
            let (ic, oc) = (self.disc_in_channels(i) as u64, self.disc_out_channels(i) as u64);
            total += ic * oc * k2 + oc;
            if i >= 2 {
                total += 2 * oc;
            }
        }
        total += 3 * self.disc_fc_in() as u64 + 3;
        total
    }
}

fn accum<F: Elem>(grads: &mut GradMap<F>, name: String, g: ndarray::ArrayD<F>) {
    use std::collections::btree_map::Entry;
    match grads.entry(name) {
        Entry::Occupied(mut e) => {
            assert_eq!(e.get().shape(), g.shape(), "gradient shape for {}", e.key());
            *e.get_mut() += &g;
        }
        Entry::Vacant(v) => {
            v.insert(g);
        }
    }
}

fn shape_err(expected: impl Into<String>, got: &[usize]) -> Error {
    Error::ShapeMismatch { expected: expected.into(), got: format!("{got:?}") }
}

/// Encoder forward state needed for backward: post-norm stage outputs (also
/// the skip features), conv caches, and batch-norm caches.
pub struct EncodeCache<F: Elem> {
    outs: Vec<Array4<F>>,
    conv: Vec<ConvCache<F>>,
    bn: Vec<Option<BnCache<F>>>,
}

impl<F: Elem> EncodeCache<F> {
    /// Post-norm output of every encoder stage, 1-based stage i at index i-1.
    /// The last entry is the code.
    pub fn stage_outputs(&self) -> &[Array4<F>] {
        &self.outs
    }
}

/// Decoder forward state: per-stage pre-activation inputs, deconv and norm
/// caches, dropout masks, and the tanh output.
pub struct DecodeCache<F: Elem> {
    ins: Vec<Array4<F>>,
    deconv: Vec<DeconvCache<F>>,
    bn: Vec<Option<BnCache<F>>>,
    drop: Vec<Option<Array4<F>>>,
    cin: CinCache<F>,
    out: Array4<F>,
    style: usize,
}

impl<F: Elem> DecodeCache<F> {
    /// Pre-activation input of every decoder stage, 1-based stage k at index
    /// k-1. Stage 1's input is concat(code, style embedding); later stages
    /// see concat(previous output, skip feature).
    pub fn stage_inputs(&self) -> &[Array4<F>] {
        &self.ins
    }

    pub fn output(&self) -> &Array4<F> {
        &self.out
    }
}

/// U-shaped generator: encoder code plus a style embedding drive a deconv
/// stack whose stages each receive the mirrored encoder stage's output.
#[derive(Clone)]
pub struct Generator<F: Elem> {
    spec: ModelSpec,
    phase: Phase,
    convs: Vec<Conv2d<F>>,
    enc_bns: Vec<BatchNorm2d<F>>,
    deconvs: Vec<ConvTranspose2d<F>>,
    dec_bns: Vec<BatchNorm2d<F>>,
    cin: CondInstanceNorm<F>,
    style_embed: Array2<F>,
}

impl<F: Elem> Generator<F> {
    /// All-zero weights (norm scales at their defaults). Building block for
    /// `init` and for tests that need a degenerate model.
    pub fn zeroed(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n_stages();
        let convs = (1..=n)
            .map(|i| {
                Conv2d::new(spec.enc_out_channels(i), spec.enc_in_channels(i), spec.kernel, 2)
            })
            .collect();
        let enc_bns = (2..=n).map(|i| BatchNorm2d::new(spec.enc_out_channels(i))).collect();
        let deconvs = (1..=n)
            .map(|k| {
                ConvTranspose2d::new(
                    spec.dec_in_channels(k),
                    spec.dec_out_channels(k),
                    spec.kernel,
                    2,
                )
            })
            .collect();
        let dec_bns = (1..n).map(|k| BatchNorm2d::new(spec.dec_out_channels(k))).collect();
        Ok(Generator {
            spec: spec.clone(),
            phase: Phase::Train,
            convs,
            enc_bns,
            deconvs,
            dec_bns,
            cin: CondInstanceNorm::new(spec.n_styles, 3),
            style_embed: Array2::zeros((spec.n_styles, spec.style_embed_dim)),
        })
    }

    /// Gaussian init (weights N(0, 0.02), norm scales N(1, 0.02)) from the
    /// parameter-init stream of `seed`, substream 0.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut g = Self::zeroed(spec)?;
        let mut rng = derive(seed, Stream::ParamInit, 0);
        for c in &mut g.convs {
            c.w = normal(c.w.raw_dim(), INIT_STD, &mut rng);
        }
        for bn in &mut g.enc_bns {
            bn.gamma = normal_around(bn.gamma.raw_dim(), 1.0, INIT_STD, &mut rng);
        }
        for d in &mut g.deconvs {
            d.w = normal(d.w.raw_dim(), INIT_STD, &mut rng);
        }
        for bn in &mut g.dec_bns {
            bn.gamma = normal_around(bn.gamma.raw_dim(), 1.0, INIT_STD, &mut rng);
        }
        g.cin.gamma = normal_around(g.cin.gamma.raw_dim(), 1.0, INIT_STD, &mut rng);
        g.style_embed = normal(g.style_embed.raw_dim(), INIT_STD, &mut rng);
        Ok(g)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Batch-norm semantics for subsequent forwards. Idempotent.
    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    fn validate_input(&self, x: &Array4<F>) -> Result<()> {
        let (b, c, h, w) = x.dim();
        let cv = self.spec.canvas;
        if b == 0 || c != 3 || h != cv || w != cv {
            return Err(shape_err(format!("[B, 3, {cv}, {cv}]"), x.shape()));
        }
        Ok(())
    }

    fn encode_impl(
        &mut self,
        x: &Array4<F>,
        phase: Phase,
        update_stats: bool,
    ) -> Result<(Array4<F>, Vec<Array4<F>>, EncodeCache<F>)> {
        self.validate_input(x)?;
        let n = self.spec.n_stages();
        let slope = F::of_f64(LRELU_SLOPE);
        let mut outs = Vec::with_capacity(n);
        let mut conv_caches = Vec::with_capacity(n);
        let mut bn_caches = Vec::with_capacity(n - 1);
        let mut cur = x.clone();
        for i in 1..=n {
            let a = if i == 1 { cur } else { leaky_relu(&cur, slope) };
            let (z, cc) = self.convs[i - 1].forward_cached(&a);
            let y = if i >= 2 {
                let bn = &mut self.enc_bns[i - 2];
                let (y, bc) = match (phase, update_stats) {
                    (Phase::Train, true) => {
                        let (y, c) = bn.forward_train(&z);
                        (y, Some(c))
                    }
                    (Phase::Train, false) => {
                        let (y, c) = bn.forward_train_frozen(&z);
                        (y, Some(c))
                    }
                    (Phase::Infer, _) => (bn.forward_infer(&z), None),
                };
                bn_caches.push(bc);
                y
            } else {
                z
            };
            conv_caches.push(cc);
            outs.push(y.clone());
            cur = y;
        }
        let code = outs[n - 1].clone();
        let skips = outs[..n - 1].to_vec();
        Ok((code, skips, EncodeCache { outs, conv: conv_caches, bn: bn_caches }))
    }

    /// Encoder forward under the current phase. Returns the code, the skip
    /// features (stage outputs 1..n-1), and the backward cache.
    pub fn encode(&mut self, x: &Array4<F>) -> Result<(Array4<F>, Vec<Array4<F>>, EncodeCache<F>)> {
        self.encode_impl(x, self.phase, true)
    }

    /// Encoder forward with batch statistics that never touches the running
    /// statistics. Used to re-encode generated images for the consistency
    /// loss without perturbing inference behavior.
    pub fn reencode(&mut self, x: &Array4<F>) -> Result<(Array4<F>, Vec<Array4<F>>, EncodeCache<F>)> {
        self.encode_impl(x, Phase::Train, false)
    }

    fn validate_code_and_skips(&self, code: &Array4<F>, skips: &[Array4<F>]) -> Result<usize> {
        let n = self.spec.n_stages();
        let (b, c, h, w) = code.dim();
        if b == 0 || c != self.spec.enc_out_channels(n) || h != 1 || w != 1 {
            return Err(shape_err(
                format!("[B, {}, 1, 1]", self.spec.enc_out_channels(n)),
                code.shape(),
            ));
        }
        if skips.len() != n - 1 {
            return Err(shape_err(format!("{} skip features", n - 1), &[skips.len()]));
        }
        for (j, sk) in skips.iter().enumerate() {
            let i = j + 1;
            let side = self.spec.canvas >> i;
            let want = (b, self.spec.enc_out_channels(i), side, side);
            if sk.dim() != want {
                return Err(shape_err(
                    format!("skip {i} of shape [{}, {}, {}, {}]", want.0, want.1, want.2, want.3),
                    sk.shape(),
                ));
            }
        }
        Ok(b)
    }

    fn decode_impl(
        &mut self,
        code: &Array4<F>,
        skips: &[Array4<F>],
        style: usize,
        phase: Phase,
        update_stats: bool,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array4<F>, DecodeCache<F>)> {
        if style >= self.spec.n_styles {
            return Err(Error::UnknownStyleIndex { index: style, n_styles: self.spec.n_styles });
        }
        let b = self.validate_code_and_skips(code, skips)?;
        let n = self.spec.n_stages();
        let embed = self.spec.style_embed_dim;

        let mut styl = Array4::<F>::zeros((b, embed, 1, 1));
        for bi in 0..b {
            for (j, &e) in self.style_embed.row(style).iter().enumerate() {
                styl[[bi, j, 0, 0]] = e;
            }
        }
        let mut cur =
            ndarray::concatenate(Axis(1), &[code.view(), styl.view()]).expect("code/style concat");

        let mut ins = Vec::with_capacity(n);
        let mut deconv_caches = Vec::with_capacity(n);
        let mut bn_caches = Vec::with_capacity(n - 1);
        let mut drops = Vec::with_capacity(n - 1);
        ins.push(cur.clone());

        for k in 1..n {
            let a = relu(&cur);
            let (z, dc) = self.deconvs[k - 1].forward_cached(&a);
            deconv_caches.push(dc);
            let bn = &mut self.dec_bns[k - 1];
            let (mut h, bc) = match (phase, update_stats) {
                (Phase::Train, true) => {
                    let (h, c) = bn.forward_train(&z);
                    (h, Some(c))
                }
                (Phase::Train, false) => {
                    let (h, c) = bn.forward_train_frozen(&z);
                    (h, Some(c))
                }
                (Phase::Infer, _) => (bn.forward_infer(&z), None),
            };
            bn_caches.push(bc);
            let mask = if phase == Phase::Train
                && self.spec.dropout_p > 0.0
                && DROPOUT_STAGES.contains(&k)
            {
                let r = rng.as_deref_mut().expect("train-phase decode requires a dropout rng");
                let (hd, m) = dropout(&h, self.spec.dropout_p, r);
                h = hd;
                Some(m)
            } else {
                None
            };
            drops.push(mask);
            cur = ndarray::concatenate(Axis(1), &[h.view(), skips[n - k - 1].view()])
                .expect("skip concat");
            ins.push(cur.clone());
        }

        let a = relu(&cur);
        let (z, dc) = self.deconvs[n - 1].forward_cached(&a);
        deconv_caches.push(dc);
        let (h, cin_cache) = self.cin.forward(&z, style);
        let out = tanh(&h);
        Ok((
            out.clone(),
            DecodeCache {
                ins,
                deconv: deconv_caches,
                bn: bn_caches,
                drop: drops,
                cin: cin_cache,
                out,
                style,
            },
        ))
    }

    /// Decoder forward under the current phase. `rng` feeds the dropout
    /// masks and is required when the phase is train with dropout_p > 0.
    pub fn decode(
        &mut self,
        code: &Array4<F>,
        skips: &[Array4<F>],
        style: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array4<F>, DecodeCache<F>)> {
        self.decode_impl(code, skips, style, self.phase, true, rng)
    }

    /// encode then decode.
    pub fn generate(
        &mut self,
        x: &Array4<F>,
        style: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Array4<F>> {
        let (code, skips, _) = self.encode(x)?;
        let (y, _) = self.decode(&code, &skips, style, rng)?;
        Ok(y)
    }

    /// Forward pass pair for training: returns output plus both caches.
    pub fn forward_train(
        &mut self,
        x: &Array4<F>,
        style: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array4<F>, EncodeCache<F>, DecodeCache<F>)> {
        let (code, skips, enc) = self.encode(x)?;
        let (y, dec) = self.decode(&code, &skips, style, Some(rng))?;
        Ok((y, enc, dec))
    }

    /// Backward through the decoder given д(loss)/д(output image). Returns
    /// the gradient w.r.t. the code and the skip features; parameter
    /// gradients accumulate into `grads`.
    pub fn decoder_backward(
        &self,
        cache: &DecodeCache<F>,
        dy: &Array4<F>,
        grads: &mut GradMap<F>,
    ) -> (Array4<F>, Vec<Array4<F>>) {
        let n = self.spec.n_stages();
        let dtanh = tanh_backward(&cache.out, dy);
        let (dz, dg_cin, db_cin) = self.cin.backward(&cache.cin, &dtanh);
        accum(grads, format!("gen/deconv{n}/cin/gamma"), dg_cin.into_dyn());
        accum(grads, format!("gen/deconv{n}/cin/beta"), db_cin.into_dyn());
        let (d_act, dw, db) = self.deconvs[n - 1].backward(&cache.deconv[n - 1], &dz);
        accum(grads, format!("gen/deconv{n}/w"), dw.into_dyn());
        accum(grads, format!("gen/deconv{n}/b"), db.into_dyn());
        let mut d_in = relu_backward(&cache.ins[n - 1], &d_act);

        let mut d_skips: Vec<Option<Array4<F>>> = vec![None; n - 1];
        for k in (1..n).rev() {
            // d_in holds the gradient of stage k's concat output.
            let h_ch = self.spec.dec_out_channels(k);
            let mut dh = d_in.slice(s![.., ..h_ch, .., ..]).to_owned();
            let dskip = d_in.slice(s![.., h_ch.., .., ..]).to_owned();
            d_skips[n - k - 1] = Some(dskip);

            if let Some(mask) = &cache.drop[k - 1] {
                dh = dropout_backward(mask, &dh);
            }
            let bc = cache.bn[k - 1].as_ref().expect("decoder backward requires train caches");
            let (dz, dgamma, dbeta) = self.dec_bns[k - 1].backward(bc, &dh);
            accum(grads, format!("gen/deconv{k}/bn/gamma"), dgamma.into_dyn());
            accum(grads, format!("gen/deconv{k}/bn/beta"), dbeta.into_dyn());
            let (d_act, dw, db) = self.deconvs[k - 1].backward(&cache.deconv[k - 1], &dz);
            accum(grads, format!("gen/deconv{k}/w"), dw.into_dyn());
            accum(grads, format!("gen/deconv{k}/b"), db.into_dyn());
            d_in = relu_backward(&cache.ins[k - 1], &d_act);
        }

        // d_in is now the gradient of concat(code, style broadcast).
        let code_ch = self.spec.enc_out_channels(n);
        let d_code = d_in.slice(s![.., ..code_ch, .., ..]).to_owned();
        let d_styl = d_in.slice(s![.., code_ch.., .., ..]).to_owned();
        let mut d_embed = Array2::<F>::zeros(self.style_embed.raw_dim());
        let (b, embed, _, _) = d_styl.dim();
        for bi in 0..b {
            for j in 0..embed {
                d_embed[[cache.style, j]] = d_embed[[cache.style, j]] + d_styl[[bi, j, 0, 0]];
            }
        }
        accum(grads, "gen/style/embed".into(), d_embed.into_dyn());
        (d_code, d_skips.into_iter().map(|d| d.expect("all skips visited")).collect())
    }

    /// Backward through the encoder. `d_skips` must be one gradient per skip
    /// feature (or empty when no skip path was used, e.g. re-encoding).
    /// Returns the gradient w.r.t. the input image; parameter gradients
    /// accumulate into `grads` unless `accumulate` is false.
    pub fn encoder_backward(
        &self,
        cache: &EncodeCache<F>,
        d_code: &Array4<F>,
        d_skips: &[Array4<F>],
        grads: &mut GradMap<F>,
        accumulate: bool,
    ) -> Array4<F> {
        let n = self.spec.n_stages();
        assert!(
            d_skips.is_empty() || d_skips.len() == n - 1,
            "skip gradients: none or one per stage"
        );
        let slope = F::of_f64(LRELU_SLOPE);
        let mut dy = d_code.clone();
        for i in (1..=n).rev() {
            if i < n && !d_skips.is_empty() {
                dy += &d_skips[i - 1];
            }
            let dz = if i >= 2 {
                let bc = cache.bn[i - 2].as_ref().expect("encoder backward requires train caches");
                let (dz, dgamma, dbeta) = self.enc_bns[i - 2].backward(bc, &dy);
                if accumulate {
                    accum(grads, format!("gen/conv{i}/bn/gamma"), dgamma.into_dyn());
                    accum(grads, format!("gen/conv{i}/bn/beta"), dbeta.into_dyn());
                }
                dz
            } else {
                dy
            };
            let (d_act, dw, db) = self.convs[i - 1].backward(&cache.conv[i - 1], &dz);
            if accumulate {
                accum(grads, format!("gen/conv{i}/w"), dw.into_dyn());
                accum(grads, format!("gen/conv{i}/b"), db.into_dyn());
            }
            dy = if i >= 2 { leaky_relu_backward(&cache.outs[i - 2], &d_act, slope) } else { d_act };
        }
        dy
    }

    /// Full backward: decoder then encoder. `extra_dcode` adds a direct
    /// gradient on the code (the consistency loss's first-application term).
    /// Returns the gradient w.r.t. the input image.
    pub fn backward(
        &self,
        enc: &EncodeCache<F>,
        dec: &DecodeCache<F>,
        dy: &Array4<F>,
        extra_dcode: Option<&Array4<F>>,
        grads: &mut GradMap<F>,
    ) -> Array4<F> {
        let (mut d_code, d_skips) = self.decoder_backward(dec, dy, grads);
        if let Some(e) = extra_dcode {
            d_code += e;
        }
        self.encoder_backward(enc, &d_code, &d_skips, grads, true)
    }

    /// Every tensor as (name, view), running statistics included.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let n = self.spec.n_stages();
        let mut v: Vec<(String, ArrayViewD<'_, F>)> = Vec::new();
        for (idx, c) in self.convs.iter().enumerate() {
            let i = idx + 1;
            v.push((format!("gen/conv{i}/w"), c.w.view().into_dyn()));
            v.push((format!("gen/conv{i}/b"), c.b.view().into_dyn()));
        }
        for (idx, bn) in self.enc_bns.iter().enumerate() {
            let i = idx + 2;
            v.push((format!("gen/conv{i}/bn/gamma"), bn.gamma.view().into_dyn()));
            v.push((format!("gen/conv{i}/bn/beta"), bn.beta.view().into_dyn()));
            v.push((format!("gen/conv{i}/bn/running_mean"), bn.running_mean.view().into_dyn()));
            v.push((format!("gen/conv{i}/bn/running_var"), bn.running_var.view().into_dyn()));
        }
        for (idx, d) in self.deconvs.iter().enumerate() {
            let k = idx + 1;
            v.push((format!("gen/deconv{k}/w"), d.w.view().into_dyn()));
            v.push((format!("gen/deconv{k}/b"), d.b.view().into_dyn()));
        }
        for (idx, bn) in self.dec_bns.iter().enumerate() {
            let k = idx + 1;
            v.push((format!("gen/deconv{k}/bn/gamma"), bn.gamma.view().into_dyn()));
            v.push((format!("gen/deconv{k}/bn/beta"), bn.beta.view().into_dyn()));
            v.push((format!("gen/deconv{k}/bn/running_mean"), bn.running_mean.view().into_dyn()));
            v.push((format!("gen/deconv{k}/bn/running_var"), bn.running_var.view().into_dyn()));
        }
        v.push((format!("gen/deconv{n}/cin/gamma"), self.cin.gamma.view().into_dyn()));
        v.push((format!("gen/deconv{n}/cin/beta"), self.cin.beta.view().into_dyn()));
        v.push(("gen/style/embed".into(), self.style_embed.view().into_dyn()));
        v
    }

    /// Mutable variant of [`Generator::tensors`], same names and order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let n = self.spec.n_stages();
        let mut v: Vec<(String, ArrayViewMutD<'_, F>)> = Vec::new();
        for (idx, c) in self.convs.iter_mut().enumerate() {
            let i = idx + 1;
            v.push((format!("gen/conv{i}/w"), c.w.view_mut().into_dyn()));
            v.push((format!("gen/conv{i}/b"), c.b.view_mut().into_dyn()));
        }
        for (idx, bn) in self.enc_bns.iter_mut().enumerate() {
            let i = idx + 2;
            v.push((format!("gen/conv{i}/bn/gamma"), bn.gamma.view_mut().into_dyn()));
            v.push((format!("gen/conv{i}/bn/beta"), bn.beta.view_mut().into_dyn()));
            v.push((format!("gen/conv{i}/bn/running_mean"), bn.running_mean.view_mut().into_dyn()));
            v.push((format!("gen/conv{i}/bn/running_var"), bn.running_var.view_mut().into_dyn()));
        }
        for (idx, d) in self.deconvs.iter_mut().enumerate() {
            let k = idx + 1;
            v.push((format!("gen/deconv{k}/w"), d.w.view_mut().into_dyn()));
            v.push((format!("gen/deconv{k}/b"), d.b.view_mut().into_dyn()));
        }
        for (idx, bn) in self.dec_bns.iter_mut().enumerate() {
            let k = idx + 1;
            v.push((format!("gen/deconv{k}/bn/gamma"), bn.gamma.view_mut().into_dyn()));
            v.push((format!("gen/deconv{k}/bn/beta"), bn.beta.view_mut().into_dyn()));
            v.push((
                format!("gen/deconv{k}/bn/running_mean"),
                bn.running_mean.view_mut().into_dyn(),
            ));
            v.push((
                format!("gen/deconv{k}/bn/running_var"),
                bn.running_var.view_mut().into_dyn(),
            ));
        }
        v.push((format!("gen/deconv{n}/cin/gamma"), self.cin.gamma.view_mut().into_dyn()));
        v.push((format!("gen/deconv{n}/cin/beta"), self.cin.beta.view_mut().into_dyn()));
        v.push(("gen/style/embed".into(), self.style_embed.view_mut().into_dyn()));
        v
    }

    /// Adds `delta` to one coordinate of a named tensor. Gradient-audit hook.
    pub fn nudge(&mut self, name: &str, idx: usize, delta: F) {
        nudge_in(self.tensors_mut(), name, idx, delta);
    }
}

/// Trinary discriminator: four stride-2 convs then a linear head producing
/// logits for (real target, generated-from-source, generated-from-target).
#[derive(Clone)]
pub struct Discriminator<F: Elem> {
    spec: ModelSpec,
    phase: Phase,
    convs: Vec<Conv2d<F>>,
    bns: Vec<BatchNorm2d<F>>,
    fc: Linear<F>,
}

/// Discriminator forward state for backward.
pub struct DiscCache<F: Elem> {
    conv: Vec<ConvCache<F>>,
    bn: Vec<Option<BnCache<F>>>,
    hs: Vec<Array4<F>>,
    flat: Array2<F>,
    feat_dim: (usize, usize, usize, usize),
}

impl<F: Elem> DiscCache<F> {
    /// Pre-activation output of every conv stage, 1-based stage i at i-1.
    pub fn stage_outputs(&self) -> &[Array4<F>] {
        &self.hs
    }
}

impl<F: Elem> Discriminator<F> {
    pub fn zeroed(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let convs = (1..=DISC_STAGES)
            .map(|i| {
                Conv2d::new(spec.disc_out_channels(i), spec.disc_in_channels(i), spec.kernel, 2)
            })
            .collect();
        let bns = (2..=DISC_STAGES).map(|i| BatchNorm2d::new(spec.disc_out_channels(i))).collect();
        let fc = Linear { w: Array2::zeros((3, spec.disc_fc_in())), b: ndarray::Array1::zeros(3) };
        Ok(Discriminator { spec: spec.clone(), phase: Phase::Train, convs, bns, fc })
    }

    /// Gaussian init from the parameter-init stream of `seed`, substream 1.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut d = Self::zeroed(spec)?;
        let mut rng = derive(seed, Stream::ParamInit, 1);
        for c in &mut d.convs {
            c.w = normal(c.w.raw_dim(), INIT_STD, &mut rng);
        }
        for bn in &mut d.bns {
            bn.gamma = normal_around(bn.gamma.raw_dim(), 1.0, INIT_STD, &mut rng);
        }
        d.fc.w = normal(d.fc.w.raw_dim(), INIT_STD, &mut rng);
        Ok(d)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    fn discriminate_impl(
        &mut self,
        x: &Array4<F>,
        phase: Phase,
        update_stats: bool,
    ) -> Result<(Array2<F>, DiscCache<F>)> {
        let (b, c, h, w) = x.dim();
        let cv = self.spec.canvas;
        if b == 0 || c != 3 || h != cv || w != cv {
            return Err(shape_err(format!("[B, 3, {cv}, {cv}]"), x.shape()));
        }
        let slope = F::of_f64(LRELU_SLOPE);
        let mut conv_caches = Vec::with_capacity(DISC_STAGES);
        let mut bn_caches = Vec::with_capacity(DISC_STAGES - 1);
        let mut hs = Vec::with_capacity(DISC_STAGES);
        let mut cur = x.clone();
        for i in 1..=DISC_STAGES {
            let (z, cc) = self.convs[i - 1].forward_cached(&cur);
            conv_caches.push(cc);
            let h = if i >= 2 {
                let bn = &mut self.bns[i - 2];
                let (h, bc) = match (phase, update_stats) {
                    (Phase::Train, true) => {
                        let (h, c) = bn.forward_train(&z);
                        (h, Some(c))
                    }
                    (Phase::Train, false) => {
                        let (h, c) = bn.forward_train_frozen(&z);
                        (h, Some(c))
                    }
                    (Phase::Infer, _) => (bn.forward_infer(&z), None),
                };
                bn_caches.push(bc);
                h
            } else {
                z
            };
            hs.push(h.clone());
            cur = leaky_relu(&h, slope);
        }
        let feat_dim = cur.dim();
        let flat = cur
            .into_shape_with_order((b, feat_dim.1 * feat_dim.2 * feat_dim.3))
            .expect("contiguous features");
        let logits = self.fc.forward(&flat);
        Ok((logits, DiscCache { conv: conv_caches, bn: bn_caches, hs, flat, feat_dim }))
    }

    /// Forward under the current phase, updating batch-norm running stats
    /// when training.
    pub fn discriminate(&mut self, x: &Array4<F>) -> Result<(Array2<F>, DiscCache<F>)> {
        self.discriminate_impl(x, self.phase, true)
    }

    /// Train-statistics forward that leaves running stats untouched; used
    /// when the generator probes the discriminator.
    pub fn discriminate_frozen(&mut self, x: &Array4<F>) -> Result<(Array2<F>, DiscCache<F>)> {
        self.discriminate_impl(x, Phase::Train, false)
    }

    /// Backward from д(loss)/д(logits). Parameter gradients accumulate into
    /// `grads` (unless `accumulate` is false); returns д(loss)/д(input).
    pub fn backward(
        &self,
        cache: &DiscCache<F>,
        dlogits: &Array2<F>,
        grads: &mut GradMap<F>,
        accumulate: bool,
    ) -> Array4<F> {
        let slope = F::of_f64(LRELU_SLOPE);
        let (dflat, dw_fc, db_fc) = self.fc.backward(&cache.flat, dlogits);
        if accumulate {
            accum(grads, "disc/fc/w".into(), dw_fc.into_dyn());
            accum(grads, "disc/fc/b".into(), db_fc.into_dyn());
        }
        let mut dcur = crate::nn::c_order(dflat)
            .into_shape_with_order(cache.feat_dim)
            .expect("contiguous feature grad");
        for i in (1..=DISC_STAGES).rev() {
            let dh = leaky_relu_backward(&cache.hs[i - 1], &dcur, slope);
            let dz = if i >= 2 {
                let bc = cache.bn[i - 2].as_ref().expect("disc backward requires train caches");
                let (dz, dgamma, dbeta) = self.bns[i - 2].backward(bc, &dh);
                if accumulate {
                    accum(grads, format!("disc/conv{i}/bn/gamma"), dgamma.into_dyn());
                    accum(grads, format!("disc/conv{i}/bn/beta"), dbeta.into_dyn());
                }
                dz
            } else {
                dh
            };
            let (dx, dw, db) = self.convs[i - 1].backward(&cache.conv[i - 1], &dz);
            if accumulate {
                accum(grads, format!("disc/conv{i}/w"), dw.into_dyn());
                accum(grads, format!("disc/conv{i}/b"), db.into_dyn());
            }
            dcur = dx;
        }
        dcur
    }

    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut v: Vec<(String, ArrayViewD<'_, F>)> = Vec::new();
        for (idx, c) in self.convs.iter().enumerate() {
            let i = idx + 1;
            v.push((format!("disc/conv{i}/w"), c.w.view().into_dyn()));
            v.push((format!("disc/conv{i}/b"), c.b.view().into_dyn()));
        }
        for (idx, bn) in self.bns.iter().enumerate() {
            let i = idx + 2;
            v.push((format!("disc/conv{i}/bn/gamma"), bn.gamma.view().into_dyn()));
            v.push((format!("disc/conv{i}/bn/beta"), bn.beta.view().into_dyn()));
            v.push((format!("disc/conv{i}/bn/running_mean"), bn.running_mean.view().into_dyn()));
            v.push((format!("disc/conv{i}/bn/running_var"), bn.running_var.view().into_dyn()));
        }
        v.push(("disc/fc/w".into(), self.fc.w.view().into_dyn()));
        v.push(("disc/fc/b".into(), self.fc.b.view().into_dyn()));
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut v: Vec<(String, ArrayViewMutD<'_, F>)> = Vec::new();
        for (idx, c) in self.convs.iter_mut().enumerate() {
            let i = idx + 1;
            v.push((format!("disc/conv{i}/w"), c.w.view_mut().into_dyn()));
            v.push((format!("disc/conv{i}/b"), c.b.view_mut().into_dyn()));
        }
        for (idx, bn) in self.bns.iter_mut().enumerate() {
            let i = idx + 2;
            v.push((format!("disc/conv{i}/bn/gamma"), bn.gamma.view_mut().into_dyn()));
            v.push((format!("disc/conv{i}/bn/beta"), bn.beta.view_mut().into_dyn()));
            v.push((format!("disc/conv{i}/bn/running_mean"), bn.running_mean.view_mut().into_dyn()));
            v.push((format!("disc/conv{i}/bn/running_var"), bn.running_var.view_mut().into_dyn()));
        }
        v.push(("disc/fc/w".into(), self.fc.w.view_mut().into_dyn()));
        v.push(("disc/fc/b".into(), self.fc.b.view_mut().into_dyn()));
        v
    }

    /// Adds `delta` to one coordinate of a named tensor. Gradient-audit hook.
    pub fn nudge(&mut self, name: &str, idx: usize, delta: F) {
        nudge_in(self.tensors_mut(), name, idx, delta);
    }
}

fn nudge_in<F: Elem>(tensors: Vec<(String, ArrayViewMutD<'_, F>)>, name: &str, idx: usize, delta: F) {
    for (n, mut p) in tensors {
        if n == name {
            let s = p.as_slice_mut().expect("standard layout");
            s[idx] = s[idx] + delta;
            return;
        }
    }
    panic!("unknown tensor {name}");
}
