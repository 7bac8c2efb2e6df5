//! Loss bundle: trinary adversarial cross-entropy, encoder consistency,
//! target identity, total variation, and supervised pixel L2.
//!
//! Every loss returns its scalar value together with the analytic gradient
//! w.r.t. its tensor inputs; the training loop owns backpropagation through
//! the networks.

use crate::elem::Elem;
use crate::error::Error;
use crate::Result;
use ndarray::{Array2, Array4, ArrayD, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_gan: f64,
    pub w_const: f64,
    pub w_tid: f64,
    pub w_tv: f64,
    /// Supervised pixel loss; only valid under the Strong policy, enforced by
    /// the trainer.
    pub w_l2: f64,
}

impl Default for LossWeights {
    /// Identity gets the dominant weight; the others are order-of-magnitude
    /// defaults, not tuned values.
    fn default() -> Self {
        LossWeights {
            w_gan: 1.0,
            w_const: 1.0,
            w_tid: 10.0,
            w_tv: 0.1,
            w_l2: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_gan", self.w_gan),
            ("w_const", self.w_const),
            ("w_tid", self.w_tid),
            ("w_tv", self.w_tv),
            ("w_l2", self.w_l2),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-step loss scalars. `total_g` is the weighted generator objective;
/// `total_d` is the discriminator's own (unweighted) objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub gan_d: f64,
    pub gan_g: f64,
    pub const_term: f64,
    pub tid: f64,
    pub tv: f64,
    pub l2: f64,
    pub total_g: f64,
    pub total_d: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,gan_d,gan_g,const,tid,tv,l2,total_g,total_d";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.gan_d,
            self.gan_g,
            self.const_term,
            self.tid,
            self.tv,
            self.l2,
            self.total_g,
            self.total_d
        )
    }

    pub fn is_finite(&self) -> bool {
        [
            self.gan_d,
            self.gan_g,
            self.const_term,
            self.tid,
            self.tv,
            self.l2,
            self.total_g,
            self.total_d,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

pub fn total_generator_loss(w: &LossWeights, gan_g: f64, cons: f64, tid: f64, tv: f64, l2: f64) -> f64 {
    w.w_gan * gan_g + w.w_const * cons + w.w_tid * tid + w.w_tv * tv + w.w_l2 * l2
}

pub fn total_discriminator_loss(_w: &LossWeights, gan_d: f64) -> f64 {
    gan_d
}

/// Mean softmax cross-entropy of a `[B, K]` logit batch against one fixed
/// class. Returns the scalar and its gradient w.r.t. the logits.
pub fn softmax_ce<F: Elem>(logits: &Array2<F>, class: usize) -> (F, Array2<F>) {
    let (b_n, k) = logits.dim();
    assert!(class < k, "class index within logit width");
    let inv_b = F::of_f64(1.0 / b_n as f64);
    let mut grad = Array2::<F>::zeros((b_n, k));
    let mut loss = F::zero();
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut denom = F::zero();
        for &z in row {
            denom = denom + (z - m).exp();
        }
        loss = loss + denom.ln() - (row[class] - m);
        for (j, &z) in row.iter().enumerate() {
            let p = (z - m).exp() / denom;
            let target = if j == class { F::one() } else { F::zero() };
            grad[(i, j)] = (p - target) * inv_b;
        }
    }
    (loss * inv_b, grad)
}

/// Discriminator and generator adversarial losses with their logit gradients.
pub struct GanLosses<F: Elem> {
    pub d_loss: F,
    pub g_loss: F,
    /// d_loss gradients for the three logit batches.
    pub d_grad_real_tgt: Array2<F>,
    pub d_grad_gen_src: Array2<F>,
    pub d_grad_gen_tgt: Array2<F>,
    /// g_loss gradients for the two generated-batch logits.
    pub g_grad_gen_src: Array2<F>,
    pub g_grad_gen_tgt: Array2<F>,
}

/// Trinary objective: the discriminator classifies real target glyphs as 0,
/// G(source) as 1, and G(target) as 2. The generator pushes both generated
/// batches toward class 0 (non-saturating).
pub fn gan_losses<F: Elem>(
    d_logits_real_target: &Array2<F>,
    d_logits_gen_from_source: &Array2<F>,
    d_logits_gen_from_target: &Array2<F>,
) -> Result<GanLosses<F>> {
    for (name, l) in [
        ("real_target", d_logits_real_target),
        ("gen_from_source", d_logits_gen_from_source),
        ("gen_from_target", d_logits_gen_from_target),
    ] {
        if l.dim().1 != 3 {
            return Err(Error::ShapeMismatch {
                expected: format!("{name} logits [B, 3]"),
                got: format!("{:?}", l.dim()),
            });
        }
        if l.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!("{name} logits")));
        }
    }

    let third = F::of_f64(1.0 / 3.0);
    let half = F::of_f64(0.5);
    let (ce_real, g_real) = softmax_ce(d_logits_real_target, 0);
    let (ce_src, g_src) = softmax_ce(d_logits_gen_from_source, 1);
    let (ce_tgt, g_tgt) = softmax_ce(d_logits_gen_from_target, 2);
    let (ce_src0, gg_src) = softmax_ce(d_logits_gen_from_source, 0);
    let (ce_tgt0, gg_tgt) = softmax_ce(d_logits_gen_from_target, 0);

    Ok(GanLosses {
        d_loss: (ce_real + ce_src + ce_tgt) * third,
        g_loss: (ce_src0 + ce_tgt0) * half,
        d_grad_real_tgt: g_real * third,
        d_grad_gen_src: g_src * third,
        d_grad_gen_tgt: g_tgt * third,
        g_grad_gen_src: gg_src * half,
        g_grad_gen_tgt: gg_tgt * half,
    })
}

/// Mean squared difference and its gradient w.r.t. the first argument (the
/// gradient w.r.t. the second is its negation).
pub fn mse<F: Elem>(a: &ArrayD<F>, b: &ArrayD<F>) -> Result<(F, ArrayD<F>)> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", a.shape()),
            got: format!("{:?}", b.shape()),
        });
    }
    let n = F::of_f64(a.len() as f64);
    let diff = a - b;
    let loss = diff.mapv(|d| d * d).sum() / n;
    let grad = diff.mapv(|d| d + d) / n;
    Ok((loss, grad))
}

/// Encoder-consistency distance between `f(x)` and `f(G(x))`.
pub fn const_loss<F: Elem>(f_of_x: &ArrayD<F>, f_of_gx: &ArrayD<F>) -> Result<(F, ArrayD<F>)> {
    mse(f_of_gx, f_of_x)
}

/// Identity distance between a target-domain batch and its reconstruction.
pub fn tid_loss<F: Elem>(x_target: &ArrayD<F>, g_of_x_target: &ArrayD<F>) -> Result<(F, ArrayD<F>)> {
    mse(g_of_x_target, x_target)
}

/// Supervised pixel distance; the gradient is w.r.t. `gen`.
pub fn pixel_l2<F: Elem>(gen: &ArrayD<F>, truth: &ArrayD<F>) -> Result<(F, ArrayD<F>)> {
    mse(gen, truth)
}

/// Anisotropic total variation: sum of absolute neighbor differences along
/// both spatial axes, divided by the full element count B*C*H*W.
pub fn tv_loss<F: Elem>(img: &Array4<F>) -> Result<(F, Array4<F>)> {
    let (b_n, c_n, h, w) = img.dim();
    if h < 2 || w < 2 {
        return Err(Error::ShapeTooSmall(format!(
            "tv_loss needs spatial dims >= 2, got {h}x{w}"
        )));
    }
    let norm = F::of_f64(1.0 / (b_n * c_n * h * w) as f64);
    let mut total = F::zero();
    let mut grad = Array4::<F>::zeros((b_n, c_n, h, w));
    for b in 0..b_n {
        for c in 0..c_n {
            for r in 0..h {
                for q in 0..w {
                    let v = img[(b, c, r, q)];
                    if r + 1 < h {
                        let d = img[(b, c, r + 1, q)] - v;
                        total = total + d.abs();
                        let s = sign(d) * norm;
                        grad[(b, c, r + 1, q)] = grad[(b, c, r + 1, q)] + s;
                        grad[(b, c, r, q)] = grad[(b, c, r, q)] - s;
                    }
                    if q + 1 < w {
                        let d = img[(b, c, r, q + 1)] - v;
                        total = total + d.abs();
                        let s = sign(d) * norm;
                        grad[(b, c, r, q + 1)] = grad[(b, c, r, q + 1)] + s;
                        grad[(b, c, r, q)] = grad[(b, c, r, q)] - s;
                    }
                }
            }
        }
    }
    Ok((total * norm, grad))
}

fn sign<F: Elem>(d: F) -> F {
    if d > F::zero() {
        F::one()
    } else if d < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}
