//! Minimal NN layer zoo with explicit forward caches and hand-written
//! backward passes. No autodiff framework: the graph is fixed by the
//! architecture, gradients are audited against finite differences, and
//! every op is deterministic for a fixed seed.

pub mod activ;
pub mod conv;
pub mod adam;
pub mod linear;
pub mod norm;

use crate::elem::Elem;
use ndarray::{Array, Dimension};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Batch-normalization phase. `Train` uses minibatch statistics and updates
/// running stats; `Infer` uses the stored running stats. Dropout is active
/// only in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Phase {
    Train,
    Infer,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Infer => "infer",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        match s {
            "train" => Some(Phase::Train),
            "infer" => Some(Phase::Infer),
            _ => None,
        }
    }
}

/// Gaussian init. Draws are f64 then converted, so f32 and f64 models built
/// from the same seed agree to rounding.
pub fn normal<F: Elem, D: Dimension>(
    shape: impl ndarray::ShapeBuilder<Dim = D>,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Array<F, D> {
    let dist = Normal::new(0.0f64, std).expect("std >= 0");
    Array::from_shape_simple_fn(shape, || F::of_f64(dist.sample(rng)))
}

/// Gaussian init around a constant (batch-norm scale vectors).
pub fn normal_around<F: Elem, D: Dimension>(
    shape: impl ndarray::ShapeBuilder<Dim = D>,
    mean: f64,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Array<F, D> {
    let dist = Normal::new(mean, std).expect("std >= 0");
    Array::from_shape_simple_fn(shape, || F::of_f64(dist.sample(rng)))
}

/// Uniform draw in [lo, hi) as f64.
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Forces row-major memory order, copying only when needed. `dot` results
/// are column-major whenever both operands carry unit first-axis strides
/// (any matmul whose shared inner dimension is 1), which breaks zero-copy
/// reshapes downstream.
pub(crate) fn c_order<F: Elem, D: Dimension>(a: Array<F, D>) -> Array<F, D> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}
