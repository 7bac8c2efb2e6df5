//! Adam over named tensors. Moment state is keyed by tensor name so it
//! serializes alongside the parameters and survives checkpoint round-trips.

use crate::elem::Elem;
use ndarray::{ArrayD, ArrayViewMutD};
use std::collections::BTreeMap;

/// Gradients accumulated per named tensor during one optimization step.
pub type GradMap<F> = BTreeMap<String, ArrayD<F>>;

#[derive(Debug, Clone)]
pub struct Adam<F: Elem> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    /// Steps applied so far; drives bias correction.
    pub t: u64,
    pub m: BTreeMap<String, ArrayD<F>>,
    pub v: BTreeMap<String, ArrayD<F>>,
}

impl<F: Elem> Adam<F> {
    pub fn new(lr: f64, beta1: f64) -> Self {
        Adam {
            lr: F::of_f64(lr),
            beta1: F::of_f64(beta1),
            beta2: F::of_f64(0.999),
            eps: F::of_f64(1e-8),
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Opens a new optimization step: advances the bias-correction clock.
    /// Follow with one `update` per gradient-bearing tensor.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Applies the current step's update to one named tensor in place.
    /// `begin_step` must have been called at least once.
    pub fn update(&mut self, name: &str, mut p: ArrayViewMutD<'_, F>, g: &ArrayD<F>) {
        assert!(self.t > 0, "begin_step before update");
        assert_eq!(p.shape(), g.shape(), "gradient shape for {name}");
        let b1 = self.beta1;
        let b2 = self.beta2;
        let bc1 = F::one() - b1.powi(self.t as i32);
        let bc2 = F::one() - b2.powi(self.t as i32);
        let m = self
            .m
            .entry(name.to_owned())
            .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
        let v = self
            .v
            .entry(name.to_owned())
            .or_insert_with(|| ArrayD::zeros(g.raw_dim()));
        ndarray::Zip::from(&mut p).and(m).and(v).and(g).for_each(|pv, mv, vv, &gv| {
            *mv = b1 * *mv + (F::one() - b1) * gv;
            *vv = b2 * *vv + (F::one() - b2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *pv = *pv - self.lr * mhat / (vhat.sqrt() + self.eps);
        });
    }

    /// Applies one update to every tensor named in `grads`. `params` entries
    /// without a gradient are left untouched (frozen layers, running stats).
    pub fn step(&mut self, params: &mut BTreeMap<String, ArrayD<F>>, grads: &GradMap<F>) {
        self.begin_step();
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown tensor {name}"));
            self.update(name, p.view_mut(), g);
        }
    }
}
