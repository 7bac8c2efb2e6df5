//! Fully connected layer.

use crate::elem::Elem;
use ndarray::{Array1, Array2, Axis};

/// `y = x · Wᵀ + b` with `w: [out, in]`, `x: [batch, in]`.
#[derive(Debug, Clone)]
pub struct Linear<F: Elem> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Elem> Linear<F> {
    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        assert_eq!(x.dim().1, self.w.dim().1, "linear input width");
        x.dot(&self.w.t()) + &self.b
    }

    /// Returns (dx, dw, db).
    pub fn backward(&self, x: &Array2<F>, dy: &Array2<F>) -> (Array2<F>, Array2<F>, Array1<F>) {
        let dx = dy.dot(&self.w);
        let dw = dy.t().dot(x);
        let db = dy.sum_axis(Axis(0));
        (dx, dw, db)
    }
}
