//! Batch normalization (two-phase) and conditional instance normalization.

use crate::elem::Elem;
use crate::nn::Phase;
use ndarray::{Array1, Array2, Array4, Axis};

/// Batch norm over (B, H, W) per channel. Training uses minibatch statistics
/// (biased variance) and folds them into running stats; inference uses the
/// running stats only and never mutates.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<F: Elem> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub momentum: F,
    pub eps: F,
}

pub struct BnCache<F: Elem> {
    xhat: Array4<F>,
    inv_std: Array1<F>,
}

impl<F: Elem> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::from_elem(channels, F::one()),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::from_elem(channels, F::one()),
            momentum: F::of_f64(0.9),
            eps: F::of_f64(1e-5),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Batch-statistics forward shared by the train-phase variants. Returns
    /// the output, the backward cache, and the per-channel (mean, var).
    fn batch_stats_forward(&self, x: &Array4<F>) -> (Array4<F>, BnCache<F>, Array1<F>, Array1<F>) {
        let (b_n, c_n, h, w) = x.dim();
        assert_eq!(c_n, self.channels(), "batchnorm channels");
        let n = F::of_f64((b_n * h * w) as f64);
        let mut y = x.clone();
        let mut xhat = Array4::<F>::zeros((b_n, c_n, h, w));
        let mut inv_std = Array1::<F>::zeros(c_n);
        let mut means = Array1::<F>::zeros(c_n);
        let mut vars = Array1::<F>::zeros(c_n);

        for c in 0..c_n {
            let xc = x.index_axis(Axis(1), c);
            let mean = xc.sum() / n;
            let var = xc.mapv(|v| (v - mean) * (v - mean)).sum() / n;
            let istd = F::one() / (var + self.eps).sqrt();
            inv_std[c] = istd;
            means[c] = mean;
            vars[c] = var;

            let g = self.gamma[c];
            let b = self.beta[c];
            let mut yc = y.index_axis_mut(Axis(1), c);
            let mut hc = xhat.index_axis_mut(Axis(1), c);
            ndarray::Zip::from(&mut yc).and(&mut hc).and(&xc).for_each(|yv, hv, &xv| {
                let xh = (xv - mean) * istd;
                *hv = xh;
                *yv = g * xh + b;
            });
        }
        (y, BnCache { xhat, inv_std }, means, vars)
    }

    /// Training-phase forward: normalize by batch stats, update running stats.
    pub fn forward_train(&mut self, x: &Array4<F>) -> (Array4<F>, BnCache<F>) {
        let (y, cache, means, vars) = self.batch_stats_forward(x);
        let m = self.momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = m * self.running_mean[c] + (F::one() - m) * means[c];
            self.running_var[c] = m * self.running_var[c] + (F::one() - m) * vars[c];
        }
        (y, cache)
    }

    /// Training-phase forward that leaves the running statistics untouched.
    /// Used for auxiliary passes (re-encoding a generated batch, probing the
    /// discriminator during a generator step) that must not advance the
    /// inference statistics.
    pub fn forward_train_frozen(&self, x: &Array4<F>) -> (Array4<F>, BnCache<F>) {
        let (y, cache, _, _) = self.batch_stats_forward(x);
        (y, cache)
    }

    /// Inference-phase forward: running statistics, no mutation.
    pub fn forward_infer(&self, x: &Array4<F>) -> Array4<F> {
        let c_n = self.channels();
        assert_eq!(x.dim().1, c_n, "batchnorm channels");
        let mut y = x.clone();
        for c in 0..c_n {
            let istd = F::one() / (self.running_var[c] + self.eps).sqrt();
            let mean = self.running_mean[c];
            let g = self.gamma[c];
            let b = self.beta[c];
            y.index_axis_mut(Axis(1), c).mapv_inplace(|v| g * (v - mean) * istd + b);
        }
        y
    }

    pub fn forward(&mut self, x: &Array4<F>, phase: Phase) -> (Array4<F>, Option<BnCache<F>>) {
        match phase {
            Phase::Train => {
                let (y, cache) = self.forward_train(x);
                (y, Some(cache))
            }
            Phase::Infer => (self.forward_infer(x), None),
        }
    }

    /// Backward through the training-phase forward. Returns (dx, dgamma, dbeta).
    pub fn backward(&self, cache: &BnCache<F>, dy: &Array4<F>) -> (Array4<F>, Array1<F>, Array1<F>) {
        let (b_n, c_n, h, w) = dy.dim();
        let n = F::of_f64((b_n * h * w) as f64);
        let mut dx = Array4::<F>::zeros((b_n, c_n, h, w));
        let mut dgamma = Array1::<F>::zeros(c_n);
        let mut dbeta = Array1::<F>::zeros(c_n);

        for c in 0..c_n {
            let dyc = dy.index_axis(Axis(1), c);
            let hc = cache.xhat.index_axis(Axis(1), c);
            let sum_dy = dyc.sum();
            let sum_dy_h = ndarray::Zip::from(&dyc).and(&hc).fold(F::zero(), |acc, &d, &x| acc + d * x);
            dgamma[c] = sum_dy_h;
            dbeta[c] = sum_dy;

            let k = self.gamma[c] * cache.inv_std[c] / n;
            let mut dxc = dx.index_axis_mut(Axis(1), c);
            ndarray::Zip::from(&mut dxc).and(&dyc).and(&hc).for_each(|dv, &d, &x| {
                *dv = k * (n * d - sum_dy - x * sum_dy_h);
            });
        }
        (dx, dgamma, dbeta)
    }
}

/// Conditional instance normalization: per-(sample, channel) statistics over
/// the spatial dims, with a per-style scale/shift table selected by index.
#[derive(Debug, Clone)]
pub struct CondInstanceNorm<F: Elem> {
    /// `[n_styles, channels]`
    pub gamma: Array2<F>,
    pub beta: Array2<F>,
    pub eps: F,
}

pub struct CinCache<F: Elem> {
    xhat: Array4<F>,
    inv_std: Array2<F>, // [B, C]
    style: usize,
}

impl<F: Elem> CondInstanceNorm<F> {
    pub fn new(n_styles: usize, channels: usize) -> Self {
        CondInstanceNorm {
            gamma: Array2::from_elem((n_styles, channels), F::one()),
            beta: Array2::zeros((n_styles, channels)),
            eps: F::of_f64(1e-5),
        }
    }

    pub fn n_styles(&self) -> usize {
        self.gamma.dim().0
    }

    pub fn channels(&self) -> usize {
        self.gamma.dim().1
    }

    pub fn forward(&self, x: &Array4<F>, style: usize) -> (Array4<F>, CinCache<F>) {
        let (b_n, c_n, h, w) = x.dim();
        assert!(style < self.n_styles(), "style index checked by caller");
        let m = F::of_f64((h * w) as f64);
        let mut y = Array4::<F>::zeros((b_n, c_n, h, w));
        let mut xhat = Array4::<F>::zeros((b_n, c_n, h, w));
        let mut inv_std = Array2::<F>::zeros((b_n, c_n));

        for b in 0..b_n {
            for c in 0..c_n {
                let xc = x.index_axis(Axis(0), b);
                let xc = xc.index_axis(Axis(0), c);
                let mean = xc.sum() / m;
                let var = xc.mapv(|v| (v - mean) * (v - mean)).sum() / m;
                let istd = F::one() / (var + self.eps).sqrt();
                inv_std[(b, c)] = istd;
                let g = self.gamma[(style, c)];
                let be = self.beta[(style, c)];
                for hh in 0..h {
                    for ww in 0..w {
                        let xh = (x[(b, c, hh, ww)] - mean) * istd;
                        xhat[(b, c, hh, ww)] = xh;
                        y[(b, c, hh, ww)] = g * xh + be;
                    }
                }
            }
        }
        (y, CinCache { xhat, inv_std, style })
    }

    /// Returns (dx, dgamma_full, dbeta_full); gradient rows for styles other
    /// than the cached one are zero.
    pub fn backward(&self, cache: &CinCache<F>, dy: &Array4<F>) -> (Array4<F>, Array2<F>, Array2<F>) {
        let (b_n, c_n, h, w) = dy.dim();
        let m = F::of_f64((h * w) as f64);
        let style = cache.style;
        let mut dx = Array4::<F>::zeros((b_n, c_n, h, w));
        let mut dgamma = Array2::<F>::zeros(self.gamma.dim());
        let mut dbeta = Array2::<F>::zeros(self.beta.dim());

        for b in 0..b_n {
            for c in 0..c_n {
                let mut sum_dy = F::zero();
                let mut sum_dy_h = F::zero();
                for hh in 0..h {
                    for ww in 0..w {
                        let d = dy[(b, c, hh, ww)];
                        sum_dy = sum_dy + d;
                        sum_dy_h = sum_dy_h + d * cache.xhat[(b, c, hh, ww)];
                    }
                }
                dgamma[(style, c)] = dgamma[(style, c)] + sum_dy_h;
                dbeta[(style, c)] = dbeta[(style, c)] + sum_dy;

                let k = self.gamma[(style, c)] * cache.inv_std[(b, c)] / m;
                for hh in 0..h {
                    for ww in 0..w {
                        let d = dy[(b, c, hh, ww)];
                        let xh = cache.xhat[(b, c, hh, ww)];
                        dx[(b, c, hh, ww)] = k * (m * d - sum_dy - xh * sum_dy_h);
                    }
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}
