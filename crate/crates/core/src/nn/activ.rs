//! Pointwise activations and inverted dropout, with explicit backward passes.

use crate::elem::Elem;
use ndarray::{Array, Dimension};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn relu<F: Elem, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Gradient w.r.t. the input of `relu`, given the pre-activation `x`.
pub fn relu_backward<F: Elem, D: Dimension>(x: &Array<F, D>, dy: &Array<F, D>) -> Array<F, D> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(x).for_each(|d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

pub fn leaky_relu<F: Elem, D: Dimension>(x: &Array<F, D>, slope: F) -> Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { slope * v })
}

pub fn leaky_relu_backward<F: Elem, D: Dimension>(x: &Array<F, D>, dy: &Array<F, D>, slope: F) -> Array<F, D> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(x).for_each(|d, &v| {
        if v <= F::zero() {
            *d = *d * slope;
        }
    });
    dx
}

pub fn tanh<F: Elem, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| v.tanh())
}

/// Gradient w.r.t. the input of `tanh`, given the activation output `y`.
pub fn tanh_backward<F: Elem, D: Dimension>(y: &Array<F, D>, dy: &Array<F, D>) -> Array<F, D> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(y).for_each(|d, &v| {
        *d = *d * (F::one() - v * v);
    });
    dx
}

/// Inverted dropout: kept units are scaled by 1/(1-p) so inference needs no
/// rescaling. Returns the output and the already-scaled mask; backward is a
/// pointwise multiply by that mask.
pub fn dropout<F: Elem, D: Dimension>(
    x: &Array<F, D>,
    p: f64,
    rng: &mut ChaCha8Rng,
) -> (Array<F, D>, Array<F, D>) {
    assert!((0.0..1.0).contains(&p), "dropout p in [0, 1)");
    let keep = F::of_f64(1.0 / (1.0 - p));
    let mask = x.mapv(|_| {
        if rng.random::<f64>() < p {
            F::zero()
        } else {
            keep
        }
    });
    (x * &mask, mask)
}

pub fn dropout_backward<F: Elem, D: Dimension>(mask: &Array<F, D>, dy: &Array<F, D>) -> Array<F, D> {
    dy * mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, rel_err};
    use crate::nn::normal;
    use ndarray::{ArrayD, IxDyn};
    use rand::SeedableRng;

    fn sample(seed: u64, n: usize) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        normal(IxDyn(&[n]), 1.0, &mut rng)
    }

    #[test]
    fn relu_and_leaky_relu_values() {
        let x = ndarray::arr1(&[-2.0, 0.0, 3.0]).into_dyn();
        assert_eq!(relu(&x), ndarray::arr1(&[0.0, 0.0, 3.0]).into_dyn());
        assert_eq!(
            leaky_relu(&x, 0.2),
            ndarray::arr1(&[-0.4, 0.0, 3.0]).into_dyn()
        );
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        let x = sample(10, 40);
        let z = sample(11, 40);
        let cases: Vec<(Box<dyn Fn(&ArrayD<f64>) -> ArrayD<f64>>, ArrayD<f64>)> = vec![
            (Box::new(|x: &ArrayD<f64>| relu(x)), relu_backward(&x, &z)),
            (
                Box::new(|x: &ArrayD<f64>| leaky_relu(x, 0.2)),
                leaky_relu_backward(&x, &z, 0.2),
            ),
            (
                Box::new(|x: &ArrayD<f64>| tanh(x)),
                tanh_backward(&tanh(&x), &z),
            ),
        ];
        for (f, dx) in cases {
            for i in 0..x.len() {
                // relu kinks at 0 break the FD estimate, and coordinates with a
                // near-zero downstream weight drown in cancellation noise.
                if x.as_slice().unwrap()[i].abs() < 1e-3 || z.as_slice().unwrap()[i].abs() < 1e-2 {
                    continue;
                }
                let mut xm = x.clone();
                let x0 = x.as_slice().unwrap()[i];
                let fd = central_diff(1e-5, |v| {
                    xm.as_slice_mut().unwrap()[i] = v;
                    (&f(&xm) * &z).sum()
                }, x0);
                assert!(rel_err(dx.as_slice().unwrap()[i], fd) < 1e-6);
            }
        }
    }

    #[test]
    fn dropout_scales_kept_units_and_masks_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = ArrayD::from_elem(IxDyn(&[10_000]), 1.0f64);
        let (y, mask) = dropout(&x, 0.5, &mut rng);
        let kept = y.iter().filter(|v| **v != 0.0).count();
        assert!((kept as f64 / 10_000.0 - 0.5).abs() < 0.03);
        assert!(y.iter().all(|v| *v == 0.0 || (*v - 2.0).abs() < 1e-12));
        // E[y] preserves E[x].
        assert!((y.sum() / 10_000.0 - 1.0).abs() < 0.1);

        let dy = ArrayD::from_elem(IxDyn(&[10_000]), 3.0f64);
        let dx = dropout_backward(&mask, &dy);
        for i in 0..dx.len() {
            let expect = if y.as_slice().unwrap()[i] == 0.0 { 0.0 } else { 6.0 };
            assert_eq!(dx.as_slice().unwrap()[i], expect);
        }
    }

    #[test]
    fn dropout_is_deterministic_per_rng_stream() {
        let x = sample(13, 64);
        let (y1, _) = dropout(&x, 0.5, &mut ChaCha8Rng::seed_from_u64(7));
        let (y2, _) = dropout(&x, 0.5, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(y1, y2);
    }
}
