//! Geometric input augmentation: per-image random shift and scale about the
//! canvas center, resampled bilinearly over a constant background fill.

use ndarray::Array4;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elem::Elem;
use crate::error::Error;
use crate::Result;
use crate::nn::uniform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Maximum absolute shift along each axis, in pixels.
    pub max_shift_px: usize,
    /// Uniform scale-factor range about the canvas center; must bracket 1.
    pub scale_range: (f64, f64),
    /// Background value for samples that fall outside the canvas.
    pub fill: f64,
}

impl AugmentConfig {
    /// Defaults proportional to the canvas: shifts up to canvas/32 pixels
    /// (8 at 256) and scales in [0.9, 1.1], over a white (+1) background.
    pub fn for_canvas(canvas: usize) -> Self {
        AugmentConfig {
            enabled: true,
            max_shift_px: canvas / 32,
            scale_range: (0.9, 1.1),
            fill: 1.0,
        }
    }

    pub fn disabled() -> Self {
        AugmentConfig {
            enabled: false,
            max_shift_px: 0,
            scale_range: (1.0, 1.0),
            fill: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= 1.0 && 1.0 <= hi) {
            return Err(Error::InvalidConfig(format!(
                "augment scale_range must satisfy 0 < lo <= 1 <= hi, got ({lo}, {hi})"
            )));
        }
        if !(self.fill.is_finite() && (-1.0..=1.0).contains(&self.fill)) {
            return Err(Error::InvalidConfig(format!(
                "augment fill must lie in [-1, 1], got {}",
                self.fill
            )));
        }
        Ok(())
    }
}

/// Applies an independent random shift and scale to every image in the
/// batch. Per image the draw order is fixed — dx, dy, then scale — so a
/// given rng state maps to exactly one transform sequence. Output pixel
/// (r, c) bilinearly samples the input at the inverse-transformed location;
/// taps outside the canvas read `fill`. Values stay inside the input range
/// (bilinear weights are a convex combination). Disabled configs return the
/// input bitwise unchanged without consuming rng draws.
pub fn augment<F: Elem>(batch: &Array4<F>, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Array4<F> {
    if !cfg.enabled {
        return batch.clone();
    }
    let (b, ch, h, w) = batch.dim();
    let mut out = Array4::from_elem((b, ch, h, w), F::of_f64(cfg.fill));
    let s = cfg.max_shift_px as f64;
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    for bi in 0..b {
        let dx = uniform(rng, -s, s);
        let dy = uniform(rng, -s, s);
        let scale = uniform(rng, cfg.scale_range.0, cfg.scale_range.1);
        for r in 0..h {
            let yi = (r as f64 - cy - dy) / scale + cy;
            let y0f = yi.floor();
            let fy = yi - y0f;
            let y0 = y0f as isize;
            for c in 0..w {
                let xi = (c as f64 - cx - dx) / scale + cx;
                let x0f = xi.floor();
                let fx = xi - x0f;
                let x0 = x0f as isize;
                for k in 0..ch {
                    let tap = |yy: isize, xx: isize| -> f64 {
                        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                            cfg.fill
                        } else {
                            batch[(bi, k, yy as usize, xx as usize)].as_f64()
                        }
                    };
                    let v = tap(y0, x0) * (1.0 - fy) * (1.0 - fx)
                        + tap(y0, x0 + 1) * (1.0 - fy) * fx
                        + tap(y0 + 1, x0) * fy * (1.0 - fx)
                        + tap(y0 + 1, x0 + 1) * fy * fx;
                    out[(bi, k, r, c)] = F::of_f64(v);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngs::{derive, Stream};
    use proptest::prelude::*;

    fn test_batch(b: usize, hw: usize, seed: u64) -> Array4<f32> {
        let mut rng = derive(seed, Stream::Probe, 17);
        Array4::from_shape_simple_fn((b, 3, hw, hw), || uniform(&mut rng, -1.0, 1.0) as f32)
    }

    #[test]
    fn disabled_config_returns_the_input_bitwise() {
        let x = test_batch(2, 8, 1);
        let mut rng = derive(0, Stream::Augment, 0);
        let y = augment(&x, &AugmentConfig::disabled(), &mut rng);
        assert_eq!(x, y);
    }

    #[test]
    fn forced_identity_transform_reproduces_the_input() {
        let x = test_batch(3, 16, 2);
        let cfg = AugmentConfig {
            enabled: true,
            max_shift_px: 0,
            scale_range: (1.0, 1.0),
            fill: 1.0,
        };
        let mut rng = derive(0, Stream::Augment, 5);
        let y = augment(&x, &cfg, &mut rng);
        let worst = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 1e-6, "identity transform drifted by {worst}");
    }

    #[test]
    fn same_rng_state_gives_bitwise_identical_output() {
        let x = test_batch(2, 12, 3);
        let cfg = AugmentConfig::for_canvas(12);
        let a = augment(&x, &cfg, &mut derive(9, Stream::Augment, 4));
        let b = augment(&x, &cfg, &mut derive(9, Stream::Augment, 4));
        let c = augment(&x, &cfg, &mut derive(9, Stream::Augment, 5));
        assert_eq!(a, b);
        assert_ne!(a, c, "different rng counters should give different draws");
    }

    #[test]
    fn shrinking_an_all_ink_image_leaves_a_fill_border() {
        let x = Array4::<f32>::from_elem((1, 3, 16, 16), -1.0);
        let cfg = AugmentConfig {
            enabled: true,
            max_shift_px: 0,
            scale_range: (0.5, 0.5),
            fill: 1.0,
        };
        let y = augment(&x, &cfg, &mut derive(0, Stream::Augment, 0));
        assert_eq!(y[(0, 0, 0, 0)], 1.0, "corner should be pure fill");
        assert_eq!(y[(0, 0, 8, 8)], -1.0, "center should stay ink");
    }

    #[test]
    fn positive_shift_exposes_fill_on_the_leading_edge() {
        let x = Array4::<f32>::from_elem((1, 3, 16, 16), -1.0);
        let cfg = AugmentConfig {
            enabled: true,
            max_shift_px: 4,
            scale_range: (1.0, 1.0),
            fill: 1.0,
        };
        // Replay the augment draw order to learn this image's shift.
        let mut probe = derive(11, Stream::Augment, 2);
        let dx = uniform(&mut probe, -4.0, 4.0);
        let dy = uniform(&mut probe, -4.0, 4.0);
        let y = augment(&x, &cfg, &mut derive(11, Stream::Augment, 2));
        // Columns strictly more than one pixel outside the shifted glyph
        // have all four taps out of range, so they are pure fill.
        for r in 0..16usize {
            for c in 0..16usize {
                let xi = c as f64 - dx;
                let yi = r as f64 - dy;
                if xi < -1.0 || yi < -1.0 || xi > 16.0 || yi > 16.0 {
                    assert_eq!(y[(0, 0, r, c)], 1.0, "expected fill at ({r},{c})");
                }
            }
        }
        assert!(y.iter().any(|&v| v == 1.0), "shift should expose some fill");
        assert!(y.iter().any(|&v| v == -1.0), "glyph ink should survive");
    }

    #[test]
    fn validate_rejects_bad_scale_ranges_and_fill() {
        let mut cfg = AugmentConfig::for_canvas(256);
        assert_eq!(cfg.max_shift_px, 8);
        cfg.validate().unwrap();
        cfg.scale_range = (1.1, 0.9);
        assert!(cfg.validate().is_err());
        cfg.scale_range = (0.0, 1.1);
        assert!(cfg.validate().is_err());
        cfg.scale_range = (0.9, 1.1);
        cfg.fill = 1.5;
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn augmentation_preserves_shape_and_value_range(
            seed in 0u64..1000,
            max_shift in 0usize..5,
            lo in 0.7f64..=1.0,
            hi in 1.0f64..1.4,
        ) {
            let x = test_batch(2, 10, seed);
            let cfg = AugmentConfig { enabled: true, max_shift_px: max_shift, scale_range: (lo, hi), fill: 1.0 };
            let y = augment(&x, &cfg, &mut derive(seed, Stream::Augment, 0));
            prop_assert_eq!(y.dim(), x.dim());
            for &v in y.iter() {
                prop_assert!((-1.0..=1.0).contains(&(v as f64)), "value {} out of range", v);
            }
        }
    }
}
