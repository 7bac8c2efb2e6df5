//! Central finite differences. Implementation-independent oracle used by
//! the layer tests and the acceptance gradient audit: it only ever sees a
//! scalar-valued closure, never the backward passes it is checking.

/// Two-sided difference quotient of `f` at `x0` with step `h`.
pub fn central_diff(h: f64, mut f: impl FnMut(f64) -> f64, x0: f64) -> f64 {
    (f(x0 + h) - f(x0 - h)) / (2.0 * h)
}

/// Relative error with an absolute floor so near-zero pairs compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (a - b).abs() / scale.max(1e-8)
    }
}

/// Central difference evaluated at `h` and `h/4`; mutual agreement certifies
/// the estimate. Disagreement means the window straddles an activation kink
/// or the value drowned in roundoff, and the probe must be discarded rather
/// than compared.
pub fn stable_central_diff(h: f64, mut f: impl FnMut(f64) -> f64, x0: f64) -> Option<f64> {
    let coarse = central_diff(h, &mut f, x0);
    let fine = central_diff(h / 4.0, &mut f, x0);
    if rel_err(coarse, fine) < 1e-5 {
        Some(fine)
    } else {
        None
    }
}

/// Analytic/numeric agreement: relative tolerance plus an absolute floor
/// under which both sides count as zero (normalization layers make some
/// parameter gradients exactly zero).
pub fn grads_agree(analytic: f64, fd: f64, rtol: f64, atol: f64) -> bool {
    rel_err(analytic, fd) < rtol || (analytic.abs() < atol && fd.abs() < atol)
}
