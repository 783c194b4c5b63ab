//! Central finite-difference utilities used by the test suites to verify
//! analytic gradients. Nothing here is called from any forward or backward
//! implementation path.

/// Central difference (f(x+h) - f(x-h)) / 2h.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error with an absolute floor: |a-b| / max(|a|, |b|, floor).
/// The floor absorbs finite-difference roundoff on near-zero coordinates.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
