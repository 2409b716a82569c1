//! Central finite-difference utilities used by the gradient test suites.

use crate::real::Real;

/// Central finite difference of `f` w.r.t. one slot of a mutable parameter
/// buffer owned by the closure's environment. The caller provides getters
/// and setters to avoid aliasing issues.
pub fn central_diff<F: Real>(
    mut eval: impl FnMut(F) -> F,
    x0: F,
    step: F,
) -> F {
    let hi = eval(x0 + step);
    let lo = eval(x0 - step);
    (hi - lo) / (step + step)
}

/// Relative error between an analytic and a numeric derivative, guarded for
/// near-zero denominators.
pub fn rel_err<F: Real>(analytic: F, numeric: F) -> F {
    let denom = analytic.abs().max(numeric.abs());
    if denom < F::from_f64(1e-12) {
        F::zero()
    } else {
        (analytic - numeric).abs() / denom
    }
}
