use crate::autodiff::Tensor;

/// Central-difference step used by every gradient check.
pub const FD_STEP: f64 = 1e-5;

/// Maximum accepted relative error between analytic and numeric gradients.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Entries whose analytic and numeric magnitudes both sit below this floor
/// are compared absolutely; roundoff in the difference quotient is around
/// `1e-10` at `FD_STEP`, which would otherwise dominate the ratio.
const RELATIVE_FLOOR: f64 = 1e-6;

/// Numeric gradient of `f` at `at` by central differences.
pub fn central_difference(at: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = at.clone();
    let mut out = Tensor::zeros(at.rows(), at.cols());
    for k in 0..at.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + step;
        let plus = f(&probe);
        probe.data_mut()[k] = orig - step;
        let minus = f(&probe);
        probe.data_mut()[k] = orig;
        out.data_mut()[k] = (plus - minus) / (2.0 * step);
    }
    out
}

/// `|a - n| / max(|a|, |n|, floor)` for one entry, with a fixed small floor.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, RELATIVE_FLOOR)
}

pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / scale
}

/// Smallest gradient magnitude a central difference with `step` of a function
/// near `value` resolves to [`GRAD_TOLERANCE`].
///
/// Evaluating `f` carries roundoff of about `EPSILON * |value|`, so the
/// difference quotient is uncertain by `EPSILON * |value| / step`. Entries
/// below the returned floor are held to ten times that uncertainty in
/// absolute terms instead.
pub fn resolution_floor(value: f64, step: f64) -> f64 {
    let noise = f64::EPSILON * value.abs().max(1.0) / step;
    (10.0 * noise / GRAD_TOLERANCE).max(RELATIVE_FLOOR)
}
