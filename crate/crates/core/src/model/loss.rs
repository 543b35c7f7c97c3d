/// Smooth hinge: `0` for `x ≥ 1`, `½ − x` for `x ≤ 0`, `½(1 − x)²` in between.
#[inline]
pub fn smooth_hinge(x: f64) -> f64 {
    if x >= 1.0 {
        0.0
    } else if x <= 0.0 {
        0.5 - x
    } else {
        0.5 * (1.0 - x) * (1.0 - x)
    }
}

/// Derivative of [`smooth_hinge`].
#[inline]
pub fn smooth_hinge_deriv(x: f64) -> f64 {
    if x >= 1.0 {
        0.0
    } else if x <= 0.0 {
        -1.0
    } else {
        x - 1.0
    }
}
