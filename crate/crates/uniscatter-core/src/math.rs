//! Scalar helpers that work without `std`.

pub use core::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
pub use libm::{atan2, cos, exp, fabs, floor, log, pow, sin, sqrt};

/// Japanese bracket `(1 + x²)^{1/2}`.
pub fn bracket(x: f64) -> f64 {
    sqrt(1.0 + x * x)
}

/// Reduce an angle to `[0, 2π)`.
pub fn wrap_angle(t: f64) -> f64 {
    let r = t - TAU * floor(t / TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Distance between two angles on the circle.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    d.min(TAU - d)
}
