//! Standard normal density, distribution function and interval masses.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `φ(t)`; zero at ±∞.
pub fn pdf(t: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// `Φ(t)`.
pub fn cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t * FRAC_1_SQRT_2)
}

/// Upper tail `1 − Φ(t)`.
pub fn sf(t: f64) -> f64 {
    0.5 * libm::erfc(t * FRAC_1_SQRT_2)
}

/// `Φ(upper) − Φ(lower)` computed from whichever tail keeps relative
/// precision for intervals far from the origin.
pub fn interval_mass(lower: f64, upper: f64) -> f64 {
    if upper <= lower {
        return 0.0;
    }
    if lower >= 0.0 {
        sf(lower) - sf(upper)
    } else if upper <= 0.0 {
        cdf(upper) - cdf(lower)
    } else {
        1.0 - cdf(lower) - sf(upper)
    }
}

/// `∫_lower^upper (a + b t) φ(t) dt`.
pub fn linear_moment(a: f64, b: f64, lower: f64, upper: f64) -> f64 {
    let mass = interval_mass(lower, upper);
    let tilt = pdf(lower) - pdf(upper);
    let tilt_term = if b == 0.0 { 0.0 } else { b * tilt };
    a * mass + tilt_term
}
