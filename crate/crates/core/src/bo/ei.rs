use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `z·Φ(z) + φ(z)`. The cancellation for negative `z` costs about `z²` ulps,
/// which stays harmless until `φ` underflows.
fn ei_unit(z: f64) -> f64 {
    z * std_normal_cdf(z) + std_normal_pdf(z)
}

/// Expected improvement `E[max(y − f_best, 0)]` for `y ~ N(mean, variance)`.
pub fn expected_improvement(mean: f64, variance: f64, f_best: f64) -> f64 {
    let delta = mean - f_best;
    let s = variance.max(0.0).sqrt();
    if s == 0.0 {
        return delta.max(0.0);
    }
    (s * ei_unit(delta / s)).max(0.0)
}

/// EI and its partial derivatives in `mean` and `variance`.
pub fn expected_improvement_grad(mean: f64, variance: f64, f_best: f64) -> (f64, f64, f64) {
    let delta = mean - f_best;
    let s = variance.max(0.0).sqrt();
    if s == 0.0 {
        return if delta > 0.0 { (delta, 1.0, 0.0) } else { (0.0, 0.0, 0.0) };
    }
    let z = delta / s;
    let ei = (s * ei_unit(z)).max(0.0);
    let pdf = std_normal_pdf(z);
    // ∂EI/∂mean = Φ(z), ∂EI/∂s = φ(z), ∂s/∂var = 1/(2s)
    (ei, std_normal_cdf(z), pdf / (2.0 * s))
}
