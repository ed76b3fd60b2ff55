use std::f64::consts::PI;
use std::io::Write;

use crate::error::{invalid, numeric, Result};
use crate::gp::linalg::{cho_solve, cholesky_in_place, solve_lower};

/// One evaluated point: `x = (ln T, ln σ)`, `y` = PSNR in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpObservation {
    pub x: [f64; 2],
    pub y: f64,
}

impl GpObservation {
    pub fn new(x: [f64; 2], y: f64) -> Result<Self> {
        if !(x[0].is_finite() && x[1].is_finite() && y.is_finite()) {
            return Err(invalid(format!("GP observation must be finite, got x={x:?}, y={y}")));
        }
        Ok(Self { x, y })
    }
}

/// Constant mean `c`, RBF output scale `s²`, length-scale `ℓ`, noise `σ_n²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub mean: f64,
    pub output_scale: f64,
    pub length_scale: f64,
    pub noise: f64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !self.mean.is_finite() || !pos(self.output_scale) || !pos(self.length_scale) || !pos(self.noise) {
            return Err(invalid(format!("invalid GP hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// Scaled squared-exponential kernel `s²·exp(−‖a−b‖²/(2ℓ²))`.
pub fn kernel(a: [f64; 2], b: [f64; 2], hp: &Hyperparams) -> f64 {
    hp.output_scale * (-sq_dist(a, b) / (2.0 * hp.length_scale * hp.length_scale)).exp()
}

pub(crate) fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (d0, d1) = (a[0] - b[0], a[1] - b[1]);
    d0 * d0 + d1 * d1
}

/// Largest diagonal jitter tried before giving up on a factorization.
pub const MAX_JITTER: f64 = 1e-4;

/// `K + σ_n² I` for the observation inputs.
pub(crate) fn gram(obs: &[GpObservation], hp: &Hyperparams) -> Vec<f64> {
    let n = obs.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(obs[i].x, obs[j].x, hp);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] += hp.noise;
    }
    k
}

/// Cholesky factor of `a`, adding diagonal jitter 1e-10, 1e-9, ... up to
/// [`MAX_JITTER`] if needed. Returns the factor and the jitter used.
pub(crate) fn factor_with_jitter(a: &[f64], n: usize) -> Option<(Vec<f64>, f64)> {
    let mut l = a.to_vec();
    if cholesky_in_place(&mut l, n) {
        return Some((l, 0.0));
    }
    let mut jitter = 1e-10;
    while jitter <= MAX_JITTER * (1.0 + 1e-9) {
        l.copy_from_slice(a);
        for i in 0..n {
            l[i * n + i] += jitter;
        }
        if cholesky_in_place(&mut l, n) {
            log::warn!("GP covariance needed diagonal jitter {jitter:e}");
            return Some((l, jitter));
        }
        jitter *= 10.0;
    }
    None
}

/// Conditioned GP with a cached factorization. Immutable once built.
#[derive(Debug, Clone)]
pub struct GpModel {
    observations: Vec<GpObservation>,
    hp: Hyperparams,
    chol: Vec<f64>,
    /// `(K + σ_n² I)⁻¹ (y − c)`.
    alpha: Vec<f64>,
    jitter: f64,
}

impl GpModel {
    pub fn new(observations: Vec<GpObservation>, hp: Hyperparams) -> Result<Self> {
        hp.validate()?;
        for o in &observations {
            GpObservation::new(o.x, o.y)?;
        }
        let n = observations.len();
        let (chol, jitter) = factor_with_jitter(&gram(&observations, &hp), n).ok_or_else(|| {
            numeric(format!("GP covariance not positive definite even with jitter {MAX_JITTER:e}"))
        })?;
        let resid: Vec<f64> = observations.iter().map(|o| o.y - hp.mean).collect();
        let alpha = cho_solve(&chol, n, &resid);
        Ok(Self { observations, hp, chol, alpha, jitter })
    }

    pub fn observations(&self) -> &[GpObservation] {
        &self.observations
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    /// Diagonal jitter the factorization needed (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn cross(&self, x: [f64; 2]) -> Vec<f64> {
        self.observations.iter().map(|o| kernel(x, o.x, &self.hp)).collect()
    }

    fn clamp_variance(v: f64) -> f64 {
        if v < 0.0 {
            if v > -1e-10 {
                log::warn!("clamping slightly negative GP variance {v:e} to 0");
            } else {
                log::warn!("GP variance {v:e} clamped to 0; conditioning is poor");
            }
            0.0
        } else {
            v
        }
    }

    /// Posterior mean (dB) and variance (dB²) at `x`.
    pub fn posterior(&self, x: [f64; 2]) -> (f64, f64) {
        let n = self.observations.len();
        let k = self.cross(x);
        let mean = self.hp.mean + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let mut v = k;
        solve_lower(&self.chol, n, &mut v);
        let var = self.hp.output_scale - v.iter().map(|a| a * a).sum::<f64>();
        (mean, Self::clamp_variance(var))
    }

    /// Posterior mean and variance together with their gradients in `x`.
    pub fn posterior_with_grad(&self, x: [f64; 2]) -> (f64, f64, [f64; 2], [f64; 2]) {
        let n = self.observations.len();
        let k = self.cross(x);
        let l2 = self.hp.length_scale * self.hp.length_scale;
        // ∂k_i/∂x = −k_i (x − x_i)/ℓ²
        let dk: Vec<[f64; 2]> = self
            .observations
            .iter()
            .zip(&k)
            .map(|(o, &ki)| [-ki * (x[0] - o.x[0]) / l2, -ki * (x[1] - o.x[1]) / l2])
            .collect();
        let mean = self.hp.mean + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let mut dmean = [0.0; 2];
        for (d, a) in dk.iter().zip(&self.alpha) {
            dmean[0] += d[0] * a;
            dmean[1] += d[1] * a;
        }
        let kinv_k = cho_solve(&self.chol, n, &k);
        let var = self.hp.output_scale - k.iter().zip(&kinv_k).map(|(a, b)| a * b).sum::<f64>();
        let mut dvar = [0.0; 2];
        for (d, w) in dk.iter().zip(&kinv_k) {
            dvar[0] -= 2.0 * d[0] * w;
            dvar[1] -= 2.0 * d[1] * w;
        }
        (mean, Self::clamp_variance(var), dmean, dvar)
    }

    /// `−½ rᵀ(K+σ_n²I)⁻¹r − ½ ln det(K+σ_n²I) − (n/2) ln 2π` with `r = y − c`.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.observations.len();
        let quad: f64 = self.observations.iter().zip(&self.alpha).map(|(o, a)| (o.y - self.hp.mean) * a).sum();
        let log_det: f64 = (0..n).map(|i| self.chol[i * n + i].ln()).sum::<f64>() * 2.0;
        -0.5 * quad - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln()
    }
}

/// Points per axis of an exported landscape.
pub const LANDSCAPE_RESOLUTION: usize = 60;

/// Writes `log_T,log_sigma,posterior_mean,posterior_std` on an `n × n`
/// lattice whose end points are the given ranges.
pub fn write_landscape_csv<W: Write>(
    model: &GpModel,
    log_t: (f64, f64),
    log_sigma: (f64, f64),
    n: usize,
    mut out: W,
) -> Result<()> {
    if n < 2 {
        return Err(invalid("landscape needs at least 2 points per axis"));
    }
    writeln!(out, "log_T,log_sigma,posterior_mean,posterior_std")?;
    let at = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    for i in 0..n {
        let lt = at(log_t, i);
        for j in 0..n {
            let ls = at(log_sigma, j);
            let (m, v) = model.posterior([lt, ls]);
            writeln!(out, "{lt},{ls},{m},{}", v.sqrt())?;
        }
    }
    Ok(())
}
