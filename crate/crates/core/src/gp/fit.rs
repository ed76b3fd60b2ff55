use crate::data::Rng;
use crate::error::{invalid, numeric, Result};
use crate::gp::linalg::{cho_inverse, cho_solve};
use crate::gp::model::{factor_with_jitter, gram, kernel, sq_dist, GpModel, GpObservation, Hyperparams};

/// Hyperpriors of the MAP fit.
///
/// The mean gets a normal prior; `ln s²` and `ln ℓ` get normal priors (so
/// `s²`, `ℓ` are log-normal); the noise variance gets a Gamma(shape, rate)
/// prior, optimized in log-space with its Jacobian, which puts the mode of
/// `σ_n²` at `shape / rate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperPriors {
    pub mean_mu: f64,
    pub mean_sd: f64,
    pub output_scale_median: f64,
    pub log_output_scale_sd: f64,
    pub length_scale_median: f64,
    pub log_length_scale_sd: f64,
    pub noise_shape: f64,
    pub noise_rate: f64,
}

impl Default for HyperPriors {
    fn default() -> Self {
        Self {
            mean_mu: 15.0,
            mean_sd: 4.0,
            output_scale_median: 16.0,
            log_output_scale_sd: 2.0,
            length_scale_median: 0.3,
            log_length_scale_sd: 2.0,
            noise_shape: 0.1,
            noise_rate: 100.0,
        }
    }
}

impl HyperPriors {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !self.mean_mu.is_finite()
            || ![
                self.mean_sd,
                self.output_scale_median,
                self.log_output_scale_sd,
                self.length_scale_median,
                self.log_length_scale_sd,
                self.noise_shape,
                self.noise_rate,
            ]
            .into_iter()
            .all(pos)
        {
            return Err(invalid(format!("invalid GP hyperpriors {self:?}")));
        }
        Ok(())
    }

    /// Maximizer of the hyperprior alone, in the fitting parameterization.
    pub fn modes(&self) -> Hyperparams {
        Hyperparams {
            mean: self.mean_mu,
            output_scale: self.output_scale_median,
            length_scale: self.length_scale_median,
            noise: self.noise_shape / self.noise_rate,
        }
    }

    /// Unnormalized log density of `θ = (c, ln s², ln ℓ, ln σ_n²)` and its gradient.
    fn log_density(&self, th: &[f64; 4]) -> (f64, [f64; 4]) {
        let normal = |x: f64, mu: f64, sd: f64| (-0.5 * ((x - mu) / sd).powi(2), -(x - mu) / (sd * sd));
        let (p0, g0) = normal(th[0], self.mean_mu, self.mean_sd);
        let (p1, g1) = normal(th[1], self.output_scale_median.ln(), self.log_output_scale_sd);
        let (p2, g2) = normal(th[2], self.length_scale_median.ln(), self.log_length_scale_sd);
        let e = th[3].exp();
        let p3 = self.noise_shape * th[3] - self.noise_rate * e;
        let g3 = self.noise_shape - self.noise_rate * e;
        (p0 + p1 + p2 + p3, [g0, g1, g2, g3])
    }
}

/// Which hyperparameters the fit may move; the others stay at their prior modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LearnMask {
    pub mean: bool,
    pub output_scale: bool,
    pub length_scale: bool,
    pub noise: bool,
}

impl Default for LearnMask {
    fn default() -> Self {
        Self { mean: true, output_scale: true, length_scale: true, noise: true }
    }
}

impl LearnMask {
    fn as_array(&self) -> [bool; 4] {
        [self.mean, self.output_scale, self.length_scale, self.noise]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Optimizer starts; the first is always the prior mode.
    pub restarts: usize,
    /// Quasi-Newton iterations per start. Zero returns the prior modes.
    pub iterations: usize,
    pub seed: u64,
    pub learn: LearnMask,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { restarts: 8, iterations: 200, seed: 0x6770_6669_74, learn: LearnMask::default() }
    }
}

fn to_theta(hp: &Hyperparams) -> [f64; 4] {
    [hp.mean, hp.output_scale.ln(), hp.length_scale.ln(), hp.noise.ln()]
}

fn from_theta(th: &[f64; 4]) -> Hyperparams {
    Hyperparams { mean: th[0], output_scale: th[1].exp(), length_scale: th[2].exp(), noise: th[3].exp() }
}

// keeps exp() finite and the Gram matrix meaningful
const THETA_BOUNDS: [(f64, f64); 4] = [(-1e6, 1e6), (-25.0, 25.0), (-12.0, 12.0), (-35.0, 12.0)];

/// Log marginal likelihood plus log hyperprior, with gradient in
/// `θ = (c, ln s², ln ℓ, ln σ_n²)`. `None` if the covariance cannot be factored.
fn objective(obs: &[GpObservation], priors: &HyperPriors, th: &[f64; 4]) -> Option<(f64, [f64; 4])> {
    if th.iter().zip(&THETA_BOUNDS).any(|(v, (lo, hi))| !(v >= lo && v <= hi)) {
        return None;
    }
    let hp = from_theta(th);
    let n = obs.len();
    let (mut lp, mut grad) = priors.log_density(th);
    if n == 0 {
        return Some((lp, grad));
    }
    let (l, _) = factor_with_jitter(&gram(obs, &hp), n)?;
    let r: Vec<f64> = obs.iter().map(|o| o.y - hp.mean).collect();
    let alpha = cho_solve(&l, n, &r);
    let quad: f64 = r.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let log_det: f64 = 2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>();
    lp += -0.5 * quad - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    grad[0] += alpha.iter().sum::<f64>();
    let w = cho_inverse(&l, n);
    let l2 = hp.length_scale * hp.length_scale;
    let (mut gs, mut gl, mut gn) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let m = alpha[i] * alpha[j] - w[i * n + j];
            let kf = kernel(obs[i].x, obs[j].x, &hp);
            gs += m * kf;
            gl += m * kf * sq_dist(obs[i].x, obs[j].x) / l2;
        }
        gn += alpha[i] * alpha[i] - w[i * n + i];
    }
    grad[1] += 0.5 * gs;
    grad[2] += 0.5 * gl;
    grad[3] += 0.5 * gn * hp.noise;
    if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return None;
    }
    Some((lp, grad))
}

/// Log marginal likelihood plus log hyperprior (up to a constant) at `hp`.
pub fn log_hyperposterior(obs: &[GpObservation], priors: &HyperPriors, hp: &Hyperparams) -> Option<f64> {
    objective(obs, priors, &to_theta(hp)).map(|(v, _)| v)
}

/// BFGS ascent restricted to the coordinates in `mask`.
fn ascend(
    obs: &[GpObservation],
    priors: &HyperPriors,
    start: [f64; 4],
    mask: [bool; 4],
    iterations: usize,
) -> Option<([f64; 4], f64)> {
    let idx: Vec<usize> = (0..4).filter(|&i| mask[i]).collect();
    let m = idx.len();
    let (mut f, mut g) = objective(obs, priors, &start)?;
    let mut x = start;
    if m == 0 {
        return Some((x, f));
    }
    // inverse Hessian approximation of −f on the free coordinates
    let mut h = identity(m);
    for _ in 0..iterations {
        let gm: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
        let gnorm = gm.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < 1e-9 {
            break;
        }
        let mut dir: Vec<f64> = (0..m).map(|r| (0..m).map(|c| h[r * m + c] * gm[c]).sum()).collect();
        let mut slope: f64 = dir.iter().zip(&gm).map(|(a, b)| a * b).sum();
        if !(slope > 0.0) {
            h = identity(m);
            dir = gm.clone();
            slope = gnorm * gnorm;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn = x;
            for (k, &i) in idx.iter().enumerate() {
                xn[i] = x[i] + step * dir[k];
            }
            if let Some((fnew, gnew)) = objective(obs, priors, &xn) {
                if fnew >= f + 1e-4 * step * slope {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else { break };
        let s: Vec<f64> = idx.iter().map(|&i| xn[i] - x[i]).collect();
        // ascent on f is descent on −f: y = ∇(−f)_new − ∇(−f)_old
        let y: Vec<f64> = idx.iter().map(|&i| g[i] - gnew[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let improvement = fnew - f;
        x = xn;
        f = fnew;
        g = gnew;
        if sy > 1e-12 {
            bfgs_update(&mut h, &s, &y, sy, m);
        }
        if improvement.abs() < 1e-13 * (1.0 + f.abs()) {
            break;
        }
    }
    Some((x, f))
}

fn identity(m: usize) -> Vec<f64> {
    let mut h = vec![0.0; m * m];
    for i in 0..m {
        h[i * m + i] = 1.0;
    }
    h
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, m: usize) {
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..m).map(|r| (0..m).map(|c| h[r * m + c] * y[c]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for r in 0..m {
        for c in 0..m {
            h[r * m + c] += -rho * (hy[r] * s[c] + s[r] * hy[c]) + (rho * rho * yhy + rho) * s[r] * s[c];
        }
    }
}

/// MAP hyperparameters by multi-start quasi-Newton ascent, then conditioning.
pub fn fit(observations: &[GpObservation], priors: &HyperPriors, options: &FitOptions) -> Result<GpModel> {
    priors.validate()?;
    for o in observations {
        GpObservation::new(o.x, o.y)?;
    }
    let modes = priors.modes();
    if options.iterations == 0 || observations.is_empty() {
        return GpModel::new(observations.to_vec(), modes);
    }
    let mask = options.learn.as_array();
    let base = to_theta(&modes);
    let mut starts = vec![base];
    let n = observations.len() as f64;
    let y_mean = observations.iter().map(|o| o.y).sum::<f64>() / n;
    let y_var = observations.iter().map(|o| (o.y - y_mean).powi(2)).sum::<f64>() / n;
    let mut data_start = base;
    if mask[0] {
        data_start[0] = y_mean;
    }
    if mask[1] && y_var > 0.0 {
        data_start[1] = y_var.ln().clamp(THETA_BOUNDS[1].0 + 1.0, THETA_BOUNDS[1].1 - 1.0);
    }
    starts.push(data_start);
    let root = Rng::new(options.seed);
    for s in 2..options.restarts.max(1) {
        let mut rng = root.split(s as u64);
        let mut th = base;
        let scale = [priors.mean_sd, 1.0, 1.0, 1.0];
        for i in 0..4 {
            if mask[i] {
                th[i] += scale[i] * rng.normal();
            }
        }
        starts.push(th);
    }
    starts.truncate(options.restarts.max(1));

    let mut best: Option<([f64; 4], f64)> = None;
    for (si, st) in starts.iter().enumerate() {
        match ascend(observations, priors, *st, mask, options.iterations) {
            Some((th, f)) => {
                log::debug!("GP fit start {si}: objective {f}");
                if best.is_none_or(|(_, bf)| f > bf) {
                    best = Some((th, f));
                }
            }
            None => log::debug!("GP fit start {si} not factorizable"),
        }
    }
    let (th, _) = best.ok_or_else(|| numeric("GP hyperparameter fit failed from every start"))?;
    // frozen coordinates keep their exact mode values, not an exp(ln) round trip
    let mut hp = from_theta(&th);
    if !mask[1] {
        hp.output_scale = modes.output_scale;
    }
    if !mask[2] {
        hp.length_scale = modes.length_scale;
    }
    if !mask[3] {
        hp.noise = modes.noise;
    }
    GpModel::new(observations.to_vec(), hp)
}
