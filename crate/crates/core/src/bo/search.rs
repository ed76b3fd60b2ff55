use crate::error::{invalid, Result};

/// Box over temperature `T` and prior scale `σ`, searched in natural-log coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub t_min: f64,
    pub t_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for SearchBox {
    fn default() -> Self {
        Self { t_min: 1e-12, t_max: 1e-2, sigma_min: 1e-10, sigma_max: 1.0 }
    }
}

impl SearchBox {
    pub fn new(t_min: f64, t_max: f64, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        let b = Self { t_min, t_max, sigma_min, sigma_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64| lo > 0.0 && lo < hi && hi.is_finite();
        if !ok(self.t_min, self.t_max) || !ok(self.sigma_min, self.sigma_max) {
            return Err(invalid(format!("search box needs 0 < min < max on both axes, got {self:?}")));
        }
        Ok(())
    }

    pub fn log_lower(&self) -> [f64; 2] {
        [self.t_min.ln(), self.sigma_min.ln()]
    }

    pub fn log_upper(&self) -> [f64; 2] {
        [self.t_max.ln(), self.sigma_max.ln()]
    }

    pub fn log_t_range(&self) -> (f64, f64) {
        (self.t_min.ln(), self.t_max.ln())
    }

    pub fn log_sigma_range(&self) -> (f64, f64) {
        (self.sigma_min.ln(), self.sigma_max.ln())
    }

    pub fn contains_log(&self, x: [f64; 2]) -> bool {
        let (lo, hi) = (self.log_lower(), self.log_upper());
        (0..2).all(|i| x[i] >= lo[i] && x[i] <= hi[i])
    }

    pub fn contains(&self, t: f64, sigma: f64) -> bool {
        t >= self.t_min && t <= self.t_max && sigma >= self.sigma_min && sigma <= self.sigma_max
    }

    pub fn project_log(&self, x: [f64; 2]) -> [f64; 2] {
        let (lo, hi) = (self.log_lower(), self.log_upper());
        [x[0].clamp(lo[0], hi[0]), x[1].clamp(lo[1], hi[1])]
    }

    /// Log-space point to `(T, σ)`, clamped so rounding in `exp` cannot leave the box.
    pub fn to_natural(&self, x: [f64; 2]) -> (f64, f64) {
        (x[0].exp().clamp(self.t_min, self.t_max), x[1].exp().clamp(self.sigma_min, self.sigma_max))
    }

    /// Maps the unit square onto the log box.
    pub fn from_unit(&self, u: [f64; 2]) -> [f64; 2] {
        let (lo, hi) = (self.log_lower(), self.log_upper());
        [lo[0] + u[0] * (hi[0] - lo[0]), lo[1] + u[1] * (hi[1] - lo[1])]
    }
}

/// The 2×2 starting design `T ∈ {1e-7, 1e-4}`, `σ ∈ {1e-6, 1e-1}`.
pub fn default_init() -> Vec<(f64, f64)> {
    let mut v = Vec::with_capacity(4);
    for &t in &[1e-7, 1e-4] {
        for &s in &[1e-6, 1e-1] {
            v.push((t, s));
        }
    }
    v
}

/// Radical inverse of `index` in `base`.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += (index % base) as f64 * f;
        index /= base;
        f *= inv;
    }
    r
}

/// First `n` points (from index 1) of the 2-D Halton sequence in bases 2, 3,
/// shifted modulo 1 by `shift`.
pub fn halton_2d(n: usize, shift: [f64; 2]) -> Vec<[f64; 2]> {
    (1..=n as u64)
        .map(|i| {
            let h = [radical_inverse(i, 2), radical_inverse(i, 3)];
            [(h[0] + shift[0]).fract(), (h[1] + shift[1]).fract()]
        })
        .collect()
}
