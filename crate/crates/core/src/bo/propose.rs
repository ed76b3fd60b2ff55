use crate::bo::ei::expected_improvement_grad;
use crate::bo::search::{halton_2d, SearchBox};
use crate::data::Rng;
use crate::error::{invalid, Result};
use crate::gp::GpModel;

/// Starts of the acquisition ascent: half quasi-random, half their point
/// reflections through the box center.
pub const ACQ_STARTS: usize = 64;
/// Local maxima closer than this (log units) are merged.
pub const MERGE_RADIUS: f64 = 0.05;
/// Below this every EI value counts as zero.
pub const EI_FLOOR: f64 = 1e-12;

const ASCENT_ITERS: usize = 300;
const NEWTON_ITERS: usize = 8;

fn ei_at(gp: &GpModel, f_best: f64, x: [f64; 2]) -> (f64, [f64; 2]) {
    let (m, v, dm, dv) = gp.posterior_with_grad(x);
    let (ei, de_dm, de_dv) = expected_improvement_grad(m, v, f_best);
    (ei, [de_dm * dm[0] + de_dv * dv[0], de_dm * dm[1] + de_dv * dv[1]])
}

/// EI at a log-space point under `gp` with incumbent `f_best`.
pub fn acquisition(gp: &GpModel, f_best: f64, x: [f64; 2]) -> f64 {
    ei_at(gp, f_best, x).0
}

/// Coordinates that are pinned at a bound with the gradient pointing out.
fn pinned(bx: &SearchBox, x: [f64; 2], g: [f64; 2]) -> [bool; 2] {
    let (lo, hi) = (bx.log_lower(), bx.log_upper());
    [0, 1].map(|i| (x[i] <= lo[i] && g[i] < 0.0) || (x[i] >= hi[i] && g[i] > 0.0))
}

/// Projected ascent with normalized steps and backtracking, then Newton
/// refinement on the free coordinates with a finite-difference Hessian.
fn local_max(gp: &GpModel, f_best: f64, bx: &SearchBox, start: [f64; 2]) -> ([f64; 2], f64) {
    let mut x = bx.project_log(start);
    let (mut f, mut g) = ei_at(gp, f_best, x);
    let mut step = 1.0;
    for _ in 0..ASCENT_ITERS {
        let pin = pinned(bx, x, g);
        let d = [if pin[0] { 0.0 } else { g[0] }, if pin[1] { 0.0 } else { g[1] }];
        let norm = d[0].hypot(d[1]);
        if !(norm > 0.0) {
            break;
        }
        let mut moved = false;
        while step > 1e-12 {
            let xn = bx.project_log([x[0] + step * d[0] / norm, x[1] + step * d[1] / norm]);
            let (fnew, gnew) = ei_at(gp, f_best, xn);
            if fnew > f {
                x = xn;
                f = fnew;
                g = gnew;
                moved = true;
                step = (step * 2.0).min(4.0);
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }

    let h = 1e-5;
    for _ in 0..NEWTON_ITERS {
        let pin = pinned(bx, x, g);
        let free: Vec<usize> = (0..2).filter(|&i| !pin[i]).collect();
        if free.is_empty() {
            break;
        }
        let mut hess = [[0.0; 2]; 2];
        for &j in &free {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let gp_ = ei_at(gp, f_best, xp).1;
            let gm_ = ei_at(gp, f_best, xm).1;
            for &i in &free {
                hess[i][j] = (gp_[i] - gm_[i]) / (2.0 * h);
            }
        }
        let delta = if free.len() == 2 {
            let a = [[hess[0][0], 0.5 * (hess[0][1] + hess[1][0])], [0.5 * (hess[0][1] + hess[1][0]), hess[1][1]]];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            // require negative definiteness
            if !(a[0][0] < 0.0 && det > 0.0) {
                break;
            }
            [-(a[1][1] * g[0] - a[0][1] * g[1]) / det, -(-a[1][0] * g[0] + a[0][0] * g[1]) / det]
        } else {
            let i = free[0];
            if !(hess[i][i] < 0.0) {
                break;
            }
            let mut d = [0.0; 2];
            d[i] = -g[i] / hess[i][i];
            d
        };
        let xn = bx.project_log([x[0] + delta[0], x[1] + delta[1]]);
        let (fnew, gnew) = ei_at(gp, f_best, xn);
        if !(fnew >= f) || xn == x {
            break;
        }
        x = xn;
        f = fnew;
        g = gnew;
        if delta[0].hypot(delta[1]) < 1e-12 {
            break;
        }
    }
    (x, f)
}

/// Up to `k` distinct local maximizers of EI in the log box, best first.
///
/// Falls back to the start with the largest posterior variance when EI is
/// numerically zero everywhere it was probed.
pub fn propose_candidates(gp: &GpModel, f_best: f64, bx: &SearchBox, k: usize, rng: &mut Rng) -> Result<Vec<[f64; 2]>> {
    bx.validate()?;
    if k == 0 {
        return Err(invalid("candidate batch size must be at least 1"));
    }
    if !f_best.is_finite() {
        return Err(invalid(format!("incumbent must be finite, got {f_best}")));
    }
    let shift = [rng.uniform(), rng.uniform()];
    let (lo, hi) = (bx.log_lower(), bx.log_upper());
    let half: Vec<[f64; 2]> = halton_2d(ACQ_STARTS / 2, shift).into_iter().map(|u| bx.from_unit(u)).collect();
    let mirrored: Vec<[f64; 2]> = half.iter().map(|s| [lo[0] + hi[0] - s[0], lo[1] + hi[1] - s[1]]).collect();
    let starts: Vec<[f64; 2]> = half.into_iter().chain(mirrored).collect();
    let mut maxima: Vec<([f64; 2], f64)> = starts.iter().map(|&s| local_max(gp, f_best, bx, s)).collect();

    if maxima.iter().all(|&(_, e)| !(e > EI_FLOOR)) {
        let best = starts
            .iter()
            .map(|&s| (s, gp.posterior(s).1))
            .fold(None, |acc: Option<([f64; 2], f64)>, c| match acc {
                Some(a) if a.1 >= c.1 => Some(a),
                _ => Some(c),
            })
            .expect("at least one start");
        log::info!("expected improvement vanishes everywhere; taking the max-variance point {:?}", best.0);
        return Ok(vec![best.0]);
    }

    maxima.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut picked: Vec<[f64; 2]> = Vec::with_capacity(k);
    for (x, e) in maxima {
        if picked.len() == k || !(e > EI_FLOOR) {
            break;
        }
        if picked.iter().all(|p| (p[0] - x[0]).hypot(p[1] - x[1]) > MERGE_RADIUS) {
            picked.push(x);
        }
    }
    Ok(picked)
}
