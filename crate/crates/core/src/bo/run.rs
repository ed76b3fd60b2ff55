use std::io::Write;

use rayon::prelude::*;

use crate::bo::propose::propose_candidates;
use crate::bo::search::SearchBox;
use crate::data::Rng;
use crate::error::{invalid, Error, Result};
use crate::gp::{fit, FitOptions, GpModel, GpObservation, HyperPriors};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoConfig {
    /// Iterations after the initial design.
    pub iterations: usize,
    /// Candidates proposed per iteration.
    pub batch: usize,
    /// Concurrent objective evaluations.
    pub parallel: usize,
    pub priors: HyperPriors,
    pub fit: FitOptions,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self { iterations: 12, batch: 4, parallel: 4, priors: HyperPriors::default(), fit: FitOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalStatus {
    Ok,
    Failed,
}

impl EvalStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalStatus::Ok => "ok",
            EvalStatus::Failed => "failed",
        }
    }
}

/// One objective evaluation. Iteration 0 is the initial design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoRecord {
    pub iteration: usize,
    pub candidate_index: usize,
    pub t: f64,
    pub sigma: f64,
    pub log_t: f64,
    pub log_sigma: f64,
    pub psnr: Option<f64>,
    pub best_so_far: Option<f64>,
    pub status: EvalStatus,
}

/// Observations, incumbent and evaluation log of a run.
#[derive(Debug, Clone, Default)]
pub struct BoState {
    records: Vec<BoRecord>,
    observations: Vec<GpObservation>,
    best: Option<BoRecord>,
    iteration: usize,
}

impl BoState {
    pub fn records(&self) -> &[BoRecord] {
        &self.records
    }

    /// Successful evaluations in log coordinates.
    pub fn observations(&self) -> &[GpObservation] {
        &self.observations
    }

    /// Best successful evaluation so far.
    pub fn best(&self) -> Option<&BoRecord> {
        self.best.as_ref()
    }

    pub fn best_value(&self) -> Option<f64> {
        self.best.and_then(|b| b.psnr)
    }

    /// Completed iterations after the initial design.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn push(&mut self, iteration: usize, candidate_index: usize, x: [f64; 2], t: f64, sigma: f64, y: Option<f64>) {
        let mut rec = BoRecord {
            iteration,
            candidate_index,
            t,
            sigma,
            log_t: x[0],
            log_sigma: x[1],
            psnr: y,
            best_so_far: None,
            status: if y.is_some() { EvalStatus::Ok } else { EvalStatus::Failed },
        };
        if let Some(v) = y {
            self.observations.push(GpObservation { x, y: v });
            if self.best_value().is_none_or(|b| v > b) {
                self.best = Some(rec);
            }
        }
        rec.best_so_far = self.best_value();
        if let Some(b) = self.best.as_mut().filter(|b| b.iteration == iteration && b.candidate_index == candidate_index)
        {
            b.best_so_far = rec.best_so_far;
        }
        self.records.push(rec);
    }

    pub fn write_history_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iteration,candidate_index,T,sigma,log_T,log_sigma,psnr,best_psnr_so_far,status")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.iteration,
                r.candidate_index,
                r.t,
                r.sigma,
                r.log_t,
                r.log_sigma,
                opt(r.psnr),
                opt(r.best_so_far),
                r.status.as_str()
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BoOutcome {
    pub state: BoState,
    /// GP fitted to every successful evaluation.
    pub final_gp: Option<GpModel>,
    /// Set when every candidate of some iteration failed.
    pub aborted: Option<String>,
}

impl BoOutcome {
    /// `(T*, σ*, PSNR*)` of the incumbent.
    pub fn best(&self) -> Option<(f64, f64, f64)> {
        self.state.best().map(|b| (b.t, b.sigma, b.psnr.expect("incumbent has a value")))
    }
}

// keeps proposal streams apart from evaluation streams
const PROPOSAL_STREAM_BASE: u64 = 1 << 40;

/// Runs Bayesian optimization of `objective(T, σ, rng)`.
///
/// Evaluation number `i` (counting from 0 over the whole run) receives
/// `rng.split(i)`, so results do not depend on scheduling. `on_fit` sees every
/// GP used for proposing, with its iteration number.
pub fn bo_loop<F>(
    objective: F,
    bx: &SearchBox,
    init: &[(f64, f64)],
    config: &BoConfig,
    rng: &Rng,
    mut on_fit: impl FnMut(usize, &GpModel),
) -> Result<BoOutcome>
where
    F: Fn(f64, f64, Rng) -> Result<f64> + Sync,
{
    bx.validate()?;
    if init.is_empty() {
        return Err(invalid("initial design is empty"));
    }
    if let Some(&(t, s)) = init.iter().find(|&&(t, s)| !bx.contains(t, s)) {
        return Err(invalid(format!("initial point T={t}, sigma={s} lies outside the search box")));
    }
    if config.batch == 0 || config.parallel == 0 {
        return Err(invalid("batch and parallel must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallel)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;

    let mut state = BoState::default();
    let mut eval_index = 0u64;
    let mut evaluate = |state: &mut BoState, iteration: usize, points: Vec<(f64, f64)>| -> bool {
        let jobs: Vec<(usize, f64, f64, Rng)> =
            points.iter().enumerate().map(|(i, &(t, s))| (i, t, s, rng.split(eval_index + i as u64))).collect();
        eval_index += points.len() as u64;
        let run = |&(i, t, s, ref r): &(usize, f64, f64, Rng)| match objective(t, s, r.clone()) {
            Ok(v) if v.is_finite() => Some(v),
            Ok(v) => {
                log::warn!("iteration {iteration} candidate {i} (T={t:e}, sigma={s:e}) returned {v}");
                None
            }
            Err(e) => {
                log::warn!("iteration {iteration} candidate {i} (T={t:e}, sigma={s:e}) failed: {e}");
                None
            }
        };
        let results: Vec<Option<f64>> =
            if config.parallel > 1 { pool.install(|| jobs.par_iter().map(run).collect()) } else { jobs.iter().map(run).collect() };
        for ((i, t, s, _), y) in jobs.iter().zip(&results) {
            state.push(iteration, *i, [t.ln(), s.ln()], *t, *s, *y);
        }
        results.iter().any(Option::is_some)
    };

    if !evaluate(&mut state, 0, init.to_vec()) {
        return Ok(BoOutcome { state, final_gp: None, aborted: Some("every initial candidate failed".into()) });
    }
    for it in 1..=config.iterations {
        let gp = fit(state.observations(), &config.priors, &config.fit)?;
        on_fit(it, &gp);
        let f_best = state.best_value().expect("at least one success");
        let mut prng = rng.split(PROPOSAL_STREAM_BASE + it as u64);
        let cands = propose_candidates(&gp, f_best, bx, config.batch, &mut prng)?;
        let points: Vec<(f64, f64)> = cands.iter().map(|&x| bx.to_natural(x)).collect();
        log::info!("BO iteration {it}: {} candidates, incumbent {f_best:.3} dB", points.len());
        let ok = evaluate(&mut state, it, points);
        state.iteration = it;
        if !ok {
            return Ok(BoOutcome {
                state,
                final_gp: None,
                aborted: Some(format!("every candidate of iteration {it} failed")),
            });
        }
    }
    let final_gp = fit(state.observations(), &config.priors, &config.fit)?;
    Ok(BoOutcome { state, final_gp: Some(final_gp), aborted: None })
}
