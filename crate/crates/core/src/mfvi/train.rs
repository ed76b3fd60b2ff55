use std::io::Write;
use std::sync::Arc;

use crate::data::{Image, Rng};
use crate::error::{invalid, Error, Result};
use crate::metrics::psnr;
use crate::mfvi::{predict_mean_weights, tempered_loss, DipNetwork, ObjectiveMode, VariationalParams};
use crate::radon::{RadonOperator, Sinogram};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub iterations: usize,
    pub learning_rate: T,
    /// Weight samples averaged per step.
    pub mc_train_samples: usize,
    pub mode: ObjectiveMode<T>,
    /// History is recorded every `log_every` steps and after the last one.
    pub log_every: usize,
    /// The learning rate ramps up linearly over this many steps.
    pub warmup: usize,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn new(mode: ObjectiveMode<T>) -> Self {
        Self { iterations: 5000, learning_rate: T::lit(3e-3), mc_train_samples: 1, mode, log_every: 50, warmup: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= T::zero() && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        if self.mc_train_samples == 0 || self.log_every == 0 {
            return Err(invalid("mc_train_samples and log_every must be positive"));
        }
        self.mode.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    /// Number of parameter updates applied before this record.
    pub iteration: usize,
    /// Objective at the current parameters, for the step's weight sample.
    pub loss: f64,
    /// PSNR of the mean-weight output against the reference, if one was given.
    pub psnr: Option<f64>,
}

pub fn write_history_csv<W: Write>(history: &[HistoryEntry], mut out: W) -> Result<()> {
    writeln!(out, "iteration,loss,psnr")?;
    for h in history {
        match h.psnr {
            Some(p) => writeln!(out, "{},{},{}", h.iteration, h.loss, p)?,
            None => writeln!(out, "{},{},", h.iteration, h.loss)?,
        }
    }
    Ok(())
}

/// Adam state for one flat parameter vector.
struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl<T: Scalar> Adam<T> {
    fn new(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n] }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], lr: T, t: i32) {
        let (b1, b2) = (T::lit(BETA1), T::lit(BETA2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let eps = T::lit(ADAM_EPS);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: VariationalParams<T>,
    pub history: Vec<HistoryEntry>,
}

/// Adam descent on the objective of `config.mode`.
///
/// Deterministic mode updates only the means. The run is a pure function of
/// its inputs: all weight noise comes from `rng`.
pub fn train<T: Scalar>(
    net: &DipNetwork<T>,
    init: VariationalParams<T>,
    config: &TrainConfig<T>,
    operator: &Arc<RadonOperator<T>>,
    sinogram: &Sinogram<T>,
    reference: Option<&Image<T>>,
    rng: &mut Rng,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    init.check_compatible(net)?;
    if let Some(r) = reference {
        if r.width() != net.image_size() || r.height() != net.image_size() {
            return Err(invalid("reference image size differs from the network output"));
        }
    }
    let bayesian = config.mode.is_bayesian();
    let mut params = init;
    let mut adam_mu: Vec<Adam<T>> = params.tensors().iter().map(|t| Adam::new(t.mu.len())).collect();
    let mut adam_rho: Vec<Adam<T>> = params.tensors().iter().map(|t| Adam::new(t.rho.len())).collect();
    let mut history = Vec::new();
    let mut last_good: Option<usize> = None;

    let record = |iteration: usize, loss: T, params: &VariationalParams<T>| -> Result<HistoryEntry> {
        let psnr = match reference {
            Some(r) => {
                let out = predict_mean_weights(net, params)?;
                Some(psnr(&out, r, T::one())?.to_f64_lossy())
            }
            None => None,
        };
        Ok(HistoryEntry { iteration, loss: loss.to_f64_lossy(), psnr })
    };
    let diverged = |iteration, last_good| Error::Diverged { iteration, last_good_iteration: last_good };

    for it in 0..=config.iterations {
        let is_last = it == config.iterations;
        let logging = it % config.log_every == 0 || is_last;
        if is_last && !logging {
            break;
        }
        let mut lg = match tempered_loss(net, &params, &config.mode, operator, sinogram, config.mc_train_samples, rng) {
            Ok(lg) => lg,
            Err(Error::Numeric(msg)) => {
                log::warn!("non-finite forward pass at iteration {it}: {msg}");
                return Err(diverged(it, last_good));
            }
            Err(e) => return Err(e),
        };
        let loss = lg.loss_value();
        if !loss.is_finite() {
            return Err(diverged(it, last_good));
        }
        last_good = Some(it);
        if logging {
            history.push(record(it, loss, &params)?);
        }
        if is_last {
            break;
        }
        if let Err(e) = lg.graph.backward(lg.loss) {
            log::warn!("non-finite gradient at iteration {it}: {e}");
            return Err(diverged(it, last_good));
        }
        let step = i32::try_from(it + 1).unwrap_or(i32::MAX);
        let lr = if it < config.warmup {
            config.learning_rate * T::from_usize(it + 1).expect("small count") / T::from_usize(config.warmup).expect("small count")
        } else {
            config.learning_rate
        };
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            let g = lg.graph.grad(lg.params.mu[i]).expect("leaf gradient");
            adam_mu[i].step(t.mu.data_mut(), g.data(), lr, step);
            if bayesian {
                let g = lg.graph.grad(lg.params.rho[i]).expect("leaf gradient");
                adam_rho[i].step(t.rho.data_mut(), g.data(), lr, step);
            }
        }
    }
    Ok(TrainOutcome { params, history })
}
