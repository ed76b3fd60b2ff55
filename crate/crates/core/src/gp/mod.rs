//! Gaussian-process surrogate over `(ln T, ln σ)`.

mod fit;
mod linalg;
mod model;

pub use fit::{fit, log_hyperposterior, FitOptions, HyperPriors, LearnMask};
pub use model::{kernel, write_landscape_csv, GpModel, GpObservation, Hyperparams, LANDSCAPE_RESOLUTION, MAX_JITTER};
