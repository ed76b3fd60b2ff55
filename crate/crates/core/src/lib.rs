//! Sparse-view CT reconstruction with a tempered variational deep image
//! prior, plus Gaussian-process Bayesian optimization of the temperature and
//! prior scale.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`.

pub mod autodiff;
pub mod bo;
pub mod data;
pub mod error;
pub mod gp;
pub mod metrics;
pub mod mfvi;
pub mod radon;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Image = data::Image<f64>;
pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type Sinogram = radon::Sinogram<f64>;
pub type RadonOperator = radon::RadonOperator<f64>;
pub type DipNetwork = mfvi::DipNetwork<f64>;
pub type VariationalParams = mfvi::VariationalParams<f64>;
pub type TemperedPrior = mfvi::TemperedPrior<f64>;
pub type ObjectiveMode = mfvi::ObjectiveMode<f64>;
pub type TrainConfig = mfvi::TrainConfig<f64>;
