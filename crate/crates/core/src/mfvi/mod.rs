//! Mean-field variational deep image prior with a tempered objective.

mod loss;
mod network;
mod params;
mod predict;
mod train;

pub use loss::{tempered_loss, LossGraph, ObjectiveMode};
pub use network::{Activation, ArchConfig, DipNetwork, LayerNodes, LayerSpec};
pub use params::{
    kl_mean_field, sample_weights, GaussianTensor, ParamNodes, PriorScaling, TemperedPrior, VariationalParams,
    INIT_SIGMA,
};
pub use predict::{predict, predict_mean_weights};
pub use train::{train, write_history_csv, HistoryEntry, TrainConfig, TrainOutcome};
