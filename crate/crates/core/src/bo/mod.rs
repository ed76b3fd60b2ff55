//! Bayesian optimization of `(T, σ)` with expected improvement.

mod ei;
mod propose;
mod run;
mod search;

pub use ei::{expected_improvement, expected_improvement_grad};
pub use propose::{acquisition, propose_candidates, ACQ_STARTS, EI_FLOOR, MERGE_RADIUS};
pub use run::{bo_loop, BoConfig, BoOutcome, BoRecord, BoState, EvalStatus};
pub use search::{default_init, halton_2d, SearchBox};
