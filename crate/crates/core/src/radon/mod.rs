//! Parallel-beam Radon transform, its adjoint, and filtered back-projection.

mod fbp;
mod geometry;
mod operator;

pub use fbp::{fbp, FbpFilter};
pub use geometry::{default_bins, min_bins, ProjectionGeometry, Sinogram};
pub use operator::{radon_adjoint, radon_forward, RadonOperator, RAY_STEP};

/// Default number of views for the sparse-view setting.
pub const SPARSE_VIEW_ANGLES: usize = 45;
