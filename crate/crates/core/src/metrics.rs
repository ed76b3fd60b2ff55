//! Reconstruction quality and calibration measures.

use std::io::Write;

use crate::data::Image;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Default number of variance bins for [`regression_uce`].
pub const DEFAULT_UCE_BINS: usize = 10;

fn check_shapes<T: Scalar>(a: &Image<T>, b: &Image<T>, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(invalid(format!(
            "{what}: shape mismatch {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse<T: Scalar>(estimate: &Image<T>, reference: &Image<T>) -> Result<T> {
    check_shapes(estimate, reference, "mse")?;
    let n = T::from_usize_lossy(estimate.pixels().len());
    Ok(estimate.pixels().iter().zip(reference.pixels()).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / n)
}

/// Peak signal-to-noise ratio in dB; `+∞` when the images are identical.
pub fn psnr<T: Scalar>(estimate: &Image<T>, reference: &Image<T>, max_value: T) -> Result<T> {
    if !(max_value > T::zero()) {
        return Err(invalid(format!("psnr: max_value must be positive, got {max_value}")));
    }
    let mse = mse(estimate, reference)?;
    if mse == T::zero() {
        return Ok(T::infinity());
    }
    Ok(T::lit(10.0) * (max_value * max_value / mse).log10())
}

/// Pixelwise squared error.
pub fn error_map<T: Scalar>(estimate: &Image<T>, reference: &Image<T>) -> Result<Image<T>> {
    check_shapes(estimate, reference, "error_map")?;
    let px = estimate.pixels().iter().zip(reference.pixels()).map(|(&a, &b)| (a - b) * (a - b)).collect();
    Image::new(estimate.width(), estimate.height(), px)
}

/// Pixels grouped by predictive variance.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBins<T> {
    /// Interior bin boundaries; bin `i` holds variances in `[edges[i-1], edges[i])`.
    pub edges: Vec<T>,
    pub mean_variance: Vec<T>,
    pub mean_sq_error: Vec<T>,
    pub counts: Vec<usize>,
}

impl<T: Scalar> CalibrationBins<T> {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Count-weighted mean absolute gap between variance and squared error.
    pub fn uce(&self) -> T {
        let total = T::from_usize_lossy(self.total());
        self.counts
            .iter()
            .zip(self.mean_variance.iter().zip(&self.mean_sq_error))
            .map(|(&c, (&v, &e))| T::from_usize_lossy(c) / total * (v - e).abs())
            .sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bin_index,mean_variance,mean_sq_error,count")?;
        for i in 0..self.counts.len() {
            writeln!(out, "{},{},{},{}", i, self.mean_variance[i], self.mean_sq_error[i], self.counts[i])?;
        }
        Ok(())
    }
}

/// Equal-count binning of pixels by predictive variance.
///
/// Boundaries are variance quantiles; a pixel's bin depends only on its own
/// variance, so tied values always share a bin and duplicate boundaries are
/// merged. The result is invariant under pixel permutation.
pub fn calibration_bins<T: Scalar>(squared_error: &Image<T>, variance: &Image<T>, n_bins: usize) -> Result<CalibrationBins<T>> {
    check_shapes(squared_error, variance, "regression_uce")?;
    let n = variance.pixels().len();
    if n_bins == 0 || n_bins > n {
        return Err(invalid(format!("regression_uce: {n_bins} bins for {n} pixels")));
    }
    if variance.pixels().iter().any(|&v| v < T::zero()) {
        return Err(invalid("regression_uce: negative variance"));
    }
    let mut sorted = variance.pixels().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite variances"));
    let mut edges: Vec<T> = Vec::with_capacity(n_bins - 1);
    for i in 1..n_bins {
        let e = sorted[i * n / n_bins];
        if e > sorted[0] && edges.last().is_none_or(|&last| e > last) {
            edges.push(e);
        }
    }
    let bins = edges.len() + 1;
    let mut sum_var = vec![T::zero(); bins];
    let mut sum_err = vec![T::zero(); bins];
    let mut counts = vec![0usize; bins];
    for (&v, &e) in variance.pixels().iter().zip(squared_error.pixels()) {
        let b = edges.partition_point(|&edge| edge <= v);
        sum_var[b] += v;
        sum_err[b] += e;
        counts[b] += 1;
    }
    let mean = |s: &[T]| -> Vec<T> { s.iter().zip(&counts).map(|(&x, &c)| x / T::from_usize_lossy(c)).collect() };
    Ok(CalibrationBins { mean_variance: mean(&sum_var), mean_sq_error: mean(&sum_err), edges, counts })
}

/// Regression analogue of the uncertainty calibration error:
/// `Σ_b (n_b/N)·|mean variance_b − mean squared error_b|` over
/// equal-count variance bins.
pub fn regression_uce<T: Scalar>(squared_error: &Image<T>, variance: &Image<T>, n_bins: usize) -> Result<T> {
    Ok(calibration_bins(squared_error, variance, n_bins)?.uce())
}
