use std::f64::consts::PI;
use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Parallel-beam acquisition geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionGeometry {
    angles: Vec<f64>,
    num_bins: usize,
    bin_spacing: f64,
}

/// Smallest detector that covers the diagonal of a `side×side` image.
pub fn min_bins(side: usize) -> usize {
    (std::f64::consts::SQRT_2 * side as f64).ceil() as usize
}

/// Default detector size: [`min_bins`] rounded up to even.
pub fn default_bins(side: usize) -> usize {
    let b = min_bins(side);
    b + b % 2
}

impl ProjectionGeometry {
    pub fn new(angles: Vec<f64>, num_bins: usize, bin_spacing: f64) -> Result<Self> {
        if angles.is_empty() {
            return Err(invalid("projection geometry needs at least one angle"));
        }
        if angles.iter().any(|a| !(0.0..PI).contains(a)) {
            return Err(invalid("projection angles must lie in [0, π)"));
        }
        if angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("projection angles must be strictly increasing"));
        }
        if num_bins == 0 {
            return Err(invalid("detector needs at least one bin"));
        }
        if !(bin_spacing > 0.0 && bin_spacing.is_finite()) {
            return Err(invalid(format!("bin spacing must be positive, got {bin_spacing}")));
        }
        Ok(Self { angles, num_bins, bin_spacing })
    }

    /// `num_angles` evenly spaced views `k·π/num_angles` with the default
    /// detector for a `side×side` image and unit bin spacing.
    pub fn parallel(num_angles: usize, side: usize) -> Result<Self> {
        if num_angles == 0 {
            return Err(invalid("projection geometry needs at least one angle"));
        }
        let angles = (0..num_angles).map(|k| k as f64 * PI / num_angles as f64).collect();
        Self::new(angles, default_bins(side), 1.0)
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn num_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn bin_spacing(&self) -> f64 {
        self.bin_spacing
    }

    /// Signed detector coordinate of bin `k`, in pixels from the rotation center.
    pub fn bin_position(&self, k: usize) -> f64 {
        (k as f64 - (self.num_bins as f64 - 1.0) / 2.0) * self.bin_spacing
    }

    pub fn covers(&self, side: usize) -> bool {
        self.num_bins >= min_bins(side)
    }

    pub(crate) fn check_covers(&self, side: usize) -> Result<()> {
        if side == 0 {
            return Err(invalid("image side must be positive"));
        }
        if !self.covers(side) {
            return Err(invalid(format!(
                "detector with {} bins does not cover the diagonal of a {side}x{side} image (needs {})",
                self.num_bins,
                min_bins(side)
            )));
        }
        Ok(())
    }
}

/// Projection data indexed `[angle][bin]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram<T> {
    geometry: ProjectionGeometry,
    values: Vec<T>,
}

impl<T: Scalar> Sinogram<T> {
    pub fn new(geometry: ProjectionGeometry, values: Vec<T>) -> Result<Self> {
        let want = geometry.num_angles() * geometry.num_bins();
        if values.len() != want {
            return Err(invalid(format!("sinogram has {} values, geometry needs {want}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite sinogram value at index {i}")));
        }
        Ok(Self { geometry, values })
    }

    pub fn zeros(geometry: ProjectionGeometry) -> Self {
        let n = geometry.num_angles() * geometry.num_bins();
        Self { geometry, values: vec![T::zero(); n] }
    }

    pub fn geometry(&self) -> &ProjectionGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn row(&self, angle: usize) -> &[T] {
        let nb = self.geometry.num_bins();
        &self.values[angle * nb..(angle + 1) * nb]
    }

    /// Writes `angle_index,bin_index,value` rows under a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "angle_index,bin_index,value")?;
        let nb = self.geometry.num_bins();
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{},{}", i / nb, i % nb, v)?;
        }
        Ok(())
    }

    /// Reads values written by [`Sinogram::write_csv`] for a known geometry.
    pub fn read_csv<R: BufRead>(geometry: ProjectionGeometry, input: R) -> Result<Self> {
        let nb = geometry.num_bins();
        let mut values = vec![T::zero(); geometry.num_angles() * nb];
        let mut seen = vec![false; values.len()];
        let mut offset = 0usize;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line_start = offset;
            offset += line.len() + 1;
            if lineno == 0 {
                if line.trim() != "angle_index,bin_index,value" {
                    return Err(Error::Format { offset: 0, message: "missing sinogram CSV header".into() });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Format { offset: line_start, message: format!("line {}: {what}", lineno + 1) };
            let mut parts = line.split(',');
            let (Some(a), Some(b), Some(v), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected 3 fields"));
            };
            let a: usize = a.trim().parse().map_err(|_| bad("bad angle index"))?;
            let b: usize = b.trim().parse().map_err(|_| bad("bad bin index"))?;
            let v: f64 = v.trim().parse().map_err(|_| bad("bad value"))?;
            if a >= geometry.num_angles() || b >= nb {
                return Err(bad("index outside geometry"));
            }
            values[a * nb + b] = T::lit(v);
            seen[a * nb + b] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Format {
                offset,
                message: format!("missing entry angle {} bin {}", missing / nb, missing % nb),
            });
        }
        Self::new(geometry, values)
    }
}
