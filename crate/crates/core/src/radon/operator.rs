use crate::autodiff::LinearOperator;
use crate::data::Image;
use crate::error::{invalid, Result};
use crate::radon::{ProjectionGeometry, Sinogram};
use crate::scalar::Scalar;

/// Sampling step along each ray, in pixels.
pub const RAY_STEP: f64 = 0.5;

/// Discrete parallel-beam Radon transform as an explicit sparse matrix.
///
/// Every ray is sampled at a fixed step; each sample contributes its bilinear
/// interpolation weights (times the step length) to the row of its
/// `(angle, bin)`. Forward projection multiplies by this matrix and the
/// adjoint multiplies by its transpose, so the pair is an exact transpose up
/// to floating-point rounding.
#[derive(Debug, Clone)]
pub struct RadonOperator<T> {
    geometry: ProjectionGeometry,
    side: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    weights: Vec<T>,
}

impl<T: Scalar> RadonOperator<T> {
    pub fn new(geometry: &ProjectionGeometry, side: usize) -> Result<Self> {
        geometry.check_covers(side)?;
        let npix = side * side;
        if npix > u32::MAX as usize {
            return Err(invalid("image too large for sparse Radon operator"));
        }
        let center = (side as f64 - 1.0) / 2.0;
        // Rays are long enough to cross the whole image plus the one-pixel
        // bilinear support.
        let half_len = side as f64 / std::f64::consts::SQRT_2 + 1.0;
        let half_steps = (half_len / RAY_STEP).ceil() as i64;

        let rows = geometry.num_angles() * geometry.num_bins();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut weights = Vec::new();
        let mut scratch = vec![0.0f64; npix];
        let mut touched: Vec<usize> = Vec::new();
        row_ptr.push(0);

        for &theta in geometry.angles() {
            let (sin, cos) = theta.sin_cos();
            for bin in 0..geometry.num_bins() {
                let t = geometry.bin_position(bin);
                for m in -half_steps..=half_steps {
                    let s = m as f64 * RAY_STEP;
                    // column (x) and row (y) coordinates of the sample
                    let x = center + t * cos - s * sin;
                    let y = center + t * sin + s * cos;
                    let (x0, y0) = (x.floor(), y.floor());
                    let (fx, fy) = (x - x0, y - y0);
                    let (x0, y0) = (x0 as i64, y0 as i64);
                    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                            let (r, c) = (y0 + dy, x0 + dx);
                            let w = wx * wy;
                            if w == 0.0 || r < 0 || c < 0 || r >= side as i64 || c >= side as i64 {
                                continue;
                            }
                            let p = r as usize * side + c as usize;
                            if scratch[p] == 0.0 {
                                touched.push(p);
                            }
                            scratch[p] += w * RAY_STEP;
                        }
                    }
                }
                touched.sort_unstable();
                for &p in &touched {
                    col_idx.push(p as u32);
                    weights.push(T::lit(scratch[p]));
                    scratch[p] = 0.0;
                }
                touched.clear();
                row_ptr.push(col_idx.len());
            }
        }
        Ok(Self { geometry: geometry.clone(), side, row_ptr, col_idx, weights })
    }

    pub fn geometry(&self) -> &ProjectionGeometry {
        &self.geometry
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    pub fn forward_into(&self, x: &[T], out: &mut [T]) {
        for (r, o) in out.iter_mut().enumerate() {
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut acc = T::zero();
            for (&c, &w) in self.col_idx[lo..hi].iter().zip(&self.weights[lo..hi]) {
                acc += w * x[c as usize];
            }
            *o = acc;
        }
    }

    pub fn adjoint_into(&self, y: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        for (r, &yr) in y.iter().enumerate() {
            if yr == T::zero() {
                continue;
            }
            let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
            for (&c, &w) in self.col_idx[lo..hi].iter().zip(&self.weights[lo..hi]) {
                out[c as usize] += w * yr;
            }
        }
    }

    pub fn forward(&self, image: &Image<T>) -> Result<Sinogram<T>> {
        if !image.is_square() || image.width() != self.side {
            return Err(invalid(format!(
                "operator built for {0}x{0} images, got {1}x{2}",
                self.side,
                image.width(),
                image.height()
            )));
        }
        let mut values = vec![T::zero(); self.row_ptr.len() - 1];
        self.forward_into(image.pixels(), &mut values);
        Sinogram::new(self.geometry.clone(), values)
    }

    pub fn adjoint(&self, sinogram: &Sinogram<T>) -> Result<Image<T>> {
        if sinogram.geometry() != &self.geometry {
            return Err(invalid("sinogram geometry differs from the operator geometry"));
        }
        let mut out = vec![T::zero(); self.side * self.side];
        self.adjoint_into(sinogram.values(), &mut out);
        Image::new(self.side, self.side, out)
    }
}

impl<T: Scalar> LinearOperator<T> for RadonOperator<T> {
    fn input_shape(&self) -> Vec<usize> {
        vec![self.side, self.side]
    }

    fn output_shape(&self) -> Vec<usize> {
        vec![self.geometry.num_angles(), self.geometry.num_bins()]
    }

    fn apply(&self, x: &[T], out: &mut [T]) {
        self.forward_into(x, out)
    }

    fn apply_adjoint(&self, y: &[T], out: &mut [T]) {
        self.adjoint_into(y, out)
    }
}

/// Line integrals of `image` along every ray of `geometry`.
pub fn radon_forward<T: Scalar>(image: &Image<T>, geometry: &ProjectionGeometry) -> Result<Sinogram<T>> {
    if !image.is_square() {
        return Err(invalid(format!("Radon transform needs a square image, got {}x{}", image.width(), image.height())));
    }
    RadonOperator::new(geometry, image.width())?.forward(image)
}

/// Exact transpose of [`radon_forward`] for `image_size×image_size` images.
pub fn radon_adjoint<T: Scalar>(sinogram: &Sinogram<T>, image_size: usize) -> Result<Image<T>> {
    RadonOperator::new(sinogram.geometry(), image_size)?.adjoint(sinogram)
}
