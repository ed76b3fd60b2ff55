use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Row-major grayscale image with normalized intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, pixels: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(invalid(format!(
                "pixel buffer has {} values, expected {}x{}={}",
                pixels.len(),
                width,
                height,
                width * height
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite pixel at index {i}")));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self { width, height, pixels: vec![T::zero(); width * height] }
    }

    /// Builds an image from `f(row, col)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: T) {
        self.pixels[row * self.width + col] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { width: self.width, height: self.height, pixels: self.pixels.iter().map(|&v| f(v)).collect() }
    }

    pub fn clamped01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    pub fn mean(&self) -> T {
        self.pixels.iter().copied().sum::<T>() / T::from_usize_lossy(self.pixels.len())
    }

    pub fn min_max(&self) -> (T, T) {
        self.pixels
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Averages non-overlapping `factor×factor` blocks.
    pub fn block_average(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(invalid(format!(
                "block factor {factor} does not divide {}x{}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = T::from_usize_lossy(factor * factor);
        Ok(Self::from_fn(w, h, |r, c| {
            let mut acc = T::zero();
            for dr in 0..factor {
                for dc in 0..factor {
                    acc += self.get(r * factor + dr, c * factor + dc);
                }
            }
            acc / norm
        }))
    }

    /// Converts to another scalar precision.
    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffers() {
        assert!(Image::<f64>::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::<f64>::new(0, 2, vec![]).is_err());
        assert!(Image::<f64>::new(1, 1, vec![f64::NAN]).is_err());
        assert!(Image::<f64>::new(2, 1, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn block_average_of_constant_blocks() {
        let img = Image::<f64>::from_fn(4, 4, |r, c| ((r / 2) * 2 + c / 2) as f64);
        let small = img.block_average(2).unwrap();
        assert_eq!(small.pixels(), &[0.0, 1.0, 2.0, 3.0]);
        assert!(img.block_average(3).is_err());
    }
}
