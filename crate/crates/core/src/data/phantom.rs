//! Shepp-Logan head phantom.

use crate::data::Image;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Smallest phantom side length accepted by [`shepp_logan`].
pub const MIN_PHANTOM_SIZE: usize = 16;

/// Sub-pixel samples per axis used for area-averaged rasterization.
const SUPERSAMPLE: usize = 4;

/// Intensity table applied to the ten Shepp-Logan ellipses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhantomContrast {
    /// Original intensities (skull 2.0, brain 1.02, ...). After clamping to
    /// [0,1] everything inside the skull saturates at 1.
    Original,
    /// Contrast-enhanced intensities (skull 1.0, brain 0.2, ventricles 0.0,
    /// lesions 0.3); same ellipse geometry, values already in [0,1].
    #[default]
    Enhanced,
}

/// One ellipse: center `(x0, y0)`, half-axes `(a, b)`, rotation `phi` in
/// degrees, all in the unit square `[-1,1]²` with y pointing up.
#[derive(Debug, Clone, Copy)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi_deg: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

const GEOMETRY: [(f64, f64, f64, f64, f64); 10] = [
    (0.69, 0.92, 0.0, 0.0, 0.0),
    (0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (0.1100, 0.3100, 0.22, 0.0, -18.0),
    (0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.0230, 0.0460, 0.06, -0.605, 0.0),
];

const ORIGINAL_INTENSITY: [f64; 10] = [2.0, -0.98, -0.02, -0.02, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01];
const ENHANCED_INTENSITY: [f64; 10] = [1.0, -0.8, -0.2, -0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];

pub fn ellipses(contrast: PhantomContrast) -> [Ellipse; 10] {
    let intensity = match contrast {
        PhantomContrast::Original => ORIGINAL_INTENSITY,
        PhantomContrast::Enhanced => ENHANCED_INTENSITY,
    };
    std::array::from_fn(|i| {
        let (a, b, x0, y0, phi_deg) = GEOMETRY[i];
        Ellipse { intensity: intensity[i], a, b, x0, y0, phi_deg }
    })
}

/// Unclamped ellipse sum at a continuous coordinate.
pub fn phantom_value(contrast: PhantomContrast, x: f64, y: f64) -> f64 {
    ellipses(contrast).iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum()
}

/// `size×size` Shepp-Logan phantom with [`PhantomContrast::Enhanced`]
/// intensities.
pub fn shepp_logan<T: Scalar>(size: usize) -> Result<Image<T>> {
    shepp_logan_with(size, PhantomContrast::default())
}

/// Rasterizes the phantom by averaging a regular sub-pixel grid inside each
/// pixel; pixel values are clamped to [0,1].
pub fn shepp_logan_with<T: Scalar>(size: usize, contrast: PhantomContrast) -> Result<Image<T>> {
    if size < MIN_PHANTOM_SIZE {
        return Err(invalid(format!("phantom size {size} below minimum {MIN_PHANTOM_SIZE}")));
    }
    let table = ellipses(contrast);
    let n = size as f64;
    let sub = SUPERSAMPLE as f64;
    Ok(Image::from_fn(size, size, |row, col| {
        let mut acc = 0.0;
        for sr in 0..SUPERSAMPLE {
            for sc in 0..SUPERSAMPLE {
                let x = 2.0 * (col as f64 + (sc as f64 + 0.5) / sub) / n - 1.0;
                let y = 1.0 - 2.0 * (row as f64 + (sr as f64 + 0.5) / sub) / n;
                let v: f64 = table.iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum();
                acc += v.clamp(0.0, 1.0);
            }
        }
        T::lit(acc / (sub * sub))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_sizes() {
        assert!(shepp_logan::<f64>(15).is_err());
        assert!(shepp_logan::<f64>(16).is_ok());
    }

    #[test]
    fn corner_is_background() {
        let p = shepp_logan::<f64>(64).unwrap();
        assert_eq!(p.get(0, 0), 0.0);
        assert_eq!(p.get(63, 63), 0.0);
    }

    #[test]
    fn values_in_unit_interval() {
        for contrast in [PhantomContrast::Original, PhantomContrast::Enhanced] {
            let p = shepp_logan_with::<f64>(64, contrast).unwrap();
            let (lo, hi) = p.min_max();
            assert!(lo >= 0.0 && hi <= 1.0);
        }
    }

    #[test]
    fn original_contrast_saturates_inside_skull() {
        let p = shepp_logan_with::<f64>(64, PhantomContrast::Original).unwrap();
        assert_eq!(p.get(32, 32), 1.0);
        assert_eq!(p.get(20, 40), 1.0);
    }
}
