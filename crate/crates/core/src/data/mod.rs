//! Images, phantoms, randomness and PGM file I/O.

mod image;
mod pgm;
mod phantom;
mod rng;

pub use image::Image;
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};
pub use phantom::{ellipses, phantom_value, shepp_logan, shepp_logan_with, Ellipse, PhantomContrast, MIN_PHANTOM_SIZE};
pub use rng::Rng;

use crate::autodiff::Tensor;
use crate::scalar::Scalar;

/// Upper end of the network input noise range.
pub const NOISE_AMPLITUDE: f64 = 0.1;

/// `[channels, size, size]` tensor of i.i.d. `Uniform[0, 0.1)` samples.
pub fn uniform_noise_image<T: Scalar>(rng: &mut Rng, channels: usize, size: usize) -> Tensor<T> {
    assert!(channels > 0 && size > 0, "noise image dimensions must be positive");
    let hi = T::lit(NOISE_AMPLITUDE);
    let data = (0..channels * size * size)
        .map(|_| {
            let v = T::lit(rng.uniform() * NOISE_AMPLITUDE);
            // rounding to a narrower type can land exactly on the bound
            if v >= hi {
                hi - hi * T::epsilon()
            } else {
                v
            }
        })
        .collect();
    Tensor::new([channels, size, size], data).expect("shape matches data")
}
