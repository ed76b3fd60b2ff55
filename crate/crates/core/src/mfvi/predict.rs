use crate::data::{Image, Rng};
use crate::error::{invalid, Result};
use crate::mfvi::{sample_weights, DipNetwork, VariationalParams};
use crate::scalar::Scalar;

fn to_image<T: Scalar>(size: usize, px: Vec<T>) -> Result<Image<T>> {
    Image::new(size, size, px)
}

/// Network output with every weight at its mean.
pub fn predict_mean_weights<T: Scalar>(net: &DipNetwork<T>, params: &VariationalParams<T>) -> Result<Image<T>> {
    params.check_compatible(net)?;
    to_image(net.image_size(), net.evaluate(&params.means())?)
}

/// Monte Carlo posterior predictive: per-pixel mean and (population)
/// variance of `n_samples` network outputs under sampled weights.
pub fn predict<T: Scalar>(
    net: &DipNetwork<T>,
    params: &VariationalParams<T>,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<(Image<T>, Image<T>)> {
    if n_samples == 0 {
        return Err(invalid("predict needs at least one sample"));
    }
    params.check_compatible(net)?;
    let npx = net.image_size() * net.image_size();
    // Welford updates: identical samples give exactly their value and zero spread
    let mut mean = vec![T::zero(); npx];
    let mut var = vec![T::zero(); npx];
    for k in 1..=n_samples {
        let out = net.evaluate(&sample_weights(params, rng))?;
        let kt = T::from_usize_lossy(k);
        for ((m, s), &v) in mean.iter_mut().zip(var.iter_mut()).zip(&out) {
            let d = v - *m;
            *m += d / kt;
            *s += d * (v - *m);
        }
    }
    let n = T::from_usize_lossy(n_samples);
    var.iter_mut().for_each(|s| *s = (*s / n).max(T::zero()));
    Ok((to_image(net.image_size(), mean)?, to_image(net.image_size(), var)?))
}
