use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::data::Image;
use crate::error::{invalid, Result};
use crate::radon::Sinogram;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FbpFilter {
    /// Band-limited ramp (Ram-Lak).
    #[default]
    Ramp,
    /// Plain back-projection.
    None,
}

/// Frequency response of the band-limited ramp for an FFT of length `len`,
/// built from its spatial kernel so the DC term is handled exactly.
fn ramp_response(len: usize, spacing: f64, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut kernel = vec![Complex::new(0.0, 0.0); len];
    kernel[0].re = 1.0 / (4.0 * spacing * spacing);
    for j in 1..len / 2 {
        if j % 2 == 1 {
            let v = -1.0 / (PI * PI * (j * j) as f64 * spacing * spacing);
            kernel[j].re = v;
            kernel[len - j].re = v;
        }
    }
    planner.plan_fft_forward(len).process(&mut kernel);
    kernel.iter().map(|c| c.re).collect()
}

/// Filtered back-projection reconstruction, clamped to [0,1].
pub fn fbp<T: Scalar>(sinogram: &Sinogram<T>, image_size: usize, filter: FbpFilter) -> Result<Image<T>> {
    let geometry = sinogram.geometry();
    geometry.check_covers(image_size)?;
    let num_angles = geometry.num_angles();
    if num_angles < 2 {
        return Err(invalid(format!("filtered back-projection needs at least 2 angles, got {num_angles}")));
    }
    let nb = geometry.num_bins();
    let spacing = geometry.bin_spacing();

    let filtered: Vec<Vec<f64>> = match filter {
        FbpFilter::None => (0..num_angles).map(|a| sinogram.row(a).iter().map(|v| v.to_f64_lossy()).collect()).collect(),
        FbpFilter::Ramp => {
            let len = (2 * nb).next_power_of_two();
            let mut planner = FftPlanner::new();
            let response = ramp_response(len, spacing, &mut planner);
            let fwd = planner.plan_fft_forward(len);
            let inv = planner.plan_fft_inverse(len);
            (0..num_angles)
                .map(|a| {
                    let mut buf = vec![Complex::new(0.0, 0.0); len];
                    for (b, v) in buf.iter_mut().zip(sinogram.row(a)) {
                        b.re = v.to_f64_lossy();
                    }
                    fwd.process(&mut buf);
                    for (b, h) in buf.iter_mut().zip(&response) {
                        *b *= *h;
                    }
                    inv.process(&mut buf);
                    // rustfft leaves the inverse unnormalized
                    buf[..nb].iter().map(|c| c.re * spacing / len as f64).collect()
                })
                .collect()
        }
    };

    let center = (image_size as f64 - 1.0) / 2.0;
    let bin_center = (nb as f64 - 1.0) / 2.0;
    let weight = PI / num_angles as f64;
    let trig: Vec<(f64, f64)> = geometry.angles().iter().map(|a| a.sin_cos()).collect();
    Ok(Image::from_fn(image_size, image_size, |row, col| {
        let (x, y) = (col as f64 - center, row as f64 - center);
        let mut acc = 0.0;
        for (q, &(sin, cos)) in filtered.iter().zip(&trig) {
            let u = (x * cos + y * sin) / spacing + bin_center;
            let u0 = u.floor();
            let f = u - u0;
            let i = u0 as i64;
            let at = |k: i64| if k >= 0 && (k as usize) < nb { q[k as usize] } else { 0.0 };
            acc += (1.0 - f) * at(i) + f * at(i + 1);
        }
        T::lit((acc * weight).clamp(0.0, 1.0))
    }))
}
