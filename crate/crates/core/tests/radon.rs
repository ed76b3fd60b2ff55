use std::f64::consts::PI;

use coldpost::data::{shepp_logan, Rng};
use coldpost::metrics::psnr;
use coldpost::radon::{fbp, radon_adjoint, radon_forward, FbpFilter, ProjectionGeometry, RAY_STEP};
use coldpost::{Image, RadonOperator, Sinogram};
use proptest::prelude::*;

fn random_image(n: usize, rng: &mut Rng) -> Image {
    Image::from_fn(n, n, |_, _| rng.normal())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[test]
fn adjoint_dot_product_identity() {
    let g = ProjectionGeometry::parallel(12, 16).unwrap();
    let op = RadonOperator::new(&g, 16).unwrap();
    let mut rng = Rng::new(1);
    for _ in 0..100 {
        let x = random_image(16, &mut rng);
        let mut yv = vec![0.0; g.num_angles() * g.num_bins()];
        rng.fill_normal(&mut yv);
        let y = Sinogram::new(g.clone(), yv).unwrap();
        let fx = op.forward(&x).unwrap();
        let fty = op.adjoint(&y).unwrap();
        let lhs = dot(fx.values(), y.values());
        let rhs = dot(x.pixels(), fty.pixels());
        let rel = (lhs - rhs).abs() / (norm(fx.values()) * norm(y.values()));
        assert!(rel <= 1e-10, "relative mismatch {rel}");
    }
}

/// Line integral of the bilinear interpolant of `img` along one ray, by the
/// same step rule as the library but evaluated pointwise through hat functions.
fn ray_integral(img: &Image, theta: f64, t: f64) -> f64 {
    let n = img.width();
    let c = (n as f64 - 1.0) / 2.0;
    let half = ((n as f64 / 2f64.sqrt() + 1.0) / RAY_STEP).ceil() as i64;
    let hat = |d: f64| (1.0 - d.abs()).max(0.0);
    let mut acc = 0.0;
    for m in -half..=half {
        let s = m as f64 * RAY_STEP;
        let x = c + t * theta.cos() - s * theta.sin();
        let y = c + t * theta.sin() + s * theta.cos();
        for r in 0..n {
            let wy = hat(y - r as f64);
            if wy == 0.0 {
                continue;
            }
            for col in 0..n {
                acc += img.get(r, col) * hat(x - col as f64) * wy;
            }
        }
    }
    acc * RAY_STEP
}

#[test]
fn matches_dense_matrix_on_8x8() {
    let n = 8;
    let g = ProjectionGeometry::parallel(10, n).unwrap();
    let op = RadonOperator::new(&g, n).unwrap();
    let rows = g.num_angles() * g.num_bins();
    // dense oracle, column per indicator image
    let mut dense = vec![vec![0.0; n * n]; rows];
    for p in 0..n * n {
        let mut e = Image::zeros(n, n);
        e.pixels_mut()[p] = 1.0;
        for (a, &theta) in g.angles().iter().enumerate() {
            for b in 0..g.num_bins() {
                dense[a * g.num_bins() + b][p] = ray_integral(&e, theta, g.bin_position(b));
            }
        }
        let probe = op.forward(&e).unwrap();
        for r in 0..rows {
            assert!((probe.values()[r] - dense[r][p]).abs() < 1e-12, "pixel {p} row {r}");
        }
    }
    // adjoint is the transpose of the same matrix
    for r in 0..rows {
        let mut y = Sinogram::zeros(g.clone());
        y.values_mut()[r] = 1.0;
        let back = op.adjoint(&y).unwrap();
        for p in 0..n * n {
            assert!((back.pixels()[p] - dense[r][p]).abs() < 1e-12);
        }
    }
    // and a random image goes through the matrix
    let x = random_image(n, &mut Rng::new(4));
    let fx = op.forward(&x).unwrap();
    for r in 0..rows {
        assert!((fx.values()[r] - dot(&dense[r], x.pixels())).abs() < 1e-11);
    }
}

fn disk(n: usize, radius: f64) -> Image {
    let c = (n as f64 - 1.0) / 2.0;
    Image::from_fn(n, n, |r, col| {
        let (dx, dy) = (col as f64 - c, r as f64 - c);
        if dx * dx + dy * dy <= radius * radius {
            1.0
        } else {
            0.0
        }
    })
}

#[test]
fn centered_disk_projections() {
    let n = 64;
    let g = ProjectionGeometry::parallel(4, n).unwrap();
    let s = radon_forward(&disk(n, 20.0), &g).unwrap();
    // grid-symmetric angle pairs are exact
    for (a, b) in [(0, 2), (1, 3)] {
        let dev = s.row(a).iter().zip(s.row(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(dev <= 1e-9, "angles {a},{b}: {dev}");
    }
    // other angles agree up to the pixelation of the disk edge
    let g = ProjectionGeometry::parallel(45, n).unwrap();
    let s = radon_forward(&disk(n, 20.0), &g).unwrap();
    let peak = s.row(0).iter().cloned().fold(0.0, f64::max);
    for a in 1..45 {
        let dev = s.row(a).iter().zip(s.row(0)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(dev <= 0.1 * peak, "angle {a}: {dev} of {peak}");
    }
}

#[test]
fn zero_inputs_and_geometry_errors() {
    let g = ProjectionGeometry::parallel(8, 16).unwrap();
    assert!(radon_forward(&Image::zeros(16, 16), &g).unwrap().values().iter().all(|&v| v == 0.0));
    assert!(radon_adjoint(&Sinogram::zeros(g.clone()), 16).unwrap().pixels().iter().all(|&v| v == 0.0));
    assert!(fbp(&Sinogram::zeros(g.clone()), 16, FbpFilter::Ramp).unwrap().pixels().iter().all(|&v| v == 0.0));
    assert!(radon_forward(&Image::zeros(64, 64), &g).is_err());
    let one = ProjectionGeometry::parallel(1, 16).unwrap();
    assert!(fbp(&Sinogram::zeros(one), 16, FbpFilter::Ramp).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn forward_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = ProjectionGeometry::parallel(7, 12).unwrap();
        let op = RadonOperator::new(&g, 12).unwrap();
        let mut rng = Rng::new(seed);
        let (x1, x2) = (random_image(12, &mut rng), random_image(12, &mut rng));
        let mix = Image::new(12, 12, x1.pixels().iter().zip(x2.pixels()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let (f1, f2, fm) = (op.forward(&x1).unwrap(), op.forward(&x2).unwrap(), op.forward(&mix).unwrap());
        let expect: Vec<f64> = f1.values().iter().zip(f2.values()).map(|(p, q)| a * p + b * q).collect();
        let scale = norm(&expect).max(norm(fm.values())).max(1e-300);
        let diff: Vec<f64> = fm.values().iter().zip(&expect).map(|(p, q)| p - q).collect();
        prop_assert!(norm(&diff) <= 1e-12 * scale);
    }
}

/// Textbook filtered back-projection: direct spatial convolution with the
/// Ram-Lak kernel, then linear-interpolation back-projection.
fn reference_fbp(s: &Sinogram, n: usize) -> Image {
    let g = s.geometry();
    let nb = g.num_bins() as i64;
    let kernel = |k: i64| -> f64 {
        if k == 0 {
            0.25
        } else if k % 2 != 0 {
            -1.0 / (PI * PI * (k * k) as f64)
        } else {
            0.0
        }
    };
    let filtered: Vec<Vec<f64>> = (0..g.num_angles())
        .map(|a| {
            let row = s.row(a);
            (0..nb).map(|i| (0..nb).map(|j| row[j as usize] * kernel(i - j)).sum()).collect()
        })
        .collect();
    let c = (n as f64 - 1.0) / 2.0;
    let mid = (nb as f64 - 1.0) / 2.0;
    Image::from_fn(n, n, |r, col| {
        let (x, y) = (col as f64 - c, r as f64 - c);
        let mut acc = 0.0;
        for (q, &theta) in filtered.iter().zip(g.angles()) {
            let u = x * theta.cos() + y * theta.sin() + mid;
            let i = u.floor();
            let f = u - i;
            let i = i as i64;
            if i >= 0 && i < nb {
                acc += (1.0 - f) * q[i as usize];
            }
            if i + 1 >= 0 && i + 1 < nb {
                acc += f * q[(i + 1) as usize];
            }
        }
        (acc * PI / g.num_angles() as f64).clamp(0.0, 1.0)
    })
}

#[test]
fn fbp_matches_reference_implementation() {
    let n = 128;
    let x: Image = shepp_logan(n).unwrap();
    let g = ProjectionGeometry::parallel(180, n).unwrap();
    let s = radon_forward(&x, &g).unwrap();
    let ours = psnr(&fbp(&s, n, FbpFilter::Ramp).unwrap(), &x, 1.0).unwrap();
    let reference = psnr(&reference_fbp(&s, n), &x, 1.0).unwrap();
    assert!(ours >= reference - 0.5, "ours {ours:.3} dB, reference {reference:.3} dB");
}

#[test]
fn fbp_improves_with_angle_count() {
    let n = 64;
    let x: Image = shepp_logan(n).unwrap();
    let values: Vec<f64> = [15, 45, 90, 180]
        .iter()
        .map(|&k| {
            let g = ProjectionGeometry::parallel(k, n).unwrap();
            psnr(&fbp(&radon_forward(&x, &g).unwrap(), n, FbpFilter::Ramp).unwrap(), &x, 1.0).unwrap()
        })
        .collect();
    assert!(values.windows(2).all(|w| w[1] > w[0]), "{values:?}");
}
