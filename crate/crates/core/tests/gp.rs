use coldpost::data::Rng;
use coldpost::gp::{fit, log_hyperposterior, FitOptions, GpModel, GpObservation, HyperPriors, Hyperparams, LearnMask};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn random_obs(n: usize, rng: &mut Rng) -> Vec<GpObservation> {
    (0..n)
        .map(|_| {
            let x = [rng.uniform_range(-27.6, -4.6), rng.uniform_range(-23.0, 0.0)];
            GpObservation::new(x, rng.uniform_range(8.0, 32.0)).unwrap()
        })
        .collect()
}

fn random_hp(rng: &mut Rng) -> Hyperparams {
    Hyperparams {
        mean: rng.uniform_range(10.0, 25.0),
        output_scale: rng.uniform_range(-1.0, 4.0f64).exp(),
        length_scale: rng.uniform_range(-1.2, 1.5f64).exp(),
        noise: rng.uniform_range(-4.6, 0.0f64).exp(),
    }
}

fn k(a: [f64; 2], b: [f64; 2], hp: &Hyperparams) -> f64 {
    let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    hp.output_scale * (-0.5 * d2 / (hp.length_scale * hp.length_scale)).exp()
}

/// Posterior and log marginal likelihood through an explicit matrix inverse.
struct Dense {
    kinv: DMatrix<f64>,
    r: DVector<f64>,
    lml: f64,
}

fn dense(obs: &[GpObservation], hp: &Hyperparams) -> Dense {
    let n = obs.len();
    let kmat = DMatrix::from_fn(n, n, |i, j| k(obs[i].x, obs[j].x, hp) + if i == j { hp.noise } else { 0.0 });
    let kinv = kmat.clone().try_inverse().unwrap();
    let r = DVector::from_fn(n, |i, _| obs[i].y - hp.mean);
    let quad = (r.transpose() * &kinv * &r)[(0, 0)];
    let lml = -0.5 * quad - 0.5 * kmat.determinant().ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Dense { kinv, r, lml }
}

fn dense_posterior(d: &Dense, obs: &[GpObservation], hp: &Hyperparams, x: [f64; 2]) -> (f64, f64) {
    let kx = DVector::from_fn(obs.len(), |i, _| k(x, obs[i].x, hp));
    let mean = hp.mean + (kx.transpose() * &d.kinv * &d.r)[(0, 0)];
    let var = hp.output_scale - (kx.transpose() * &d.kinv * &kx)[(0, 0)];
    (mean, var.max(0.0))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn matches_direct_inverse() {
    let mut rng = Rng::new(6);
    for trial in 0..40 {
        let n = 1 + trial % 20;
        let obs = random_obs(n, &mut rng);
        let hp = random_hp(&mut rng);
        let gp = GpModel::new(obs.clone(), hp).unwrap();
        let d = dense(&obs, &hp);
        assert!(close(gp.log_marginal_likelihood(), d.lml, 1e-10), "trial {trial}: {} vs {}", gp.log_marginal_likelihood(), d.lml);
        let queries = (0..10).map(|_| [rng.uniform_range(-27.6, -4.6), rng.uniform_range(-23.0, 0.0)]);
        for x in queries.chain(obs.iter().map(|o| o.x)) {
            let (m, v) = gp.posterior(x);
            let (dm, dv) = dense_posterior(&d, &obs, &hp, x);
            assert!(close(m, dm, 1e-10), "trial {trial} mean {m} vs {dm}");
            assert!((v - dv).abs() <= 1e-10 * hp.output_scale.max(1.0), "trial {trial} var {v} vs {dv}");
        }
    }
}

#[test]
fn empty_model_returns_prior_modes() {
    let gp = fit(&[], &HyperPriors::default(), &FitOptions::default()).unwrap();
    let (m, v) = gp.posterior([-10.0, -3.0]);
    assert_eq!(m, 15.0);
    assert_eq!(v, 16.0);
}

#[test]
fn single_observation_formulas() {
    let hp = Hyperparams { mean: 15.0, output_scale: 16.0, length_scale: 0.3, noise: 0.5 };
    let x0 = [-5.0, -2.0];
    let gp = GpModel::new(vec![GpObservation::new(x0, 22.0).unwrap()], hp).unwrap();
    let x = [-5.2, -1.9];
    let kx = k(x, x0, &hp);
    let (m, v) = gp.posterior(x);
    assert!((m - (15.0 + kx * 7.0 / 16.5)).abs() < 1e-12);
    assert!((v - (16.0 - kx * kx / 16.5)).abs() < 1e-12);
    let lml = -0.5 * 49.0 / 16.5 - 0.5 * (2.0 * std::f64::consts::PI * 16.5).ln();
    assert!((gp.log_marginal_likelihood() - lml).abs() < 1e-12);
    let at_mean = GpModel::new(vec![GpObservation::new(x0, 15.0).unwrap()], hp).unwrap();
    assert!((at_mean.log_marginal_likelihood() + 0.5 * (2.0 * std::f64::consts::PI * 16.5).ln()).abs() < 1e-12);
}

#[test]
fn near_noiseless_model_interpolates() {
    let mut rng = Rng::new(8);
    let obs = random_obs(6, &mut rng);
    let hp = Hyperparams { mean: 15.0, output_scale: 16.0, length_scale: 0.3, noise: 1e-12 };
    let gp = GpModel::new(obs.clone(), hp).unwrap();
    for o in &obs {
        assert!((gp.posterior(o.x).0 - o.y).abs() < 1e-8);
    }
}

#[test]
fn single_observation_map_matches_grid_search() {
    let priors = HyperPriors::default();
    let obs = [GpObservation::new([0.0, 0.0], 20.0).unwrap()];
    let learn = LearnMask { mean: true, output_scale: false, length_scale: false, noise: true };
    let gp = fit(&obs, &priors, &FitOptions { learn, ..FitOptions::default() }).unwrap();
    let fitted = *gp.hyperparams();
    let modes = priors.modes();
    assert_eq!(fitted.output_scale, modes.output_scale);
    assert_eq!(fitted.length_scale, modes.length_scale);

    let (dc, dn) = (0.005, 0.02);
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..=1400 {
        let c = 14.0 + i as f64 * dc;
        for j in 0..=1250 {
            let ln_noise = -20.0 + j as f64 * dn;
            let hp = Hyperparams { mean: c, noise: ln_noise.exp(), ..modes };
            if let Some(v) = log_hyperposterior(&obs, &priors, &hp) {
                if v > best.0 {
                    best = (v, c, ln_noise);
                }
            }
        }
    }
    let fitted_value = log_hyperposterior(&obs, &priors, &fitted).unwrap();
    assert!(fitted.mean > 15.0 && fitted.mean < 20.0, "{}", fitted.mean);
    assert!((fitted.mean - best.1).abs() <= 2.0 * dc, "MAP c {} vs grid {}", fitted.mean, best.1);
    assert!(fitted_value >= best.0 - 1e-9, "MAP {fitted_value} below grid {}", best.0);
}

#[test]
fn fit_is_deterministic() {
    let obs = random_obs(9, &mut Rng::new(10));
    let opts = FitOptions::default();
    let a = fit(&obs, &HyperPriors::default(), &opts).unwrap();
    let b = fit(&obs, &HyperPriors::default(), &opts).unwrap();
    assert_eq!(a.hyperparams(), b.hyperparams());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variance_is_bounded_by_prior(seed in any::<u64>(), n in 0usize..12) {
        let mut rng = Rng::new(seed);
        let obs = random_obs(n, &mut rng);
        let hp = random_hp(&mut rng);
        let gp = GpModel::new(obs, hp).unwrap();
        for _ in 0..20 {
            let (_, v) = gp.posterior([rng.uniform_range(-30.0, 0.0), rng.uniform_range(-25.0, 2.0)]);
            prop_assert!(v >= 0.0 && v <= hp.output_scale * (1.0 + 1e-12));
        }
    }

    #[test]
    fn adding_observations_never_increases_variance(seed in any::<u64>(), n in 0usize..10) {
        let mut rng = Rng::new(seed);
        let obs = random_obs(n + 1, &mut rng);
        let hp = random_hp(&mut rng);
        let small = GpModel::new(obs[..n].to_vec(), hp).unwrap();
        let large = GpModel::new(obs, hp).unwrap();
        for _ in 0..20 {
            let x = [rng.uniform_range(-27.6, -4.6), rng.uniform_range(-23.0, 0.0)];
            prop_assert!(large.posterior(x).1 <= small.posterior(x).1 + 1e-10 * hp.output_scale);
        }
    }
}
