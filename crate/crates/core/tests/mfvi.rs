use std::sync::Arc;

use coldpost::autodiff::{softplus_inverse, Tensor};
use coldpost::data::{shepp_logan, Rng};
use coldpost::mfvi::{
    kl_mean_field, predict, predict_mean_weights, sample_weights, tempered_loss, train, ArchConfig, GaussianTensor,
    ObjectiveMode, PriorScaling, TemperedPrior, TrainConfig, VariationalParams,
};
use coldpost::radon::ProjectionGeometry;
use coldpost::{DipNetwork, Error, Image, RadonOperator, Sinogram};
use proptest::prelude::*;

fn scalar(mu: f64, sigma_w: f64) -> VariationalParams<f64> {
    VariationalParams::new(vec![GaussianTensor::new(
        Tensor::new([1], vec![mu]).unwrap(),
        Tensor::new([1], vec![softplus_inverse(sigma_w)]).unwrap(),
    )
    .unwrap()])
}

/// Monte Carlo estimate of `E_q[log q − log p]` and its standard error.
fn kl_monte_carlo(mu: f64, sigma_w: f64, sigma_t: f64, n: usize, rng: &mut Rng) -> (f64, f64) {
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let e = rng.normal();
        let w = mu + sigma_w * e;
        let v = sigma_t.ln() - sigma_w.ln() - 0.5 * e * e + 0.5 * (w / sigma_t).powi(2);
        s += v;
        s2 += v * v;
    }
    let mean = s / n as f64;
    let var = s2 / n as f64 - mean * mean;
    (mean, (var / n as f64).sqrt())
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = Rng::new(2024);
    let mut cases = vec![(1.0, 1.0, 1.0), (0.0, 0.5, 1.0)];
    while cases.len() < 20 {
        let mu = rng.uniform_range(-2.0, 2.0);
        let sw = rng.uniform_range(-3.0, 0.5f64).exp();
        let st = rng.uniform_range(-2.0, 1.0f64).exp();
        cases.push((mu, sw, st));
    }
    for (i, &(mu, sw, st)) in cases.iter().enumerate() {
        let closed = kl_mean_field(&scalar(mu, sw), &TemperedPrior::untempered(st).unwrap()).unwrap();
        let (mc, se) = kl_monte_carlo(mu, sw, st, 10_000_000, &mut rng.split(i as u64));
        assert!((closed - mc).abs() <= 3.0 * se, "case {i} {:?}: closed {closed}, mc {mc} ± {se}", (mu, sw, st));
    }
    let half = kl_mean_field(&scalar(1.0, 1.0), &TemperedPrior::untempered(1.0).unwrap()).unwrap();
    assert!((half - 0.5).abs() < 1e-12);
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_zero_only_at_prior(mu in -3.0f64..3.0, ls in -4.0f64..1.0, lt in -4.0f64..1.0) {
        let (sw, st) = (ls.exp(), lt.exp());
        let kl = kl_mean_field(&scalar(mu, sw), &TemperedPrior::untempered(st).unwrap()).unwrap();
        prop_assert!(kl >= -1e-12);
        let at_prior = kl_mean_field(&scalar(0.0, st), &TemperedPrior::untempered(st).unwrap()).unwrap();
        prop_assert!(at_prior.abs() < 1e-9);
        if mu.abs() > 1e-3 || (ls - lt).abs() > 1e-3 {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn scaled_prior_identity_is_exact(seed in any::<u64>(), lt in -25.0f64..3.0, ls in -20.0f64..1.0) {
        let (t, sigma) = (lt.exp(), ls.exp());
        let net = toy_net(seed);
        let params = VariationalParams::init_with_sigma(&net, &mut Rng::new(seed ^ 1), 0.01);
        let tempered = TemperedPrior::new(sigma, t).unwrap();
        let rescaled = TemperedPrior::new(t.sqrt() * sigma, 1.0).unwrap();
        prop_assert_eq!(tempered.sigma_t(), t.sqrt() * sigma);
        prop_assert_eq!(TemperedPrior::new(sigma, 1.0).unwrap().sigma_t(), sigma);
        prop_assert_eq!(
            kl_mean_field(&params, &tempered).unwrap().to_bits(),
            kl_mean_field(&params, &rescaled).unwrap().to_bits()
        );
    }
}

#[test]
fn inverse_scaling_divides() {
    let p = TemperedPrior::with_scaling(0.5, 0.25, PriorScaling::InverseSqrtT).unwrap();
    assert_eq!(p.sigma_t(), 1.0);
    assert!(TemperedPrior::new(0.0, 1.0).is_err());
    assert!(TemperedPrior::new(1.0, -1.0).is_err());
}

fn toy_net(seed: u64) -> DipNetwork {
    let arch = ArchConfig { image_size: 16, input_channels: 2, channels: 4, depth: 0, bottleneck_convs: 1 };
    DipNetwork::new(arch, &mut Rng::new(seed)).unwrap()
}

struct Problem {
    op: Arc<RadonOperator>,
    sino: Sinogram,
    truth: Image,
}

fn problem(size: usize, angles: usize) -> Problem {
    let truth: Image = shepp_logan(size).unwrap();
    let g = ProjectionGeometry::parallel(angles, size).unwrap();
    let op = Arc::new(RadonOperator::new(&g, size).unwrap());
    let sino = op.forward(&truth).unwrap();
    Problem { op, sino, truth }
}

fn flatten(p: &VariationalParams<f64>) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.mu.data().iter().chain(t.rho.data()).copied().collect::<Vec<_>>()).collect()
}

fn unflatten(template: &VariationalParams<f64>, flat: &[f64]) -> VariationalParams<f64> {
    let mut out = template.clone();
    let mut k = 0;
    for t in out.tensors_mut() {
        for v in t.mu.data_mut().iter_mut().chain(t.rho.data_mut().iter_mut()) {
            *v = flat[k];
            k += 1;
        }
    }
    out
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let pb = problem(16, 8);
    let net = toy_net(3);
    let mut rng = Rng::new(4);
    let mut params = VariationalParams::init_with_sigma(&net, &mut rng, 0.05);
    for t in params.tensors_mut() {
        for r in t.rho.data_mut() {
            *r += 0.5 * rng.normal();
        }
    }
    let mode = ObjectiveMode::FullyTempered(TemperedPrior::new(0.3, 0.5).unwrap());
    let eps = Rng::new(99);
    let loss_of = |p: &VariationalParams<f64>| {
        tempered_loss(&net, p, &mode, &pb.op, &pb.sino, 1, &mut eps.clone()).unwrap().loss_value()
    };

    let mut lg = tempered_loss(&net, &params, &mode, &pb.op, &pb.sino, 1, &mut eps.clone()).unwrap();
    lg.graph.backward(lg.loss).unwrap();
    let analytic: Vec<f64> = (0..params.tensors().len())
        .flat_map(|i| {
            let gm = lg.graph.grad(lg.params.mu[i]).unwrap().data().to_vec();
            let gr = lg.graph.grad(lg.params.rho[i]).unwrap().data().to_vec();
            gm.into_iter().chain(gr)
        })
        .collect();

    let base = flatten(&params);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let (mut p, mut m) = (base.clone(), base.clone());
        p[i] += h;
        m[i] -= h;
        let numeric = (loss_of(&unflatten(&params, &p)) - loss_of(&unflatten(&params, &m))) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-4, "max relative error {worst} over {} parameters", base.len());
}

#[test]
fn unit_temperature_is_the_untempered_elbo() {
    let pb = problem(16, 8);
    let net = toy_net(5);
    let params = VariationalParams::init_with_sigma(&net, &mut Rng::new(6), 0.02);
    let sigma = 0.7;
    let rng = Rng::new(7);
    let tempered = tempered_loss(
        &net,
        &params,
        &ObjectiveMode::FullyTempered(TemperedPrior::new(sigma, 1.0).unwrap()),
        &pb.op,
        &pb.sino,
        2,
        &mut rng.clone(),
    )
    .unwrap();
    let plain =
        tempered_loss(&net, &params, &ObjectiveMode::PartialLambda { lambda: 1.0, sigma }, &pb.op, &pb.sino, 2, &mut rng.clone())
            .unwrap();
    assert_eq!(tempered.loss_value().to_bits(), plain.loss_value().to_bits());

    // independent assembly: KL + mean of ½‖F x̂ − y‖² over the same draws
    let mut r = rng.clone();
    let mut data = 0.0;
    for _ in 0..2 {
        let out = net.evaluate(&sample_weights(&params, &mut r)).unwrap();
        let proj = pb.op.forward(&Image::new(16, 16, out).unwrap()).unwrap();
        data += 0.5 * proj.values().iter().zip(pb.sino.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let expect = kl_mean_field(&params, &TemperedPrior::untempered(sigma).unwrap()).unwrap() + data / 2.0;
    assert!((tempered.loss_value() - expect).abs() <= 1e-10 * expect.abs(), "{} vs {expect}", tempered.loss_value());
}

#[test]
fn loss_is_affine_in_temperature() {
    let pb = problem(16, 8);
    let net = toy_net(8);
    let params = VariationalParams::init_with_sigma(&net, &mut Rng::new(9), 0.02);
    let kl = kl_mean_field(&params, &TemperedPrior::untempered(0.4).unwrap()).unwrap();
    let rng = Rng::new(10);
    let at = |t: f64| {
        let lg = tempered_loss(&net, &params, &ObjectiveMode::PartialLambda { lambda: t, sigma: 0.4 }, &pb.op, &pb.sino, 1, &mut rng.clone())
            .unwrap();
        (lg.loss_value(), lg.data_value())
    };
    for t in [1e-12, 1e-6, 0.1, 1.0, 3.0] {
        let (loss, data) = at(t);
        assert!((loss - data - t * kl).abs() <= 1e-12 * (1.0 + loss.abs()));
    }
    let (l1, _) = at(0.5);
    let (l2, _) = at(1.5);
    assert!(((l2 - l1) - kl).abs() <= 1e-10 * (1.0 + kl.abs()));
}

#[test]
fn perfect_fit_at_the_prior_has_zero_loss() {
    let net = toy_net(11);
    let g = ProjectionGeometry::parallel(8, 16).unwrap();
    let op = Arc::new(RadonOperator::new(&g, 16).unwrap());
    let prior = TemperedPrior::new(0.2, 0.25).unwrap();
    let mut params = VariationalParams::init(&net, &mut Rng::new(12));
    for t in params.tensors_mut() {
        t.mu.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let rho = softplus_inverse(prior.sigma_t());
        t.rho.data_mut().iter_mut().for_each(|v| *v = rho);
    }
    let rng = Rng::new(13);
    let out = net.evaluate(&sample_weights(&params, &mut rng.clone())).unwrap();
    let sino = op.forward(&Image::new(16, 16, out).unwrap()).unwrap();
    let lg = tempered_loss(&net, &params, &ObjectiveMode::FullyTempered(prior), &op, &sino, 1, &mut rng.clone()).unwrap();
    assert!(lg.loss_value().abs() < 1e-9, "{}", lg.loss_value());
}

#[test]
fn sampling_limits_and_clt() {
    let mut params = scalar(0.7, 0.3);
    let mut rng = Rng::new(14);
    let n = 1_000_000;
    let mean = (0..n).map(|_| sample_weights(&params, &mut rng)[0].data()[0]).sum::<f64>() / n as f64;
    assert!((mean - 0.7).abs() <= 3.0 * 0.3 / 1000.0, "{mean}");
    params.tensors_mut()[0].rho.data_mut()[0] = -800.0;
    assert_eq!(sample_weights(&params, &mut rng)[0].data()[0], 0.7);
    let a = sample_weights(&scalar(0.1, 0.2), &mut Rng::new(3));
    let b = sample_weights(&scalar(0.1, 0.2), &mut Rng::new(3));
    assert_eq!(a, b);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let pb = problem(16, 8);
    let net = toy_net(15);
    let init = VariationalParams::init(&net, &mut Rng::new(16));
    let mut cfg = TrainConfig::new(ObjectiveMode::FullyTempered(TemperedPrior::new(0.1, 1e-3).unwrap()));
    cfg.iterations = 7;
    cfg.learning_rate = 0.0;
    cfg.log_every = 2;
    let out = train(&net, init.clone(), &cfg, &pb.op, &pb.sino, Some(&pb.truth), &mut Rng::new(17)).unwrap();
    assert_eq!(out.params, init);
    let iters: Vec<usize> = out.history.iter().map(|h| h.iteration).collect();
    assert_eq!(iters, vec![0, 2, 4, 6, 7]);
    assert!(out.history.iter().all(|h| h.psnr.is_some()));
}

#[test]
fn training_reduces_loss_and_is_reproducible() {
    let pb = problem(16, 8);
    let net = toy_net(18);
    let init = VariationalParams::init(&net, &mut Rng::new(19));
    let mut cfg = TrainConfig::new(ObjectiveMode::FullyTempered(TemperedPrior::new(0.1, 1e-4).unwrap()));
    cfg.iterations = 150;
    cfg.learning_rate = 1e-2;
    let a = train(&net, init.clone(), &cfg, &pb.op, &pb.sino, Some(&pb.truth), &mut Rng::new(20)).unwrap();
    let b = train(&net, init, &cfg, &pb.op, &pb.sino, Some(&pb.truth), &mut Rng::new(20)).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    let first = a.history.first().unwrap().loss;
    let last = a.history.last().unwrap().loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn divergence_reports_last_good_iteration() {
    let pb = problem(16, 8);
    let net = toy_net(21);
    let init = VariationalParams::init(&net, &mut Rng::new(22));
    let mut cfg = TrainConfig::new(ObjectiveMode::FullyTempered(TemperedPrior::new(0.1, 1.0).unwrap()));
    cfg.iterations = 50;
    cfg.learning_rate = 1e4;
    match train(&net, init, &cfg, &pb.op, &pb.sino, None, &mut Rng::new(23)) {
        Err(Error::Diverged { iteration, last_good_iteration }) => {
            assert!(iteration > 0);
            assert_eq!(last_good_iteration, Some(iteration - 1));
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history.len())),
    }
}

#[test]
fn prediction_edge_cases() {
    let net = toy_net(24);
    let mut params = VariationalParams::init(&net, &mut Rng::new(25));
    let (_, v1) = predict(&net, &params, 1, &mut Rng::new(26)).unwrap();
    assert!(v1.pixels().iter().all(|&v| v == 0.0));
    for t in params.tensors_mut() {
        t.rho.data_mut().iter_mut().for_each(|v| *v = -800.0);
    }
    let (mean, var) = predict(&net, &params, 5, &mut Rng::new(27)).unwrap();
    assert!(var.pixels().iter().all(|&v| v == 0.0));
    let det = predict_mean_weights(&net, &params).unwrap();
    assert_eq!(mean, det);
    assert!(predict(&net, &params, 0, &mut Rng::new(1)).is_err());
}

#[test]
fn training_shrinks_a_wide_posterior() {
    let pb = problem(16, 8);
    let net = toy_net(28);
    let init = VariationalParams::init_with_sigma(&net, &mut Rng::new(29), 0.3);
    let mut cfg = TrainConfig::new(ObjectiveMode::FullyTempered(TemperedPrior::new(0.1, 1e-4).unwrap()));
    cfg.iterations = 300;
    cfg.learning_rate = 1e-2;
    let trained = train(&net, init.clone(), &cfg, &pb.op, &pb.sino, None, &mut Rng::new(30)).unwrap().params;
    let mean_var = |p: &VariationalParams<f64>| {
        let (_, v) = predict(&net, p, 32, &mut Rng::new(31)).unwrap();
        v.mean()
    };
    let (before, after) = (mean_var(&init), mean_var(&trained));
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn single_precision_training_runs() {
    let truth = shepp_logan::<f32>(16).unwrap();
    let g = ProjectionGeometry::parallel(8, 16).unwrap();
    let op = Arc::new(coldpost::radon::RadonOperator::<f32>::new(&g, 16).unwrap());
    let sino = op.forward(&truth).unwrap();
    let arch = ArchConfig { image_size: 16, input_channels: 2, channels: 4, depth: 1, bottleneck_convs: 1 };
    let net = coldpost::mfvi::DipNetwork::<f32>::new(arch, &mut Rng::new(1)).unwrap();
    let init = VariationalParams::<f32>::init(&net, &mut Rng::new(2));
    let mut cfg = TrainConfig::new(ObjectiveMode::FullyTempered(TemperedPrior::new(0.1f32, 1e-3).unwrap()));
    cfg.iterations = 40;
    cfg.learning_rate = 1e-2;
    let out = train(&net, init, &cfg, &op, &sino, Some(&truth), &mut Rng::new(3)).unwrap();
    assert!(out.history.last().unwrap().loss < out.history[0].loss);
}
