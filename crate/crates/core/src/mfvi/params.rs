use std::fmt;

use crate::autodiff::{softplus, softplus_inverse, Graph, NodeId, Tensor};
use crate::data::Rng;
use crate::error::{invalid, numeric, Result};
use crate::mfvi::DipNetwork;
use crate::scalar::Scalar;

/// Factorized Gaussian over one weight tensor: `w ~ N(mu, softplus(rho)²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTensor<T> {
    pub mu: Tensor<T>,
    pub rho: Tensor<T>,
}

impl<T: Scalar> GaussianTensor<T> {
    pub fn new(mu: Tensor<T>, rho: Tensor<T>) -> Result<Self> {
        if mu.shape() != rho.shape() {
            return Err(invalid(format!("mu shape {:?} differs from rho shape {:?}", mu.shape(), rho.shape())));
        }
        Ok(Self { mu, rho })
    }

    pub fn sigma(&self) -> Tensor<T> {
        self.rho.map(softplus)
    }
}

/// Mean-field variational parameters of every weight tensor of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams<T> {
    tensors: Vec<GaussianTensor<T>>,
}

/// Initial weight spread `softplus(rho)`.
pub const INIT_SIGMA: f64 = 1e-3;

impl<T: Scalar> VariationalParams<T> {
    pub fn new(tensors: Vec<GaussianTensor<T>>) -> Self {
        Self { tensors }
    }

    /// He-normal means for weights, zero means for biases, spread
    /// [`INIT_SIGMA`] everywhere.
    pub fn init(net: &DipNetwork<T>, rng: &mut Rng) -> Self {
        Self::init_with_sigma(net, rng, T::lit(INIT_SIGMA))
    }

    pub fn init_with_sigma(net: &DipNetwork<T>, rng: &mut Rng, sigma: T) -> Self {
        let rho0 = softplus_inverse(sigma);
        let mut tensors = Vec::new();
        for layer in net.layers() {
            let shape = layer.weight_shape().to_vec();
            let n: usize = shape.iter().product();
            let std = T::lit((2.0 / layer.fan_in() as f64).sqrt());
            let mut mu = vec![T::zero(); n];
            rng.fill_normal(&mut mu);
            mu.iter_mut().for_each(|v| *v *= std);
            tensors.push(GaussianTensor {
                mu: Tensor::new(shape.clone(), mu).expect("shape"),
                rho: Tensor::full(shape, rho0),
            });
            tensors.push(GaussianTensor { mu: Tensor::zeros([layer.c_out]), rho: Tensor::full([layer.c_out], rho0) });
        }
        Self { tensors }
    }

    pub fn tensors(&self) -> &[GaussianTensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [GaussianTensor<T>] {
        &mut self.tensors
    }

    pub fn num_weights(&self) -> usize {
        self.tensors.iter().map(|t| t.mu.len()).sum()
    }

    pub fn means(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| t.mu.clone()).collect()
    }

    /// Mean spread `softplus(rho)` across all weights.
    pub fn mean_sigma(&self) -> T {
        let total: T = self.tensors.iter().flat_map(|t| t.rho.data().iter().map(|&r| softplus(r))).sum();
        total / T::from_usize_lossy(self.num_weights())
    }

    pub fn check_compatible(&self, net: &DipNetwork<T>) -> Result<()> {
        let shapes = net.param_shapes();
        if shapes.len() != self.tensors.len()
            || shapes.iter().zip(&self.tensors).any(|(s, t)| s.as_slice() != t.mu.shape())
        {
            return Err(invalid("variational parameters do not match the network layout"));
        }
        Ok(())
    }
}

/// How the temperature rescales the prior standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorScaling {
    /// `sigma_T = sqrt(T)·sigma`, i.e. prior variance `T·sigma²`.
    #[default]
    SqrtT,
    /// `sigma_T = sigma / sqrt(T)`, i.e. prior variance `sigma²/T`.
    InverseSqrtT,
}

impl fmt::Display for PriorScaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorScaling::SqrtT => "sqrt-t",
            PriorScaling::InverseSqrtT => "inverse-sqrt-t",
        })
    }
}

/// Zero-mean isotropic Gaussian prior tempered by `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperedPrior<T> {
    sigma: T,
    temperature: T,
    scaling: PriorScaling,
}

impl<T: Scalar> TemperedPrior<T> {
    pub fn new(sigma: T, temperature: T) -> Result<Self> {
        Self::with_scaling(sigma, temperature, PriorScaling::SqrtT)
    }

    pub fn with_scaling(sigma: T, temperature: T, scaling: PriorScaling) -> Result<Self> {
        if !(sigma > T::zero() && sigma.is_finite()) {
            return Err(invalid(format!("prior sigma must be positive and finite, got {sigma}")));
        }
        if !(temperature > T::zero() && temperature.is_finite()) {
            return Err(invalid(format!("temperature must be positive and finite, got {temperature}")));
        }
        Ok(Self { sigma, temperature, scaling })
    }

    /// Untempered prior (`T = 1`).
    pub fn untempered(sigma: T) -> Result<Self> {
        Self::new(sigma, T::one())
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    pub fn scaling(&self) -> PriorScaling {
        self.scaling
    }

    /// Standard deviation of the tempered prior.
    pub fn sigma_t(&self) -> T {
        match self.scaling {
            PriorScaling::SqrtT => self.temperature.sqrt() * self.sigma,
            PriorScaling::InverseSqrtT => self.sigma / self.temperature.sqrt(),
        }
    }
}

/// Closed-form `KL[q ‖ N(0, sigma_T² I)]` summed over all weights.
pub fn kl_mean_field<T: Scalar>(params: &VariationalParams<T>, prior: &TemperedPrior<T>) -> Result<T> {
    let st = prior.sigma_t();
    let two_var = T::lit(2.0) * st * st;
    let half = T::lit(0.5);
    let mut total = T::zero();
    for t in params.tensors() {
        for (&mu, &rho) in t.mu.data().iter().zip(t.rho.data()) {
            let sw = softplus(rho);
            total += (st / sw).ln() + (sw * sw + mu * mu) / two_var - half;
        }
    }
    if !total.is_finite() {
        return Err(numeric(format!("KL divergence is not finite (sigma_T = {st})")));
    }
    Ok(total)
}

/// Graph nodes of the variational parameters of one loss evaluation.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    pub mu: Vec<NodeId>,
    /// Empty in deterministic mode.
    pub rho: Vec<NodeId>,
}

/// Adds the KL term to `graph` with the same algebra as [`kl_mean_field`],
/// grouped as `n·(ln σ_T − ½) − Σ ln σ_w + (Σ σ_w² + Σ μ²)/(2σ_T²)`.
pub(crate) fn kl_node<T: Scalar>(graph: &mut Graph<T>, nodes: &ParamNodes, sigma_t: T) -> Result<NodeId> {
    let mut n = 0usize;
    let mut log_terms = Vec::new();
    let mut sq_terms = Vec::new();
    for (&mu, &rho) in nodes.mu.iter().zip(&nodes.rho) {
        n += graph.value(mu).len();
        let sw = graph.softplus(rho)?;
        let ln_sw = graph.ln(sw)?;
        log_terms.push(graph.sum(ln_sw)?);
        let sw2 = graph.square(sw)?;
        sq_terms.push(graph.sum(sw2)?);
        let mu2 = graph.square(mu)?;
        sq_terms.push(graph.sum(mu2)?);
    }
    let sum_all = |g: &mut Graph<T>, xs: &[NodeId]| -> Result<NodeId> {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = g.add(acc, x)?;
        }
        Ok(acc)
    };
    if log_terms.is_empty() {
        return Err(invalid("KL of an empty parameter set"));
    }
    let sum_ln = sum_all(graph, &log_terms)?;
    let sum_sq = sum_all(graph, &sq_terms)?;
    let quad = graph.scale(sum_sq, T::one() / (T::lit(2.0) * sigma_t * sigma_t))?;
    let neg_ln = graph.scale(sum_ln, -T::one())?;
    let kl = graph.add(quad, neg_ln)?;
    let constant = T::from_usize_lossy(n) * (sigma_t.ln() - T::lit(0.5));
    graph.add_scalar(kl, constant)
}

/// One reparameterized weight draw `w = mu + softplus(rho)·eps`.
pub fn sample_weights<T: Scalar>(params: &VariationalParams<T>, rng: &mut Rng) -> Vec<Tensor<T>> {
    params
        .tensors()
        .iter()
        .map(|t| {
            let mut eps = vec![T::zero(); t.mu.len()];
            rng.fill_normal(&mut eps);
            let data = t
                .mu
                .data()
                .iter()
                .zip(t.rho.data())
                .zip(&eps)
                .map(|((&mu, &rho), &e)| mu + softplus(rho) * e)
                .collect();
            Tensor::new(t.mu.shape().to_vec(), data).expect("shape")
        })
        .collect()
}
