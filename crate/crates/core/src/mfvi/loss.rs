use std::fmt;
use std::sync::Arc;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::data::Rng;
use crate::error::{invalid, Result};
use crate::mfvi::params::{kl_node, ParamNodes};
use crate::mfvi::{DipNetwork, LayerNodes, TemperedPrior, VariationalParams};
use crate::radon::{RadonOperator, Sinogram};
use crate::scalar::Scalar;

/// Which objective the network is trained under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectiveMode<T> {
    /// `T·KL[q ‖ p_T] + ½‖F x̂ − y‖²`.
    FullyTempered(TemperedPrior<T>),
    /// `λ·KL[q ‖ N(0, σ²)] + ½‖F x̂ − y‖²`: only the complexity term is reweighted.
    PartialLambda { lambda: T, sigma: T },
    /// Plain deep image prior: point weights, no KL.
    Deterministic,
}

impl<T: Scalar> ObjectiveMode<T> {
    pub fn is_bayesian(&self) -> bool {
        !matches!(self, ObjectiveMode::Deterministic)
    }

    /// `(KL weight, prior standard deviation used inside the KL)`.
    fn kl_weight_and_scale(&self) -> Option<(T, T)> {
        match *self {
            ObjectiveMode::FullyTempered(prior) => Some((prior.temperature(), prior.sigma_t())),
            ObjectiveMode::PartialLambda { lambda, sigma } => Some((lambda, sigma)),
            ObjectiveMode::Deterministic => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ObjectiveMode::PartialLambda { lambda, sigma } = *self {
            if !(lambda >= T::zero() && lambda.is_finite()) || !(sigma > T::zero() && sigma.is_finite()) {
                return Err(invalid(format!("partial tempering needs lambda >= 0 and sigma > 0, got {lambda}, {sigma}")));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> fmt::Display for ObjectiveMode<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveMode::FullyTempered(p) => write!(
                f,
                "fully_tempered(T={}, sigma={}, sigma_T={}, prior_scaling={})",
                p.temperature(),
                p.sigma(),
                p.sigma_t(),
                p.scaling()
            ),
            ObjectiveMode::PartialLambda { lambda, sigma } => write!(f, "partial_lambda(lambda={lambda}, sigma={sigma})"),
            ObjectiveMode::Deterministic => f.write_str("deterministic"),
        }
    }
}

/// One evaluated loss graph with handles to its parts.
pub struct LossGraph<T> {
    pub graph: Graph<T>,
    pub loss: NodeId,
    /// Unweighted KL term (absent in deterministic mode).
    pub kl: Option<NodeId>,
    /// Monte Carlo average of `½‖F x̂ − y‖²`.
    pub data: NodeId,
    pub params: ParamNodes,
    /// Network output `[1, 1, H, W]` of every weight sample.
    pub outputs: Vec<NodeId>,
}

impl<T: Scalar> LossGraph<T> {
    pub fn loss_value(&self) -> T {
        self.graph.value(self.loss).item()
    }

    pub fn kl_value(&self) -> Option<T> {
        self.kl.map(|k| self.graph.value(k).item())
    }

    pub fn data_value(&self) -> T {
        self.graph.value(self.data).item()
    }
}

/// Builds the training objective for one step.
///
/// Each of the `mc_samples` weight draws uses fresh standard-normal noise
/// from `rng`, consumed tensor by tensor in the same order as
/// [`crate::mfvi::sample_weights`].
pub fn tempered_loss<T: Scalar>(
    net: &DipNetwork<T>,
    params: &VariationalParams<T>,
    mode: &ObjectiveMode<T>,
    operator: &Arc<RadonOperator<T>>,
    sinogram: &Sinogram<T>,
    mc_samples: usize,
    rng: &mut Rng,
) -> Result<LossGraph<T>> {
    mode.validate()?;
    params.check_compatible(net)?;
    if mc_samples == 0 {
        return Err(invalid("mc_samples must be at least 1"));
    }
    if operator.side() != net.image_size() || operator.geometry() != sinogram.geometry() {
        return Err(invalid("Radon operator, sinogram and network disagree on geometry or image size"));
    }
    let bayesian = mode.is_bayesian();
    let mut g = Graph::new();
    let nodes = ParamNodes {
        mu: params.tensors().iter().map(|t| g.parameter(t.mu.clone())).collect(),
        rho: if bayesian { params.tensors().iter().map(|t| g.parameter(t.rho.clone())).collect() } else { Vec::new() },
    };
    let target = g.constant(Tensor::new(
        [sinogram.geometry().num_angles(), sinogram.geometry().num_bins()],
        sinogram.values().to_vec(),
    )?);

    let samples = if bayesian { mc_samples } else { 1 };
    let mut outputs = Vec::with_capacity(samples);
    let mut data_terms = Vec::with_capacity(samples);
    for _ in 0..samples {
        let weights: Vec<NodeId> = if bayesian {
            let mut ws = Vec::with_capacity(nodes.mu.len());
            for (t, (&mu, &rho)) in params.tensors().iter().zip(nodes.mu.iter().zip(&nodes.rho)) {
                let mut eps = vec![T::zero(); t.mu.len()];
                rng.fill_normal(&mut eps);
                let eps = g.constant(Tensor::new(t.mu.shape().to_vec(), eps)?);
                let sw = g.softplus(rho)?;
                let noise = g.mul(sw, eps)?;
                ws.push(g.add(mu, noise)?);
            }
            ws
        } else {
            nodes.mu.clone()
        };
        let layers: Vec<LayerNodes> = weights.chunks(2).map(|wb| LayerNodes { weight: wb[0], bias: wb[1] }).collect();
        let out = net.forward(&mut g, &layers)?;
        outputs.push(out);
        let proj = g.linear(out, operator.clone() as Arc<_>)?;
        let resid = g.sub(proj, target)?;
        let sq = g.square(resid)?;
        let ssq = g.sum(sq)?;
        data_terms.push(g.scale(ssq, T::lit(0.5))?);
    }
    let mut data = data_terms[0];
    for &d in &data_terms[1..] {
        data = g.add(data, d)?;
    }
    if samples > 1 {
        data = g.scale(data, T::one() / T::from_usize_lossy(samples))?;
    }

    let (loss, kl) = match mode.kl_weight_and_scale() {
        Some((weight, prior_sd)) => {
            let kl = kl_node(&mut g, &nodes, prior_sd)?;
            let weighted = g.scale(kl, weight)?;
            (g.add(weighted, data)?, Some(kl))
        }
        None => (data, None),
    };
    Ok(LossGraph { graph: g, loss, kl, data, params: nodes, outputs })
}
