use std::sync::Arc;

use crate::autodiff::kernels::{self, ConvGeom};
use crate::autodiff::tensor::{numel, Tensor};
use crate::error::{invalid, numeric, Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};

/// Negative-side slope of [`Graph::leaky_relu`].
pub const LEAKY_RELU_SLOPE: f64 = 0.1;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A fixed linear map usable as a graph op; the backward pass applies its
/// adjoint.
pub trait LinearOperator<T>: Send + Sync {
    fn input_shape(&self) -> Vec<usize>;
    fn output_shape(&self) -> Vec<usize>;
    /// `out ← A·x`; `out` is pre-zeroed.
    fn apply(&self, x: &[T], out: &mut [T]);
    /// `out ← Aᵀ·y`; `out` is pre-zeroed.
    fn apply_adjoint(&self, y: &[T], out: &mut [T]);
}

enum Op<T> {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Conv2d { input: NodeId, weight: NodeId, geom: ConvGeom, cols: Vec<T> },
    ChannelBias(NodeId, NodeId),
    Upsample2(NodeId),
    LeakyRelu(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Ln(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId, T),
    Reshape(NodeId),
    Linear(NodeId, Arc<dyn LinearOperator<T>>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::ChannelBias(..) => "channel_bias",
            Op::Upsample2(..) => "upsample_nearest2",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Ln(..) => "ln",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Reshape(..) => "reshape",
            Op::Linear(..) => "linear",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and the backward pass is a single reverse sweep.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inverse<T: Scalar>(y: T) -> T {
    // ln(e^y - 1) = y + ln(1 - e^{-y})
    y + (-(-y).exp()).ln_1p()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Gradient of the last [`Graph::backward`] loss with respect to `id`.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        if let Some(i) = value.first_non_finite() {
            return Err(numeric(format!("node {} ({}) produced a non-finite value at element {i}", id.0, op.name())));
        }
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::ChannelBias(a, b) => {
                self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
            }
            Op::Conv2d { input, weight, .. } => {
                self.nodes[input.0].requires_grad || self.nodes[weight.0].requires_grad
            }
            Op::Upsample2(a)
            | Op::LeakyRelu(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Ln(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Reshape(a)
            | Op::Linear(a, _) => self.nodes[a.0].requires_grad,
        };
        self.nodes.push(Node { op, value, requires_grad });
        Ok(id)
    }

    /// Differentiable input.
    pub fn parameter(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, value).expect("parameter values must be finite")
    }

    pub fn try_parameter(&mut self, value: Tensor<T>) -> Result<NodeId> {
        self.push(Op::Leaf, value)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Constant, value).expect("constant values must be finite")
    }

    fn same_shape(&self, op: &str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(invalid(format!("{op}: shape mismatch {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<NodeId> {
        self.same_shape(op.name(), a, b)?;
        let v = self.value(a).zip_map(self.value(b), f);
        self.push(op, v)
    }

    fn unary(&mut self, a: NodeId, op: Op<T>, f: impl Fn(T) -> T) -> Result<NodeId> {
        let v = self.value(a).map(f);
        self.push(op, v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `[m,k]·[k,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(invalid(format!("matmul: incompatible shapes {sa:?} and {sb:?}")));
        }
        let mut out = vec![T::zero(); sa[0] * sb[1]];
        gemm(
            MatRef::new(self.value(a).data(), sa[0], sa[1]),
            MatRef::new(self.value(b).data(), sb[0], sb[1]),
            T::zero(),
            &mut out,
        );
        self.push(Op::MatMul(a, b), Tensor::from_parts(vec![sa[0], sb[1]], out))
    }

    /// Zero-padded ("same" padding `k/2`) convolution of `input`
    /// `[N, C_in, H, W]` with `weight` `[C_out, C_in, k, k]`, `k` odd.
    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, stride: usize) -> Result<NodeId> {
        let (si, sw) = (self.shape(input).to_vec(), self.shape(weight).to_vec());
        let bad = || invalid(format!("conv2d: incompatible input {si:?} and weight {sw:?} (stride {stride})"));
        if si.len() != 4 || sw.len() != 4 || si[1] != sw[1] || sw[2] != sw[3] || sw[2] % 2 == 0 {
            return Err(bad());
        }
        if stride != 1 && stride != 2 {
            return Err(invalid(format!("conv2d: stride must be 1 or 2, got {stride}")));
        }
        let (n, c_out) = (si[0], sw[0]);
        let geom = ConvGeom::new(si[1], si[2], si[3], sw[2], stride).ok_or_else(bad)?;
        let in_len = geom.c_in * geom.h * geom.w;
        let col_len = geom.patch_len() * geom.out_plane();
        let out_len = c_out * geom.out_plane();
        let mut cols = vec![T::zero(); n * col_len];
        let mut out = vec![T::zero(); n * out_len];
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        for b in 0..n {
            let c = &mut cols[b * col_len..(b + 1) * col_len];
            kernels::im2col(&geom, &x[b * in_len..(b + 1) * in_len], c);
            kernels::conv_forward(&geom, c_out, wt, c, &mut out[b * out_len..(b + 1) * out_len]);
        }
        let shape = vec![n, c_out, geom.h_out, geom.w_out];
        self.push(Op::Conv2d { input, weight, geom, cols }, Tensor::from_parts(shape, out))
    }

    /// Adds `bias[c]` to every element of channel `c` of an `[N, C, H, W]` tensor.
    pub fn add_channel_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sx.len() != 4 || sb != [sx[1]] {
            return Err(invalid(format!("channel_bias: shape mismatch {sx:?} vs {sb:?}")));
        }
        let plane = sx[2] * sx[3];
        let b = self.value(bias).data();
        let mut v = self.value(x).clone();
        for (i, chunk) in v.data_mut().chunks_mut(plane).enumerate() {
            let bc = b[i % sx[1]];
            chunk.iter_mut().for_each(|e| *e += bc);
        }
        self.push(Op::ChannelBias(x, bias), v)
    }

    /// Nearest-neighbour ×2 upsampling of an `[N, C, H, W]` tensor.
    pub fn upsample_nearest2(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(invalid(format!("upsample_nearest2: expected [N,C,H,W], got {s:?}")));
        }
        let out = kernels::upsample2(s[0] * s[1], s[2], s[3], self.value(x).data());
        self.push(Op::Upsample2(x), Tensor::from_parts(vec![s[0], s[1], 2 * s[2], 2 * s[3]], out))
    }

    pub fn leaky_relu(&mut self, x: NodeId) -> Result<NodeId> {
        let slope = T::lit(LEAKY_RELU_SLOPE);
        self.unary(x, Op::LeakyRelu(x), |v| if v > T::zero() { v } else { slope * v })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Softplus(x), softplus)
    }

    /// Natural logarithm; non-positive inputs surface as a numeric error.
    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Ln(x), |v| v.ln())
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::from_usize_lossy(v.len());
        self.push(Op::Mean(x), Tensor::scalar(s))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> Result<NodeId> {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: T) -> Result<NodeId> {
        self.unary(x, Op::AddScalar(x, c), |v| v + c)
    }

    pub fn reshape(&mut self, x: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        let v = self.value(x).clone().reshaped(shape)?;
        self.push(Op::Reshape(x), v)
    }

    /// Applies a fixed linear operator; the input is reshaped implicitly as
    /// long as the element counts agree.
    pub fn linear(&mut self, x: NodeId, op: Arc<dyn LinearOperator<T>>) -> Result<NodeId> {
        let (in_shape, out_shape) = (op.input_shape(), op.output_shape());
        if numel(&in_shape) != self.value(x).len() {
            return Err(invalid(format!(
                "linear: operator expects input {in_shape:?}, got {:?}",
                self.shape(x)
            )));
        }
        let mut out = vec![T::zero(); numel(&out_shape)];
        op.apply(self.value(x).data(), &mut out);
        self.push(Op::Linear(x, op), Tensor::from_parts(out_shape, out))
    }

    /// Reverse sweep from the scalar `loss`. Gradient accumulators are reset
    /// on every call; every parameter gets a gradient (zero when the loss
    /// does not depend on it).
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(invalid(format!("backward: loss must be scalar, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss).to_vec(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let mut bad = None;
        let mut acc = |grads: &mut [Option<Tensor<T>>], id: NodeId, contrib: Tensor<T>| {
            if bad.is_none() {
                bad = contrib.first_non_finite();
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    acc(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(grads, *a, g.zip_map(val(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    acc(grads, *b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(MatRef::new(g.data(), m, n), MatRef::new(val(*b).data(), k, n).t(), T::zero(), &mut ga);
                    acc(grads, *a, Tensor::from_parts(sa.to_vec(), ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(MatRef::new(val(*a).data(), m, k).t(), MatRef::new(g.data(), m, n), T::zero(), &mut gb);
                    acc(grads, *b, Tensor::from_parts(sb.to_vec(), gb));
                }
            }
            Op::Conv2d { input, weight, geom, cols } => {
                let si = val(*input).shape().to_vec();
                let sw = val(*weight).shape().to_vec();
                let (n, c_out) = (si[0], sw[0]);
                let in_len = geom.c_in * geom.h * geom.w;
                let col_len = geom.patch_len() * geom.out_plane();
                let out_len = c_out * geom.out_plane();
                if self.wants(*weight) {
                    let mut gw = vec![T::zero(); sw.iter().product()];
                    for b in 0..n {
                        kernels::conv_weight_grad(
                            geom,
                            c_out,
                            &g.data()[b * out_len..(b + 1) * out_len],
                            &cols[b * col_len..(b + 1) * col_len],
                            &mut gw,
                        );
                    }
                    acc(grads, *weight, Tensor::from_parts(sw, gw));
                }
                if self.wants(*input) {
                    let wt = val(*weight).data();
                    let mut gx = vec![T::zero(); n * in_len];
                    let mut dcols = vec![T::zero(); col_len];
                    for b in 0..n {
                        kernels::conv_cols_grad(geom, c_out, wt, &g.data()[b * out_len..(b + 1) * out_len], &mut dcols);
                        kernels::col2im(geom, &dcols, &mut gx[b * in_len..(b + 1) * in_len]);
                    }
                    acc(grads, *input, Tensor::from_parts(si, gx));
                }
            }
            Op::ChannelBias(x, bias) => {
                if self.wants(*x) {
                    acc(grads, *x, g.clone());
                }
                if self.wants(*bias) {
                    let s = val(*x).shape();
                    let (c, plane) = (s[1], s[2] * s[3]);
                    let mut gb = vec![T::zero(); c];
                    for (i, chunk) in g.data().chunks(plane).enumerate() {
                        gb[i % c] += chunk.iter().copied().sum::<T>();
                    }
                    acc(grads, *bias, Tensor::from_parts(vec![c], gb));
                }
            }
            Op::Upsample2(x) => {
                let s = val(*x).shape();
                let back = kernels::upsample2_adjoint(s[0] * s[1], s[2], s[3], g.data());
                acc(grads, *x, Tensor::from_parts(s.to_vec(), back));
            }
            Op::LeakyRelu(x) => {
                let slope = T::lit(LEAKY_RELU_SLOPE);
                acc(grads, *x, g.zip_map(val(*x), |gv, xv| if xv > T::zero() { gv } else { gv * slope }));
            }
            Op::Sigmoid(x) => {
                acc(grads, *x, g.zip_map(&node.value, |gv, y| gv * y * (T::one() - y)));
            }
            Op::Softplus(x) => {
                acc(grads, *x, g.zip_map(val(*x), |gv, xv| gv * sigmoid(xv)));
            }
            Op::Ln(x) => {
                acc(grads, *x, g.zip_map(val(*x), |gv, xv| gv / xv));
            }
            Op::Square(x) => {
                let two = T::lit(2.0);
                acc(grads, *x, g.zip_map(val(*x), |gv, xv| gv * two * xv));
            }
            Op::Sum(x) => {
                acc(grads, *x, Tensor::full(val(*x).shape().to_vec(), g.item()));
            }
            Op::Mean(x) => {
                let n = T::from_usize_lossy(val(*x).len());
                acc(grads, *x, Tensor::full(val(*x).shape().to_vec(), g.item() / n));
            }
            Op::Scale(x, c) => {
                let c = *c;
                acc(grads, *x, g.map(|v| v * c));
            }
            Op::AddScalar(x, _) => acc(grads, *x, g.clone()),
            Op::Reshape(x) => {
                acc(grads, *x, g.clone().reshaped(val(*x).shape().to_vec())?);
            }
            Op::Linear(x, op) => {
                let mut out = vec![T::zero(); val(*x).len()];
                op.apply_adjoint(g.data(), &mut out);
                acc(grads, *x, Tensor::from_parts(val(*x).shape().to_vec(), out));
            }
        }
        if let Some(bad) = bad {
            return Err(Error::Numeric(format!(
                "backward through node {i} ({}) produced a non-finite gradient (element {bad})",
                node.op.name()
            )));
        }
        Ok(())
    }
}
