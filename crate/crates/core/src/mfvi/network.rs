use std::fmt;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::data::{uniform_noise_image, Rng};
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Shape of the encoder-decoder used as image parameterization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    pub image_size: usize,
    /// Channels of the fixed noise input.
    pub input_channels: usize,
    /// Width of every hidden layer.
    pub channels: usize,
    /// Number of stride-2 down stages, mirrored by as many upsample stages.
    pub depth: usize,
    /// Stride-1 convolutions between encoder and decoder.
    pub bottleneck_convs: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { image_size: 64, input_channels: 32, channels: 32, depth: 3, bottleneck_convs: 2 }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.input_channels == 0 || self.channels == 0 {
            return Err(invalid("architecture dimensions must be positive"));
        }
        let f = 1usize << self.depth;
        if self.image_size % f != 0 {
            return Err(invalid(format!(
                "image size {} not divisible by 2^{} required by the down/up stages",
                self.image_size, self.depth
            )));
        }
        if self.depth == 0 && self.bottleneck_convs == 0 {
            return Err(invalid("network needs at least one hidden convolution"));
        }
        Ok(())
    }
}

impl fmt::Display for ArchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "encoder-decoder: noise {}x{}x{} -> {} x conv3x3/s2 -> {} x conv3x3 -> {} x (upsample-nearest x2 + conv3x3) -> conv1x1 + sigmoid; width {}; leaky-relu 0.1",
            self.input_channels,
            self.image_size,
            self.image_size,
            self.depth,
            self.bottleneck_convs,
            self.depth,
            self.channels
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Nearest ×2 upsampling before the convolution.
    pub upsample: bool,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kernel, self.kernel]
    }

    pub fn fan_in(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }
}

/// Graph handles of one layer's weight and bias.
#[derive(Debug, Clone, Copy)]
pub struct LayerNodes {
    pub weight: NodeId,
    pub bias: NodeId,
}

/// Convolutional autoencoder fed with a fixed uniform-noise input.
#[derive(Debug, Clone)]
pub struct DipNetwork<T> {
    arch: ArchConfig,
    layers: Vec<LayerSpec>,
    input: Tensor<T>,
}

impl<T: Scalar> DipNetwork<T> {
    /// Builds the layer stack and draws the noise input from `rng`.
    pub fn new(arch: ArchConfig, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut layers = Vec::new();
        let c = arch.channels;
        let conv = |c_in, stride, upsample| LayerSpec {
            c_in,
            c_out: c,
            kernel: 3,
            stride,
            upsample,
            activation: Activation::LeakyRelu,
        };
        let mut c_in = arch.input_channels;
        for _ in 0..arch.depth {
            layers.push(conv(c_in, 2, false));
            c_in = c;
        }
        for _ in 0..arch.bottleneck_convs {
            layers.push(conv(c_in, 1, false));
            c_in = c;
        }
        for _ in 0..arch.depth {
            layers.push(conv(c_in, 1, true));
            c_in = c;
        }
        layers.push(LayerSpec { c_in, c_out: 1, kernel: 1, stride: 1, upsample: false, activation: Activation::Sigmoid });

        let noise = uniform_noise_image::<T>(rng, arch.input_channels, arch.image_size);
        let input = noise.reshaped([1, arch.input_channels, arch.image_size, arch.image_size])?;
        Ok(Self { arch, layers, input })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }

    pub fn image_size(&self) -> usize {
        self.arch.image_size
    }

    /// Shapes of all parameter tensors in canonical order: per layer, weight
    /// then bias.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().flat_map(|l| [l.weight_shape().to_vec(), vec![l.c_out]]).collect()
    }

    pub fn num_weights(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Appends the forward pass to `graph`; returns the `[1, 1, H, W]` output.
    pub fn forward(&self, graph: &mut Graph<T>, params: &[LayerNodes]) -> Result<NodeId> {
        if params.len() != self.layers.len() {
            return Err(invalid(format!("network has {} layers, got {} weight sets", self.layers.len(), params.len())));
        }
        let mut h = graph.constant(self.input.clone());
        for (spec, p) in self.layers.iter().zip(params) {
            if spec.upsample {
                h = graph.upsample_nearest2(h)?;
            }
            h = graph.conv2d(h, p.weight, spec.stride)?;
            h = graph.add_channel_bias(h, p.bias)?;
            h = match spec.activation {
                Activation::LeakyRelu => graph.leaky_relu(h)?,
                Activation::Sigmoid => graph.sigmoid(h)?,
            };
        }
        Ok(h)
    }

    /// Output for fixed weight values (one tensor per entry of
    /// [`DipNetwork::param_shapes`]), flattened row-major.
    pub fn evaluate(&self, weights: &[Tensor<T>]) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let nodes = fixed_layer_nodes(&mut g, weights)?;
        let out = self.forward(&mut g, &nodes)?;
        Ok(g.value(out).data().to_vec())
    }
}

fn fixed_layer_nodes<T: Scalar>(g: &mut Graph<T>, weights: &[Tensor<T>]) -> Result<Vec<LayerNodes>> {
    if weights.len() % 2 != 0 {
        return Err(invalid("weights come in (weight, bias) pairs"));
    }
    Ok(weights
        .chunks(2)
        .map(|wb| LayerNodes { weight: g.constant(wb[0].clone()), bias: g.constant(wb[1].clone()) })
        .collect())
}
