use serde::{Deserialize, Serialize};

use super::{Activation, DiscreteOp, Loss};
use crate::error::{Error, Result};
use crate::linalg::{matmul_nt, Matrix, Rng};

/// Architecture of one layer, independent of its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
    pub discrete: DiscreteOp,
    pub loss: Loss,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation, loss: Loss) -> Self {
        Self {
            width,
            activation,
            discrete: DiscreteOp::None,
            loss,
        }
    }

    pub fn with_discrete(mut self, discrete: DiscreteOp) -> Self {
        self.discrete = discrete;
        self
    }
}

/// One dense layer.
///
/// `weights` is `out x in`; `feedback` (the error weights `E`) is `in x out`,
/// i.e. shaped like `weightsᵀ`. The bottom layer never carries feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub discrete: DiscreteOp,
    pub loss: Loss,
    pub feedback: Option<Matrix>,
    /// Multiplier applied to the pre-activation before `f` (slope annealing); 1 otherwise.
    pub slope: f64,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec {
            width: self.out_dim(),
            activation: self.activation,
            discrete: self.discrete,
            loss: self.loss,
        }
    }

    /// `h = input · Wᵀ + b`
    pub fn pre_activation(&self, input: &Matrix) -> Result<Matrix> {
        let mut h = matmul_nt(input, &self.weights)?;
        h.add_row_broadcast(&self.bias)?;
        Ok(h)
    }

    /// `z = f(slope · h)`
    pub fn activate(&self, h: &Matrix) -> Matrix {
        if self.slope == 1.0 {
            self.activation.apply(h)
        } else {
            self.activation.apply(&h.scale(self.slope))
        }
    }

    /// `∂z/∂h = slope · f'(slope · h)`, element-wise.
    pub fn activation_derivative(&self, h: &Matrix) -> Result<Matrix> {
        if self.slope == 1.0 {
            self.activation.derivative(h)
        } else {
            Ok(self
                .activation
                .derivative(&h.scale(self.slope))?
                .scale(self.slope))
        }
    }

    /// Per-sample `∂L(z, y)/∂h` for this layer's own loss.
    ///
    /// Softmax paired with cross-entropy uses the fused form `z − y`.
    pub fn local_error(&self, h: &Matrix, z: &Matrix, y: &Matrix) -> Result<Matrix> {
        if self.activation == Activation::Softmax {
            if self.loss != Loss::CrossEntropy {
                return Err(Error::Unsupported(
                    "softmax output requires cross-entropy loss".into(),
                ));
            }
            return z.sub(y);
        }
        let dz = self.loss.batch_grad(z, y)?;
        dz.hadamard(&self.activation_derivative(h)?)
    }
}

/// Ordered stack of dense layers; the last is the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    pub layers: Vec<Layer>,
}

impl Network {
    /// Zero-initialized network with the given architecture.
    pub fn new(input_dim: usize, specs: &[LayerSpec]) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input width must be positive".into()));
        }
        if specs.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut fan_in = input_dim;
        for spec in specs {
            layers.push(Layer {
                weights: Matrix::zeros(spec.width, fan_in),
                bias: vec![0.0; spec.width],
                activation: spec.activation,
                discrete: spec.discrete,
                loss: spec.loss,
                feedback: None,
                slope: 1.0,
            });
            fan_in = spec.width;
        }
        let net = Self { input_dim, layers };
        net.validate()?;
        Ok(net)
    }

    /// Checks widths, the discrete-op placement and the softmax/loss pairing.
    pub fn validate(&self) -> Result<()> {
        let n = self.layers.len();
        let mut fan_in = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            let top = i + 1 == n;
            if layer.out_dim() == 0 {
                return Err(Error::Config(format!("layer {} has zero width", i + 1)));
            }
            if layer.in_dim() != fan_in {
                return Err(Error::shape(
                    "network",
                    format!(
                        "layer {} expects {} inputs but receives {fan_in}",
                        i + 1,
                        layer.in_dim()
                    ),
                ));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::shape(
                    "network",
                    format!("layer {} bias length {}", i + 1, layer.bias.len()),
                ));
            }
            if let Some(e) = &layer.feedback {
                if e.shape() != (layer.in_dim(), layer.out_dim()) {
                    return Err(Error::shape(
                        "network",
                        format!(
                            "layer {} feedback is {:?}, expected {:?}",
                            i + 1,
                            e.shape(),
                            (layer.in_dim(), layer.out_dim())
                        ),
                    ));
                }
            }
            if top && !layer.discrete.is_none() {
                return Err(Error::Config(
                    "the output layer cannot carry a discrete operator".into(),
                ));
            }
            if layer.activation == Activation::Softmax {
                if !top {
                    return Err(Error::Config(format!(
                        "softmax is only supported on the output layer (layer {})",
                        i + 1
                    )));
                }
                if layer.loss != Loss::CrossEntropy {
                    return Err(Error::Config(
                        "softmax output requires cross-entropy loss".into(),
                    ));
                }
            }
            if let Some(block) = layer.discrete.block_size() {
                if block == 0 || layer.out_dim() % block != 0 {
                    return Err(Error::Config(format!(
                        "layer {} width {} is not divisible into blocks of {block}",
                        i + 1,
                        layer.out_dim()
                    )));
                }
            }
            fan_in = layer.out_dim();
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn top(&self) -> &Layer {
        self.layers.last().expect("validated non-empty")
    }

    /// True when no layer carries a discrete operator.
    pub fn is_differentiable(&self) -> bool {
        self.layers.iter().all(|l| l.discrete.is_none())
    }

    pub fn has_stochastic_units(&self) -> bool {
        self.layers.iter().any(|l| l.discrete.is_stochastic())
    }

    /// Sets the pre-activation slope of every Bernoulli layer.
    pub fn set_stochastic_slope(&mut self, slope: f64) {
        for layer in &mut self.layers {
            if layer.discrete.is_stochastic() {
                layer.slope = slope;
            }
        }
    }

    /// Runs the minibatch `x` (`batch x input_dim`) through the network.
    ///
    /// Each layer consumes the previous layer's discrete output `z*`.
    /// Stochastic operators draw from `rng` layer by layer, row-major within a layer.
    pub fn forward(&self, x: &Matrix, rng: &mut Rng) -> Result<ForwardTrace> {
        if x.cols() != self.input_dim {
            return Err(Error::shape(
                "forward",
                format!(
                    "input has {} columns, network expects {}",
                    x.cols(),
                    self.input_dim
                ),
            ));
        }
        let mut layers: Vec<LayerTrace> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &layers[i - 1].output };
            let pre = layer.pre_activation(input)?;
            let post = layer.activate(&pre);
            let output = if layer.discrete.is_none() {
                post.clone()
            } else {
                layer.discrete.apply(&post, rng)?
            };
            layers.push(LayerTrace { pre, post, output });
        }
        Ok(ForwardTrace {
            input: x.clone(),
            layers,
        })
    }

    /// Output probabilities or values for `x` without keeping the trace.
    pub fn predict(&self, x: &Matrix, rng: &mut Rng) -> Result<Matrix> {
        let trace = self.forward(x, rng)?;
        Ok(trace.layers.into_iter().last().expect("non-empty").post)
    }

    /// Mean top-layer loss of `x` against `t`.
    pub fn top_loss(&self, x: &Matrix, t: &Matrix, rng: &mut Rng) -> Result<f64> {
        let z = self.predict(x, rng)?;
        self.top().loss.batch_value(&z, t)
    }

    /// Flattened `[W_1, b_1, ..., W_n, b_n]`.
    pub fn parameters_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

/// Per-layer statistics of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// `h`
    pub pre: Matrix,
    /// `z = f(h)`
    pub post: Matrix,
    /// `z* = g(z)`, equal to `z` when the layer has no discrete operator.
    pub output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Matrix,
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    /// The matrix that layer `idx` (0-based) consumed: `x` or `z*` of the layer below.
    pub fn layer_input(&self, idx: usize) -> &Matrix {
        if idx == 0 {
            &self.input
        } else {
            &self.layers[idx - 1].output
        }
    }

    /// `z` of the top layer, the network's prediction.
    #[allow(clippy::misnamed_getters)]
    pub fn output(&self) -> &Matrix {
        &self.layers.last().expect("non-empty trace").post
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}
