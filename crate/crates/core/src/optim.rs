//! Parameter updates (SGD, Adam) and weight initialization.

use serde::{Deserialize, Serialize};

use crate::credit::{LayerUpdate, UpdateSet};
use crate::error::{Error, Result};
use crate::linalg::{sample_gaussian, sample_uniform_fan_in, Matrix, Rng};
use crate::nn::Network;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: LayerUpdate,
    v: LayerUpdate,
}

/// Optimizer state owned next to the network it updates.
///
/// Adam keeps moments and a step counter per layer; a layer only advances
/// when its update is present.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    moments: Vec<Option<Moments>>,
    steps: Vec<u64>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, net: &Network) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            moments: vec![None; net.layers.len()],
            steps: vec![0; net.layers.len()],
        })
    }

    /// Steps taken by layer `idx`.
    pub fn steps(&self, idx: usize) -> u64 {
        self.steps[idx]
    }

    /// Subtracts the (possibly Adam-scaled) updates from the parameters of `net`.
    pub fn apply(&mut self, net: &mut Network, updates: &UpdateSet) -> Result<()> {
        if updates.layers.len() != net.layers.len() || self.steps.len() != net.layers.len() {
            return Err(Error::shape(
                "optimizer",
                format!(
                    "{} updates, {} optimizer slots, {} layers",
                    updates.layers.len(),
                    self.steps.len(),
                    net.layers.len()
                ),
            ));
        }
        for (idx, (u, layer)) in updates.layers.iter().zip(&net.layers).enumerate() {
            if let Some(u) = u {
                if u.weights.shape() != layer.weights.shape() || u.bias.len() != layer.bias.len() {
                    return Err(Error::shape(
                        "optimizer",
                        format!(
                            "layer {} update {:?} for weights {:?}",
                            idx + 1,
                            u.weights.shape(),
                            layer.weights.shape()
                        ),
                    ));
                }
            }
        }
        let lr = self.config.learning_rate;
        for (idx, u) in updates.layers.iter().enumerate() {
            let Some(u) = u else { continue };
            let layer = &mut net.layers[idx];
            self.steps[idx] += 1;
            match self.config.kind {
                OptimizerKind::Sgd => {
                    layer.weights.axpy(-lr, &u.weights)?;
                    for (b, g) in layer.bias.iter_mut().zip(&u.bias) {
                        *b -= lr * g;
                    }
                }
                OptimizerKind::Adam => {
                    let step = self.steps[idx] as i32;
                    let mom = self.moments[idx].get_or_insert_with(|| Moments {
                        m: LayerUpdate::zeros(u.weights.rows(), u.weights.cols()),
                        v: LayerUpdate::zeros(u.weights.rows(), u.weights.cols()),
                    });
                    adam_step(
                        layer.weights.as_mut_slice(),
                        u.weights.as_slice(),
                        mom.m.weights.as_mut_slice(),
                        mom.v.weights.as_mut_slice(),
                        lr,
                        step,
                    );
                    adam_step(
                        &mut layer.bias,
                        &u.bias,
                        &mut mom.m.bias,
                        &mut mom.v.bias,
                        lr,
                        step,
                    );
                }
            }
        }
        Ok(())
    }
}

fn adam_step(theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, step: i32) {
    let c1 = 1.0 - ADAM_BETA1.powi(step);
    let c2 = 1.0 - ADAM_BETA2.powi(step);
    for i in 0..theta.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
}

/// Plain gradient step on a single matrix, `θ ← θ − lr ∇`.
pub fn sgd_step(param: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
    param.axpy(-lr, grad)
}

/// Free-function form of [`Optimizer::apply`].
pub fn apply(net: &mut Network, updates: &UpdateSet, state: &mut Optimizer) -> Result<()> {
    state.apply(net, updates)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum InitScheme {
    Zeros,
    Gaussian {
        std: f64,
    },
    /// `U[−1/√n_in, 1/√n_in]`
    FanInUniform,
}

impl InitScheme {
    pub fn validate(&self) -> Result<()> {
        if let InitScheme::Gaussian { std } = self {
            if !(*std >= 0.0 && std.is_finite()) {
                return Err(Error::Config(format!(
                    "init std must be non-negative, got {std}"
                )));
            }
        }
        Ok(())
    }
}

/// Resets every weight matrix per `scheme` and every bias to zero, bottom layer first.
pub fn init(net: &mut Network, scheme: InitScheme, rng: &mut Rng) -> Result<()> {
    scheme.validate()?;
    for layer in &mut net.layers {
        let (out, inp) = layer.weights.shape();
        layer.weights = match scheme {
            InitScheme::Zeros => Matrix::zeros(out, inp),
            InitScheme::Gaussian { std } => sample_gaussian(rng, out, inp, 0.0, std)?,
            InitScheme::FanInUniform => sample_uniform_fan_in(rng, out, inp, inp)?,
        };
        layer.bias = vec![0.0; out];
    }
    Ok(())
}

/// Draws the fixed error weights `E ~ N(0, std²)` for every layer above the first.
pub fn init_feedback(net: &mut Network, std: f64, rng: &mut Rng) -> Result<()> {
    for (i, layer) in net.layers.iter_mut().enumerate() {
        layer.feedback = if i == 0 {
            None
        } else {
            Some(sample_gaussian(
                rng,
                layer.in_dim(),
                layer.out_dim(),
                0.0,
                std,
            )?)
        };
    }
    Ok(())
}

/// Random backward matrices for feedback alignment, `width_k x width_{k+1}`,
/// uniform with the fan-in of the error they carry.
pub fn init_fa_feedback(net: &Network, rng: &mut Rng) -> Result<Vec<Matrix>> {
    let n = net.layers.len();
    (0..n - 1)
        .map(|k| {
            let (rows, cols) = (net.layers[k].out_dim(), net.layers[k + 1].out_dim());
            sample_uniform_fan_in(rng, rows, cols, cols)
        })
        .collect()
}

/// Random matrices from the output error to each hidden layer, `width_k x n_out`.
pub fn init_dfa_feedback(net: &Network, rng: &mut Rng) -> Result<Vec<Matrix>> {
    let n = net.layers.len();
    let n_out = net.output_dim();
    (0..n - 1)
        .map(|k| sample_uniform_fan_in(rng, net.layers[k].out_dim(), n_out, n_out))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec, Loss};

    fn scalar_net(w: f64) -> Network {
        let mut net =
            Network::new(1, &[LayerSpec::new(1, Activation::Identity, Loss::L2)]).unwrap();
        net.layers[0].weights = Matrix::new(1, 1, vec![w]).unwrap();
        net
    }

    fn scalar_update(g: f64) -> UpdateSet {
        UpdateSet::full(vec![LayerUpdate {
            weights: Matrix::new(1, 1, vec![g]).unwrap(),
            bias: vec![0.0],
        }])
    }

    fn sigmoid_8x128() -> Network {
        let mut specs = vec![LayerSpec::new(128, Activation::Sigmoid, Loss::LogPenalty); 8];
        specs.push(LayerSpec::new(10, Activation::Softmax, Loss::CrossEntropy));
        Network::new(784, &specs).unwrap()
    }

    #[test]
    fn sgd_examples() {
        let mut net = scalar_net(2.0);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(1.0), &net).unwrap();
        opt.apply(&mut net, &scalar_update(0.5)).unwrap();
        assert_eq!(net.layers[0].weights.get(0, 0), 1.5);

        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.01), &net).unwrap();
        let before = net.clone();
        opt.apply(&mut net, &scalar_update(0.0)).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        for g in [3.0, -0.02] {
            let mut net = scalar_net(0.0);
            let mut opt = Optimizer::new(OptimizerConfig::adam(0.001), &net).unwrap();
            opt.apply(&mut net, &scalar_update(g)).unwrap();
            let step = net.layers[0].weights.get(0, 0);
            let expect = -0.001 * g.abs() / (g.abs() + 1e-8) * g.signum();
            assert!((step - expect).abs() < 1e-15);
            assert!((step.abs() - 0.001).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_is_scale_invariant_in_the_limit() {
        let per_step = |g: f64| {
            let mut net = scalar_net(0.0);
            let mut opt = Optimizer::new(OptimizerConfig::adam(0.01), &net).unwrap();
            let u = scalar_update(g);
            for _ in 0..999 {
                opt.apply(&mut net, &u).unwrap();
            }
            let before = net.layers[0].weights.get(0, 0);
            opt.apply(&mut net, &u).unwrap();
            net.layers[0].weights.get(0, 0) - before
        };
        let (a, b) = (per_step(0.3), per_step(30.0));
        assert!(((a - b) / a).abs() < 0.01, "{a} vs {b}");
    }

    #[test]
    fn absent_layers_are_untouched() {
        let specs = [
            LayerSpec::new(3, Activation::Tanh, Loss::L2),
            LayerSpec::new(2, Activation::Tanh, Loss::L2),
        ];
        let mut net = Network::new(2, &specs).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.1), &net).unwrap();
        let mut u = UpdateSet::empty(2);
        u.layers[1] = Some(LayerUpdate {
            weights: Matrix::filled(2, 3, 1.0),
            bias: vec![1.0; 2],
        });
        let lower = net.layers[0].clone();
        opt.apply(&mut net, &u).unwrap();
        assert_eq!(net.layers[0], lower);
        assert_eq!((opt.steps(0), opt.steps(1)), (0, 1));
        assert!(net.layers[1].weights.as_slice().iter().all(|&v| v < 0.0));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut net = scalar_net(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1), &net).unwrap();
        let bad = UpdateSet::full(vec![LayerUpdate::zeros(2, 1)]);
        assert!(matches!(
            opt.apply(&mut net, &bad),
            Err(Error::Shape { .. })
        ));
        assert!(opt.apply(&mut net, &UpdateSet::empty(2)).is_err());
    }

    #[test]
    fn zeros_init_is_exact() {
        let mut net = sigmoid_8x128();
        init(
            &mut net,
            InitScheme::Gaussian { std: 1.0 },
            &mut Rng::new(1),
        )
        .unwrap();
        init(&mut net, InitScheme::Zeros, &mut Rng::new(1)).unwrap();
        assert!(net.parameters_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_init_std() {
        let mut net = sigmoid_8x128();
        init(
            &mut net,
            InitScheme::Gaussian { std: 0.025 },
            &mut Rng::new(2),
        )
        .unwrap();
        let w: Vec<f64> = net
            .layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().copied())
            .collect();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!((std - 0.025).abs() <= 0.0025, "{std}");
        assert!(net.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn fan_in_bound() {
        let mut net = Network::new(784, &[LayerSpec::new(64, Activation::Tanh, Loss::L2)]).unwrap();
        init(&mut net, InitScheme::FanInUniform, &mut Rng::new(3)).unwrap();
        let bound = 1.0 / 784f64.sqrt();
        assert!(net.layers[0]
            .weights
            .as_slice()
            .iter()
            .all(|v| v.abs() <= bound));
    }

    #[test]
    fn feedback_shapes() {
        let mut net = sigmoid_8x128();
        init_feedback(&mut net, 1.0, &mut Rng::new(4)).unwrap();
        assert!(net.layers[0].feedback.is_none());
        for l in &net.layers[1..] {
            assert_eq!(
                l.feedback.as_ref().unwrap().shape(),
                (l.in_dim(), l.out_dim())
            );
        }
        net.validate().unwrap();
        let fa = init_fa_feedback(&net, &mut Rng::new(5)).unwrap();
        let dfa = init_dfa_feedback(&net, &mut Rng::new(5)).unwrap();
        assert_eq!(fa.len(), 8);
        assert_eq!(fa[7].shape(), (128, 10));
        assert_eq!(dfa[0].shape(), (128, 10));
    }

    #[test]
    fn same_seed_same_parameters() {
        let run = || {
            let mut net = sigmoid_8x128();
            init(
                &mut net,
                InitScheme::Gaussian { std: 0.1 },
                &mut Rng::new(9),
            )
            .unwrap();
            let mut opt = Optimizer::new(OptimizerConfig::adam(0.01), &net).unwrap();
            let mut u = UpdateSet::empty(net.layers.len());
            u.layers[3] = Some(LayerUpdate {
                weights: Matrix::filled(128, 128, 0.3),
                bias: vec![0.1; 128],
            });
            for _ in 0..3 {
                opt.apply(&mut net, &u).unwrap();
            }
            net
        };
        assert_eq!(run(), run());
    }
}
