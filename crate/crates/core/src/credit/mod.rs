//! Update rules for the feedforward network and their diagnostics.
//!
//! Every rule is a pure function of the network, a forward trace and the
//! targets and returns an [`UpdateSet`]: displacements that an optimizer
//! subtracts from the parameters. Gradients are summed over the minibatch:
//! weight updates are `δᵀ z_prev` and bias updates are column sums of `δ`.

mod backprop;
mod estimator;
mod lra;

pub use backprop::{backprop_updates, dfa_updates, fa_updates};
pub use estimator::{estimator_updates, Estimator, EstimatorConfig, EstimatorKind};
pub use lra::{lra_updates, lra_updates_nondiff, target_search, LraConfig, LraMode, TargetSearch};

use crate::error::{Error, Result};
use crate::linalg::{matmul_tn, Matrix};
use crate::nn::{DiscreteOp, Network};

/// Displacement for one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerUpdate {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerUpdate {
    /// `∇W = δᵀ input` and `∇b = Σ_rows δ` for per-sample errors `δ`.
    ///
    /// Gradients are summed over the minibatch, so the norm bounds act on the
    /// batch total.
    pub fn from_delta(delta: &Matrix, input: &Matrix) -> Result<Self> {
        if delta.rows() == 0 {
            return Err(Error::Argument("empty minibatch".into()));
        }
        Ok(Self {
            weights: matmul_tn(delta, input)?,
            bias: delta.column_sums(),
        })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Re-projects `∇W` (Frobenius) and `∇b` (Euclidean) onto the ball of radius `c`.
    pub fn normalize(&mut self, c: f64) {
        self.weights = self.weights.normalized(c);
        crate::linalg::normalize(&mut self.bias, c);
    }
}

/// Per-layer updates plus diagnostics.
///
/// `layers[i]` is `None` for a layer the rule never reached (halted sweeps).
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateSet {
    pub layers: Vec<Option<LayerUpdate>>,
    /// Number of layers whose update was computed.
    pub depth: usize,
    /// Mean local loss of each visited layer, `None` where not evaluated.
    pub local_losses: Vec<Option<f64>>,
}

impl UpdateSet {
    pub fn empty(n_layers: usize) -> Self {
        Self {
            layers: vec![None; n_layers],
            depth: 0,
            local_losses: vec![None; n_layers],
        }
    }

    /// Every layer computed, as returned by the gradient-style rules.
    pub fn full(layers: Vec<LayerUpdate>) -> Self {
        let n = layers.len();
        Self {
            depth: n,
            layers: layers.into_iter().map(Some).collect(),
            local_losses: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// The update for layer `idx`, with missing layers as zeros shaped like `net`.
    pub fn layer_or_zeros(&self, net: &Network, idx: usize) -> LayerUpdate {
        match &self.layers[idx] {
            Some(u) => u.clone(),
            None => {
                let l = &net.layers[idx];
                LayerUpdate::zeros(l.out_dim(), l.in_dim())
            }
        }
    }

    /// Concatenation `[∇W_1, ∇b_1, ..., ∇W_n, ∇b_n]` with missing layers as
    /// zeros of the shapes in `net`.
    pub fn flatten(&self, net: &Network) -> Result<Vec<f64>> {
        if self.layers.len() != net.layers.len() {
            return Err(Error::shape(
                "update set",
                format!(
                    "{} layers vs network of {}",
                    self.layers.len(),
                    net.layers.len()
                ),
            ));
        }
        let mut out = Vec::new();
        for (u, l) in self.layers.iter().zip(&net.layers) {
            match u {
                Some(u) => {
                    if u.weights.shape() != l.weights.shape() || u.bias.len() != l.bias.len() {
                        return Err(Error::shape(
                            "update set",
                            format!(
                                "{:?} update for {:?} weights",
                                u.weights.shape(),
                                l.weights.shape()
                            ),
                        ));
                    }
                    out.extend_from_slice(u.weights.as_slice());
                    out.extend_from_slice(&u.bias);
                }
                None => out.resize(out.len() + l.weights.as_slice().len() + l.bias.len(), 0.0),
            }
        }
        Ok(out)
    }
}

/// Angle in degrees between two update sets, each flattened over all layers.
///
/// A layer present in only one set counts as zeros in the other.
pub fn update_angle(u1: &UpdateSet, u2: &UpdateSet) -> Result<f64> {
    if u1.layers.len() != u2.layers.len() {
        return Err(Error::shape(
            "update angle",
            format!("{} layers vs {}", u1.layers.len(), u2.layers.len()),
        ));
    }
    let (mut dot, mut n1, mut n2) = (0.0, 0.0, 0.0);
    for (a, b) in u1.layers.iter().zip(&u2.layers) {
        match (a, b) {
            (Some(a), Some(b)) => {
                if a.weights.shape() != b.weights.shape() || a.bias.len() != b.bias.len() {
                    return Err(Error::shape(
                        "update angle",
                        format!("{:?} vs {:?}", a.weights.shape(), b.weights.shape()),
                    ));
                }
                for (x, y) in flat(a).zip(flat(b)) {
                    dot += x * y;
                    n1 += x * x;
                    n2 += y * y;
                }
            }
            (Some(a), None) => n1 += flat(a).map(|x| x * x).sum::<f64>(),
            (None, Some(b)) => n2 += flat(b).map(|y| y * y).sum::<f64>(),
            (None, None) => {}
        }
    }
    if n1 == 0.0 || n2 == 0.0 || !(n1.is_finite() && n2.is_finite()) {
        return Err(Error::DegenerateAngle);
    }
    let cos = dot / (n1.sqrt() * n2.sqrt());
    Ok(cos.clamp(-1.0, 1.0).acos().to_degrees())
}

fn flat(u: &LayerUpdate) -> impl Iterator<Item = f64> + '_ {
    u.weights.as_slice().iter().chain(&u.bias).copied()
}

/// Rules that propagate through `W` or `f'` of every layer need `g = none` everywhere.
pub(crate) fn require_differentiable(net: &Network, rule: &str) -> Result<()> {
    if let Some(i) = net
        .layers
        .iter()
        .position(|l| l.discrete != DiscreteOp::None)
    {
        return Err(Error::Unsupported(format!(
            "{rule} cannot pass through the discrete operator on layer {}",
            i + 1
        )));
    }
    Ok(())
}

pub(crate) fn check_targets(net: &Network, trace_rows: usize, t: &Matrix) -> Result<()> {
    if t.shape() != (trace_rows, net.output_dim()) {
        return Err(Error::shape(
            "targets",
            format!(
                "{:?} targets for a batch of {trace_rows} and {} outputs",
                t.shape(),
                net.output_dim()
            ),
        ));
    }
    Ok(())
}
