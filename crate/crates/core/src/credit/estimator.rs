//! Gradient estimators for networks of sampled binary units.
//!
//! Hidden layers are sigmoid units followed by Bernoulli sampling. The
//! straight-through variants backpropagate through the sample with a
//! surrogate `∂z*/∂h`; the score-function variants weight `z* − p` by the
//! per-sample top loss.

use serde::{Deserialize, Serialize};

use super::backprop::check_trace;
use super::{check_targets, LayerUpdate, UpdateSet};
use crate::error::{Error, Result};
use crate::linalg::{matmul, Matrix};
use crate::nn::{DiscreteOp, ForwardTrace, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// `∂z*/∂h = 1`
    StePassthrough,
    /// `∂z*/∂h = σ'(h)`
    SteSigmoid,
    /// `p = σ(m h)` with `∂z*/∂h = m σ'(m h)`, `m` growing each epoch.
    SlopeAnneal,
    Reinforce,
    /// Score function with a running-mean baseline, scaled by the running standard deviation.
    ReinforceVarAdj,
}

impl EstimatorKind {
    pub fn is_score_function(self) -> bool {
        matches!(
            self,
            EstimatorKind::Reinforce | EstimatorKind::ReinforceVarAdj
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    #[serde(default = "default_slope_start")]
    pub slope_start: f64,
    /// Added to the slope after every epoch.
    #[serde(default = "default_slope_step")]
    pub slope_step: f64,
    #[serde(default = "default_decay")]
    pub baseline_decay: f64,
}

fn default_slope_start() -> f64 {
    1.0
}

fn default_slope_step() -> f64 {
    0.04
}

fn default_decay() -> f64 {
    0.99
}

const STD_FLOOR: f64 = 1e-8;

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            kind,
            slope_start: default_slope_start(),
            slope_step: default_slope_step(),
            baseline_decay: default_decay(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.slope_start > 0.0) {
            bad.push(format!(
                "slope_start must be positive, got {}",
                self.slope_start
            ));
        }
        if !(self.slope_step >= 0.0) {
            bad.push(format!(
                "slope_step must be non-negative, got {}",
                self.slope_step
            ));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            bad.push(format!(
                "baseline_decay must lie in [0, 1), got {}",
                self.baseline_decay
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Pre-activation slope for 0-based `epoch`. Constant 1 unless annealing.
    pub fn slope_at(&self, epoch: usize) -> f64 {
        match self.kind {
            EstimatorKind::SlopeAnneal => self.slope_start + self.slope_step * epoch as f64,
            _ => 1.0,
        }
    }
}

/// An estimator together with the running loss statistics it keeps between batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    pub config: EstimatorConfig,
    mean: Option<f64>,
    var: f64,
}

impl Estimator {
    pub fn new(config: EstimatorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            mean: None,
            var: 0.0,
        })
    }

    pub fn baseline(&self) -> Option<(f64, f64)> {
        self.mean.map(|m| (m, self.var.sqrt()))
    }

    fn check_net(&self, net: &Network) -> Result<()> {
        let n = net.layers.len();
        for (i, l) in net.layers[..n - 1].iter().enumerate() {
            let ok = match l.discrete {
                DiscreteOp::Bernoulli => true,
                DiscreteOp::None => !self.config.kind.is_score_function(),
                _ => false,
            };
            if !ok {
                return Err(Error::Config(format!(
                    "{:?} estimator needs sampled binary hidden units, layer {} has {:?}",
                    self.config.kind,
                    i + 1,
                    l.discrete
                )));
            }
        }
        Ok(())
    }

    /// Updates for one minibatch. Score-function kinds also advance the running statistics.
    pub fn updates(
        &mut self,
        net: &Network,
        trace: &ForwardTrace,
        t: &Matrix,
    ) -> Result<UpdateSet> {
        check_trace(net, trace)?;
        check_targets(net, trace.batch_size(), t)?;
        self.check_net(net)?;
        let n = net.layers.len();
        let top = &trace.layers[n - 1];
        let top_delta = net.top().local_error(&top.pre, &top.post, t)?;
        let mut layers = Vec::with_capacity(n);
        if self.config.kind.is_score_function() {
            let weights = self.loss_weights(net.top().loss.row_values(&top.post, t)?);
            for k in 0..n - 1 {
                let lt = &trace.layers[k];
                let slope = net.layers[k].slope;
                let mut delta = lt.output.sub(&lt.post)?;
                for (r, &w) in weights.iter().enumerate() {
                    for v in delta.row_mut(r) {
                        *v *= w * slope;
                    }
                }
                layers.push(LayerUpdate::from_delta(&delta, trace.layer_input(k))?);
            }
            layers.push(LayerUpdate::from_delta(
                &top_delta,
                trace.layer_input(n - 1),
            )?);
        } else {
            let mut delta = top_delta;
            layers.push(LayerUpdate::from_delta(&delta, trace.layer_input(n - 1))?);
            for k in (0..n - 1).rev() {
                let layer = &net.layers[k];
                let lt = &trace.layers[k];
                let grad = matmul(&delta, &net.layers[k + 1].weights)?;
                delta = if layer.discrete.is_stochastic()
                    && self.config.kind == EstimatorKind::StePassthrough
                {
                    grad
                } else {
                    grad.hadamard(&layer.activation_derivative(&lt.pre)?)?
                };
                layers.push(LayerUpdate::from_delta(&delta, trace.layer_input(k))?);
            }
            layers.reverse();
        }
        Ok(UpdateSet::full(layers))
    }

    fn loss_weights(&mut self, losses: Vec<f64>) -> Vec<f64> {
        if self.config.kind != EstimatorKind::ReinforceVarAdj || losses.is_empty() {
            return losses;
        }
        let b = losses.len() as f64;
        let batch_mean = losses.iter().sum::<f64>() / b;
        let (mean, var) = match self.mean {
            Some(m) => (m, self.var),
            None => (
                batch_mean,
                losses.iter().map(|l| (l - batch_mean).powi(2)).sum::<f64>() / b,
            ),
        };
        let std = var.sqrt();
        let out = losses
            .iter()
            .map(|l| (l - mean) / (std + STD_FLOOR))
            .collect();
        let d = self.config.baseline_decay;
        let batch_var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / b;
        self.mean = Some(d * mean + (1.0 - d) * batch_mean);
        self.var = d * var + (1.0 - d) * batch_var;
        out
    }
}

/// Free-function form of [`Estimator::updates`].
pub fn estimator_updates(
    net: &Network,
    trace: &ForwardTrace,
    t: &Matrix,
    est: &mut Estimator,
) -> Result<UpdateSet> {
    est.updates(net, trace, t)
}
