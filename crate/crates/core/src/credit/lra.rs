use serde::{Deserialize, Serialize};

use super::backprop::check_trace;
use super::{check_targets, require_differentiable, LayerUpdate, UpdateSet};
use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, Matrix};
use crate::nn::{ForwardTrace, Network};

/// How the displacement of the layer below is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LraMode {
    /// Through `Wᵀ` and both activation derivatives.
    Diff,
    /// Through the fixed error weights `E` of the layer above.
    Fdbk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LraConfig {
    /// Inner target-search steps per layer.
    pub k: usize,
    /// The backward sweep stops at the first layer whose mean local loss is below this.
    pub epsilon: f64,
    /// Step size of the target search.
    pub beta: f64,
    /// Norm bound on each `∇W` and `∇b`.
    pub c1: f64,
    /// Norm bound on each sample's displacement.
    pub c2: f64,
}

impl Default for LraConfig {
    fn default() -> Self {
        Self {
            k: 1,
            epsilon: 0.0,
            beta: 0.1,
            c1: 1.0,
            c2: 1.0,
        }
    }
}

impl LraConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.k == 0 {
            bad.push("k must be at least 1".to_string());
        }
        if !(self.epsilon >= 0.0) {
            bad.push(format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            ));
        }
        for (name, v) in [("beta", self.beta), ("c1", self.c1), ("c2", self.c2)] {
            if !(v > 0.0) {
                bad.push(format!("{name} must be positive, got {v}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Targets produced by one backward sweep. Index `i` refers to layer `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    /// Pre-activation targets `y_h`; absent for the top layer.
    pub pre: Vec<Option<Matrix>>,
    /// Post-activation targets `y_z`; the top entry is the label encoding.
    pub post: Vec<Option<Matrix>>,
}

/// Result of the inner search for the target of the layer below.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSearch {
    pub target_pre: Matrix,
    pub target_post: Matrix,
    /// Mean local loss of the upper layer at the recomputed output after each step.
    /// Empty when the lower layer carries a discrete operator.
    pub local_losses: Vec<f64>,
}

/// Runs `cfg.k` displacement steps on the pre-activations of layer `idx − 1`
/// so that layer `idx` moves toward its target `y`.
pub fn target_search(
    net: &Network,
    trace: &ForwardTrace,
    idx: usize,
    y: &Matrix,
    cfg: &LraConfig,
    mode: LraMode,
) -> Result<TargetSearch> {
    search(net, trace, idx, y, cfg, mode, true)
}

// `record_final` also re-evaluates the upper layer after the last step,
// which only the diagnostics need
fn search(
    net: &Network,
    trace: &ForwardTrace,
    idx: usize,
    y: &Matrix,
    cfg: &LraConfig,
    mode: LraMode,
    record_final: bool,
) -> Result<TargetSearch> {
    if idx == 0 || idx >= net.layers.len() {
        return Err(Error::Argument(format!(
            "target search needs a layer with a layer below, got index {idx}"
        )));
    }
    let layer = &net.layers[idx];
    let lower = &net.layers[idx - 1];
    let feedback = match mode {
        LraMode::Fdbk => Some(
            layer
                .feedback
                .as_ref()
                .ok_or_else(|| Error::Config(format!("layer {} has no error weights", idx + 1)))?,
        ),
        LraMode::Diff => None,
    };
    let recompute = lower.discrete.is_none();

    let mut h_low = trace.layers[idx - 1].pre.clone();
    let mut z_low = trace.layers[idx - 1].post.clone();
    let mut h = trace.layers[idx].pre.clone();
    let mut z = trace.layers[idx].post.clone();
    let mut local_losses = Vec::new();
    for step in 0..cfg.k {
        let delta = layer.local_error(&h, &z, y)?;
        let mut disp = match feedback {
            Some(e) => matmul_nt(&delta, e)?,
            None => {
                matmul(&delta, &layer.weights)?.hadamard(&lower.activation_derivative(&h_low)?)?
            }
        };
        disp.normalize_rows(cfg.c2);
        h_low.axpy(-cfg.beta, &disp)?;
        z_low = lower.activate(&h_low);
        if recompute && (record_final || step + 1 < cfg.k) {
            h = layer.pre_activation(&z_low)?;
            z = layer.activate(&h);
            local_losses.push(layer.loss.batch_value(&z, y)?);
        }
    }
    Ok(TargetSearch {
        target_pre: h_low,
        target_post: z_low,
        local_losses,
    })
}

/// One top-down sweep of local representation alignment.
///
/// Walks from the output layer down, stopping at the first layer whose mean
/// local loss against its target is below `epsilon`. Each visited layer gets
/// a norm-bounded gradient of its own loss; every visited layer above the
/// first also produces the target for the layer below.
pub fn lra_updates(
    net: &Network,
    trace: &ForwardTrace,
    t: &Matrix,
    cfg: &LraConfig,
    mode: LraMode,
) -> Result<(UpdateSet, TargetSet)> {
    cfg.validate()?;
    check_trace(net, trace)?;
    check_targets(net, trace.batch_size(), t)?;
    if mode == LraMode::Diff {
        require_differentiable(net, "lra diff mode")?;
    } else if cfg.k > 1 && !net.is_differentiable() {
        return Err(Error::Config(
            "more than one target-search step is not supported with discrete operators".into(),
        ));
    }
    let n = net.layers.len();
    let mut updates = UpdateSet::empty(n);
    let mut targets = TargetSet {
        pre: vec![None; n],
        post: vec![None; n],
    };
    targets.post[n - 1] = Some(t.clone());
    let mut y = t.clone();
    for idx in (0..n).rev() {
        let layer = &net.layers[idx];
        let lt = &trace.layers[idx];
        let loss = layer.loss.batch_value(&lt.post, &y)?;
        updates.local_losses[idx] = Some(loss);
        if !(loss >= cfg.epsilon) {
            break;
        }
        let delta = layer.local_error(&lt.pre, &lt.post, &y)?;
        let mut u = LayerUpdate::from_delta(&delta, trace.layer_input(idx))?;
        u.normalize(cfg.c1);
        updates.layers[idx] = Some(u);
        updates.depth += 1;
        if idx == 0 {
            break;
        }
        let found = search(net, trace, idx, &y, cfg, mode, false)?;
        targets.pre[idx - 1] = Some(found.target_pre);
        targets.post[idx - 1] = Some(found.target_post.clone());
        y = found.target_post;
    }
    Ok((updates, targets))
}

/// The feedback-weight sweep for networks with non-differentiable operators.
///
/// Layers consume `z*` of the layer below (as recorded in `trace`), weight
/// updates use `z*` as their input factor, and targets are placed on the
/// continuous `z`. Only the activation derivative `f'` is ever evaluated.
pub fn lra_updates_nondiff(
    net: &Network,
    trace: &ForwardTrace,
    t: &Matrix,
    cfg: &LraConfig,
) -> Result<(UpdateSet, TargetSet)> {
    let single = LraConfig { k: 1, ..*cfg };
    lra_updates(net, trace, t, &single, LraMode::Fdbk)
}
