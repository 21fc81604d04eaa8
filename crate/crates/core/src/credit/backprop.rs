use super::{check_targets, require_differentiable, LayerUpdate, UpdateSet};
use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, Matrix};
use crate::nn::{ForwardTrace, Loss, Network};

pub(crate) fn check_trace(net: &Network, trace: &ForwardTrace) -> Result<()> {
    if trace.layers.len() != net.layers.len() || trace.input.cols() != net.input_dim() {
        return Err(Error::shape(
            "trace",
            format!(
                "trace of {} layers over {} inputs for a network of {} layers over {}",
                trace.layers.len(),
                trace.input.cols(),
                net.layers.len(),
                net.input_dim()
            ),
        ));
    }
    Ok(())
}

fn top_delta(net: &Network, trace: &ForwardTrace, t: &Matrix) -> Result<Matrix> {
    check_trace(net, trace)?;
    check_targets(net, trace.batch_size(), t)?;
    let top = trace.layers.last().expect("non-empty");
    net.top().local_error(&top.pre, &top.post, t)
}

/// Gradients of the batch-summed top loss, computed one layer at a time from targets.
///
/// Each hidden layer gets the target `y = z − ∂L/∂z` and takes the gradient
/// of its squared error `½‖z − y‖²`, which reproduces the chain rule.
pub fn backprop_updates(net: &Network, trace: &ForwardTrace, t: &Matrix) -> Result<UpdateSet> {
    require_differentiable(net, "backprop")?;
    let n = net.layers.len();
    let mut delta = top_delta(net, trace, t)?;
    let mut layers = vec![LayerUpdate::from_delta(&delta, trace.layer_input(n - 1))?];
    for k in (0..n - 1).rev() {
        let lt = &trace.layers[k];
        let grad_z = matmul(&delta, &net.layers[k + 1].weights)?;
        let target = lt.post.sub(&grad_z)?;
        delta = Loss::L2
            .batch_grad(&lt.post, &target)?
            .hadamard(&net.layers[k].activation_derivative(&lt.pre)?)?;
        layers.push(LayerUpdate::from_delta(&delta, trace.layer_input(k))?);
    }
    layers.reverse();
    Ok(UpdateSet::full(layers))
}

/// Feedback alignment: the backward pass uses `feedback[k]` in place of `W_{k+1}ᵀ`.
///
/// `feedback` holds one matrix per hidden layer, `feedback[k]` shaped
/// `width_k x width_{k+1}`. Discrete operators are skipped over: the error
/// only passes through `f'`.
pub fn fa_updates(
    net: &Network,
    trace: &ForwardTrace,
    t: &Matrix,
    feedback: &[Matrix],
) -> Result<UpdateSet> {
    let n = net.layers.len();
    check_feedback(net, feedback, |k| {
        (net.layers[k].out_dim(), net.layers[k + 1].out_dim())
    })?;
    let mut delta = top_delta(net, trace, t)?;
    let mut layers = vec![LayerUpdate::from_delta(&delta, trace.layer_input(n - 1))?];
    for k in (0..n - 1).rev() {
        let lt = &trace.layers[k];
        delta = matmul_nt(&delta, &feedback[k])?
            .hadamard(&net.layers[k].activation_derivative(&lt.pre)?)?;
        layers.push(LayerUpdate::from_delta(&delta, trace.layer_input(k))?);
    }
    layers.reverse();
    Ok(UpdateSet::full(layers))
}

/// Direct feedback alignment: every hidden layer receives the top error
/// through its own fixed matrix `feedback[k]` (`width_k x n_out`).
pub fn dfa_updates(
    net: &Network,
    trace: &ForwardTrace,
    t: &Matrix,
    feedback: &[Matrix],
) -> Result<UpdateSet> {
    let n = net.layers.len();
    check_feedback(net, feedback, |k| {
        (net.layers[k].out_dim(), net.output_dim())
    })?;
    let e = top_delta(net, trace, t)?;
    let mut layers = Vec::with_capacity(n);
    for k in 0..n - 1 {
        let lt = &trace.layers[k];
        let delta = matmul_nt(&e, &feedback[k])?
            .hadamard(&net.layers[k].activation_derivative(&lt.pre)?)?;
        layers.push(LayerUpdate::from_delta(&delta, trace.layer_input(k))?);
    }
    layers.push(LayerUpdate::from_delta(&e, trace.layer_input(n - 1))?);
    Ok(UpdateSet::full(layers))
}

fn check_feedback(
    net: &Network,
    feedback: &[Matrix],
    expected: impl Fn(usize) -> (usize, usize),
) -> Result<()> {
    let hidden = net.layers.len() - 1;
    if feedback.len() != hidden {
        return Err(Error::shape(
            "feedback",
            format!(
                "{} feedback matrices for {hidden} hidden layers",
                feedback.len()
            ),
        ));
    }
    for (k, b) in feedback.iter().enumerate() {
        if b.shape() != expected(k) {
            return Err(Error::shape(
                "feedback",
                format!("matrix {k} is {:?}, expected {:?}", b.shape(), expected(k)),
            ));
        }
    }
    Ok(())
}
