//! Activations, discrete operators, layer losses and the feedforward network.
//!
//! A layer computes `h = W z*_prev + b`, `z = f(h)` and `z* = g(z)`, where `f`
//! is differentiable and `g` is an optional non-differentiable operator that
//! is never applied to the output layer.

mod activation;
mod discrete;
mod loss;
mod network;

pub use activation::{sigmoid, softmax_in_place, Activation};
pub use discrete::{bernoulli_star, lwta_hard, signum, slwta_soft, DiscreteOp, DEFAULT_BLOCK_SIZE};
pub use loss::Loss;
pub use network::{ForwardTrace, Layer, LayerSpec, LayerTrace, Network};
