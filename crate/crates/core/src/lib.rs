//! Credit assignment for dense feedforward and recurrent networks.
//!
//! The crate trains multilayer perceptrons with local representation
//! alignment (LRA), in its gradient-based (`diff`) and feedback-weight
//! (`fdbk`) forms, next to backprop, feedback alignment, direct feedback
//! alignment and the usual estimators for stochastic binary units.
//!
//! Everything is plain `f64` dense math on row-major matrices, one sample per
//! row. Randomness always flows through an explicitly seeded [`linalg::Rng`].
//!
//! - [`linalg`]: matrices, norm re-projection, seeded sampling
//! - [`nn`]: activations, discrete operators, losses, the network and its forward pass
//! - [`credit`]: update rules and the depth / angle diagnostics
//! - [`optim`]: SGD, Adam and weight initialization
//! - [`data`]: IDX loading, splitting, minibatching
//! - [`rnn`]: an Elman network trained with feedback-driven targets through time
//! - [`io`]: the on-disk network format
//! - [`experiment`]: configured training runs, metrics, filters and exports

pub mod credit;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod rnn;

pub use error::{Error, Result};
pub use linalg::{Matrix, Rng};
pub use nn::{Activation, DiscreteOp, ForwardTrace, Layer, LayerSpec, Loss, Network};
