//! Non-differentiable post-processing `g` applied after a layer's activation.
//!
//! These operators are only ever evaluated forward. No derivative exists for
//! any of them; credit assignment routes around them through feedback weights.

use serde::{Deserialize, Serialize};

use super::activation::softmax_in_place;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

pub const DEFAULT_BLOCK_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DiscreteOp {
    None,
    /// Heaviside step: 1 if `v >= 0`, else 0.
    Signum,
    /// Samples 1 with probability equal to the input.
    Bernoulli,
    /// Hard local winner-take-all over contiguous, non-overlapping blocks.
    Lwta {
        block_size: usize,
    },
    /// Softmax over contiguous, non-overlapping blocks.
    Slwta {
        block_size: usize,
    },
}

impl DiscreteOp {
    pub fn is_none(self) -> bool {
        self == DiscreteOp::None
    }

    pub fn is_stochastic(self) -> bool {
        self == DiscreteOp::Bernoulli
    }

    pub fn block_size(self) -> Option<usize> {
        match self {
            DiscreteOp::Lwta { block_size } | DiscreteOp::Slwta { block_size } => Some(block_size),
            _ => None,
        }
    }

    /// `z* = g(z)` row by row. Bernoulli draws consume `rng` in row-major order.
    pub fn apply(self, z: &Matrix, rng: &mut Rng) -> Result<Matrix> {
        match self {
            DiscreteOp::None => Ok(z.clone()),
            DiscreteOp::Signum => Ok(z.map(signum_scalar)),
            DiscreteOp::Bernoulli => {
                let mut out = z.clone();
                bernoulli_in_place(out.as_mut_slice(), rng)?;
                Ok(out)
            }
            DiscreteOp::Lwta { block_size } => {
                check_blocks(z.cols(), block_size)?;
                let mut out = z.clone();
                for r in 0..out.rows() {
                    lwta_in_place(out.row_mut(r), block_size);
                }
                Ok(out)
            }
            DiscreteOp::Slwta { block_size } => {
                check_blocks(z.cols(), block_size)?;
                let mut out = z.clone();
                for r in 0..out.rows() {
                    for block in out.row_mut(r).chunks_exact_mut(block_size) {
                        softmax_in_place(block);
                    }
                }
                Ok(out)
            }
        }
    }
}

fn check_blocks(len: usize, block_size: usize) -> Result<()> {
    if block_size == 0 || !len.is_multiple_of(block_size) {
        return Err(Error::shape(
            "lateral competition",
            format!("length {len} is not divisible into blocks of {block_size}"),
        ));
    }
    Ok(())
}

#[inline]
fn signum_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn signum(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| signum_scalar(v)).collect()
}

fn lwta_in_place(row: &mut [f64], block_size: usize) {
    for block in row.chunks_exact_mut(block_size) {
        let mut winner = 0;
        for (i, &v) in block.iter().enumerate().skip(1) {
            // strict comparison: ties stay with the lowest index
            if v > block[winner] {
                winner = i;
            }
        }
        for (i, v) in block.iter_mut().enumerate() {
            if i != winner {
                *v = 0.0;
            }
        }
    }
}

/// Keeps the maximal entry of each block and zeroes the rest.
pub fn lwta_hard(z: &[f64], block_size: usize) -> Result<Vec<f64>> {
    check_blocks(z.len(), block_size)?;
    let mut out = z.to_vec();
    lwta_in_place(&mut out, block_size);
    Ok(out)
}

/// Replaces each block by its softmax.
pub fn slwta_soft(z: &[f64], block_size: usize) -> Result<Vec<f64>> {
    check_blocks(z.len(), block_size)?;
    let mut out = z.to_vec();
    for block in out.chunks_exact_mut(block_size) {
        softmax_in_place(block);
    }
    Ok(out)
}

fn bernoulli_in_place(p: &mut [f64], rng: &mut Rng) -> Result<()> {
    for v in p.iter_mut() {
        if !(0.0..=1.0).contains(v) {
            return Err(Error::Argument(format!(
                "bernoulli probability {v} outside [0, 1]"
            )));
        }
        *v = if rng.bernoulli(*v) { 1.0 } else { 0.0 };
    }
    Ok(())
}

/// Independent draws: 1 with probability `p[i]`, else 0.
pub fn bernoulli_star(p: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
    let mut out = p.to_vec();
    bernoulli_in_place(&mut out, rng)?;
    Ok(out)
}
