use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Differentiable activation `f` of a layer.
///
/// All kinds except `Softmax` act element-wise. `Softmax` normalizes each row
/// and is only valid on the top layer, paired with cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    HardTanh,
    Softsign,
    Softplus,
    Relu,
    Relu6,
    Softmax,
}

#[inline]
pub fn sigmoid(h: f64) -> f64 {
    if h >= 0.0 {
        1.0 / (1.0 + (-h).exp())
    } else {
        let e = h.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub const ALL: [Activation; 9] = [
        Activation::Identity,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::HardTanh,
        Activation::Softsign,
        Activation::Softplus,
        Activation::Relu,
        Activation::Relu6,
        Activation::Softmax,
    ];

    pub fn is_elementwise(self) -> bool {
        self != Activation::Softmax
    }

    /// Element-wise value. Panics for `Softmax`, which has no scalar form.
    #[inline]
    pub fn apply_scalar(self, h: f64) -> f64 {
        match self {
            Activation::Identity => h,
            Activation::Sigmoid => sigmoid(h),
            Activation::Tanh => h.tanh(),
            Activation::HardTanh => h.clamp(-1.0, 1.0),
            Activation::Softsign => h / (1.0 + h.abs()),
            Activation::Softplus => {
                if h > 30.0 {
                    h
                } else {
                    h.exp().ln_1p()
                }
            }
            Activation::Relu => h.max(0.0),
            Activation::Relu6 => h.clamp(0.0, 6.0),
            Activation::Softmax => panic!("softmax has no element-wise form"),
        }
    }

    /// Element-wise derivative `f'(h)`; kinks take the right-continuous
    /// convention of zero outside the open linear region.
    #[inline]
    pub fn derivative_scalar(self, h: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = sigmoid(h);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = h.tanh();
                1.0 - t * t
            }
            Activation::HardTanh => {
                if h > -1.0 && h < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softsign => {
                let d = 1.0 + h.abs();
                1.0 / (d * d)
            }
            Activation::Softplus => sigmoid(h),
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Relu6 => {
                if h > 0.0 && h < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softmax => panic!("softmax has no element-wise derivative"),
        }
    }

    /// Points where the derivative is discontinuous.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            Activation::HardTanh => &[-1.0, 1.0],
            Activation::Relu => &[0.0],
            Activation::Relu6 => &[0.0, 6.0],
            _ => &[],
        }
    }

    pub fn apply(self, h: &Matrix) -> Matrix {
        match self {
            Activation::Identity => h.clone(),
            Activation::Softmax => {
                let mut out = h.clone();
                for r in 0..out.rows() {
                    softmax_in_place(out.row_mut(r));
                }
                out
            }
            _ => h.map(|v| self.apply_scalar(v)),
        }
    }

    pub fn derivative(self, h: &Matrix) -> Result<Matrix> {
        if self == Activation::Softmax {
            return Err(Error::Unsupported(
                "softmax derivative is only available fused with cross-entropy".into(),
            ));
        }
        Ok(h.map(|v| self.derivative_scalar(v)))
    }
}

/// Numerically stable softmax over one slice.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}
