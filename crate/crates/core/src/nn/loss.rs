use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Layer-wise discrepancy between an output `z` and its target `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `½ Σ (y − z)²`
    L2,
    /// `Σ |y − z|`
    L1,
    /// `Σ log(1 + (y − z)²)`, the Cauchy log-penalty.
    LogPenalty,
    /// `−Σ y log z`
    CrossEntropy,
}

// keeps log(0) finite when a probability underflows
const PROB_FLOOR: f64 = 1e-300;

impl Loss {
    pub const ALL: [Loss; 4] = [Loss::L2, Loss::L1, Loss::LogPenalty, Loss::CrossEntropy];

    fn check(z: &[f64], y: &[f64]) -> Result<()> {
        if z.len() != y.len() {
            return Err(Error::shape(
                "loss",
                format!("output length {} vs target length {}", z.len(), y.len()),
            ));
        }
        Ok(())
    }

    #[inline]
    fn value_unchecked(self, z: &[f64], y: &[f64]) -> f64 {
        let pairs = z.iter().zip(y);
        match self {
            Loss::L2 => 0.5 * pairs.map(|(z, y)| (y - z) * (y - z)).sum::<f64>(),
            Loss::L1 => pairs.map(|(z, y)| (y - z).abs()).sum(),
            Loss::LogPenalty => pairs.map(|(z, y)| ((y - z) * (y - z)).ln_1p()).sum(),
            Loss::CrossEntropy => pairs
                .filter(|(_, &y)| y != 0.0)
                .map(|(&z, &y)| -y * z.max(PROB_FLOOR).ln())
                .sum(),
        }
    }

    #[inline]
    fn grad_scalar(self, z: f64, y: f64) -> f64 {
        match self {
            Loss::L2 => z - y,
            Loss::L1 => {
                // subgradient 0 at the kink
                if z > y {
                    1.0
                } else if z < y {
                    -1.0
                } else {
                    0.0
                }
            }
            Loss::LogPenalty => {
                let d = z - y;
                2.0 * d / (1.0 + d * d)
            }
            Loss::CrossEntropy => {
                if y == 0.0 {
                    0.0
                } else {
                    -y / z.max(PROB_FLOOR)
                }
            }
        }
    }

    pub fn value(self, z: &[f64], y: &[f64]) -> Result<f64> {
        Self::check(z, y)?;
        Ok(self.value_unchecked(z, y))
    }

    /// `∂L/∂z`
    pub fn grad(self, z: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        Self::check(z, y)?;
        Ok(z.iter()
            .zip(y)
            .map(|(&z, &y)| self.grad_scalar(z, y))
            .collect())
    }

    /// Per-sample loss of each row.
    pub fn row_values(self, z: &Matrix, y: &Matrix) -> Result<Vec<f64>> {
        if z.shape() != y.shape() {
            return Err(Error::shape(
                "loss",
                format!("{:?} outputs vs {:?} targets", z.shape(), y.shape()),
            ));
        }
        Ok(z.row_iter()
            .zip(y.row_iter())
            .map(|(zr, yr)| self.value_unchecked(zr, yr))
            .collect())
    }

    /// Mean per-sample loss over the batch.
    pub fn batch_value(self, z: &Matrix, y: &Matrix) -> Result<f64> {
        let rows = self.row_values(z, y)?;
        if rows.is_empty() {
            return Ok(0.0);
        }
        Ok(rows.iter().sum::<f64>() / rows.len() as f64)
    }

    /// Per-sample gradient `∂L(z_i, y_i)/∂z_i` for every row, unscaled by batch size.
    pub fn batch_grad(self, z: &Matrix, y: &Matrix) -> Result<Matrix> {
        if z.shape() != y.shape() {
            return Err(Error::shape(
                "loss gradient",
                format!("{:?} outputs vs {:?} targets", z.shape(), y.shape()),
            ));
        }
        z.zip_map(y, |z, y| self.grad_scalar(z, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(Loss::L2.value(&[1.0, 2.0], &[3.0, 2.0]).unwrap(), 2.0);
        let lp = Loss::LogPenalty.value(&[0.0], &[1.0]).unwrap();
        assert!((lp - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(Loss::LogPenalty.grad(&[0.0], &[1.0]).unwrap(), vec![-1.0]);
        assert_eq!(Loss::L1.value(&[1.0, -1.0], &[0.0, 1.0]).unwrap(), 3.0);
    }

    #[test]
    fn zero_at_target() {
        let z = [0.3, -1.2, 4.0];
        for loss in [Loss::L2, Loss::L1, Loss::LogPenalty] {
            assert_eq!(loss.value(&z, &z).unwrap(), 0.0);
        }
        assert_eq!(Loss::L1.grad(&z, &z).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn length_mismatch() {
        for loss in Loss::ALL {
            assert!(matches!(
                loss.value(&[1.0], &[1.0, 2.0]),
                Err(Error::Shape { .. })
            ));
            assert!(loss.grad(&[1.0], &[]).is_err());
        }
    }

    #[test]
    fn cross_entropy_of_one_hot() {
        let v = Loss::CrossEntropy
            .value(&[0.25, 0.75], &[0.0, 1.0])
            .unwrap();
        assert!((v + 0.75f64.ln()).abs() < 1e-15);
        assert!(Loss::CrossEntropy
            .value(&[0.0, 1.0], &[1.0, 0.0])
            .unwrap()
            .is_finite());
    }
}
