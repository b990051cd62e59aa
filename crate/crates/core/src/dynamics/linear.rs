use nalgebra::{DMatrix, DVector};

use super::{check_dims, ActionVec, GaussianDynamics, Linearization, Prediction, StateVec};
use crate::error::{Error, Result};

/// `z' = A z + B a + N(0, diag(std²))`.
#[derive(Debug, Clone)]
pub struct LinearGaussianDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub std: DVector<f64>,
}

impl LinearGaussianDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, std: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension {
                context: "linear dynamics A (square)",
                expected: n,
                actual: a.ncols(),
            });
        }
        if b.nrows() != n {
            return Err(Error::Dimension {
                context: "linear dynamics B rows",
                expected: n,
                actual: b.nrows(),
            });
        }
        if std.len() != n {
            return Err(Error::Dimension {
                context: "linear dynamics std",
                expected: n,
                actual: std.len(),
            });
        }
        if std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument("std must be finite and non-negative".into()));
        }
        Ok(Self { a, b, std })
    }

    /// `z' = z + a` with isotropic noise.
    pub fn shift(dim: usize, std: f64) -> Self {
        Self::new(
            DMatrix::identity(dim, dim),
            DMatrix::identity(dim, dim),
            DVector::from_element(dim, std),
        )
        .expect("identity shapes are consistent")
    }
}

impl GaussianDynamics for LinearGaussianDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    fn predict(&self, z: &StateVec, a: &ActionVec) -> Result<Prediction> {
        check_dims(z, a, self.state_dim(), self.action_dim())?;
        Ok(Prediction {
            mean: &self.a * z + &self.b * a,
            std: self.std.clone(),
        })
    }

    fn linearize(&self, z: &StateVec, a: &ActionVec) -> Result<Linearization> {
        let p = self.predict(z, a)?;
        let n = self.state_dim();
        Ok(Linearization {
            mean: p.mean,
            std: p.std,
            mean_z: self.a.clone(),
            mean_a: self.b.clone(),
            std_z: DMatrix::zeros(n, n),
            std_a: DMatrix::zeros(n, self.action_dim()),
        })
    }
}
