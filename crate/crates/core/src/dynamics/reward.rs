use nalgebra::{DMatrix, DVector};

use super::{RewardModel, StateVec};

/// `r(z) = c`.
#[derive(Debug, Clone)]
pub struct ConstantReward {
    pub dim: usize,
    pub value: f64,
}

impl RewardModel for ConstantReward {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn reward(&self, _z: &StateVec) -> f64 {
        self.value
    }

    fn gradient(&self, _z: &StateVec) -> StateVec {
        DVector::zeros(self.dim)
    }

    fn hessian(&self, _z: &StateVec) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(self.dim, self.dim))
    }
}

/// `r(z) = w·z + c`.
#[derive(Debug, Clone)]
pub struct LinearReward {
    pub weights: DVector<f64>,
    pub offset: f64,
}

impl RewardModel for LinearReward {
    fn state_dim(&self) -> usize {
        self.weights.len()
    }

    fn reward(&self, z: &StateVec) -> f64 {
        self.weights.dot(z) + self.offset
    }

    fn gradient(&self, _z: &StateVec) -> StateVec {
        self.weights.clone()
    }

    fn hessian(&self, _z: &StateVec) -> Option<DMatrix<f64>> {
        let n = self.weights.len();
        Some(DMatrix::zeros(n, n))
    }
}

/// `r(z) = -Σ_i w_i (z_i - target_i)²`.
#[derive(Debug, Clone)]
pub struct QuadraticReward {
    pub target: DVector<f64>,
    pub weights: DVector<f64>,
}

impl QuadraticReward {
    pub fn new(target: DVector<f64>, weights: DVector<f64>) -> Self {
        assert_eq!(target.len(), weights.len());
        Self { target, weights }
    }
}

impl RewardModel for QuadraticReward {
    fn state_dim(&self) -> usize {
        self.target.len()
    }

    fn reward(&self, z: &StateVec) -> f64 {
        -(z - &self.target)
            .iter()
            .zip(self.weights.iter())
            .map(|(d, w)| w * d * d)
            .sum::<f64>()
    }

    fn gradient(&self, z: &StateVec) -> StateVec {
        -2.0 * (z - &self.target).component_mul(&self.weights)
    }

    fn hessian(&self, _z: &StateVec) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_diagonal(&(-2.0 * &self.weights)))
    }
}

/// Isotropic Gaussian bump `r(z) = h · exp(-‖P(z - c)‖² / (2 w²))` where `P`
/// masks the coordinates that take part (all of them when `mask` is empty).
///
/// This is the smoothed stand-in for a sparse "inside the goal region"
/// indicator, similar in shape to what a learned reward predictor produces.
#[derive(Debug, Clone)]
pub struct GaussianBumpReward {
    pub center: DVector<f64>,
    pub width: f64,
    pub height: f64,
    pub mask: Vec<bool>,
}

impl GaussianBumpReward {
    pub fn new(center: DVector<f64>, width: f64, height: f64) -> Self {
        let mask = vec![true; center.len()];
        Self {
            center,
            width,
            height,
            mask,
        }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), self.center.len());
        self.mask = mask;
        self
    }

    fn offset(&self, z: &StateVec) -> DVector<f64> {
        DVector::from_fn(z.len(), |i, _| {
            if self.mask[i] {
                z[i] - self.center[i]
            } else {
                0.0
            }
        })
    }
}

impl RewardModel for GaussianBumpReward {
    fn state_dim(&self) -> usize {
        self.center.len()
    }

    fn reward(&self, z: &StateVec) -> f64 {
        let d = self.offset(z);
        self.height * (-d.norm_squared() / (2.0 * self.width * self.width)).exp()
    }

    fn gradient(&self, z: &StateVec) -> StateVec {
        let d = self.offset(z);
        let r = self.height * (-d.norm_squared() / (2.0 * self.width * self.width)).exp();
        d * (-r / (self.width * self.width))
    }

    fn hessian(&self, z: &StateVec) -> Option<DMatrix<f64>> {
        let d = self.offset(z);
        let w2 = self.width * self.width;
        let r = self.height * (-d.norm_squared() / (2.0 * w2)).exp();
        let n = z.len();
        let diag = DMatrix::from_fn(n, n, |i, j| {
            if i == j && self.mask[i] {
                1.0
            } else {
                0.0
            }
        });
        Some((&d * d.transpose() / w2 - diag) * (r / w2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_grad(r: &dyn RewardModel, z: &StateVec) -> StateVec {
        let h = 1e-6;
        DVector::from_fn(z.len(), |i, _| {
            let mut p = z.clone();
            let mut m = z.clone();
            p[i] += h;
            m[i] -= h;
            (r.reward(&p) - r.reward(&m)) / (2.0 * h)
        })
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let z = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let models: Vec<Box<dyn RewardModel>> = vec![
            Box::new(QuadraticReward::new(
                DVector::from_vec(vec![0.1, 0.2, -0.3]),
                DVector::from_vec(vec![1.0, 0.5, 2.0]),
            )),
            Box::new(GaussianBumpReward::new(DVector::from_vec(vec![0.5, -0.5, 1.0]), 0.7, 3.0)),
            Box::new(
                GaussianBumpReward::new(DVector::from_vec(vec![0.5, -0.5, 1.0]), 0.7, 3.0)
                    .with_mask(vec![true, false, true]),
            ),
            Box::new(LinearReward {
                weights: DVector::from_vec(vec![1.0, -2.0, 0.5]),
                offset: 0.2,
            }),
        ];
        for m in &models {
            let g = m.gradient(&z);
            let fd = fd_grad(m.as_ref(), &z);
            assert!((g - fd).amax() < 1e-6);
        }
    }

    #[test]
    fn bump_hessian_matches_gradient_differences() {
        let m = GaussianBumpReward::new(DVector::from_vec(vec![0.2, 0.1]), 0.4, 1.5);
        let z = DVector::from_vec(vec![0.5, -0.2]);
        let h = m.hessian(&z).unwrap();
        let eps = 1e-6;
        for j in 0..2 {
            let mut p = z.clone();
            let mut q = z.clone();
            p[j] += eps;
            q[j] -= eps;
            let col = (m.gradient(&p) - m.gradient(&q)) / (2.0 * eps);
            for i in 0..2 {
                assert!((h[(i, j)] - col[i]).abs() < 1e-6);
            }
        }
    }
}
