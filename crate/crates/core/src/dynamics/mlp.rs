//! Two-hidden-layer tanh networks with hand-written forward and reverse passes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{check_dims, ActionVec, GaussianDynamics, Linearization, Prediction, RewardModel, StateVec};
use crate::error::Result;

pub const HIDDEN_UNITS: usize = 64;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Affine layer `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: DMatrix::zeros(outputs, inputs),
            bias: DVector::zeros(outputs),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weight: DMatrix::from_fn(outputs, inputs, |_, _| rng.random_range(-limit..limit)),
            bias: DVector::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weight * x + &self.bias
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs(), self.outputs())
    }

    /// Accumulates `dW += dy xᵀ`, `db += dy`; returns `Wᵀ dy`.
    fn backward(&self, x: &DVector<f64>, dy: &DVector<f64>, grad: &mut Dense) -> DVector<f64> {
        grad.weight.ger(1.0, dy, x, 1.0);
        grad.bias += dy;
        self.weight.tr_mul(dy)
    }

    fn slices(&self) -> [&[f64]; 2] {
        [self.weight.as_slice(), self.bias.as_slice()]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weight.as_mut_slice(), self.bias.as_mut_slice()]
    }
}

struct TrunkPass {
    input: DVector<f64>,
    h1: DVector<f64>,
    h2: DVector<f64>,
}

fn trunk_forward(l1: &Dense, l2: &Dense, input: DVector<f64>) -> TrunkPass {
    let h1 = l1.forward(&input).map(f64::tanh);
    let h2 = l2.forward(&h1).map(f64::tanh);
    TrunkPass { input, h1, h2 }
}

/// `∂h2/∂input`, `HIDDEN × in`.
fn trunk_jacobian(l1: &Dense, l2: &Dense, pass: &TrunkPass) -> DMatrix<f64> {
    let mut j1 = l1.weight.clone();
    for (i, mut row) in j1.row_iter_mut().enumerate() {
        row *= 1.0 - pass.h1[i] * pass.h1[i];
    }
    let mut j2 = &l2.weight * j1;
    for (i, mut row) in j2.row_iter_mut().enumerate() {
        row *= 1.0 - pass.h2[i] * pass.h2[i];
    }
    j2
}

fn trunk_backward(
    l1: &Dense,
    l2: &Dense,
    pass: &TrunkPass,
    dh2: DVector<f64>,
    g1: &mut Dense,
    g2: &mut Dense,
) {
    let dpre2 = dh2.zip_map(&pass.h2, |d, h| d * (1.0 - h * h));
    let dh1 = l2.backward(&pass.h1, &dpre2, g2);
    let dpre1 = dh1.zip_map(&pass.h1, |d, h| d * (1.0 - h * h));
    l1.backward(&pass.input, &dpre1, g1);
}

/// Gaussian transition network: `(z, a) → 64 → 64 → {mean, log-std}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGaussianDynamics {
    pub state_dim: usize,
    pub action_dim: usize,
    pub hidden1: Dense,
    pub hidden2: Dense,
    pub mean_head: Dense,
    pub log_std_head: Dense,
}

impl MlpGaussianDynamics {
    pub fn zeros(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            hidden1: Dense::zeros(state_dim + action_dim, HIDDEN_UNITS),
            hidden2: Dense::zeros(HIDDEN_UNITS, HIDDEN_UNITS),
            mean_head: Dense::zeros(HIDDEN_UNITS, state_dim),
            log_std_head: Dense::zeros(HIDDEN_UNITS, state_dim),
        }
    }

    pub fn random<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, rng: &mut R) -> Self {
        Self {
            state_dim,
            action_dim,
            hidden1: Dense::glorot(state_dim + action_dim, HIDDEN_UNITS, rng),
            hidden2: Dense::glorot(HIDDEN_UNITS, HIDDEN_UNITS, rng),
            mean_head: Dense::glorot(HIDDEN_UNITS, state_dim, rng),
            log_std_head: Dense::glorot(HIDDEN_UNITS, state_dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            hidden1: self.hidden1.zeros_like(),
            hidden2: self.hidden2.zeros_like(),
            mean_head: self.mean_head.zeros_like(),
            log_std_head: self.log_std_head.zeros_like(),
        }
    }

    pub fn layers(&self) -> [&Dense; 4] {
        [&self.hidden1, &self.hidden2, &self.mean_head, &self.log_std_head]
    }

    pub(crate) fn param_slices(&self) -> Vec<&[f64]> {
        self.layers().into_iter().flat_map(|l| l.slices()).collect()
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        [
            &mut self.hidden1,
            &mut self.hidden2,
            &mut self.mean_head,
            &mut self.log_std_head,
        ]
        .into_iter()
        .flat_map(|l| l.slices_mut())
        .collect()
    }

    fn input(&self, z: &StateVec, a: &ActionVec) -> DVector<f64> {
        let mut x = DVector::zeros(self.state_dim + self.action_dim);
        x.rows_mut(0, self.state_dim).copy_from(z);
        x.rows_mut(self.state_dim, self.action_dim).copy_from(a);
        x
    }

    /// Per-transition Gaussian negative log-likelihood of `next`, summed over
    /// dimensions. Gradients are accumulated into `grad` when given.
    pub(crate) fn nll(
        &self,
        z: &StateVec,
        a: &ActionVec,
        next: &StateVec,
        grad: Option<&mut MlpGaussianDynamics>,
    ) -> f64 {
        let pass = trunk_forward(&self.hidden1, &self.hidden2, self.input(z, a));
        let mean = self.mean_head.forward(&pass.h2);
        let raw = self.log_std_head.forward(&pass.h2);
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let mut loss = 0.0;
        let mut dmean = DVector::zeros(self.state_dim);
        let mut dlog = DVector::zeros(self.state_dim);
        for i in 0..self.state_dim {
            let log_std = raw[i].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let inv_var = (-2.0 * log_std).exp();
            let err = next[i] - mean[i];
            loss += 0.5 * err * err * inv_var + log_std + half_ln_2pi;
            dmean[i] = -err * inv_var;
            if raw[i] > LOG_STD_MIN && raw[i] < LOG_STD_MAX {
                dlog[i] = 1.0 - err * err * inv_var;
            }
        }
        if let Some(g) = grad {
            let mut dh2 = self.mean_head.backward(&pass.h2, &dmean, &mut g.mean_head);
            dh2 += self.log_std_head.backward(&pass.h2, &dlog, &mut g.log_std_head);
            trunk_backward(&self.hidden1, &self.hidden2, &pass, dh2, &mut g.hidden1, &mut g.hidden2);
        }
        loss
    }
}

impl GaussianDynamics for MlpGaussianDynamics {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn predict(&self, z: &StateVec, a: &ActionVec) -> Result<Prediction> {
        check_dims(z, a, self.state_dim, self.action_dim)?;
        let pass = trunk_forward(&self.hidden1, &self.hidden2, self.input(z, a));
        let mean = self.mean_head.forward(&pass.h2);
        let std = self
            .log_std_head
            .forward(&pass.h2)
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp());
        Ok(Prediction { mean, std })
    }

    fn linearize(&self, z: &StateVec, a: &ActionVec) -> Result<Linearization> {
        check_dims(z, a, self.state_dim, self.action_dim)?;
        let pass = trunk_forward(&self.hidden1, &self.hidden2, self.input(z, a));
        let jt = trunk_jacobian(&self.hidden1, &self.hidden2, &pass);
        let mean = self.mean_head.forward(&pass.h2);
        let raw = self.log_std_head.forward(&pass.h2);
        let std = raw.map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp());
        let jm = &self.mean_head.weight * &jt;
        let mut js = &self.log_std_head.weight * &jt;
        for (i, mut row) in js.row_iter_mut().enumerate() {
            let active = raw[i] > LOG_STD_MIN && raw[i] < LOG_STD_MAX;
            row *= if active { std[i] } else { 0.0 };
        }
        let (n, m) = (self.state_dim, self.action_dim);
        Ok(Linearization {
            mean,
            std,
            mean_z: jm.columns(0, n).into_owned(),
            mean_a: jm.columns(n, m).into_owned(),
            std_z: js.columns(0, n).into_owned(),
            std_a: js.columns(n, m).into_owned(),
        })
    }
}

/// Scalar reward network `z → 64 → 64 → r`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpReward {
    pub state_dim: usize,
    pub hidden1: Dense,
    pub hidden2: Dense,
    pub head: Dense,
}

impl MlpReward {
    pub fn zeros(state_dim: usize) -> Self {
        Self {
            state_dim,
            hidden1: Dense::zeros(state_dim, HIDDEN_UNITS),
            hidden2: Dense::zeros(HIDDEN_UNITS, HIDDEN_UNITS),
            head: Dense::zeros(HIDDEN_UNITS, 1),
        }
    }

    pub fn random<R: Rng + ?Sized>(state_dim: usize, rng: &mut R) -> Self {
        Self {
            state_dim,
            hidden1: Dense::glorot(state_dim, HIDDEN_UNITS, rng),
            hidden2: Dense::glorot(HIDDEN_UNITS, HIDDEN_UNITS, rng),
            head: Dense::glorot(HIDDEN_UNITS, 1, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            state_dim: self.state_dim,
            hidden1: self.hidden1.zeros_like(),
            hidden2: self.hidden2.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn layers(&self) -> [&Dense; 3] {
        [&self.hidden1, &self.hidden2, &self.head]
    }

    pub(crate) fn param_slices(&self) -> Vec<&[f64]> {
        self.layers().into_iter().flat_map(|l| l.slices()).collect()
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        [&mut self.hidden1, &mut self.hidden2, &mut self.head]
            .into_iter()
            .flat_map(|l| l.slices_mut())
            .collect()
    }

    /// Squared error `(r(z) - target)²`, accumulating gradients into `grad`.
    pub(crate) fn squared_error(&self, z: &StateVec, target: f64, grad: Option<&mut MlpReward>) -> f64 {
        let pass = trunk_forward(&self.hidden1, &self.hidden2, z.clone());
        let out = self.head.forward(&pass.h2)[0];
        let err = out - target;
        if let Some(g) = grad {
            let dy = DVector::from_element(1, 2.0 * err);
            let dh2 = self.head.backward(&pass.h2, &dy, &mut g.head);
            trunk_backward(&self.hidden1, &self.hidden2, &pass, dh2, &mut g.hidden1, &mut g.hidden2);
        }
        err * err
    }
}

impl RewardModel for MlpReward {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn reward(&self, z: &StateVec) -> f64 {
        let pass = trunk_forward(&self.hidden1, &self.hidden2, z.clone());
        self.head.forward(&pass.h2)[0]
    }

    fn gradient(&self, z: &StateVec) -> StateVec {
        let pass = trunk_forward(&self.hidden1, &self.hidden2, z.clone());
        let jt = trunk_jacobian(&self.hidden1, &self.hidden2, &pass);
        jt.tr_mul(&self.head.weight.row(0).transpose())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar-loop forward pass kept independent of the matrix code path.
    fn reference_forward(m: &MlpGaussianDynamics, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let layer = |d: &Dense, v: &[f64], act: bool| -> Vec<f64> {
            (0..d.outputs())
                .map(|i| {
                    let mut s = d.bias[i];
                    for (j, vj) in v.iter().enumerate() {
                        s += d.weight[(i, j)] * vj;
                    }
                    if act {
                        s.tanh()
                    } else {
                        s
                    }
                })
                .collect()
        };
        let h1 = layer(&m.hidden1, x, true);
        let h2 = layer(&m.hidden2, &h1, true);
        let mean = layer(&m.mean_head, &h2, false);
        let std = layer(&m.log_std_head, &h2, false)
            .into_iter()
            .map(|l| l.clamp(-5.0, 2.0).exp())
            .collect();
        (mean, std)
    }

    #[test]
    fn zero_weights_output_biases() {
        let mut m = MlpGaussianDynamics::zeros(2, 1);
        m.mean_head.bias = DVector::from_vec(vec![0.5, -1.5]);
        m.log_std_head.bias = DVector::from_vec(vec![-9.0, 0.3]);
        let p = m
            .predict(&DVector::from_vec(vec![3.0, -2.0]), &DVector::from_vec(vec![0.7]))
            .unwrap();
        assert_eq!(p.mean, m.mean_head.bias);
        assert_eq!(p.std[0], (-5.0f64).exp());
        assert_eq!(p.std[1], 0.3f64.exp());
    }

    #[test]
    fn forward_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let m = MlpGaussianDynamics::random(3, 2, &mut rng);
            let z = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let a = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let p = m.predict(&z, &a).unwrap();
            let x: Vec<f64> = z.iter().chain(a.iter()).copied().collect();
            let (mean, std) = reference_forward(&m, &x);
            for i in 0..3 {
                assert!((p.mean[i] - mean[i]).abs() < 1e-12);
                assert!((p.std[i] - std[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = MlpGaussianDynamics::random(2, 1, &mut rng);
        let z = DVector::from_vec(vec![0.3, -0.2]);
        let a = DVector::from_vec(vec![0.5]);
        let y = DVector::from_vec(vec![0.1, 0.4]);
        let mut g = m.zeros_like();
        m.nll(&z, &a, &y, Some(&mut g));
        let analytic: Vec<f64> = g.param_slices().concat();
        let base: Vec<f64> = m.param_slices().concat();
        let h = 1e-6;
        for idx in (0..base.len()).step_by(37) {
            let eval = |delta: f64| {
                let mut mm = m.clone();
                let mut k = 0;
                for s in mm.param_slices_mut() {
                    for v in s.iter_mut() {
                        if k == idx {
                            *v += delta;
                        }
                        k += 1;
                    }
                }
                mm.nll(&z, &a, &y, None)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - analytic[idx]).abs() < 1e-5, "param {idx}: {fd} vs {}", analytic[idx]);
        }
    }

    #[test]
    fn reward_squared_error_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let m = MlpReward::random(3, &mut rng);
        let z = DVector::from_vec(vec![0.3, -0.2, 0.9]);
        let mut g = m.zeros_like();
        m.squared_error(&z, 0.7, Some(&mut g));
        let analytic: Vec<f64> = g.param_slices().concat();
        let total: usize = analytic.len();
        let h = 1e-6;
        for idx in (0..total).step_by(29) {
            let eval = |delta: f64| {
                let mut mm = m.clone();
                let mut k = 0;
                for s in mm.param_slices_mut() {
                    for v in s.iter_mut() {
                        if k == idx {
                            *v += delta;
                        }
                        k += 1;
                    }
                }
                mm.squared_error(&z, 0.7, None)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - analytic[idx]).abs() < 1e-5);
        }
    }
}
