//! Likelihood training of the transition and reward networks.

use rand::Rng;

use super::{MlpGaussianDynamics, MlpReward, ReplayBuffer};
use crate::defaults;
use crate::error::{Error, Result};

/// Adaptive-moment first-order update over a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: defaults::ADAM_BETA1,
            beta2: defaults::ADAM_BETA2,
            eps: defaults::ADAM_EPS,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Descends: `p -= lr · m̂ / (√v̂ + eps)`.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    /// Mean loss over the last (up to) ten optimizer steps.
    pub final_loss: f64,
    pub steps: usize,
}

/// Keeps optimizer state for both networks across repeated training calls,
/// as the online loop trains a few iterations after every episode.
#[derive(Debug, Clone)]
pub struct ModelTrainer {
    pub batch_size: usize,
    dynamics_opt: Adam,
    reward_opt: Adam,
}

const LOSS_WINDOW: usize = 10;

impl ModelTrainer {
    pub fn new(learning_rate: f64, batch_size: usize) -> Self {
        assert!(batch_size > 0);
        Self {
            batch_size,
            dynamics_opt: Adam::new(learning_rate),
            reward_opt: Adam::new(learning_rate),
        }
    }

    /// Minimizes the per-transition Gaussian NLL of `z_{t+1} | z_t, a_t`.
    pub fn train_dynamics<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        model: &mut MlpGaussianDynamics,
        steps: usize,
        rng: &mut R,
    ) -> Result<TrainStats> {
        if buffer.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let mut window = Vec::with_capacity(steps.min(LOSS_WINDOW));
        if steps == 0 {
            let loss = self.dynamics_batch(buffer, model, rng, None)?;
            return Ok(TrainStats { final_loss: loss, steps });
        }
        for _ in 0..steps {
            let mut grad = model.zeros_like();
            let loss = self.dynamics_batch(buffer, model, rng, Some(&mut grad))?;
            let grads = grad.param_slices();
            self.dynamics_opt.step(model.param_slices_mut(), &grads);
            push_window(&mut window, loss);
        }
        Ok(TrainStats {
            final_loss: window.iter().sum::<f64>() / window.len() as f64,
            steps,
        })
    }

    fn dynamics_batch<R: Rng + ?Sized>(
        &self,
        buffer: &ReplayBuffer,
        model: &MlpGaussianDynamics,
        rng: &mut R,
        mut grad: Option<&mut MlpGaussianDynamics>,
    ) -> Result<f64> {
        let mut loss = 0.0;
        for _ in 0..self.batch_size {
            let t = buffer.sample(rng)?;
            loss += model.nll(t.state, t.action, t.next, grad.as_deref_mut());
        }
        let scale = 1.0 / self.batch_size as f64;
        if let Some(g) = grad {
            for s in g.param_slices_mut() {
                s.iter_mut().for_each(|x| *x *= scale);
            }
        }
        Ok(loss * scale)
    }

    /// Regresses `r(z_{t+1})` onto `target(reward_t)` with squared error.
    pub fn train_reward<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        model: &mut MlpReward,
        steps: usize,
        rng: &mut R,
        target: &dyn Fn(f64) -> f64,
    ) -> Result<TrainStats> {
        if buffer.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if steps == 0 {
            let loss = self.reward_batch(buffer, model, rng, target, None)?;
            return Ok(TrainStats { final_loss: loss, steps });
        }
        let mut window = Vec::with_capacity(steps.min(LOSS_WINDOW));
        for _ in 0..steps {
            let mut grad = model.zeros_like();
            let loss = self.reward_batch(buffer, model, rng, target, Some(&mut grad))?;
            let grads = grad.param_slices();
            self.reward_opt.step(model.param_slices_mut(), &grads);
            push_window(&mut window, loss);
        }
        Ok(TrainStats {
            final_loss: window.iter().sum::<f64>() / window.len() as f64,
            steps,
        })
    }

    fn reward_batch<R: Rng + ?Sized>(
        &self,
        buffer: &ReplayBuffer,
        model: &MlpReward,
        rng: &mut R,
        target: &dyn Fn(f64) -> f64,
        mut grad: Option<&mut MlpReward>,
    ) -> Result<f64> {
        let mut loss = 0.0;
        for _ in 0..self.batch_size {
            let t = buffer.sample(rng)?;
            loss += model.squared_error(t.next, target(t.reward), grad.as_deref_mut());
        }
        let scale = 1.0 / self.batch_size as f64;
        if let Some(g) = grad {
            for s in g.param_slices_mut() {
                s.iter_mut().for_each(|x| *x *= scale);
            }
        }
        Ok(loss * scale)
    }
}

fn push_window(window: &mut Vec<f64>, loss: f64) {
    if window.len() == LOSS_WINDOW {
        window.remove(0);
    }
    window.push(loss);
}

/// One-shot dynamics training with a fresh optimizer. Returns the mean
/// negative log-likelihood per transition over the last ten steps.
pub fn train_dynamics<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    model: &mut MlpGaussianDynamics,
    steps: usize,
    lr: f64,
    batch: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(ModelTrainer::new(lr, batch)
        .train_dynamics(buffer, model, steps, rng)?
        .final_loss)
}

/// One-shot reward regression with a fresh optimizer. Returns the mean squared
/// error over the last ten steps.
pub fn train_reward<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    model: &mut MlpReward,
    steps: usize,
    lr: f64,
    batch: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(ModelTrainer::new(lr, batch)
        .train_reward(buffer, model, steps, rng, &|r| r)?
        .final_loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Episode, GaussianDynamics, RewardModel};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const NOISE: f64 = 0.05;

    fn linear_step(z: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        let am = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.1, 0.9]);
        let bm = DMatrix::from_row_slice(2, 1, &[0.0, 0.5]);
        am * z + bm * a
    }

    fn linear_gaussian_buffer(episodes: usize, rng: &mut ChaCha8Rng) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(episodes);
        for _ in 0..episodes {
            let mut z = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let mut ep = Episode::new(z.clone());
            for _ in 0..20 {
                let a = DVector::from_fn(1, |_, _| rng.random_range(-1.0..1.0));
                let noise = DVector::from_fn(2, |_, _| {
                    NOISE * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                });
                let next = linear_step(&z, &a) + noise;
                ep.push(a, 0.0, next.clone());
                z = next;
            }
            buf.push(ep).unwrap();
        }
        buf
    }

    #[test]
    fn empty_buffer_is_an_error() {
        let buf = ReplayBuffer::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = MlpGaussianDynamics::random(2, 1, &mut rng);
        assert!(matches!(
            train_dynamics(&buf, &mut m, 10, 1e-3, 8, &mut rng),
            Err(Error::EmptyBuffer)
        ));
        let mut r = MlpReward::random(2, &mut rng);
        assert!(matches!(
            train_reward(&buf, &mut r, 10, 1e-3, 8, &mut rng),
            Err(Error::EmptyBuffer)
        ));
    }

    #[test]
    fn zero_steps_leaves_model_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let buf = linear_gaussian_buffer(4, &mut rng);
        let mut m = MlpGaussianDynamics::random(2, 1, &mut rng);
        let before = m.clone();
        let loss = train_dynamics(&buf, &mut m, 0, 1e-3, 16, &mut rng).unwrap();
        assert!(loss.is_finite());
        assert_eq!(m, before);
    }

    #[test]
    fn linear_gaussian_data_is_learned_to_noise_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let buf = linear_gaussian_buffer(100, &mut rng);
        let mut m = MlpGaussianDynamics::random(2, 1, &mut rng);
        let nll = train_dynamics(&buf, &mut m, 2000, 1e-3, 64, &mut rng).unwrap();

        // Entropy floor of N(0, NOISE²) per dimension.
        let floor = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * NOISE * NOISE).ln();
        assert!(nll / 2.0 <= floor + 0.5, "nll/dim {} floor {}", nll / 2.0, floor);

        let held_out = linear_gaussian_buffer(10, &mut ChaCha8Rng::seed_from_u64(77));
        let mut sq = 0.0;
        let mut n = 0;
        for i in 0..held_out.transition_count() {
            let t = held_out.transition(i).unwrap();
            let mean = m.mean(t.state, t.action).unwrap();
            sq += (mean - linear_step(t.state, t.action)).norm_squared();
            n += 2;
        }
        let rmse = (sq / n as f64).sqrt();
        assert!(rmse <= 2.0 * NOISE, "held-out mean error {rmse}");
    }

    #[test]
    fn repeated_transition_overfits_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ep = Episode::new(DVector::from_vec(vec![0.2, -0.1]));
        ep.push(DVector::from_vec(vec![0.3]), 0.0, DVector::from_vec(vec![0.4, 0.1]));
        let mut buf = ReplayBuffer::new(1);
        buf.push(ep).unwrap();
        let mut m = MlpGaussianDynamics::random(2, 1, &mut rng);
        let mut trainer = ModelTrainer::new(1e-3, 4);
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let loss = trainer.train_dynamics(&buf, &mut m, 1, &mut rng).unwrap().final_loss;
            assert!(loss <= prev + 1e-6, "{loss} > {prev}");
            prev = loss;
        }
    }

    #[test]
    fn constant_reward_is_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut buf = ReplayBuffer::new(50);
        for _ in 0..50 {
            let mut ep = Episode::new(DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)));
            for _ in 0..10 {
                let z = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
                ep.push(DVector::zeros(1), 0.5, z);
            }
            buf.push(ep).unwrap();
        }
        let mut r = MlpReward::random(2, &mut rng);
        train_reward(&buf, &mut r, 1000, 1e-3, 64, &mut rng).unwrap();
        for _ in 0..20 {
            let z = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            assert!((r.reward(&z) - 0.5).abs() < 0.05);
        }
    }
}
