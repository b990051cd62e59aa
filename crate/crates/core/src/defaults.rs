//! Default hyperparameters. Every planner and training default is defined
//! here and nowhere else; config `Default` impls read from this table.

// Collocation (deterministic).
pub const LATCO_ITERATIONS: usize = 200;
pub const LATCO_EPS_DYN: f64 = 1e-4;
pub const LATCO_EPS_ACT: f64 = 1e-4;
pub const DUAL_STEP: f64 = 0.1;
pub const DUAL_STABILIZER: f64 = 0.01;
pub const LAMBDA_DYN_INIT: f64 = 1.0;
pub const LAMBDA_ACT_INIT: f64 = 1.0;
pub const LM_DAMPING: f64 = 1e-3;
pub const DUAL_PERIOD: usize = 1;
pub const RESTARTS: usize = 4;
pub const LAMBDA_MIN: f64 = 1e-8;
pub const LAMBDA_MAX: f64 = 1e12;

// Collocation (Gaussian plans).
pub const GAUSSIAN_ITERATIONS: usize = 50;
pub const GAUSSIAN_EPS_DYN: f64 = 1e-2;
pub const GAUSSIAN_PARTICLES: usize = 50;
pub const LOG_SIGMA_MIN: f64 = -6.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

// Ablations.
pub const NO_RELAXATION_LAMBDA: f64 = 1e8;
pub const FIXED_LAMBDA_DYN: f64 = 8.0;
pub const FIXED_LAMBDA_ACT: f64 = 16.0;
pub const FIRST_ORDER_STEPS: usize = 5000;
pub const FIRST_ORDER_DUAL_PERIOD: usize = 5;
pub const FIRST_ORDER_DUAL_LR: f64 = 1.5;
pub const FIRST_ORDER_PRIMAL_LR: f64 = 1e-2;

// Sampling-based shooting.
pub const CEM_ITERATIONS: usize = 10;
pub const CEM_POPULATION: usize = 1000;
pub const CEM_ELITES: usize = 100;
pub const CEM_INIT_STD: f64 = 1.0;
pub const MPPI_TEMPERATURE: f64 = 10.0;

// Gradient-based shooting.
pub const GD_ITERATIONS: usize = 500;
pub const GD_LEARNING_RATE: f64 = 0.05;
pub const GD_DUAL_PERIOD: usize = 5;
pub const GN_ITERATIONS: usize = 100;

// iLQR.
pub const ILQR_MAX_ITERATIONS: usize = 100;
pub const ILQR_REG_INIT: f64 = 1.0;
pub const ILQR_REG_FACTOR: f64 = 2.0;
pub const ILQR_REG_MAX: f64 = 1e10;
pub const ILQR_LINE_SEARCH_STEPS: usize = 10;

// Model training.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const MODEL_LEARNING_RATE: f64 = 1e-3;
pub const MODEL_BATCH: usize = 64;
pub const MODEL_ITERATIONS_PER_EPISODE: usize = 15;
pub const REPLAY_CAPACITY: usize = 10_000;
pub const SEED_EPISODES: usize = 200;

// MPC.
pub const MPC_HORIZON: usize = 30;
pub const MPC_REPLAN: usize = 30;
pub const MPC_EPISODE_STEPS: usize = 150;
pub const ACTION_REPEAT: usize = 1;

pub const REWARD_STD_FLOOR: f64 = 1e-6;
