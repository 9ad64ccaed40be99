//! PPO and n-step DQN trainers over any [`HeadMode`], with per-sample
//! gradient statistics.

mod common;
mod dqn;
mod ppo;
mod probe;

pub use common::{evaluate, sample_categorical, Levels, Policy};
pub use dqn::{
    dqn_loss, dqn_targets, epsilon_greedy, n_step_target, train_dqn, DqnConfig, NStepSample,
    ReplayBuffer, Transition,
};
pub use ppo::{gae, normalize_advantages, ppo_loss, train_ppo, PpoBatch, PpoConfig, PpoLoss};
pub use probe::{grad_probe, probe_update, Cut, CutStats, GradStats};

use crate::autodiff::AutodiffError;
use crate::envs::{EnvError, GridConfig};
use crate::hyperbolicity::HyperbolicityError;
use crate::nn::{HeadMode, Network, NnError};
use crate::optim::OptimError;

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Hyperbolicity(#[from] HyperbolicityError),
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite {term} term")]
    NonFinite { term: &'static str },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("replay buffer holds {available} usable windows, batch needs {requested}")]
    BufferTooSmall { available: usize, requested: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("gradient at the {0} cut was not retained")]
    NotRetained(&'static str),
    #[error("training diverged at update {update}: {reason}\n{dump}")]
    Diverged {
        update: usize,
        reason: String,
        dump: String,
    },
    #[error("metrics sink failed: {0}")]
    Sink(String),
}

pub type Result<T> = std::result::Result<T, RlError>;

/// Settings shared by both trainers.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub head: HeadMode,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub curvature: f64,
    pub seed: u64,
    pub train_levels: usize,
    pub test_levels: usize,
    pub grid: GridConfig,
    /// Fixed ASCII level used for both splits instead of generated levels.
    pub layout: Option<String>,
    pub updates: usize,
    /// Test-split evaluation cadence in updates (0 disables).
    pub eval_every: usize,
    /// δ_rel cadence in updates (0 disables).
    pub delta_every: usize,
    pub delta_samples: usize,
    pub gamma: f64,
    pub lr: f64,
    pub adam_eps: f64,
    pub max_grad_norm: f64,
    /// Overrides the head mode's default initial down-scaling; `0` disables it.
    pub small_init: Option<f64>,
    pub power_iters: usize,
    /// Fill `wall_ms` in metrics records (breaks byte-identical reruns).
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            head: HeadMode::Srym,
            latent_dim: 32,
            hidden: vec![128, 128],
            curvature: 1.0,
            seed: 0,
            train_levels: 32,
            test_levels: 200,
            grid: GridConfig::default(),
            layout: None,
            updates: 300,
            eval_every: 10,
            delta_every: 10,
            delta_samples: 256,
            gamma: 0.99,
            lr: 5e-4,
            adam_eps: 1e-5,
            max_grad_norm: 0.5,
            small_init: None,
            power_iters: 1,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(RlError::InvalidConfig(m.to_string()));
        if self.latent_dim == 0 {
            return fail("latent_dim must be positive");
        }
        if self.updates == 0 {
            return fail("updates must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1]");
        }
        if !(self.lr >= 0.0) || !(self.adam_eps > 0.0) || !(self.max_grad_norm > 0.0) {
            return fail("lr must be non-negative, adam_eps and max_grad_norm positive");
        }
        if !(self.curvature > 0.0) {
            return fail("curvature must be positive");
        }
        if self.layout.is_none() && (self.train_levels == 0 || self.test_levels == 0) {
            return fail("train_levels and test_levels must be positive");
        }
        if self.delta_every > 0 && self.delta_samples < 2 {
            return fail("delta_samples must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One line of the JSONL metrics stream.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsRecord {
    pub update: usize,
    pub env_steps: u64,
    pub split: Split,
    pub mean_return: Option<f64>,
    pub entropy: Option<f64>,
    pub grad_latent_mag: Option<f64>,
    pub grad_latent_var: Option<f64>,
    pub grad_encoder_mag: Option<f64>,
    pub grad_encoder_var: Option<f64>,
    pub delta_rel: Option<f64>,
    pub wall_ms: Option<f64>,
}

impl MetricsRecord {
    pub(crate) fn empty(update: usize, env_steps: u64, split: Split) -> Self {
        Self {
            update,
            env_steps,
            split,
            mean_return: None,
            entropy: None,
            grad_latent_mag: None,
            grad_latent_var: None,
            grad_encoder_mag: None,
            grad_encoder_var: None,
            delta_rel: None,
            wall_ms: None,
        }
    }
}

/// Result of a completed training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    /// Mean return over evaluation episodes on the training levels.
    pub final_train_return: f64,
    /// Mean return over one episode per held-out level.
    pub final_test_return: f64,
    pub network: Network,
}

impl TrainOutcome {
    /// Training-minus-test return.
    pub fn generalization_gap(&self) -> f64 {
        self.final_train_return - self.final_test_return
    }
}
