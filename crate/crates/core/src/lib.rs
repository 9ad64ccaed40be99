//! Hyperbolic latent representations for deep reinforcement learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: dense tensors and a reverse-mode tape.
//! - [`poincare`]: Poincaré-ball kernels (Möbius addition, exp/log maps,
//!   geodesic distance, gyroplane logits), both on plain slices and on the tape.
//! - [`nn`]: MLP encoder, spectral normalization and the hyperbolic heads.
//! - [`optim`]: Adam, Riemannian Adam for ball-valued parameters, norm clipping.
//! - [`hyperbolicity`]: Gromov products and δ-hyperbolicity of point sets.
//! - [`envs`]: procedurally generated gridworlds and tree metrics.
//! - [`rl`]: PPO and n-step DQN trainers with gradient instrumentation.
//! - [`embed`]: tree-embedding distortion benchmark.

// Tape ops are methods on `Var` by design; `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::should_implement_trait, clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod embed;
pub mod envs;
pub mod hyperbolicity;
pub mod nn;
pub mod optim;
pub mod poincare;
pub mod rl;

pub use autodiff::{AutodiffError, Gradients, Tape, Tensor, Var};
pub use embed::{embed_metric, EmbedConfig, EmbedError, Embedding, Geometry};
pub use envs::{EnvError, GridConfig, LevelSeed, ProcGridEnv, TreeSpec};
pub use hyperbolicity::{DistanceMatrix, HyperbolicityError, HyperbolicityReport, Metric};
pub use nn::{HeadMode, Network, NetworkConfig, NnError};
pub use optim::{AdamConfig, OptimError, Optimizer};
pub use poincare::{BallConfig, BallPoint, GyroplaneParams, PoincareError};
pub use rl::{DqnConfig, MetricsRecord, PpoConfig, RlError, Split, TrainConfig, TrainOutcome};
