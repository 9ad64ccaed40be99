//! Adam, Riemannian Adam for ball-valued parameters, and global-norm clipping.

use crate::autodiff::Tensor;
use crate::nn::{Manifold, ParamStore};
use crate::poincare::{self, BallConfig, BallPoint, PoincareError};

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("gradient for `{name}` has shape {got:?}, parameter has {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("expected {expected} gradients, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("invalid optimizer setting: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Poincare(#[from] PoincareError),
}

type Result<T> = std::result::Result<T, OptimError>;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(OptimError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// First and second moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Updates the moments with `grad` and returns the bias-corrected step
    /// `lr·m̂/(√v̂ + eps)` per coordinate.
    fn advance(&mut self, grad: &[f64], cfg: &AdamConfig) -> Vec<f64> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        self.m
            .iter_mut()
            .zip(self.v.iter_mut())
            .zip(grad)
            .map(|((m, v), &g)| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                cfg.lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps)
            })
            .collect()
    }
}

fn check_grad(name: &str, grad: &[f64]) -> Result<()> {
    if grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(OptimError::NonFiniteGradient(name.to_string()))
    }
}

/// Bias-corrected Adam update applied in place.
pub fn adam_step(
    name: &str,
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if param.len() != grad.len() || state.m.len() != grad.len() {
        return Err(OptimError::ShapeMismatch {
            name: name.to_string(),
            expected: vec![param.len()],
            got: vec![grad.len()],
        });
    }
    check_grad(name, grad)?;
    let delta = state.advance(grad, cfg);
    param.iter_mut().zip(delta).for_each(|(p, d)| *p -= d);
    Ok(())
}

/// Inverse-metric factor `((1 − c‖p‖²)/2)²` turning a Euclidean gradient at
/// `p` into a Riemannian one.
pub fn metric_scale(p: &[f64], c: f64) -> f64 {
    let half = (1.0 - c * poincare::norm_sq(p)) / 2.0;
    half * half
}

/// Riemannian Adam on ball points stored as the rows of `points`
/// (`rows × dim`, row-major). Moments live in fixed tangent coordinates; each
/// row is moved by `exp_p(−Δ)` and projected back into the ball.
pub fn riemannian_adam_step(
    name: &str,
    points: &mut [f64],
    dim: usize,
    euclid_grad: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
    ball: BallConfig,
) -> Result<()> {
    if dim == 0
        || !points.len().is_multiple_of(dim)
        || points.len() != euclid_grad.len()
        || state.m.len() != points.len()
    {
        return Err(OptimError::ShapeMismatch {
            name: name.to_string(),
            expected: vec![points.len()],
            got: vec![euclid_grad.len()],
        });
    }
    check_grad(name, euclid_grad)?;
    let rgrad: Vec<f64> = points
        .chunks(dim)
        .zip(euclid_grad.chunks(dim))
        .flat_map(|(p, g)| {
            let s = metric_scale(p, ball.c());
            g.iter().map(move |x| x * s)
        })
        .collect();
    let delta = state.advance(&rgrad, cfg);
    for (p, d) in points.chunks_mut(dim).zip(delta.chunks(dim)) {
        let here = poincare::project_to_ball(p, ball)?;
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        let moved = poincare::expmap_at(&here, &neg)?;
        p.copy_from_slice(moved.coords());
    }
    Ok(())
}

/// Rescales every gradient by `max_norm/g` when the joint L2 norm `g`
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Tensor], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(OptimError::InvalidConfig(format!(
            "max_norm must be positive, got {max_norm}"
        )));
    }
    let total = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if total > max_norm {
        let s = max_norm / total;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    Ok(total)
}

/// One Adam or Riemannian Adam state per parameter of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: AdamConfig,
    states: Vec<AdamState>,
    max_grad_norm: Option<f64>,
}

impl Optimizer {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        let states = store
            .iter()
            .map(|(_, p)| AdamState::new(p.value.numel()))
            .collect();
        Ok(Self {
            config,
            states,
            max_grad_norm: None,
        })
    }

    /// Enables global-norm clipping over the Euclidean parameters.
    pub fn with_max_grad_norm(mut self, max_norm: f64) -> Result<Self> {
        if !(max_norm > 0.0) {
            return Err(OptimError::InvalidConfig(format!(
                "max_norm must be positive, got {max_norm}"
            )));
        }
        self.max_grad_norm = Some(max_norm);
        Ok(self)
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.states.first().map_or(0, AdamState::step)
    }

    /// Clips the Euclidean gradients (if enabled), then updates every
    /// parameter. Returns the Euclidean gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore, mut grads: Vec<Tensor>) -> Result<f64> {
        if grads.len() != store.len() || self.states.len() != store.len() {
            return Err(OptimError::CountMismatch {
                expected: store.len(),
                got: grads.len(),
            });
        }
        for ((_, p), g) in store.iter().zip(&grads) {
            if p.value.shape() != g.shape() {
                return Err(OptimError::ShapeMismatch {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
            check_grad(&p.name, g.data())?;
        }

        let mut euclid: Vec<&mut Tensor> = grads
            .iter_mut()
            .zip(store.iter())
            .filter(|(_, (_, p))| p.manifold == Manifold::Euclidean)
            .map(|(g, _)| g)
            .collect();
        let norm = match self.max_grad_norm {
            Some(max) => clip_global_norm(&mut euclid, max)?,
            None => euclid
                .iter()
                .flat_map(|g| g.data().iter())
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt(),
        };

        let ids: Vec<_> = store.ids().collect();
        for (id, grad) in ids.into_iter().zip(&grads) {
            let param = store.param(id);
            let (name, manifold) = (param.name.clone(), param.manifold);
            let state = &mut self.states[id.index()];
            let value = store.get_mut(id);
            match manifold {
                Manifold::Euclidean => {
                    adam_step(&name, value.data_mut(), grad.data(), state, &self.config)?
                }
                Manifold::Ball(ball) => {
                    let dim = *value.shape().last().expect("tensor has a shape");
                    riemannian_adam_step(
                        &name,
                        value.data_mut(),
                        dim,
                        grad.data(),
                        state,
                        &self.config,
                        ball,
                    )?
                }
            }
        }
        Ok(norm)
    }
}

/// Checks that every row of a ball parameter is a valid interior point.
pub fn rows_interior(points: &[f64], dim: usize, ball: BallConfig) -> bool {
    points.chunks(dim).all(|row| {
        BallPoint::new(row.to_vec(), ball).is_ok()
            && poincare::norm_sq(row).sqrt() <= ball.max_norm()
    })
}
