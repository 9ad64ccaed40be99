//! MLP encoder, spectral normalization and the policy/value heads.
//!
//! A [`Network`] maps observations to `x_E` through an MLP, then applies one
//! of the [`HeadMode`] mappings and a final layer producing every output
//! (policy logits plus value, or Q-values). Hyperbolic heads end in one
//! gyroplane per output.

mod checkpoint;
mod linear;
mod params;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, CHECKPOINT_MAGIC};
pub use linear::{spectral_normalize, LinearLayer, SpectralNormState, SIGMA_FLOOR};
pub use params::{BoundParams, Manifold, Param, ParamId, ParamStore};

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::poincare::{self, batched, BallConfig, BallPoint, GyroplaneParams, PoincareError};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Poincare(#[from] PoincareError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("input has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown head mode `{0}`")]
    UnknownMode(String),
}

type Result<T> = std::result::Result<T, NnError>;

/// How the encoder output `x_E` reaches the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum HeadMode {
    /// ReLU, then a Euclidean affine layer.
    Euclidean,
    /// As `Euclidean` with a spectrally normalized encoder.
    EuclideanSn,
    /// `exp₀(x_E)` into gyroplane logits.
    Naive,
    /// `exp₀(min{1, 1/‖x_E‖}·x_E)` into gyroplane logits.
    Clipped,
    /// Spectrally normalized encoder, `exp₀(x_E/√n)`.
    Srym,
    /// `exp₀(x_E/√n)` without spectral normalization.
    SrymNoSn,
    /// Spectrally normalized encoder, `exp₀(x_E)` without the rescale.
    SrymNoRescale,
}

impl HeadMode {
    pub const ALL: [HeadMode; 7] = [
        HeadMode::Euclidean,
        HeadMode::EuclideanSn,
        HeadMode::Naive,
        HeadMode::Clipped,
        HeadMode::Srym,
        HeadMode::SrymNoSn,
        HeadMode::SrymNoRescale,
    ];

    pub fn is_hyperbolic(self) -> bool {
        !matches!(self, HeadMode::Euclidean | HeadMode::EuclideanSn)
    }

    /// Whether every encoder layer is spectrally normalized.
    pub fn spectral_norm(self) -> bool {
        matches!(
            self,
            HeadMode::EuclideanSn | HeadMode::Srym | HeadMode::SrymNoRescale
        )
    }

    /// Whether `x_E` is divided by `√n` before the exponential map.
    pub fn rescale(self) -> bool {
        matches!(self, HeadMode::Srym | HeadMode::SrymNoSn)
    }

    /// Whether the mode shrinks its final two layers at initialization.
    pub fn default_small_init(self) -> bool {
        matches!(self, HeadMode::Naive | HeadMode::Clipped)
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadMode::Euclidean => "euclid",
            HeadMode::EuclideanSn => "euclid-sn",
            HeadMode::Naive => "naive",
            HeadMode::Clipped => "clipped",
            HeadMode::Srym => "srym",
            HeadMode::SrymNoSn => "srym-no-sn",
            HeadMode::SrymNoRescale => "srym-no-rescale",
        }
    }
}

impl fmt::Display for HeadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadMode {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let mode = match key.as_str() {
            "euclid" | "euclidean" => HeadMode::Euclidean,
            "euclid-sn" | "euclidean-sn" => HeadMode::EuclideanSn,
            "naive" | "hyper" => HeadMode::Naive,
            "clipped" | "clip" => HeadMode::Clipped,
            "srym" | "s-rym" | "hyper+s-rym" => HeadMode::Srym,
            "srym-no-sn" => HeadMode::SrymNoSn,
            "srym-no-rescale" => HeadMode::SrymNoRescale,
            _ => return Err(NnError::UnknownMode(s.to_string())),
        };
        Ok(mode)
    }
}

/// `exp₀(x_E/√n)`.
pub fn srym_forward(x_e: &[f64], config: BallConfig) -> Result<BallPoint> {
    if x_e.is_empty() {
        return Err(NnError::InvalidConfig(
            "latent dimension must be positive".into(),
        ));
    }
    let scale = 1.0 / (x_e.len() as f64).sqrt();
    let scaled: Vec<f64> = x_e.iter().map(|v| v * scale).collect();
    Ok(poincare::expmap0(&scaled, config)?)
}

/// `exp₀(min{1, 1/‖x_E‖}·x_E)`.
pub fn clipped_forward(x_e: &[f64], config: BallConfig) -> Result<BallPoint> {
    let norm = poincare::norm_sq(x_e).sqrt();
    let factor = if norm > 1.0 { 1.0 / norm } else { 1.0 };
    let clipped: Vec<f64> = x_e.iter().map(|v| v * factor).collect();
    Ok(poincare::expmap0(&clipped, config)?)
}

/// One gyroplane per output, evaluated on a single latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicHead {
    gyroplanes: Vec<GyroplaneParams>,
    config: BallConfig,
    mode: HeadMode,
}

impl HyperbolicHead {
    pub fn new(
        gyroplanes: Vec<GyroplaneParams>,
        config: BallConfig,
        mode: HeadMode,
    ) -> Result<Self> {
        let Some(first) = gyroplanes.first() else {
            return Err(NnError::InvalidConfig(
                "head needs at least one output".into(),
            ));
        };
        let dim = first.w().len();
        if let Some(bad) = gyroplanes.iter().find(|g| g.w().len() != dim) {
            return Err(NnError::DimensionMismatch {
                expected: dim,
                got: bad.w().len(),
            });
        }
        Ok(Self {
            gyroplanes,
            config,
            mode,
        })
    }

    pub fn gyroplanes(&self) -> &[GyroplaneParams] {
        &self.gyroplanes
    }

    pub fn config(&self) -> BallConfig {
        self.config
    }

    pub fn mode(&self) -> HeadMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.gyroplanes[0].w().len()
    }

    pub fn outputs(&self) -> usize {
        self.gyroplanes.len()
    }
}

/// Maps `x_E` according to the head's mode and evaluates every output.
///
/// Euclidean modes apply ReLU and then the plain affine map `⟨x − p, w⟩`.
pub fn head_forward(x_e: &[f64], head: &HyperbolicHead) -> Result<Vec<f64>> {
    if x_e.len() != head.dim() {
        return Err(NnError::DimensionMismatch {
            expected: head.dim(),
            got: x_e.len(),
        });
    }
    let cfg = head.config;
    let point = match head.mode {
        HeadMode::Euclidean | HeadMode::EuclideanSn => {
            return Ok(head
                .gyroplanes
                .iter()
                .map(|g| {
                    x_e.iter()
                        .zip(g.p().coords())
                        .zip(g.w())
                        .map(|((x, p), w)| (x.max(0.0) - p) * w)
                        .sum()
                })
                .collect());
        }
        HeadMode::Naive | HeadMode::SrymNoRescale => poincare::expmap0(x_e, cfg)?,
        HeadMode::Clipped => clipped_forward(x_e, cfg)?,
        HeadMode::Srym | HeadMode::SrymNoSn => srym_forward(x_e, cfg)?,
    };
    head.gyroplanes
        .iter()
        .map(|g| Ok(poincare::gyroplane_affine(&point, g)?))
        .collect()
}

/// Architecture and initialization settings for a [`Network`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkConfig {
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub outputs: usize,
    pub mode: HeadMode,
    pub ball: BallConfig,
    pub power_iters: usize,
    /// Factor applied to the last encoder layer and the head at
    /// initialization, if any.
    pub small_init: Option<f64>,
}

impl NetworkConfig {
    pub const DEFAULT_HIDDEN: [usize; 2] = [128, 128];
    pub const SMALL_INIT_FACTOR: f64 = 0.01;

    pub fn new(obs_dim: usize, latent_dim: usize, outputs: usize, mode: HeadMode) -> Self {
        Self {
            obs_dim,
            hidden: Self::DEFAULT_HIDDEN.to_vec(),
            latent_dim,
            outputs,
            mode,
            ball: BallConfig::default(),
            power_iters: 1,
            small_init: mode.default_small_init().then_some(Self::SMALL_INIT_FACTOR),
        }
    }

    fn validate(&self) -> Result<()> {
        let dims = [self.obs_dim, self.latent_dim, self.outputs];
        if dims.contains(&0) || self.hidden.contains(&0) {
            return Err(NnError::InvalidConfig(format!(
                "all layer widths must be positive (obs {}, hidden {:?}, latent {}, outputs {})",
                self.obs_dim, self.hidden, self.latent_dim, self.outputs
            )));
        }
        if self.power_iters == 0 {
            return Err(NnError::InvalidConfig(
                "power_iters must be at least 1".into(),
            ));
        }
        if let Some(f) = self.small_init {
            if !(f > 0.0 && f.is_finite()) {
                return Err(NnError::InvalidConfig(format!(
                    "small-init factor must be positive, got {f}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Head {
    Euclidean(LinearLayer),
    Gyroplanes { shift: ParamId, normal: ParamId },
}

/// Tape results of one forward pass.
pub struct Forward<'t> {
    pub params: BoundParams<'t>,
    /// `B×K` outputs.
    pub outputs: Var<'t>,
    /// Encoder output `x_E` (`B×n`), retained for gradient inspection.
    pub latent: Var<'t>,
    /// Input of every encoder layer.
    pub layer_inputs: Vec<Var<'t>>,
    /// Output of every encoder layer before its activation, retained.
    pub pre_activations: Vec<Var<'t>>,
}

#[derive(Debug, Clone)]
pub struct Network {
    config: NetworkConfig,
    store: ParamStore,
    encoder: Vec<LinearLayer>,
    head: Head,
}

impl Network {
    pub fn new(config: NetworkConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut widths = vec![config.obs_dim];
        widths.extend(&config.hidden);
        widths.push(config.latent_dim);
        let mut encoder = Vec::with_capacity(widths.len() - 1);
        for (i, pair) in widths.windows(2).enumerate() {
            let mut layer =
                LinearLayer::new(&mut store, &format!("encoder.{i}"), pair[0], pair[1], rng);
            if config.mode.spectral_norm() {
                layer = layer.with_spectral_norm(&store, config.power_iters, rng);
            }
            encoder.push(layer);
        }
        let head = if config.mode.is_hyperbolic() {
            let (k, n) = (config.outputs, config.latent_dim);
            let bound = 1.0 / (n as f64).sqrt();
            let normal = (0..k * n)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let shift = store.add(
                "head.shift",
                Tensor::zeros(&[k, n]),
                Manifold::Ball(config.ball),
            );
            let normal = store.add(
                "head.normal",
                Tensor::from_parts(vec![k, n], normal),
                Manifold::Euclidean,
            );
            Head::Gyroplanes { shift, normal }
        } else {
            Head::Euclidean(LinearLayer::new(
                &mut store,
                "head",
                config.latent_dim,
                config.outputs,
                rng,
            ))
        };
        let mut net = Self {
            config,
            store,
            encoder,
            head,
        };
        if let Some(factor) = net.config.small_init {
            net.init_small(factor)?;
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn mode(&self) -> HeadMode {
        self.config.mode
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &[LinearLayer] {
        &self.encoder
    }

    /// Parameters of the final layer.
    pub fn head_params(&self) -> Vec<ParamId> {
        match &self.head {
            Head::Euclidean(l) => vec![l.weight(), l.bias()],
            Head::Gyroplanes { shift, normal } => vec![*shift, *normal],
        }
    }

    /// Multiplies the last encoder layer and the head parameters by `factor`.
    pub fn init_small(&mut self, factor: f64) -> Result<()> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(NnError::InvalidConfig(format!(
                "small-init factor must be positive, got {factor}"
            )));
        }
        let last = self.encoder.last().expect("encoder has at least one layer");
        let mut targets = vec![last.weight(), last.bias()];
        targets.extend(self.head_params());
        for id in targets {
            let t = self.store.get_mut(id);
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
        Ok(())
    }

    /// Advances the power iteration of every normalized layer. Called once
    /// per optimizer step.
    pub fn refresh_spectral_norm(&mut self) {
        for layer in &mut self.encoder {
            layer.refresh_spectral_norm(&self.store);
        }
    }

    /// Records a forward pass on `tape`. With `trainable`, parameters are
    /// differentiable leaves.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        obs: &Tensor,
        trainable: bool,
    ) -> Result<Forward<'t>> {
        if obs.shape().len() != 2 || obs.cols() != self.config.obs_dim {
            return Err(NnError::DimensionMismatch {
                expected: self.config.obs_dim,
                got: *obs.shape().last().unwrap_or(&0),
            });
        }
        let params = self.store.bind(tape, trainable);
        let mut h = tape.constant(obs.clone());
        let mut layer_inputs = Vec::with_capacity(self.encoder.len());
        let mut pre_activations = Vec::with_capacity(self.encoder.len());
        for (i, layer) in self.encoder.iter().enumerate() {
            layer_inputs.push(h);
            let z = layer.forward(&params, h)?;
            tape.retain(z);
            pre_activations.push(z);
            h = if i + 1 < self.encoder.len() {
                z.relu()
            } else {
                z
            };
        }
        let latent = h;
        let outputs = self.forward_head(&params, latent)?;
        Ok(Forward {
            params,
            outputs,
            latent,
            layer_inputs,
            pre_activations,
        })
    }

    /// Maps `x_E` per the head mode.
    pub fn map_latent<'t>(&self, latent: Var<'t>) -> Result<Var<'t>> {
        let cfg = self.config.ball;
        let mapped = match self.config.mode {
            HeadMode::Euclidean | HeadMode::EuclideanSn => latent.relu(),
            HeadMode::Naive | HeadMode::SrymNoRescale => batched::expmap0(latent, cfg)?,
            HeadMode::Clipped => batched::expmap0(batched::clip_unit_norm(latent)?, cfg)?,
            HeadMode::Srym | HeadMode::SrymNoSn => {
                let scaled = latent.scale(1.0 / (self.config.latent_dim as f64).sqrt());
                batched::expmap0(scaled, cfg)?
            }
        };
        Ok(mapped)
    }

    /// Final layer applied to encoder outputs `latent` (`B×n`).
    pub fn forward_head<'t>(&self, params: &BoundParams<'t>, latent: Var<'t>) -> Result<Var<'t>> {
        let mapped = self.map_latent(latent)?;
        let out = match &self.head {
            Head::Euclidean(layer) => layer.forward(params, mapped)?,
            Head::Gyroplanes { shift, normal } => batched::gyroplane_logits(
                mapped,
                params[*shift],
                params[*normal],
                self.config.ball,
            )?,
        };
        Ok(out)
    }

    /// Outputs for a batch of observations, without recording gradients.
    pub fn infer(&self, obs: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let fwd = self.forward(&tape, obs, false)?;
        Ok(fwd.outputs.value().as_ref().clone())
    }

    /// Encoder outputs `x_E` for a batch of observations.
    pub fn encode(&self, obs: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let fwd = self.forward(&tape, obs, false)?;
        Ok(fwd.latent.value().as_ref().clone())
    }

    /// The representation the final layer consumes: ball points for
    /// hyperbolic modes, rectified `x_E` otherwise.
    pub fn head_inputs(&self, obs: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let fwd = self.forward(&tape, obs, false)?;
        Ok(self.map_latent(fwd.latent)?.value().as_ref().clone())
    }

    /// Snapshot of the gyroplane head, for hyperbolic modes.
    pub fn hyperbolic_head(&self) -> Result<Option<HyperbolicHead>> {
        let Head::Gyroplanes { shift, normal } = &self.head else {
            return Ok(None);
        };
        let (p, w) = (self.store.get(*shift), self.store.get(*normal));
        let planes = (0..p.rows())
            .map(|k| {
                let point = BallPoint::new(p.row(k).to_vec(), self.config.ball)?;
                GyroplaneParams::new(point, w.row(k).to_vec())
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Some(HyperbolicHead::new(
            planes,
            self.config.ball,
            self.config.mode,
        )?))
    }

    /// Named tensors covering parameters and spectral-norm vectors.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .store
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect();
        for (i, layer) in self.encoder.iter().enumerate() {
            if let Some(sn) = layer.spectral_state() {
                out.push((
                    format!("encoder.{i}.sn_u"),
                    Tensor::from_parts(vec![sn.u().len()], sn.u().to_vec()),
                ));
                out.push((
                    format!("encoder.{i}.sn_v"),
                    Tensor::from_parts(vec![sn.v().len()], sn.v().to_vec()),
                ));
            }
        }
        out
    }

    /// Restores state written by [`Network::state_tensors`]. Every tensor must
    /// be present with a matching shape.
    pub fn load_state_tensors(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        let lookup = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
            if t.shape() != shape {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.to_string(),
                    expected: shape.to_vec(),
                    got: t.shape().to_vec(),
                }
                .into());
            }
            Ok(t.clone())
        };
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let p = self.store.param(id);
            let t = lookup(&p.name, p.value.shape())?;
            *self.store.get_mut(id) = t;
        }
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            let (out_dim, in_dim) = (layer.out_dim(), layer.in_dim());
            if let Some(sn) = layer.spectral_state_mut() {
                let u = lookup(&format!("encoder.{i}.sn_u"), &[out_dim])?;
                let v = lookup(&format!("encoder.{i}.sn_v"), &[in_dim])?;
                sn.set_vectors(u.into_data(), v.into_data());
            }
        }
        Ok(())
    }

    pub fn save(&self, writer: impl std::io::Write) -> Result<()> {
        Ok(write_checkpoint(writer, &self.state_tensors())?)
    }

    pub fn load(&mut self, reader: impl std::io::Read) -> Result<()> {
        let tensors = read_checkpoint(reader)?;
        self.load_state_tensors(&tensors)
    }
}

#[cfg(test)]
mod tests;
