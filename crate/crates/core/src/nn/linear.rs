use rand::Rng;
use rand_distr::StandardNormal;

use super::params::{BoundParams, Manifold, ParamId, ParamStore};
use crate::autodiff::{AutodiffError, Tensor, Var};

/// Lower bound on the estimated spectral norm.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Persistent power-iteration vectors for one weight matrix.
///
/// `u` has the output dimension and `v` the input dimension. Both are unit
/// vectors after every update.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralNormState {
    u: Vec<f64>,
    v: Vec<f64>,
    power_iters: usize,
}

impl SpectralNormState {
    pub fn new(rows: usize, cols: usize, power_iters: usize, rng: &mut impl Rng) -> Self {
        let mut u: Vec<f64> = (0..rows).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut u);
        let mut v: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut v);
        Self {
            u,
            v,
            power_iters: power_iters.max(1),
        }
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn power_iters(&self) -> usize {
        self.power_iters
    }

    pub fn set_power_iters(&mut self, iters: usize) {
        self.power_iters = iters.max(1);
    }

    pub(crate) fn set_vectors(&mut self, u: Vec<f64>, v: Vec<f64>) {
        debug_assert_eq!((u.len(), v.len()), (self.u.len(), self.v.len()));
        self.u = u;
        self.v = v;
    }

    /// Runs the configured number of power iterations against `weight`
    /// (`out×in`) and returns `σ̂ = uᵀWv`.
    pub fn update(&mut self, weight: &Tensor) -> f64 {
        for _ in 0..self.power_iters {
            // v = Wᵀu/‖Wᵀu‖, u = Wv/‖Wv‖
            self.v = mat_t_vec(weight, &self.u);
            normalize(&mut self.v);
            self.u = mat_vec(weight, &self.v);
            normalize(&mut self.u);
        }
        self.sigma(weight)
    }

    /// `σ̂ = uᵀWv` with the current vectors, floored at [`SIGMA_FLOOR`].
    pub fn sigma(&self, weight: &Tensor) -> f64 {
        let wv = mat_vec(weight, &self.v);
        crate::poincare::dot(&self.u, &wv).max(SIGMA_FLOOR)
    }
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}

fn mat_vec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| crate::poincare::dot(w.row(i), x))
        .collect()
}

fn mat_t_vec(w: &Tensor, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (i, &yi) in y.iter().enumerate() {
        for (o, &wij) in out.iter_mut().zip(w.row(i)) {
            *o += yi * wij;
        }
    }
    out
}

/// One power-iteration update followed by `W/σ̂`.
pub fn spectral_normalize(weight: &Tensor, state: &mut SpectralNormState) -> Tensor {
    let sigma = state.update(weight);
    weight.scale(1.0 / sigma)
}

/// Dense layer `y = x·Wᵀ + b` with `W` of shape `out×in`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    weight: ParamId,
    bias: ParamId,
    in_dim: usize,
    out_dim: usize,
    sn: Option<SpectralNormState>,
}

impl LinearLayer {
    /// Uniform `±1/√in` initialization for weights and bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b = (0..out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::from_parts(vec![out_dim, in_dim], w),
            Manifold::Euclidean,
        );
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::from_parts(vec![1, out_dim], b),
            Manifold::Euclidean,
        );
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
            sn: None,
        }
    }

    /// Enables spectral normalization, with one power iteration run
    /// immediately so that `σ̂` is meaningful from the first forward pass.
    pub fn with_spectral_norm(
        mut self,
        store: &ParamStore,
        power_iters: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut sn = SpectralNormState::new(self.out_dim, self.in_dim, power_iters, rng);
        let iters = sn.power_iters;
        sn.power_iters = 1;
        sn.update(store.get(self.weight));
        sn.power_iters = iters;
        self.sn = Some(sn);
        self
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn spectral_state(&self) -> Option<&SpectralNormState> {
        self.sn.as_ref()
    }

    pub fn spectral_state_mut(&mut self) -> Option<&mut SpectralNormState> {
        self.sn.as_mut()
    }

    /// Advances the power iteration, if this layer is spectrally normalized.
    pub fn refresh_spectral_norm(&mut self, store: &ParamStore) {
        if let Some(sn) = self.sn.as_mut() {
            sn.update(store.get(self.weight));
        }
    }

    /// The weight actually used in the forward pass.
    pub fn effective_weight(&self, store: &ParamStore) -> Tensor {
        let w = store.get(self.weight);
        match &self.sn {
            Some(sn) => w.scale(1.0 / sn.sigma(w)),
            None => w.clone(),
        }
    }

    /// Applies the layer to the rows of `x`. With spectral normalization the
    /// weight is divided by `σ̂ = uᵀWv`, differentiated with `u` and `v` held
    /// fixed; the bias is never rescaled.
    pub fn forward<'t>(
        &self,
        params: &BoundParams<'t>,
        x: Var<'t>,
    ) -> Result<Var<'t>, AutodiffError> {
        let tape = x.tape();
        let mut w = params[self.weight];
        if let Some(sn) = &self.sn {
            let outer: Vec<f64> =
                sn.u.iter()
                    .flat_map(|&ui| sn.v.iter().map(move |&vj| ui * vj))
                    .collect();
            let outer = tape.constant(Tensor::from_parts(vec![self.out_dim, self.in_dim], outer));
            let sigma = w.mul(outer)?.sum().clamp(SIGMA_FLOOR, f64::INFINITY);
            w = w.mul_scalar(sigma.recip()?)?;
        }
        let rows = x.shape()[0];
        x.matmul_t(w)?
            .add(params[self.bias].expand([rows, self.out_dim])?)
    }
}
