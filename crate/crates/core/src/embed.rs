//! Distortion-minimizing embeddings of finite metrics (typically trees) in
//! Euclidean space or the Poincaré ball.

use rand::Rng;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::hyperbolicity::DistanceMatrix;
use crate::nn::{Manifold, ParamStore};
use crate::optim::{AdamConfig, OptimError, Optimizer};
use crate::poincare::{batched, BallConfig, PoincareError};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Poincare(#[from] PoincareError),
    #[error("invalid embedding configuration: {0}")]
    InvalidConfig(String),
    #[error("metric has coincident points {0} and {1}")]
    ZeroDistance(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Euclidean,
    Hyperbolic,
}

impl std::str::FromStr for Geometry {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" | "euclid" => Ok(Self::Euclidean),
            "hyperbolic" | "poincare" => Ok(Self::Hyperbolic),
            other => Err(EmbedError::InvalidConfig(format!(
                "unknown geometry '{other}' (expected euclidean or hyperbolic)"
            ))),
        }
    }
}

impl std::fmt::Display for Geometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Euclidean => "euclidean",
            Self::Hyperbolic => "hyperbolic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EmbedConfig {
    pub dim: usize,
    pub geometry: Geometry,
    pub steps: usize,
    pub lr: f64,
    pub curvature: f64,
    /// Half-width of the uniform initialization around the origin.
    pub init_scale: f64,
    /// Anneal the learning rate to zero along a half cosine.
    pub cosine_decay: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            geometry: Geometry::Hyperbolic,
            steps: 3000,
            lr: 0.03,
            curvature: 1.0,
            init_scale: 1e-3,
            cosine_decay: true,
        }
    }
}

/// Optimized coordinates and their distortion against the source metric.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Embedding {
    /// One row per node.
    pub coords: Vec<Vec<f64>>,
    /// Mean over pairs of `max(r, 1/r)`, `r = d_emb/d_src`.
    pub mean_distortion: f64,
    pub worst_distortion: f64,
    /// `Σ (d_emb/d_src − 1)²` at the returned coordinates.
    pub loss: f64,
}

fn pair_distances<'t>(
    x: Var<'t>,
    left: &[usize],
    right: &[usize],
    cfg: &EmbedConfig,
) -> Result<Var<'t>, EmbedError> {
    let a = x.select_rows(left)?;
    let b = x.select_rows(right)?;
    Ok(match cfg.geometry {
        Geometry::Euclidean => a.sub(b)?.row_norm()?,
        Geometry::Hyperbolic => batched::dist(a, b, BallConfig::new(cfg.curvature)?)?,
    })
}

/// Minimizes `Σ_{i<j} (d_emb(i, j)/d(i, j) − 1)²` with Adam (Euclidean) or
/// Riemannian Adam (hyperbolic).
pub fn embed_metric(
    d: &DistanceMatrix,
    cfg: &EmbedConfig,
    rng: &mut impl Rng,
) -> Result<Embedding, EmbedError> {
    let n = d.len();
    if n < 2 || cfg.dim == 0 {
        return Err(EmbedError::InvalidConfig(
            "need at least two points and dim ≥ 1".into(),
        ));
    }
    if !(cfg.lr > 0.0 && cfg.init_scale > 0.0 && cfg.curvature > 0.0) {
        return Err(EmbedError::InvalidConfig(
            "lr, init_scale and curvature must be positive".into(),
        ));
    }
    let (mut left, mut right, mut target) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        for j in i + 1..n {
            let dij = d.get(i, j);
            if dij <= 0.0 {
                return Err(EmbedError::ZeroDistance(i, j));
            }
            left.push(i);
            right.push(j);
            target.push(1.0 / dij);
        }
    }
    let inv = Tensor::from_parts(vec![target.len(), 1], target.clone());

    let manifold = match cfg.geometry {
        Geometry::Euclidean => Manifold::Euclidean,
        Geometry::Hyperbolic => Manifold::Ball(BallConfig::new(cfg.curvature)?),
    };
    let init = (0..n * cfg.dim)
        .map(|_| rng.random_range(-cfg.init_scale..cfg.init_scale))
        .collect();
    let mut store = ParamStore::new();
    let id = store.add(
        "coords",
        Tensor::from_parts(vec![n, cfg.dim], init),
        manifold,
    );
    let mut opt = Optimizer::new(
        &store,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    )?;
    for step in 0..cfg.steps {
        if cfg.cosine_decay {
            let frac = step as f64 / cfg.steps as f64;
            opt.set_lr(cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()));
        }
        let tape = Tape::new();
        let params = store.bind(&tape, true);
        let ratio =
            pair_distances(params[id], &left, &right, cfg)?.mul(tape.constant(inv.clone()))?;
        let loss = ratio.add_scalar(-1.0).square().sum();
        let grads = tape.backward(loss)?;
        opt.step(&mut store, params.collect(&grads))?;
    }

    let tape = Tape::new();
    let x = tape.constant(store.get(id).clone());
    let ratio = pair_distances(x, &left, &right, cfg)?.mul(tape.constant(inv))?;
    let r = ratio.value();
    let distortions: Vec<f64> = r.data().iter().map(|&r| r.max(1.0 / r)).collect();
    let coords = store.get(id);
    Ok(Embedding {
        coords: (0..n).map(|i| coords.row(i).to_vec()).collect(),
        mean_distortion: distortions.iter().sum::<f64>() / distortions.len() as f64,
        worst_distortion: distortions.iter().copied().fold(0.0, f64::max),
        loss: r.data().iter().map(|r| (r - 1.0).powi(2)).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{path_tree, star_tree, tree_metric, TreeSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_edge_embeds_exactly() {
        let d = path_tree(2).unwrap();
        for geometry in [Geometry::Euclidean, Geometry::Hyperbolic] {
            let cfg = EmbedConfig {
                geometry,
                steps: 1500,
                lr: 0.05,
                ..EmbedConfig::default()
            };
            let e = embed_metric(&d, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            assert!(
                (e.mean_distortion - 1.0).abs() < 1e-3,
                "{geometry}: {}",
                e.mean_distortion
            );
            assert_eq!(e.coords.len(), 2);
        }
    }

    #[test]
    fn hyperbolic_coordinates_stay_in_the_ball() {
        let (d, _) = tree_metric(&TreeSpec::new(3, 2).unwrap()).unwrap();
        let cfg = EmbedConfig {
            steps: 300,
            lr: 0.05,
            ..EmbedConfig::default()
        };
        let e = embed_metric(&d, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(e
            .coords
            .iter()
            .all(|p| p.iter().map(|x| x * x).sum::<f64>() < 1.0));
        assert!(e.mean_distortion >= 1.0 && e.worst_distortion >= e.mean_distortion);
    }

    #[test]
    fn reported_loss_matches_coordinates() {
        let d = star_tree(5).unwrap();
        let cfg = EmbedConfig {
            geometry: Geometry::Euclidean,
            steps: 50,
            ..EmbedConfig::default()
        };
        let e = embed_metric(&d, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut loss = 0.0;
        for i in 0..5 {
            for j in i + 1..5 {
                let de: f64 = e.coords[i]
                    .iter()
                    .zip(&e.coords[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                loss += (de / d.get(i, j) - 1.0).powi(2);
            }
        }
        assert!((loss - e.loss).abs() < 1e-9 * loss.max(1.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = path_tree(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = EmbedConfig {
            dim: 0,
            ..EmbedConfig::default()
        };
        assert!(embed_metric(&d, &cfg, &mut rng).is_err());
        assert!("spherical".parse::<Geometry>().is_err());
        assert_eq!(
            "euclidean".parse::<Geometry>().unwrap(),
            Geometry::Euclidean
        );
    }
}
