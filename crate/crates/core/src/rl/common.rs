use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Result, RlError, TrainConfig};
use crate::autodiff::Tensor;
use crate::envs::{generate_levels, mix_seed, Action, ProcGridEnv, SeedSplit, NUM_ACTIONS};
use crate::hyperbolicity::{self, Metric};
use crate::nn::{Network, NetworkConfig};
use crate::poincare::BallConfig;

/// Training and held-out levels.
#[derive(Debug, Clone)]
pub struct Levels {
    pub train: Vec<ProcGridEnv>,
    pub test: Vec<ProcGridEnv>,
}

impl Levels {
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        if let Some(art) = &cfg.layout {
            let level = ProcGridEnv::from_ascii(art, cfg.grid.step_cap)?;
            return Ok(Self {
                train: vec![level.clone()],
                test: vec![level],
            });
        }
        let split = SeedSplit::new(cfg.train_levels, cfg.test_levels)?;
        Ok(Self {
            train: generate_levels(&split.train, &cfg.grid)?,
            test: generate_levels(&split.test, &cfg.grid)?,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.train[0].obs_dim()
    }
}

/// Seed of the independent stream `stream` derived from the run seed.
pub(crate) fn stream_seed(seed: u64, stream: u64) -> u64 {
    mix_seed(seed.wrapping_add(mix_seed(stream)))
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, stream))
}

pub(crate) fn build_network(cfg: &TrainConfig, obs_dim: usize, outputs: usize) -> Result<Network> {
    let mut net_cfg = NetworkConfig::new(obs_dim, cfg.latent_dim, outputs, cfg.head);
    net_cfg.hidden.clone_from(&cfg.hidden);
    net_cfg.ball = BallConfig::new(cfg.curvature).map_err(crate::nn::NnError::from)?;
    net_cfg.power_iters = cfg.power_iters;
    if let Some(f) = cfg.small_init {
        net_cfg.small_init = (f > 0.0).then_some(f);
    }
    Ok(Network::new(net_cfg, &mut stream_rng(cfg.seed, 1))?)
}

/// Row-wise log-softmax of the first `n` entries.
pub(crate) fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Draws an index from the softmax of `logits`; returns it with its
/// log-probability.
pub fn sample_categorical(logits: &[f64], rng: &mut impl Rng) -> (usize, f64) {
    let logp = log_softmax_row(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return (i, *lp);
        }
    }
    let last = logp.len() - 1;
    (last, logp[last])
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// How actions are chosen from the first four network outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Sample from the softmax of the outputs.
    Sample,
    /// Take the argmax.
    Greedy,
}

/// Mean undiscounted return of `episodes_per_level` episodes on every level.
pub fn evaluate(
    net: &Network,
    levels: &[ProcGridEnv],
    episodes_per_level: usize,
    policy: Policy,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut envs: Vec<ProcGridEnv> = levels
        .iter()
        .flat_map(|l| std::iter::repeat_n(l, episodes_per_level))
        .cloned()
        .collect();
    if envs.is_empty() {
        return Err(RlError::Empty("evaluation levels"));
    }
    for env in &mut envs {
        env.reset();
    }
    let obs_dim = envs[0].obs_dim();
    let mut returns = vec![0.0; envs.len()];
    let mut active: Vec<usize> = (0..envs.len()).collect();
    while !active.is_empty() {
        let mut data = vec![0.0; active.len() * obs_dim];
        for (&i, out) in active.iter().zip(data.chunks_mut(obs_dim)) {
            envs[i].write_observation(out);
        }
        let out = net.infer(&Tensor::from_parts(vec![active.len(), obs_dim], data))?;
        let mut still = Vec::with_capacity(active.len());
        for (row, &i) in active.iter().enumerate() {
            let head = &out.row(row)[..NUM_ACTIONS];
            let a = match policy {
                Policy::Sample => sample_categorical(head, rng).0,
                Policy::Greedy => argmax(head),
            };
            let (r, done) = envs[i].step_inner(Action::from_index(a)?)?;
            returns[i] += r;
            if !done {
                still.push(i);
            }
        }
        active = still;
    }
    Ok(returns.iter().sum::<f64>() / returns.len() as f64)
}

/// Episodes per training level so both splits are evaluated on about the
/// same number of episodes.
pub(crate) fn train_eval_repeats(cfg: &TrainConfig, levels: &Levels) -> usize {
    (levels.test.len() / levels.train.len())
        .max(1)
        .min(cfg.test_levels.max(1))
}

/// δ_rel of the head inputs for (up to `samples` of) the observation rows.
pub(crate) fn latent_delta_rel(
    net: &Network,
    obs: &Tensor,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<Option<f64>> {
    let rows = obs.rows();
    if rows < 2 {
        return Ok(None);
    }
    let pick = rand::seq::index::sample(rng, rows, samples.min(rows)).into_vec();
    let cols = obs.cols();
    let data: Vec<f64> = pick
        .iter()
        .flat_map(|&r| obs.row(r).iter().copied())
        .collect();
    let sub = Tensor::from_parts(vec![pick.len(), cols], data);
    let points = net.head_inputs(&sub)?;
    let metric = if net.mode().is_hyperbolic() {
        Metric::Poincare {
            config: net.config().ball,
        }
    } else {
        Metric::Euclidean
    };
    let rows: Vec<&[f64]> = (0..points.rows()).map(|r| points.row(r)).collect();
    let report = hyperbolicity::delta_rel(&rows, metric, samples, rng)?;
    Ok(Some(report.delta_rel))
}

/// Copies the given rows of `src` into a new matrix.
pub(crate) fn gather_rows(src: &[f64], cols: usize, rows: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        data.extend_from_slice(&src[r * cols..(r + 1) * cols]);
    }
    Tensor::from_parts(vec![rows.len(), cols], data)
}

pub(crate) fn wall_ms(start: &std::time::Instant, enabled: bool) -> Option<f64> {
    enabled.then(|| start.elapsed().as_secs_f64() * 1e3)
}
