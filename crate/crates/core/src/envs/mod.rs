//! ProcGrid levels, the train/test level split, a vectorized runner, and
//! synthetic tree metrics.

mod grid;
mod tree;

pub use grid::{
    mix_seed, Action, GridConfig, LevelSeed, ProcGridEnv, StepResult, CHANNELS, COLLECTIBLE_REWARD,
    GOAL_REWARD, HAZARD_REWARD, NUM_ACTIONS,
};
pub use tree::{
    path_tree, random_tree, star_tree, tree_metric, weighted_tree_metric, TreeNode, TreeSpec,
    MAX_TREE_NODES,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("no solvable layout for seed {seed} after {retries} attempts")]
    GenerationFailed { seed: u64, retries: usize },
    #[error("step called on a finished episode")]
    EpisodeFinished,
    #[error("action index {0} is out of range")]
    InvalidAction(usize),
    #[error("tree has {nodes} nodes, limit is {max}")]
    TreeTooLarge { nodes: usize, max: usize },
}

/// First seed of the held-out split.
pub const TEST_SEED_OFFSET: u64 = 1000;

/// Disjoint train and test level seeds: `0..n_train` and
/// `1000..1000 + n_test`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedSplit {
    pub train: Vec<LevelSeed>,
    pub test: Vec<LevelSeed>,
}

impl SeedSplit {
    pub fn new(n_train: usize, n_test: usize) -> Result<Self, EnvError> {
        if n_train == 0 || n_train as u64 > TEST_SEED_OFFSET {
            return Err(EnvError::InvalidConfig(format!(
                "train seed count must be in 1..={TEST_SEED_OFFSET}, got {n_train}"
            )));
        }
        Ok(Self {
            train: (0..n_train as u64).map(LevelSeed).collect(),
            test: (0..n_test as u64)
                .map(|i| LevelSeed(TEST_SEED_OFFSET + i))
                .collect(),
        })
    }
}

/// Generates the level for every seed.
pub fn generate_levels(
    seeds: &[LevelSeed],
    config: &GridConfig,
) -> Result<Vec<ProcGridEnv>, EnvError> {
    seeds
        .iter()
        .map(|&s| ProcGridEnv::generate(s, config))
        .collect()
}

/// Outcome of stepping every slot of a [`VecEnv`] once.
#[derive(Debug, Clone, PartialEq)]
pub struct VecStep {
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Returns of episodes that ended on this step, by slot.
    pub finished: Vec<Option<f64>>,
}

/// `k` independent environments stepped in slot order. Finished episodes
/// restart immediately on a level drawn from the slot's own RNG, so the
/// sequence of levels each slot visits depends only on the seed.
#[derive(Debug, Clone)]
pub struct VecEnv {
    levels: Vec<ProcGridEnv>,
    envs: Vec<ProcGridEnv>,
    rngs: Vec<ChaCha8Rng>,
    returns: Vec<f64>,
    obs_dim: usize,
}

impl VecEnv {
    pub fn new(levels: Vec<ProcGridEnv>, k: usize, seed: u64) -> Result<Self, EnvError> {
        let Some(first) = levels.first() else {
            return Err(EnvError::InvalidConfig(
                "at least one level is required".into(),
            ));
        };
        if k == 0 {
            return Err(EnvError::InvalidConfig(
                "at least one environment slot is required".into(),
            ));
        }
        let obs_dim = first.obs_dim();
        if levels.iter().any(|l| l.obs_dim() != obs_dim) {
            return Err(EnvError::InvalidConfig("levels differ in size".into()));
        }
        let mut rngs: Vec<ChaCha8Rng> = (0..k as u64)
            .map(|slot| ChaCha8Rng::seed_from_u64(mix_seed(seed ^ mix_seed(slot))))
            .collect();
        let envs = rngs
            .iter_mut()
            .map(|rng| {
                let mut env = levels[rng.random_range(0..levels.len())].clone();
                env.reset();
                env
            })
            .collect();
        Ok(Self {
            levels,
            envs,
            rngs,
            returns: vec![0.0; k],
            obs_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn envs(&self) -> &[ProcGridEnv] {
        &self.envs
    }

    /// Current observations as a `k × obs_dim` matrix.
    pub fn observations(&self) -> Tensor {
        let mut data = vec![0.0; self.envs.len() * self.obs_dim];
        for (env, out) in self.envs.iter().zip(data.chunks_mut(self.obs_dim)) {
            env.write_observation(out);
        }
        Tensor::from_parts(vec![self.envs.len(), self.obs_dim], data)
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<VecStep, EnvError> {
        if actions.len() != self.envs.len() {
            return Err(EnvError::InvalidConfig(format!(
                "{} actions for {} environments",
                actions.len(),
                self.envs.len()
            )));
        }
        let k = self.envs.len();
        let mut out = VecStep {
            rewards: Vec::with_capacity(k),
            dones: Vec::with_capacity(k),
            finished: vec![None; k],
        };
        for slot in 0..k {
            let action = Action::from_index(actions[slot])?;
            let (reward, done) = self.envs[slot].step_inner(action)?;
            self.returns[slot] += reward;
            if done {
                out.finished[slot] = Some(self.returns[slot]);
                self.returns[slot] = 0.0;
                let pick = self.rngs[slot].random_range(0..self.levels.len());
                self.envs[slot].clone_from(&self.levels[pick]);
                self.envs[slot].reset();
            }
            out.rewards.push(reward);
            out.dones.push(done);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests;
