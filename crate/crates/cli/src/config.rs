//! Experiment settings: a flat `key = value` namespace shared by config
//! files, `--set` overrides and the dedicated flags.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hyprl_core::{DqnConfig, HeadMode, PpoConfig, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key '{key}' ({origin}); run with --help for the list of keys")]
    UnknownKey { key: String, origin: String },
    #[error("invalid value '{value}' for '{key}': {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("{path}:{line}: expected 'key = value', got '{text}'")]
    Syntax {
        path: String,
        line: usize,
        text: String,
    },
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    (
        "head",
        "head mode: euclid, euclid-sn, naive, clipped, srym, srym-no-sn, srym-no-rescale",
    ),
    ("latent_dim", "encoder output dimension n"),
    ("hidden", "comma-separated hidden layer widths"),
    ("curvature", "ball curvature c"),
    ("seed", "base RNG seed (also --seed / HYPRL_SEED)"),
    ("seeds", "number of consecutive seeds to run"),
    ("out", "output directory"),
    ("train_levels", "number of training levels"),
    ("test_levels", "number of held-out levels"),
    ("updates", "optimizer updates (PPO rollouts or DQN phases)"),
    (
        "eval_every",
        "test-split evaluation cadence in updates, 0 disables",
    ),
    (
        "delta_every",
        "latent delta_rel cadence in updates, 0 disables",
    ),
    ("delta_samples", "latent vectors per delta_rel estimate"),
    ("gamma", "discount factor"),
    ("lr", "Adam learning rate"),
    ("adam_eps", "Adam epsilon"),
    (
        "max_grad_norm",
        "global gradient-norm clip for Euclidean parameters",
    ),
    (
        "small_init",
        "initial down-scaling of the last layers: 'default', 'off' or a factor",
    ),
    ("power_iters", "power iterations per spectral-norm refresh"),
    (
        "wall_clock",
        "record wall_ms in metrics (breaks byte-identical reruns)",
    ),
    (
        "layout",
        "path to an ASCII level used for both splits, or 'none'",
    ),
    ("grid.size", "grid side length"),
    ("grid.step_cap", "episode step limit"),
    ("grid.wall_density", "probability of a wall per cell"),
    ("grid.hazards", "hazards per level"),
    ("grid.collectibles", "collectibles per level"),
    ("ppo.clip", "surrogate clip range"),
    ("ppo.entropy_coef", "entropy bonus weight"),
    ("ppo.value_coef", "value loss weight"),
    ("ppo.gae_lambda", "GAE lambda"),
    ("ppo.epochs", "passes over each rollout"),
    ("ppo.minibatch", "minibatch size"),
    ("ppo.num_envs", "parallel environments"),
    ("ppo.rollout_len", "steps per environment per rollout"),
    ("dqn.num_envs", "parallel environments"),
    (
        "dqn.steps_per_update",
        "environment steps per slot between gradient phases",
    ),
    ("dqn.grad_steps", "gradient steps per update"),
    ("dqn.batch", "replay batch size"),
    ("dqn.warmup", "transitions collected before learning starts"),
    (
        "dqn.target_sync",
        "gradient steps between target-network syncs",
    ),
    ("dqn.eps_start", "initial exploration rate"),
    ("dqn.eps_end", "final exploration rate"),
    (
        "dqn.eps_decay_fraction",
        "fraction of training over which epsilon decays",
    ),
    ("dqn.n_step", "n-step return horizon"),
    ("dqn.buffer_capacity", "replay capacity in transitions"),
];

#[derive(Debug, Clone)]
pub struct Settings {
    pub train: TrainConfig,
    pub ppo: PpoConfig,
    pub dqn: DqnConfig,
    pub seeds: usize,
    pub out: PathBuf,
    /// Whether a config file or `--set` assigned `seed`.
    pub seed_given: bool,
    layout_path: Option<String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            ppo: PpoConfig::default(),
            dqn: DqnConfig::default(),
            seeds: 1,
            out: PathBuf::from("hyprl-out"),
            seed_given: false,
            layout_path: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e: T::Err| ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: e.to_string(),
        })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: "expected true or false".into(),
        }),
    }
}

impl Settings {
    /// Current value of `key`, rendered as it would be written in a file.
    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let (p, d) = (&self.ppo, &self.dqn);
        let v = match key {
            "head" => t.head.to_string(),
            "latent_dim" => t.latent_dim.to_string(),
            "hidden" => t
                .hidden
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "curvature" => t.curvature.to_string(),
            "seed" => t.seed.to_string(),
            "seeds" => self.seeds.to_string(),
            "out" => self.out.display().to_string(),
            "train_levels" => t.train_levels.to_string(),
            "test_levels" => t.test_levels.to_string(),
            "updates" => t.updates.to_string(),
            "eval_every" => t.eval_every.to_string(),
            "delta_every" => t.delta_every.to_string(),
            "delta_samples" => t.delta_samples.to_string(),
            "gamma" => t.gamma.to_string(),
            "lr" => t.lr.to_string(),
            "adam_eps" => t.adam_eps.to_string(),
            "max_grad_norm" => t.max_grad_norm.to_string(),
            "small_init" => match t.small_init {
                None => "default".into(),
                Some(f) if f <= 0.0 => "off".into(),
                Some(f) => f.to_string(),
            },
            "power_iters" => t.power_iters.to_string(),
            "wall_clock" => t.wall_clock.to_string(),
            "layout" => self.layout_path.clone().unwrap_or_else(|| "none".into()),
            "grid.size" => t.grid.size.to_string(),
            "grid.step_cap" => t.grid.step_cap.to_string(),
            "grid.wall_density" => t.grid.wall_density.to_string(),
            "grid.hazards" => t.grid.hazards.to_string(),
            "grid.collectibles" => t.grid.collectibles.to_string(),
            "ppo.clip" => p.clip.to_string(),
            "ppo.entropy_coef" => p.entropy_coef.to_string(),
            "ppo.value_coef" => p.value_coef.to_string(),
            "ppo.gae_lambda" => p.gae_lambda.to_string(),
            "ppo.epochs" => p.epochs.to_string(),
            "ppo.minibatch" => p.minibatch.to_string(),
            "ppo.num_envs" => p.num_envs.to_string(),
            "ppo.rollout_len" => p.rollout_len.to_string(),
            "dqn.num_envs" => d.num_envs.to_string(),
            "dqn.steps_per_update" => d.steps_per_update.to_string(),
            "dqn.grad_steps" => d.grad_steps.to_string(),
            "dqn.batch" => d.batch.to_string(),
            "dqn.warmup" => d.warmup.to_string(),
            "dqn.target_sync" => d.target_sync.to_string(),
            "dqn.eps_start" => d.eps_start.to_string(),
            "dqn.eps_end" => d.eps_end.to_string(),
            "dqn.eps_decay_fraction" => d.eps_decay_fraction.to_string(),
            "dqn.n_step" => d.n_step.to_string(),
            "dqn.buffer_capacity" => d.buffer_capacity.to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// Assigns one key. `origin` names the source in error messages.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        let (p, d) = (&mut self.ppo, &mut self.dqn);
        match key {
            "head" => t.head = parse::<HeadMode>(key, value)?,
            "latent_dim" => t.latent_dim = parse(key, value)?,
            "hidden" => {
                t.hidden = if value.trim().is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|w| parse(key, w.trim()))
                        .collect::<Result<_, _>>()?
                }
            }
            "curvature" => t.curvature = parse(key, value)?,
            "seed" => {
                t.seed = parse(key, value)?;
                self.seed_given = true;
            }
            "seeds" => self.seeds = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "train_levels" => t.train_levels = parse(key, value)?,
            "test_levels" => t.test_levels = parse(key, value)?,
            "updates" => t.updates = parse(key, value)?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "delta_every" => t.delta_every = parse(key, value)?,
            "delta_samples" => t.delta_samples = parse(key, value)?,
            "gamma" => t.gamma = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "max_grad_norm" => t.max_grad_norm = parse(key, value)?,
            "small_init" => {
                t.small_init = match value {
                    "default" => None,
                    "off" | "none" => Some(0.0),
                    other => Some(parse(key, other)?),
                }
            }
            "power_iters" => t.power_iters = parse(key, value)?,
            "wall_clock" => t.wall_clock = parse_bool(key, value)?,
            "layout" => {
                if value == "none" {
                    t.layout = None;
                    self.layout_path = None;
                } else {
                    let art =
                        std::fs::read_to_string(value).map_err(|e| ConfigError::InvalidValue {
                            key: key.to_string(),
                            value: value.to_string(),
                            reason: e.to_string(),
                        })?;
                    t.layout = Some(art);
                    self.layout_path = Some(value.to_string());
                }
            }
            "grid.size" => t.grid.size = parse(key, value)?,
            "grid.step_cap" => t.grid.step_cap = parse(key, value)?,
            "grid.wall_density" => t.grid.wall_density = parse(key, value)?,
            "grid.hazards" => t.grid.hazards = parse(key, value)?,
            "grid.collectibles" => t.grid.collectibles = parse(key, value)?,
            "ppo.clip" => p.clip = parse(key, value)?,
            "ppo.entropy_coef" => p.entropy_coef = parse(key, value)?,
            "ppo.value_coef" => p.value_coef = parse(key, value)?,
            "ppo.gae_lambda" => p.gae_lambda = parse(key, value)?,
            "ppo.epochs" => p.epochs = parse(key, value)?,
            "ppo.minibatch" => p.minibatch = parse(key, value)?,
            "ppo.num_envs" => p.num_envs = parse(key, value)?,
            "ppo.rollout_len" => p.rollout_len = parse(key, value)?,
            "dqn.num_envs" => d.num_envs = parse(key, value)?,
            "dqn.steps_per_update" => d.steps_per_update = parse(key, value)?,
            "dqn.grad_steps" => d.grad_steps = parse(key, value)?,
            "dqn.batch" => d.batch = parse(key, value)?,
            "dqn.warmup" => d.warmup = parse(key, value)?,
            "dqn.target_sync" => d.target_sync = parse(key, value)?,
            "dqn.eps_start" => d.eps_start = parse(key, value)?,
            "dqn.eps_end" => d.eps_end = parse(key, value)?,
            "dqn.eps_decay_fraction" => d.eps_decay_fraction = parse(key, value)?,
            "dqn.n_step" => d.n_step = parse(key, value)?,
            "dqn.buffer_capacity" => d.buffer_capacity = parse(key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                    origin: origin.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    path: shown,
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            self.set(key.trim(), value.trim(), &format!("{shown}:{}", i + 1))?;
        }
        Ok(())
    }

    /// Applies a `key=value` command-line override.
    pub fn apply_override(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| ConfigError::InvalidValue {
                key: "--set".into(),
                value: pair.to_string(),
                reason: "expected key=value".into(),
            })?;
        self.set(key.trim(), value.trim(), "--set")
    }
}

/// The key table with defaults, for `--help`.
pub fn keys_help() -> String {
    let defaults = Settings::default();
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out =
        String::from("Config keys (config file `key = value`, or --set key=value; flags win):\n");
    for (key, about) in KEYS {
        let default = defaults.get(key).unwrap_or_default();
        out.push_str(&format!("  {key:<width$}  {about} [default: {default}]\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let defaults = Settings::default();
        for (key, _) in KEYS {
            let value = defaults
                .get(key)
                .unwrap_or_else(|| panic!("no getter for {key}"));
            let mut s = Settings::default();
            s.set(key, &value, "test")
                .unwrap_or_else(|e| panic!("{key}: {e}"));
            assert_eq!(s.get(key).unwrap(), value, "{key}");
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut s = Settings::default();
        let err = s.set("latent", "3", "x.cfg:2").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }));
        assert!(err.to_string().contains("x.cfg:2"));
    }

    #[test]
    fn file_parsing_handles_comments_and_reports_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# comment\nhead = naive\n\nlatent_dim=8 # trailing\nppo.epochs = 2\n",
        )
        .unwrap();
        let mut s = Settings::default();
        s.apply_file(&path).unwrap();
        assert_eq!(
            (s.train.head, s.train.latent_dim, s.ppo.epochs),
            (HeadMode::Naive, 8, 2)
        );

        std::fs::write(&path, "head = srym\nnot a pair\n").unwrap();
        match s.apply_file(&path) {
            Err(ConfigError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn typed_values_are_validated() {
        let mut s = Settings::default();
        assert!(s.set("latent_dim", "-1", "t").is_err());
        assert!(s.set("head", "spherical", "t").is_err());
        assert!(s.set("wall_clock", "maybe", "t").is_err());
        s.set("hidden", "64, 32", "t").unwrap();
        assert_eq!(s.train.hidden, vec![64, 32]);
        s.set("small_init", "off", "t").unwrap();
        assert_eq!(s.train.small_init, Some(0.0));
    }

    #[test]
    fn help_lists_every_key_with_default() {
        let help = keys_help();
        for (key, _) in KEYS {
            assert!(help.contains(key), "{key}");
        }
        assert!(help.contains("[default: srym]"));
    }
}
