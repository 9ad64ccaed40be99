//! `hyprl`: train agents, compare heads, probe gradients, measure
//! hyperbolicity and embed trees.

mod analysis;
mod config;
mod output;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use hyprl_core::{EmbedError, Geometry, RlError};

use analysis::{DeltaArgs, EmbedArgs, MetricKind};
use config::{ConfigError, Settings};
use run::{Algo, TrainOptions};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("bad input: {0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Train(#[from] RlError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 for anything the caller can fix by changing arguments or inputs.
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Usage(_) | Self::Input(_) => 2,
            Self::Train(RlError::InvalidConfig(_)) | Self::Embed(EmbedError::InvalidConfig(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "hyprl", version, about = "Hyperbolic deep-RL experiments")]
struct Cli {
    /// Base RNG seed. Falls back to a config `seed`, then HYPRL_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by the training subcommands.
#[derive(Args)]
struct RunFlags {
    /// `key = value` config file
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    head: Option<String>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    curvature: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    train_levels: Option<usize>,
    #[arg(long)]
    test_levels: Option<usize>,
    /// Number of consecutive seeds starting at the base seed
    #[arg(long)]
    seeds: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    delta_every: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one head on the procedural grid world
    Train {
        #[arg(value_enum)]
        algo: Algo,
        #[command(flatten)]
        run: RunFlags,
        /// Print an ASCII greedy rollout on the first test level afterwards
        #[arg(long)]
        render: bool,
        /// Write head inputs for test-level start states to this CSV
        #[arg(long, value_name = "PATH")]
        export_latents: Option<PathBuf>,
    },
    /// Train several heads under matched seeds and summarise
    Compare {
        #[arg(value_enum)]
        algo: Algo,
        /// Comma-separated head modes
        #[arg(long, required = true)]
        heads: String,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Record per-sample gradient magnitude and variance at the encoder cut
    GradProbe {
        #[arg(long, value_enum, default_value = "ppo")]
        algo: Algo,
        #[arg(long, default_value = "naive,srym")]
        heads: String,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Estimate relative delta-hyperbolicity of a point cloud or distance matrix
    MeasureDelta {
        /// Headerless CSV: one point per row, or a square matrix with --matrix
        input: PathBuf,
        #[arg(long)]
        matrix: bool,
        #[arg(long, value_enum, default_value = "euclidean")]
        metric: MetricKind,
        #[arg(long, default_value_t = 1.0)]
        curvature: f64,
        #[arg(long, default_value_t = 256)]
        sample_size: usize,
        /// Also write the JSON report here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed a balanced tree and report distortion
    EmbedTree {
        #[arg(long, default_value_t = 2)]
        branching: usize,
        #[arg(long, default_value_t = 5)]
        depth: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value = "hyperbolic", value_parser = parse_geometry)]
        geometry: Geometry,
        #[arg(long, default_value_t = 3000)]
        steps: usize,
        #[arg(long, default_value_t = 0.03)]
        lr: f64,
        #[arg(long, default_value_t = 1.0)]
        curvature: f64,
        /// Coordinates CSV, one node per row
        #[arg(long, default_value = "embedding.csv")]
        out: PathBuf,
        /// Also write the JSON report here
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn parse_geometry(s: &str) -> Result<Geometry, String> {
    s.parse().map_err(|e: EmbedError| e.to_string())
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var("HYPRL_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| CliError::Usage(format!("HYPRL_SEED='{v}': {e}"))),
        Err(_) => Ok(None),
    }
}

/// Config file, then `--set`, then dedicated flags; later layers win.
fn settings(run: &RunFlags, seed: Option<u64>) -> Result<Settings, CliError> {
    let mut s = Settings::default();
    if let Some(path) = &run.config {
        s.apply_file(path)?;
    }
    for pair in &run.overrides {
        s.apply_override(pair)?;
    }
    let flags: [(&str, Option<String>); 12] = [
        ("head", run.head.clone()),
        ("latent_dim", run.latent_dim.map(|v| v.to_string())),
        ("updates", run.updates.map(|v| v.to_string())),
        ("curvature", run.curvature.map(|v| v.to_string())),
        ("lr", run.lr.map(|v| v.to_string())),
        ("train_levels", run.train_levels.map(|v| v.to_string())),
        ("test_levels", run.test_levels.map(|v| v.to_string())),
        ("seeds", run.seeds.map(|v| v.to_string())),
        ("out", run.out.as_ref().map(|p| p.display().to_string())),
        ("eval_every", run.eval_every.map(|v| v.to_string())),
        ("delta_every", run.delta_every.map(|v| v.to_string())),
        ("seed", seed.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            s.set(key, &v, &format!("--{}", key.replace('_', "-")))?;
        }
    }
    if !s.seed_given {
        if let Some(v) = env_seed()? {
            s.train.seed = v;
        }
    }
    Ok(s)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let plain_seed = || -> Result<u64, CliError> { Ok(cli.seed.or(env_seed()?).unwrap_or(0)) };
    match &cli.command {
        Command::Train {
            algo,
            run,
            render,
            export_latents,
        } => {
            let s = settings(run, cli.seed)?;
            let opts = TrainOptions {
                render: *render,
                export_latents: export_latents.clone(),
            };
            run::cmd_train(&s, *algo, &opts)
        }
        Command::Compare { algo, heads, run } => {
            let heads = run::parse_heads(heads)?;
            run::cmd_compare(&settings(run, cli.seed)?, *algo, &heads)
        }
        Command::GradProbe { algo, heads, run } => {
            let heads = run::parse_heads(heads)?;
            run::cmd_grad_probe(&settings(run, cli.seed)?, *algo, &heads)
        }
        Command::MeasureDelta {
            input,
            matrix,
            metric,
            curvature,
            sample_size,
            out,
        } => analysis::cmd_measure_delta(&DeltaArgs {
            input: input.clone(),
            matrix: *matrix,
            metric: *metric,
            curvature: *curvature,
            sample_size: *sample_size,
            out: out.clone(),
            seed: plain_seed()?,
        }),
        Command::EmbedTree {
            branching,
            depth,
            dim,
            geometry,
            steps,
            lr,
            curvature,
            out,
            report,
        } => analysis::cmd_embed_tree(&EmbedArgs {
            branching: *branching,
            depth: *depth,
            dim: *dim,
            geometry: *geometry,
            steps: *steps,
            lr: *lr,
            curvature: *curvature,
            out: out.clone(),
            report: report.clone(),
            seed: plain_seed()?,
        }),
    }
}

fn command() -> clap::Command {
    let keys = config::keys_help();
    let mut cmd = Cli::command();
    for name in ["train", "compare", "grad-probe"] {
        let keys = keys.clone();
        cmd = cmd.mut_subcommand(name, move |c| c.after_help(keys));
    }
    cmd
}

fn main() -> ExitCode {
    let matches = command().get_matches();
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
