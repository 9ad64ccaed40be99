//! `measure-delta` and `embed-tree`.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use hyprl_core::embed::{embed_metric, EmbedConfig, Geometry};
use hyprl_core::envs::{tree_metric, TreeSpec, MAX_TREE_NODES};
use hyprl_core::hyperbolicity::{delta_rel, delta_rel_matrix, DistanceMatrix, Metric};
use hyprl_core::BallConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::output::{write_csv, write_json};
use crate::CliError;

/// Parses a headerless numeric CSV with rows of equal width. Blank lines
/// are skipped; row numbers in errors are 1-based file lines.
pub fn read_numeric_csv(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Input(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(CliError::Input(format!(
                    "{}: row {} has {} fields, expected {}",
                    path.display(),
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricKind {
    Euclidean,
    Poincare,
}

pub struct DeltaArgs {
    pub input: PathBuf,
    pub matrix: bool,
    pub metric: MetricKind,
    pub curvature: f64,
    pub sample_size: usize,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

pub fn cmd_measure_delta(args: &DeltaArgs) -> Result<(), CliError> {
    let rows = read_numeric_csv(&args.input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let report = if args.matrix {
        let d = DistanceMatrix::from_rows(&rows)
            .map_err(|e| CliError::Input(format!("{}: {e}", args.input.display())))?;
        delta_rel_matrix(&d, args.sample_size, &mut rng)
    } else {
        let metric = match args.metric {
            MetricKind::Euclidean => Metric::Euclidean,
            MetricKind::Poincare => Metric::Poincare {
                config: BallConfig::new(args.curvature)
                    .map_err(|e| CliError::Usage(e.to_string()))?,
            },
        };
        delta_rel(&rows, metric, args.sample_size, &mut rng)
    }
    .map_err(|e| CliError::Input(format!("{}: {e}", args.input.display())))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(())
}

pub struct EmbedArgs {
    pub branching: usize,
    pub depth: usize,
    pub dim: usize,
    pub geometry: Geometry,
    pub steps: usize,
    pub lr: f64,
    pub curvature: f64,
    pub out: PathBuf,
    pub report: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Serialize)]
struct EmbedReport {
    branching: usize,
    depth: usize,
    nodes: usize,
    dim: usize,
    geometry: Geometry,
    steps: usize,
    lr: f64,
    curvature: f64,
    seed: u64,
    mean_distortion: f64,
    worst_distortion: f64,
    loss: f64,
    coordinates: String,
}

pub fn cmd_embed_tree(args: &EmbedArgs) -> Result<(), CliError> {
    let budget =
        |e: hyprl_core::EnvError| CliError::Usage(format!("{e} (budget {MAX_TREE_NODES} nodes)"));
    let spec = TreeSpec::new(args.branching, args.depth).map_err(budget)?;
    let (d, nodes) = tree_metric(&spec).map_err(budget)?;
    let nodes = nodes.len();
    let cfg = EmbedConfig {
        dim: args.dim,
        geometry: args.geometry,
        steps: args.steps,
        lr: args.lr,
        curvature: args.curvature,
        ..EmbedConfig::default()
    };
    let embedding = embed_metric(&d, &cfg, &mut ChaCha8Rng::seed_from_u64(args.seed))?;
    write_csv(&args.out, &embedding.coords)?;
    let report = EmbedReport {
        branching: args.branching,
        depth: args.depth,
        nodes,
        dim: args.dim,
        geometry: args.geometry,
        steps: args.steps,
        lr: args.lr,
        curvature: args.curvature,
        seed: args.seed,
        mean_distortion: embedding.mean_distortion,
        worst_distortion: embedding.worst_distortion,
        loss: embedding.loss,
        coordinates: args.out.display().to_string(),
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    Ok(())
}
