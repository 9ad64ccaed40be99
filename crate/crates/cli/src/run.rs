//! Training-driven commands: `train`, `compare` and `grad-probe`.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use hyprl_core::envs::{Action, ProcGridEnv, NUM_ACTIONS};
use hyprl_core::rl::{train_dqn, train_ppo, Levels};
use hyprl_core::{HeadMode, MetricsRecord, Network, RlError, Split, Tensor, TrainOutcome};
use serde::Serialize;

use crate::config::Settings;
use crate::output::{median, seeded, write_csv, write_json, JsonlWriter, MeanStd};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Ppo,
    Dqn,
}

impl Algo {
    fn name(self) -> &'static str {
        match self {
            Algo::Ppo => "ppo",
            Algo::Dqn => "dqn",
        }
    }
}

fn seeds(settings: &Settings) -> Result<Vec<u64>, CliError> {
    if settings.seeds == 0 {
        return Err(CliError::Usage("seeds must be at least 1".into()));
    }
    let base = settings.train.seed;
    Ok((0..settings.seeds as u64)
        .map(|k| base.wrapping_add(k))
        .collect())
}

fn metrics_path(settings: &Settings, algo: Algo, head: HeadMode, seed: u64) -> PathBuf {
    settings
        .out
        .join(format!("{}-{head}-seed{seed}.jsonl", algo.name()))
}

/// Trains one (head, seed) pair, streaming metrics to `path`.
fn run_one(
    settings: &Settings,
    algo: Algo,
    head: HeadMode,
    seed: u64,
    path: &Path,
) -> Result<TrainOutcome, CliError> {
    let mut cfg = settings.train.clone();
    cfg.head = head;
    cfg.seed = seed;
    let mut writer = JsonlWriter::create(path)?;
    let mut sink = |r: &MetricsRecord| writer.write(r).map_err(|e| RlError::Sink(e.to_string()));
    let outcome = match algo {
        Algo::Ppo => train_ppo(&cfg, &settings.ppo, &mut sink),
        Algo::Dqn => train_dqn(&cfg, &settings.dqn, &mut sink),
    }?;
    eprintln!(
        "{} {head} seed {seed}: train {:.3}, test {:.3} -> {}",
        algo.name(),
        outcome.final_train_return,
        outcome.final_test_return,
        path.display()
    );
    Ok(outcome)
}

#[derive(Serialize)]
struct SeedSummary {
    seed: u64,
    final_train_return: f64,
    final_test_return: f64,
    generalization_gap: f64,
    metrics_file: String,
}

#[derive(Serialize)]
struct ReturnStats {
    final_train_return: Option<MeanStd>,
    final_test_return: Option<MeanStd>,
    generalization_gap: Option<MeanStd>,
}

impl ReturnStats {
    fn of(runs: &[SeedSummary]) -> Self {
        let col = |f: fn(&SeedSummary) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            final_train_return: col(|r| r.final_train_return),
            final_test_return: col(|r| r.final_test_return),
            generalization_gap: col(|r| r.generalization_gap),
        }
    }
}

fn summarize(seed: u64, outcome: &TrainOutcome, path: &Path) -> SeedSummary {
    SeedSummary {
        seed,
        final_train_return: outcome.final_train_return,
        final_test_return: outcome.final_test_return,
        generalization_gap: outcome.generalization_gap(),
        metrics_file: path.display().to_string(),
    }
}

fn opt(v: Option<MeanStd>) -> String {
    v.map_or_else(|| "-".into(), |m| m.to_string())
}

/// Initial observations of the held-out levels.
fn test_observations(settings: &Settings) -> Result<Tensor, CliError> {
    let levels = Levels::from_config(&settings.train)?;
    let rows: Vec<Vec<f64>> = levels.test.iter().map(ProcGridEnv::observe).collect();
    Ok(Tensor::from_rows(&rows).map_err(RlError::from)?)
}

fn greedy_action(net: &Network, obs: Vec<f64>) -> Result<usize, CliError> {
    let n = obs.len();
    let out = net
        .infer(&Tensor::matrix(1, n, obs).map_err(RlError::from)?)
        .map_err(RlError::from)?;
    let row = &out.row(0)[..NUM_ACTIONS];
    Ok((0..NUM_ACTIONS).fold(0, |best, a| if row[a] > row[best] { a } else { best }))
}

/// Greedy rollout on the first held-out level, one ASCII frame per step.
fn render_episode(settings: &Settings, net: &Network) -> Result<String, CliError> {
    let levels = Levels::from_config(&settings.train)?;
    let mut env = levels.test[0].clone();
    let mut obs = env.reset();
    let mut frame = env.render_ascii();
    let mut text = format!("step 0\n{frame}\n");
    let mut total = 0.0;
    let mut stalled = 0usize;
    while !env.is_done() {
        let action = Action::from_index(greedy_action(net, obs)?).map_err(RlError::from)?;
        let step = env.step(action).map_err(RlError::from)?;
        total += step.reward;
        obs = step.obs;
        let next = env.render_ascii();
        // Unchanged frames with no reward are counted, not reprinted.
        if next == frame && step.reward == 0.0 && !env.is_done() {
            stalled += 1;
            continue;
        }
        if stalled > 0 {
            text.push_str(&format!("({stalled} steps without change)\n"));
            stalled = 0;
        }
        text.push_str(&format!(
            "step {} ({action:?}, reward {})\n{next}\n",
            env.steps(),
            step.reward
        ));
        frame = next;
    }
    text.push_str(&format!("episode return {total}\n"));
    Ok(text)
}

pub struct TrainOptions {
    pub render: bool,
    pub export_latents: Option<PathBuf>,
}

pub fn cmd_train(settings: &Settings, algo: Algo, opts: &TrainOptions) -> Result<(), CliError> {
    let seeds = seeds(settings)?;
    let head = settings.train.head;
    let multi = seeds.len() > 1;
    let mut runs = Vec::new();
    for &seed in &seeds {
        let path = metrics_path(settings, algo, head, seed);
        let outcome = run_one(settings, algo, head, seed, &path)?;
        if let Some(target) = &opts.export_latents {
            let latents = outcome
                .network
                .head_inputs(&test_observations(settings)?)
                .map_err(RlError::from)?;
            write_csv(
                &seeded(target, seed, multi),
                (0..latents.rows()).map(|r| latents.row(r)),
            )?;
        }
        if opts.render && seed == seeds[0] {
            print!("{}", render_episode(settings, &outcome.network)?);
        }
        runs.push(summarize(seed, &outcome, &path));
    }

    let stats = ReturnStats::of(&runs);
    #[derive(Serialize)]
    struct Aggregate<'a> {
        algo: Algo,
        head: String,
        settings: serde_json::Value,
        runs: &'a [SeedSummary],
        #[serde(flatten)]
        stats: &'a ReturnStats,
    }
    let aggregate_path = settings
        .out
        .join(format!("{}-{head}-aggregate.json", algo.name()));
    write_json(
        &aggregate_path,
        &Aggregate {
            algo,
            head: head.to_string(),
            settings: settings_json(settings, algo),
            runs: &runs,
            stats: &stats,
        },
    )?;

    println!(
        "{:<6} {:<16} {:>6} {:>9} {:>9} {:>9}",
        "algo", "head", "seed", "train", "test", "gap"
    );
    for r in &runs {
        println!(
            "{:<6} {:<16} {:>6} {:>9.3} {:>9.3} {:>9.3}",
            algo.name(),
            head.to_string(),
            r.seed,
            r.final_train_return,
            r.final_test_return,
            r.generalization_gap
        );
    }
    println!(
        "mean ± std: train {}, test {}, gap {}",
        opt(stats.final_train_return),
        opt(stats.final_test_return),
        opt(stats.generalization_gap)
    );
    println!("aggregate: {}", aggregate_path.display());
    Ok(())
}

fn settings_json(settings: &Settings, algo: Algo) -> serde_json::Value {
    let algo_cfg = match algo {
        Algo::Ppo => serde_json::to_value(&settings.ppo),
        Algo::Dqn => serde_json::to_value(&settings.dqn),
    }
    .unwrap_or_default();
    serde_json::json!({ "train": settings.train, algo.name(): algo_cfg, "seeds": settings.seeds })
}

fn train_values(records: &[MetricsRecord], f: fn(&MetricsRecord) -> Option<f64>) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.split == Split::Train)
        .filter_map(f)
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[derive(Serialize)]
struct TrajectoryPoint {
    update: usize,
    mean: f64,
    std: f64,
}

#[derive(Serialize)]
struct HeadComparison {
    head: String,
    runs: Vec<SeedSummary>,
    #[serde(flatten)]
    returns: ReturnStats,
    /// Per-seed means over training updates, then mean ± std over seeds.
    grad_latent_mag: Option<MeanStd>,
    grad_latent_var: Option<MeanStd>,
    grad_encoder_mag: Option<MeanStd>,
    grad_encoder_var: Option<MeanStd>,
    delta_rel: Vec<TrajectoryPoint>,
}

fn delta_trajectory(all: &[Vec<MetricsRecord>]) -> Vec<TrajectoryPoint> {
    let mut by_update: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for records in all {
        for r in records.iter().filter(|r| r.split == Split::Train) {
            if let Some(d) = r.delta_rel {
                by_update.entry(r.update).or_default().push(d);
            }
        }
    }
    by_update
        .into_iter()
        .filter_map(|(update, v)| {
            MeanStd::of(&v).map(|m| TrajectoryPoint {
                update,
                mean: m.mean,
                std: m.std,
            })
        })
        .collect()
}

pub fn parse_heads(list: &str) -> Result<Vec<HeadMode>, CliError> {
    let heads = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.parse::<HeadMode>()
                .map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    for (i, h) in heads.iter().enumerate() {
        if heads[..i].contains(h) {
            return Err(CliError::Usage(format!("head '{h}' listed twice")));
        }
    }
    Ok(heads)
}

pub fn cmd_compare(settings: &Settings, algo: Algo, heads: &[HeadMode]) -> Result<(), CliError> {
    if heads.len() < 2 {
        return Err(CliError::Usage("compare needs at least two heads".into()));
    }
    let seeds = seeds(settings)?;
    let mut entries = Vec::new();
    for &head in heads {
        let (mut runs, mut records) = (Vec::new(), Vec::new());
        for &seed in &seeds {
            let path = metrics_path(settings, algo, head, seed);
            let outcome = run_one(settings, algo, head, seed, &path)?;
            runs.push(summarize(seed, &outcome, &path));
            records.push(outcome.records);
        }
        let per_seed = |f: fn(&MetricsRecord) -> Option<f64>| {
            MeanStd::of(
                &records
                    .iter()
                    .map(|r| mean(&train_values(r, f)))
                    .collect::<Vec<_>>(),
            )
        };
        entries.push(HeadComparison {
            head: head.to_string(),
            returns: ReturnStats::of(&runs),
            grad_latent_mag: per_seed(|r| r.grad_latent_mag),
            grad_latent_var: per_seed(|r| r.grad_latent_var),
            grad_encoder_mag: per_seed(|r| r.grad_encoder_mag),
            grad_encoder_var: per_seed(|r| r.grad_encoder_var),
            delta_rel: delta_trajectory(&records),
            runs,
        });
    }
    let path = settings.out.join(format!("compare-{}.json", algo.name()));
    write_json(
        &path,
        &serde_json::json!({
            "algo": algo,
            "seeds": seeds,
            "settings": settings_json(settings, algo),
            "heads": entries,
        }),
    )?;

    println!(
        "{:<16} {:>17} {:>17} {:>17} {:>12}",
        "head", "train", "test", "gap", "enc. grad"
    );
    for e in &entries {
        println!(
            "{:<16} {:>17} {:>17} {:>17} {:>12}",
            e.head,
            opt(e.returns.final_train_return),
            opt(e.returns.final_test_return),
            opt(e.returns.generalization_gap),
            e.grad_encoder_mag
                .map_or_else(|| "-".into(), |m| format!("{:.3e}", m.mean))
        );
    }
    println!("aggregate: {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct ProbeSeed {
    seed: u64,
    median_latent_mag: Option<f64>,
    median_latent_var: Option<f64>,
    median_encoder_mag: Option<f64>,
    median_encoder_var: Option<f64>,
    csv: String,
}

/// Per-update gradient statistics for each head, plus their medians.
pub fn cmd_grad_probe(settings: &Settings, algo: Algo, heads: &[HeadMode]) -> Result<(), CliError> {
    if heads.is_empty() {
        return Err(CliError::Usage("grad-probe needs at least one head".into()));
    }
    let seeds = seeds(settings)?;
    let mut report = Vec::new();
    println!(
        "{:<16} {:>6} {:>12} {:>12} {:>12} {:>12}",
        "head", "seed", "lat. mag", "lat. var", "enc. mag", "enc. var"
    );
    for &head in heads {
        let mut per_seed = Vec::new();
        for &seed in &seeds {
            let outcome = run_one(
                settings,
                algo,
                head,
                seed,
                &metrics_path(settings, algo, head, seed),
            )?;
            let rows: Vec<[f64; 5]> = outcome
                .records
                .iter()
                .filter(|r| r.split == Split::Train)
                .filter_map(|r| {
                    Some([
                        r.update as f64,
                        r.grad_latent_mag?,
                        r.grad_latent_var?,
                        r.grad_encoder_mag?,
                        r.grad_encoder_var?,
                    ])
                })
                .collect();
            let csv = settings
                .out
                .join(format!("probe-{}-{head}-seed{seed}.csv", algo.name()));
            write_csv(&csv, &rows)?;
            let col = |k: usize| median(&rows.iter().map(|r| r[k]).collect::<Vec<_>>());
            let s = ProbeSeed {
                seed,
                median_latent_mag: col(1),
                median_latent_var: col(2),
                median_encoder_mag: col(3),
                median_encoder_var: col(4),
                csv: csv.display().to_string(),
            };
            let show = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{x:.3e}"));
            println!(
                "{:<16} {:>6} {:>12} {:>12} {:>12} {:>12}",
                head.to_string(),
                seed,
                show(s.median_latent_mag),
                show(s.median_latent_var),
                show(s.median_encoder_mag),
                show(s.median_encoder_var)
            );
            per_seed.push(s);
        }
        report.push(serde_json::json!({ "head": head.to_string(), "seeds": per_seed }));
    }
    let path = settings.out.join(format!("probe-{}.json", algo.name()));
    write_json(
        &path,
        &serde_json::json!({ "algo": algo, "settings": settings_json(settings, algo), "heads": report }),
    )?;
    println!("report: {}", path.display());
    Ok(())
}
