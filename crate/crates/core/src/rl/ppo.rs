use rand::seq::SliceRandom;

use super::common::{
    build_network, gather_rows, latent_delta_rel, sample_categorical, stream_rng, stream_seed,
    train_eval_repeats, wall_ms,
};
use super::{
    evaluate, probe_update, GradStats, Levels, MetricsRecord, Policy, Result, RlError, Split,
    TrainConfig, TrainOutcome,
};
use crate::autodiff::{Tape, Tensor, Var};
use crate::envs::{VecEnv, NUM_ACTIONS};
use crate::optim::{AdamConfig, Optimizer};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PpoConfig {
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub num_envs: usize,
    pub rollout_len: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            gae_lambda: 0.95,
            epochs: 3,
            minibatch: 128,
            num_envs: 16,
            rollout_len: 32,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(RlError::InvalidConfig(m.to_string()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return fail("clip must lie in (0, 1)");
        }
        if !(self.entropy_coef >= 0.0 && self.value_coef >= 0.0) {
            return fail("loss coefficients must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail("gae_lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.num_envs == 0 || self.rollout_len == 0 {
            return fail("epochs, minibatch, num_envs and rollout_len must be positive");
        }
        Ok(())
    }
}

/// Backward GAE recursion over one environment's trajectory. `dones[t]`
/// marks that the episode ended after step `t`; `bootstrap` is the value of
/// the state following the last step. Returns `(advantages, returns)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = rewards.len();
    for (what, got) in [("values", values.len()), ("dones", dones.len())] {
        if got != t {
            return Err(RlError::LengthMismatch {
                what,
                expected: t,
                got,
            });
        }
    }
    let mut adv = vec![0.0; t];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0;
    for i in (0..t).rev() {
        let live = if dones[i] { 0.0 } else { 1.0 };
        let delta = rewards[i] + gamma * next_value * live - values[i];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[i] = next_adv;
        next_value = values[i];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts to mean 0 and scales to (population) standard deviation 1.
/// Constant inputs are only centered.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    if adv.is_empty() {
        return Vec::new();
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if adv.len() > 1 && std > 0.0 {
        1.0 / std
    } else {
        1.0
    };
    adv.iter().map(|a| (a - mean) * scale).collect()
}

/// Rollout data consumed by one PPO minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoBatch {
    pub actions: Vec<usize>,
    /// Log-probabilities of `actions` under the behaviour policy.
    pub old_logp: Vec<f64>,
    /// Raw advantages; normalized inside [`ppo_loss`].
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    fn validate(&self) -> Result<usize> {
        let b = self.actions.len();
        if b == 0 {
            return Err(RlError::Empty("PPO batch"));
        }
        for (what, got) in [
            ("old_logp", self.old_logp.len()),
            ("advantages", self.advantages.len()),
            ("returns", self.returns.len()),
        ] {
            if got != b {
                return Err(RlError::LengthMismatch {
                    what,
                    expected: b,
                    got,
                });
            }
        }
        if self.old_logp.iter().any(|x| !x.is_finite()) {
            return Err(RlError::NonFinite {
                term: "behaviour log-prob",
            });
        }
        Ok(b)
    }
}

pub struct PpoLoss<'t> {
    pub total: Var<'t>,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio left `[1 − ε, 1 + ε]`.
    pub clip_fraction: f64,
    /// Mean of `old_logp − logp`.
    pub approx_kl: f64,
}

fn column<'t>(tape: &'t Tape, data: &[f64]) -> Var<'t> {
    tape.constant(Tensor::from_parts(vec![data.len(), 1], data.to_vec()))
}

fn finite(term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(RlError::NonFinite { term })
    }
}

/// Clipped-surrogate loss on `outputs` (`B × (A+1)`: action logits, then
/// the value estimate):
/// `−mean(min(R·Â, clip(R)·Â)) + c_v·mean((V − G)²) − c_e·mean(H)`.
pub fn ppo_loss<'t>(outputs: Var<'t>, batch: &PpoBatch, cfg: &PpoConfig) -> Result<PpoLoss<'t>> {
    let b = batch.validate()?;
    let shape = outputs.shape();
    if shape.len() != 2 || shape[0] != b || shape[1] < 2 {
        return Err(RlError::LengthMismatch {
            what: "policy outputs",
            expected: b,
            got: shape.first().copied().unwrap_or(0),
        });
    }
    let tape = outputs.tape();
    let a = shape[1] - 1;
    let logp_all = outputs.slice_cols(0, a)?.log_softmax()?;
    let values = outputs.slice_cols(a, a + 1)?;

    let logp = logp_all.gather(&batch.actions)?;
    let ratio = logp.sub(column(tape, &batch.old_logp))?.exp();
    let adv = column(tape, &normalize_advantages(&batch.advantages));
    let unclipped = ratio.mul(adv)?;
    let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip).mul(adv)?;
    let policy = unclipped.minimum(clipped)?.mean().neg();
    let value = values.sub(column(tape, &batch.returns))?.square().mean();
    let entropy = logp_all.exp().mul(logp_all)?.sum_rows()?.mean().neg();

    let policy_v = finite("policy", policy.item())?;
    let value_v = finite("value", value.item())?;
    let entropy_v = finite("entropy", entropy.item())?;
    let total = policy
        .add(value.scale(cfg.value_coef))?
        .sub(entropy.scale(cfg.entropy_coef))?;
    finite("total", total.item())?;

    let r = ratio.value();
    let clip_fraction = r
        .data()
        .iter()
        .filter(|x| (**x - 1.0).abs() > cfg.clip)
        .count() as f64
        / b as f64;
    let lp = logp.value();
    let approx_kl = batch
        .old_logp
        .iter()
        .zip(lp.data())
        .map(|(o, n)| o - n)
        .sum::<f64>()
        / b as f64;
    Ok(PpoLoss {
        total,
        policy: policy_v,
        value: value_v,
        entropy: entropy_v,
        clip_fraction,
        approx_kl,
    })
}

/// Flattened rollout, step-major (`t·k + env`).
struct Rollout {
    obs: Vec<f64>,
    actions: Vec<usize>,
    logp: Vec<f64>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
    finished: Vec<f64>,
}

fn collect_rollout(
    net: &crate::nn::Network,
    venv: &mut VecEnv,
    len: usize,
    gamma: f64,
    lambda: f64,
    rng: &mut impl rand::Rng,
) -> Result<Rollout> {
    let k = venv.len();
    let obs_dim = venv.obs_dim();
    let mut obs = Vec::with_capacity(len * k * obs_dim);
    let mut actions = Vec::with_capacity(len * k);
    let mut logp = Vec::with_capacity(len * k);
    let mut values = Vec::with_capacity(len * k);
    let mut rewards = Vec::with_capacity(len * k);
    let mut dones = Vec::with_capacity(len * k);
    let mut finished = Vec::new();
    for _ in 0..len {
        let o = venv.observations();
        let out = net.infer(&o)?;
        let mut step_actions = Vec::with_capacity(k);
        for e in 0..k {
            let row = out.row(e);
            let (act, lp) = sample_categorical(&row[..NUM_ACTIONS], rng);
            step_actions.push(act);
            logp.push(lp);
            values.push(row[NUM_ACTIONS]);
        }
        obs.extend_from_slice(o.data());
        let st = venv.step(&step_actions)?;
        actions.extend(step_actions);
        rewards.extend(st.rewards);
        dones.extend(st.dones);
        finished.extend(st.finished.into_iter().flatten());
    }
    let last = net.infer(&venv.observations())?;
    let mut advantages = vec![0.0; len * k];
    let mut returns = vec![0.0; len * k];
    let lane = |src: &[f64], e: usize| (0..len).map(|t| src[t * k + e]).collect::<Vec<_>>();
    for e in 0..k {
        let lane_dones: Vec<bool> = (0..len).map(|t| dones[t * k + e]).collect();
        let (adv, ret) = gae(
            &lane(&rewards, e),
            &lane(&values, e),
            &lane_dones,
            last.get(e, NUM_ACTIONS),
            gamma,
            lambda,
        )?;
        for t in 0..len {
            advantages[t * k + e] = adv[t];
            returns[t * k + e] = ret[t];
        }
    }
    Ok(Rollout {
        obs,
        actions,
        logp,
        advantages,
        returns,
        finished,
    })
}

pub(crate) fn divergence(
    update: usize,
    cfg: &TrainConfig,
    err: &RlError,
    last: Option<&MetricsRecord>,
) -> RlError {
    let last = last
        .and_then(|r| serde_json::to_string(r).ok())
        .unwrap_or_else(|| "none".into());
    RlError::Diverged {
        update,
        reason: err.to_string(),
        dump: format!(
            "head={} latent_dim={} lr={} seed={} last_record={last}",
            cfg.head, cfg.latent_dim, cfg.lr, cfg.seed
        ),
    }
}

/// Trains an actor-critic network with PPO, emitting one train record per
/// update and a test record every `eval_every` updates to `sink`.
pub fn train_ppo(
    cfg: &TrainConfig,
    ppo: &PpoConfig,
    sink: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ppo.validate()?;
    let start = std::time::Instant::now();
    let levels = Levels::from_config(cfg)?;
    let mut net = build_network(cfg, levels.obs_dim(), NUM_ACTIONS + 1)?;
    let adam = AdamConfig {
        lr: cfg.lr,
        eps: cfg.adam_eps,
        ..AdamConfig::default()
    };
    let mut opt = Optimizer::new(net.params(), adam)?.with_max_grad_norm(cfg.max_grad_norm)?;
    let mut venv = VecEnv::new(levels.train.clone(), ppo.num_envs, stream_seed(cfg.seed, 2))?;
    let mut act_rng = stream_rng(cfg.seed, 3);
    let mut mb_rng = stream_rng(cfg.seed, 4);
    let mut eval_rng = stream_rng(cfg.seed, 5);
    let mut delta_rng = stream_rng(cfg.seed, 6);

    let obs_dim = levels.obs_dim();
    let steps_per_update = (ppo.num_envs * ppo.rollout_len) as u64;
    let mut records: Vec<MetricsRecord> = Vec::new();
    for update in 1..=cfg.updates {
        let ro = collect_rollout(
            &net,
            &mut venv,
            ppo.rollout_len,
            cfg.gamma,
            ppo.gae_lambda,
            &mut act_rng,
        )?;
        let env_steps = update as u64 * steps_per_update;
        let mut rec = MetricsRecord::empty(update, env_steps, Split::Train);
        if !ro.finished.is_empty() {
            rec.mean_return = Some(ro.finished.iter().sum::<f64>() / ro.finished.len() as f64);
        }
        if cfg.delta_every > 0 && update % cfg.delta_every == 0 {
            let obs = Tensor::from_parts(vec![ro.actions.len(), obs_dim], ro.obs.clone());
            rec.delta_rel = latent_delta_rel(&net, &obs, cfg.delta_samples, &mut delta_rng)?;
        }

        let n = ro.actions.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut stats = Vec::new();
        let mut entropies = Vec::new();
        for _ in 0..ppo.epochs {
            order.shuffle(&mut mb_rng);
            for idx in order.chunks(ppo.minibatch) {
                let mut step = || -> Result<(GradStats, f64)> {
                    net.refresh_spectral_norm();
                    let batch = PpoBatch {
                        actions: idx.iter().map(|&i| ro.actions[i]).collect(),
                        old_logp: idx.iter().map(|&i| ro.logp[i]).collect(),
                        advantages: idx.iter().map(|&i| ro.advantages[i]).collect(),
                        returns: idx.iter().map(|&i| ro.returns[i]).collect(),
                    };
                    let tape = Tape::new();
                    let fwd = net.forward(&tape, &gather_rows(&ro.obs, obs_dim, idx), true)?;
                    let loss = ppo_loss(fwd.outputs, &batch, ppo)?;
                    let grads = tape.backward(loss.total)?;
                    let gs = probe_update(&grads, &fwd, idx.len() as f64)?;
                    opt.step(net.params_mut(), fwd.params.collect(&grads))?;
                    Ok((gs, loss.entropy))
                };
                match step() {
                    Ok((gs, h)) => {
                        stats.push(gs);
                        entropies.push(h);
                    }
                    Err(e) => return Err(divergence(update, cfg, &e, records.last())),
                }
            }
        }
        if let Some(g) = GradStats::mean(&stats) {
            rec.grad_latent_mag = Some(g.latent.magnitude);
            rec.grad_latent_var = Some(g.latent.variance);
            rec.grad_encoder_mag = Some(g.encoder.magnitude);
            rec.grad_encoder_var = Some(g.encoder.variance);
        }
        rec.entropy = Some(entropies.iter().sum::<f64>() / entropies.len() as f64);
        rec.wall_ms = wall_ms(&start, cfg.wall_clock);
        sink(&rec)?;
        records.push(rec);

        if cfg.eval_every > 0 && update % cfg.eval_every == 0 {
            let mut test = MetricsRecord::empty(update, env_steps, Split::Test);
            test.mean_return = Some(evaluate(
                &net,
                &levels.test,
                1,
                Policy::Sample,
                &mut eval_rng,
            )?);
            test.wall_ms = wall_ms(&start, cfg.wall_clock);
            sink(&test)?;
            records.push(test);
        }
    }
    net.refresh_spectral_norm();
    let repeats = train_eval_repeats(cfg, &levels);
    let final_train_return = evaluate(&net, &levels.train, repeats, Policy::Sample, &mut eval_rng)?;
    let final_test_return = evaluate(&net, &levels.test, 1, Policy::Sample, &mut eval_rng)?;
    Ok(TrainOutcome {
        records,
        final_train_return,
        final_test_return,
        network: net,
    })
}
