use std::collections::VecDeque;

use rand::Rng;

use super::common::{
    argmax, build_network, latent_delta_rel, stream_rng, stream_seed, train_eval_repeats, wall_ms,
};
use super::ppo::divergence;
use super::{
    evaluate, probe_update, GradStats, Levels, MetricsRecord, Policy, Result, RlError, Split,
    TrainConfig, TrainOutcome,
};
use crate::autodiff::{Tape, Tensor, Var};
use crate::envs::{VecEnv, NUM_ACTIONS};
use crate::nn::Network;
use crate::optim::{AdamConfig, Optimizer};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DqnConfig {
    pub num_envs: usize,
    /// Environment steps per slot between gradient phases.
    pub steps_per_update: usize,
    pub grad_steps: usize,
    pub batch: usize,
    /// Transitions collected before the first gradient step.
    pub warmup: usize,
    /// Gradient steps between target-network syncs.
    pub target_sync: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the run over which ε decays linearly.
    pub eps_decay_fraction: f64,
    pub n_step: usize,
    pub buffer_capacity: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            num_envs: 8,
            steps_per_update: 8,
            grad_steps: 4,
            batch: 64,
            warmup: 1000,
            target_sync: 200,
            eps_start: 1.0,
            eps_end: 0.01,
            eps_decay_fraction: 0.5,
            n_step: 3,
            buffer_capacity: 20_000,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(RlError::InvalidConfig(m.to_string()));
        if self.num_envs == 0 || self.steps_per_update == 0 || self.batch == 0 || self.n_step == 0 {
            return fail("num_envs, steps_per_update, batch and n_step must be positive");
        }
        if self.target_sync == 0 {
            return fail("target_sync must be positive");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) {
            return fail("epsilon bounds must lie in [0, 1]");
        }
        if !(self.eps_decay_fraction > 0.0) {
            return fail("eps_decay_fraction must be positive");
        }
        if self.buffer_capacity < self.num_envs * (self.n_step + 1) {
            return fail("buffer_capacity too small for the n-step window");
        }
        Ok(())
    }

    /// Linear ε schedule for `update` out of `total`.
    pub fn epsilon(&self, update: usize, total: usize) -> f64 {
        let horizon = (self.eps_decay_fraction * total as f64).max(1.0);
        let frac = (update as f64 / horizon).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

/// One environment step as stored in the replay buffer; the successor state
/// is the observation of the next transition in the same lane.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
}

/// An n-step window starting at a stored transition.
#[derive(Debug, Clone, PartialEq)]
pub struct NStepSample {
    pub obs: Vec<f64>,
    pub action: usize,
    /// Rewards `r_t … r_{t+m−1}`, `m ≤ n`, cut at the first terminal step.
    pub rewards: Vec<f64>,
    pub done: bool,
    /// State `s_{t+n}` to bootstrap from; `None` when `done`.
    pub next_obs: Option<Vec<f64>>,
}

/// Per-environment lanes of transitions, read as n-step windows that never
/// cross an episode boundary.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    lanes: Vec<VecDeque<Transition>>,
    lane_capacity: usize,
    n: usize,
}

impl ReplayBuffer {
    pub fn new(lanes: usize, capacity: usize, n: usize) -> Result<Self> {
        if lanes == 0 || n == 0 {
            return Err(RlError::InvalidConfig(
                "replay buffer needs lanes ≥ 1 and n ≥ 1".into(),
            ));
        }
        let lane_capacity = capacity / lanes;
        if lane_capacity <= n {
            return Err(RlError::InvalidConfig(format!(
                "capacity {capacity} leaves {lane_capacity} slots per lane, need more than n = {n}"
            )));
        }
        Ok(Self {
            lanes: vec![VecDeque::with_capacity(lane_capacity); lanes],
            lane_capacity,
            n,
        })
    }

    pub fn len(&self) -> usize {
        self.lanes.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.lane_capacity * self.lanes.len()
    }

    pub fn push(&mut self, lane: usize, t: Transition) -> Result<()> {
        let count = self.lanes.len();
        let l = self.lanes.get_mut(lane).ok_or(RlError::LengthMismatch {
            what: "replay lane",
            expected: count,
            got: lane + 1,
        })?;
        if l.len() == self.lane_capacity {
            l.pop_front();
        }
        l.push_back(t);
        Ok(())
    }

    fn window(&self, lane: usize, start: usize) -> Option<NStepSample> {
        let l = &self.lanes[lane];
        let mut rewards = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let t = l.get(start + i)?;
            rewards.push(t.reward);
            if t.done {
                return Some(self.sample_at(l, start, rewards, true, None));
            }
        }
        let next = l.get(start + self.n)?.obs.clone();
        Some(self.sample_at(l, start, rewards, false, Some(next)))
    }

    fn sample_at(
        &self,
        l: &VecDeque<Transition>,
        start: usize,
        rewards: Vec<f64>,
        done: bool,
        next_obs: Option<Vec<f64>>,
    ) -> NStepSample {
        NStepSample {
            obs: l[start].obs.clone(),
            action: l[start].action,
            rewards,
            done,
            next_obs,
        }
    }

    /// Every complete window, in lane order.
    pub fn windows(&self) -> Vec<NStepSample> {
        let mut out = Vec::new();
        for lane in 0..self.lanes.len() {
            for start in 0..self.lanes[lane].len() {
                if let Some(w) = self.window(lane, start) {
                    out.push(w);
                }
            }
        }
        out
    }

    fn starts(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (lane, l) in self.lanes.iter().enumerate() {
            let len = l.len();
            for start in 0..len {
                let complete = start + self.n < len || (start..len).any(|i| l[i].done);
                if complete {
                    out.push((lane, start));
                }
            }
        }
        out
    }

    /// Number of windows that can be sampled.
    pub fn usable(&self) -> usize {
        self.starts().len()
    }

    /// `batch` windows drawn uniformly with replacement.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<NStepSample>> {
        let starts = self.starts();
        if starts.len() < batch || batch == 0 {
            return Err(RlError::BufferTooSmall {
                available: starts.len(),
                requested: batch,
            });
        }
        Ok((0..batch)
            .map(|_| {
                let (lane, s) = starts[rng.random_range(0..starts.len())];
                self.window(lane, s)
                    .expect("start indices are complete windows")
            })
            .collect())
    }
}

/// `Σ γⁱ r_{t+i} + γᵐ·max_q·(1 − done)` for one window of `m` rewards.
pub fn n_step_target(rewards: &[f64], done: bool, max_q: f64, gamma: f64) -> f64 {
    let mut y = 0.0;
    let mut g = 1.0;
    for r in rewards {
        y += g * r;
        g *= gamma;
    }
    if done {
        y
    } else {
        y + g * max_q
    }
}

/// Bellman targets for `samples`, bootstrapping from `target`.
pub fn dqn_targets(samples: &[NStepSample], target: &Network, gamma: f64) -> Result<Vec<f64>> {
    let live: Vec<&Vec<f64>> = samples.iter().filter_map(|s| s.next_obs.as_ref()).collect();
    let mut max_q = Vec::new();
    if let Some(first) = live.first() {
        let cols = first.len();
        let data: Vec<f64> = live.iter().flat_map(|o| o.iter().copied()).collect();
        let q = target.infer(&Tensor::from_parts(vec![live.len(), cols], data))?;
        max_q = (0..q.rows())
            .map(|r| q.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
    }
    let mut next = max_q.into_iter();
    samples
        .iter()
        .map(|s| {
            let q = if s.next_obs.is_some() {
                next.next().unwrap_or(0.0)
            } else {
                0.0
            };
            let y = n_step_target(&s.rewards, s.done, q, gamma);
            if y.is_finite() {
                Ok(y)
            } else {
                Err(RlError::NonFinite { term: "target" })
            }
        })
        .collect()
}

/// Uniform action with probability `eps`, otherwise the argmax (lowest index
/// on ties). The coin is always drawn so the RNG advances identically.
pub fn epsilon_greedy(q: &[f64], eps: f64, rng: &mut impl Rng) -> Result<usize> {
    if q.is_empty() {
        return Err(RlError::Empty("q-values"));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(RlError::InvalidConfig(format!(
            "epsilon must lie in [0, 1], got {eps}"
        )));
    }
    let coin: f64 = rng.random();
    if coin < eps {
        Ok(rng.random_range(0..q.len()))
    } else {
        Ok(argmax(q))
    }
}

/// `mean((Q(s, a) − y)²)` over the batch.
pub fn dqn_loss<'t>(q: Var<'t>, actions: &[usize], targets: &[f64]) -> Result<Var<'t>> {
    if actions.len() != targets.len() {
        return Err(RlError::LengthMismatch {
            what: "targets",
            expected: actions.len(),
            got: targets.len(),
        });
    }
    if actions.is_empty() {
        return Err(RlError::Empty("DQN batch"));
    }
    let y = q
        .tape()
        .constant(Tensor::from_parts(vec![targets.len(), 1], targets.to_vec()));
    let loss = q.gather(actions)?.sub(y)?.square().mean();
    if !loss.item().is_finite() {
        return Err(RlError::NonFinite { term: "td" });
    }
    Ok(loss)
}

fn rows_tensor<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, cols: usize) -> Tensor {
    let data: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    Tensor::from_parts(vec![data.len() / cols, cols], data)
}

/// Trains a Q-network with n-step targets and a periodically synced target
/// network.
pub fn train_dqn(
    cfg: &TrainConfig,
    dqn: &DqnConfig,
    sink: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    dqn.validate()?;
    let start = std::time::Instant::now();
    let levels = Levels::from_config(cfg)?;
    let obs_dim = levels.obs_dim();
    let mut net = build_network(cfg, obs_dim, NUM_ACTIONS)?;
    let mut target = net.clone();
    let adam = AdamConfig {
        lr: cfg.lr,
        eps: cfg.adam_eps,
        ..AdamConfig::default()
    };
    let mut opt = Optimizer::new(net.params(), adam)?.with_max_grad_norm(cfg.max_grad_norm)?;
    let mut venv = VecEnv::new(levels.train.clone(), dqn.num_envs, stream_seed(cfg.seed, 2))?;
    let mut act_rng = stream_rng(cfg.seed, 3);
    let mut sample_rng = stream_rng(cfg.seed, 4);
    let mut eval_rng = stream_rng(cfg.seed, 5);
    let mut delta_rng = stream_rng(cfg.seed, 6);
    let mut buffer = ReplayBuffer::new(dqn.num_envs, dqn.buffer_capacity, dqn.n_step)?;
    let mut grad_steps = 0usize;
    let mut env_steps = 0u64;
    let mut records: Vec<MetricsRecord> = Vec::new();

    for update in 1..=cfg.updates {
        let eps = dqn.epsilon(update - 1, cfg.updates);
        let mut finished = Vec::new();
        let mut recent_obs = Vec::with_capacity(dqn.steps_per_update * dqn.num_envs * obs_dim);
        for _ in 0..dqn.steps_per_update {
            let obs = venv.observations();
            let q = net.infer(&obs)?;
            let actions = (0..venv.len())
                .map(|e| epsilon_greedy(q.row(e), eps, &mut act_rng))
                .collect::<Result<Vec<_>>>()?;
            let st = venv.step(&actions)?;
            for (e, &action) in actions.iter().enumerate() {
                buffer.push(
                    e,
                    Transition {
                        obs: obs.row(e).to_vec(),
                        action,
                        reward: st.rewards[e],
                        done: st.dones[e],
                    },
                )?;
            }
            recent_obs.extend_from_slice(obs.data());
            finished.extend(st.finished.into_iter().flatten());
            env_steps += venv.len() as u64;
        }

        let mut rec = MetricsRecord::empty(update, env_steps, Split::Train);
        if !finished.is_empty() {
            rec.mean_return = Some(finished.iter().sum::<f64>() / finished.len() as f64);
        }
        if cfg.delta_every > 0 && update % cfg.delta_every == 0 {
            let obs = Tensor::from_parts(vec![recent_obs.len() / obs_dim, obs_dim], recent_obs);
            rec.delta_rel = latent_delta_rel(&net, &obs, cfg.delta_samples, &mut delta_rng)?;
        }

        let mut stats = Vec::new();
        if buffer.len() >= dqn.warmup && buffer.usable() >= dqn.batch {
            for _ in 0..dqn.grad_steps {
                let mut step = || -> Result<GradStats> {
                    net.refresh_spectral_norm();
                    let samples = buffer.sample(dqn.batch, &mut sample_rng)?;
                    let targets = dqn_targets(&samples, &target, cfg.gamma)?;
                    let actions: Vec<usize> = samples.iter().map(|s| s.action).collect();
                    let tape = Tape::new();
                    let fwd = net.forward(
                        &tape,
                        &rows_tensor(samples.iter().map(|s| &s.obs), obs_dim),
                        true,
                    )?;
                    let loss = dqn_loss(fwd.outputs, &actions, &targets)?;
                    let grads = tape.backward(loss)?;
                    let gs = probe_update(&grads, &fwd, samples.len() as f64)?;
                    opt.step(net.params_mut(), fwd.params.collect(&grads))?;
                    Ok(gs)
                };
                match step() {
                    Ok(gs) => stats.push(gs),
                    Err(e) => return Err(divergence(update, cfg, &e, records.last())),
                }
                grad_steps += 1;
                if grad_steps.is_multiple_of(dqn.target_sync) {
                    target.clone_from(&net);
                }
            }
        }
        if let Some(g) = GradStats::mean(&stats) {
            rec.grad_latent_mag = Some(g.latent.magnitude);
            rec.grad_latent_var = Some(g.latent.variance);
            rec.grad_encoder_mag = Some(g.encoder.magnitude);
            rec.grad_encoder_var = Some(g.encoder.variance);
        }
        rec.wall_ms = wall_ms(&start, cfg.wall_clock);
        sink(&rec)?;
        records.push(rec);

        if cfg.eval_every > 0 && update % cfg.eval_every == 0 {
            let mut test = MetricsRecord::empty(update, env_steps, Split::Test);
            test.mean_return = Some(evaluate(
                &net,
                &levels.test,
                1,
                Policy::Greedy,
                &mut eval_rng,
            )?);
            test.wall_ms = wall_ms(&start, cfg.wall_clock);
            sink(&test)?;
            records.push(test);
        }
    }
    net.refresh_spectral_norm();
    let repeats = train_eval_repeats(cfg, &levels);
    let final_train_return = evaluate(&net, &levels.train, repeats, Policy::Greedy, &mut eval_rng)?;
    let final_test_return = evaluate(&net, &levels.test, 1, Policy::Greedy, &mut eval_rng)?;
    Ok(TrainOutcome {
        records,
        final_train_return,
        final_test_return,
        network: net,
    })
}
