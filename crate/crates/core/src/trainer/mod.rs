//! Rollout collection, training loop, evaluation and checkpoints.

pub mod mlp;
pub mod ppo;

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clf_reward::{ClfConfig, RewardWeights};
use crate::env::{Env, EnvConfig, Observation, PrivilegedObservation, RewardVariant, Trajectory};
use crate::error::{Error, Result};
use crate::rng;

pub use mlp::Mlp;
pub use ppo::{
    compute_gae, normalize_advantages, ppo_update, ActorCritic, Adam, GaussianPolicy, PpoConfig, RolloutBatch,
    UpdateStats,
};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Number of trailing control ticks averaged by the tracking-error metric.
pub const EVAL_WINDOW: usize = 100;

/// Everything needed to rebuild the environment and the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub variant: RewardVariant,
    pub iterations: usize,
    pub env: EnvConfig,
    pub clf: ClfConfig,
    pub weights: RewardWeights,
    pub ppo: PpoConfig,
    pub policy: ActorCritic,
}

impl Checkpoint {
    pub fn make_env(&self) -> Result<Env> {
        Env::new(self.env.clone(), &self.clf, self.weights, self.variant)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "schema_version {} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.policy.validate()?;
        let env = self.make_env()?;
        if self.policy.obs_dim() != env.obs_dim()
            || self.policy.priv_dim() != env.priv_dim()
            || self.policy.actor.action_dim() != env.action_dim()
        {
            return Err(Error::Checkpoint("network shapes do not match the environment".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "schema_version {v} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::Checkpoint("missing schema_version".into())),
        }
        let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub mean_total_reward: f64,
    pub mean_r_v: f64,
    pub mean_r_vdot: f64,
    pub mean_abs_eta: f64,
    pub mean_vel_err: f64,
    pub clip_fraction: f64,
    pub kl: f64,
    pub entropy: f64,
}

pub fn write_log_csv(rows: &[LogRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record([
            "iteration",
            "mean_total_reward",
            "mean_r_v",
            "mean_r_vdot",
            "mean_abs_eta",
            "mean_vel_err",
            "clip_fraction",
            "kl",
            "entropy",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Inputs of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSetup {
    pub env: EnvConfig,
    pub clf: ClfConfig,
    pub weights: RewardWeights,
    pub ppo: PpoConfig,
    pub variant: RewardVariant,
}

impl TrainSetup {
    /// Policy and critic before any update.
    pub fn initial_checkpoint(&self) -> Result<Checkpoint> {
        self.ppo.validate()?;
        let env = Env::new(self.env.clone(), &self.clf, self.weights, self.variant)?;
        Ok(Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            variant: self.variant,
            iterations: 0,
            env: self.env.clone(),
            clf: self.clf.clone(),
            weights: self.weights,
            ppo: self.ppo.clone(),
            policy: ActorCritic::new(env.obs_dim(), env.priv_dim(), env.action_dim(), &self.ppo)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub log: Vec<LogRow>,
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone, Copy, Default)]
struct StepTotals {
    steps: usize,
    total: f64,
    r_v: f64,
    r_vdot: f64,
    eta: f64,
    vel_err: f64,
}

impl StepTotals {
    fn add(&mut self, o: &StepTotals) {
        self.steps += o.steps;
        self.total += o.total;
        self.r_v += o.r_v;
        self.r_vdot += o.r_vdot;
        self.eta += o.eta;
        self.vel_err += o.vel_err;
    }
}

struct Worker {
    env: Env,
    rng: ChaCha8Rng,
    seed: u64,
    index: u64,
    episodes: u64,
    obs: Observation,
    priv_obs: PrivilegedObservation,
}

impl Worker {
    fn new(env: Env, seed: u64, index: u64) -> Result<Self> {
        let k = env.config().output_dim();
        let mut w = Self {
            rng: rng::stream(seed, "trainer.worker", index),
            env,
            seed,
            index,
            episodes: 0,
            obs: Observation { values: Vec::new() },
            priv_obs: PrivilegedObservation {
                y_d: vec![0.0; k],
                ydot_d: vec![0.0; k],
                stance: 0.0,
                com_height_scale: 1.0,
            },
        };
        w.start_episode()?;
        Ok(w)
    }

    fn start_episode(&mut self) -> Result<()> {
        let [lo, hi] = self.env.config().command_range;
        let command = if lo < hi { self.rng.random_range(lo..=hi) } else { lo };
        let seed = rng::derive_seed(self.seed, "trainer.episode", (self.index << 32) | self.episodes);
        self.episodes += 1;
        let (obs, priv_obs) = self.env.reset(seed, command)?;
        self.obs = obs;
        self.priv_obs = priv_obs;
        Ok(())
    }

    fn collect(&mut self, ac: &ActorCritic, steps: usize) -> Result<(RolloutBatch, StepTotals)> {
        let mut b = RolloutBatch::default();
        let mut totals = StepTotals::default();
        let priv_vec = |p: &PrivilegedObservation| p.to_vec();
        let mut value = ac.value(&self.obs.values, &priv_vec(&self.priv_obs))?;
        for t in 0..steps {
            let (action, log_prob) = ac.actor.sample(&self.obs.values, &mut self.rng)?;
            let r = self.env.step(&action)?;
            totals.steps += 1;
            totals.total += r.reward.total;
            totals.r_v += r.reward.r_v;
            totals.r_vdot += r.reward.r_vdot;
            totals.eta += r.info.eta_norm;
            totals.vel_err += r.info.vel_err;

            b.obs.push(std::mem::take(&mut self.obs.values));
            b.priv_obs.push(priv_vec(&self.priv_obs));
            b.actions.push(action);
            b.log_probs.push(log_prob);
            b.rewards.push(r.reward.total);
            b.values.push(value);
            b.terminal.push(r.info.terminated);

            let next_value = if r.info.terminated {
                0.0
            } else {
                ac.value(&r.obs.values, &r.priv_obs.to_vec())?
            };
            b.next_values.push(next_value);
            if r.done {
                b.episode_end.push(true);
                self.start_episode()?;
                value = ac.value(&self.obs.values, &priv_vec(&self.priv_obs))?;
            } else {
                b.episode_end.push(t + 1 == steps);
                self.obs = r.obs;
                self.priv_obs = r.priv_obs;
                value = next_value;
            }
        }
        Ok((b, totals))
    }
}

/// Alternates parallel rollout collection and PPO updates.
///
/// Each environment worker owns its RNG stream and results are concatenated
/// in worker order, so the log is a pure function of the setup.
pub fn train(setup: &TrainSetup) -> Result<TrainOutput> {
    train_with(setup, |_| {})
}

/// Like [`train`], calling `on_iteration` after every update.
pub fn train_with(setup: &TrainSetup, mut on_iteration: impl FnMut(&LogRow)) -> Result<TrainOutput> {
    let mut ckpt = setup.initial_checkpoint()?;
    let cfg = &setup.ppo;
    let mut log = Vec::with_capacity(cfg.total_iterations);
    if cfg.total_iterations == 0 {
        return Ok(TrainOutput { log, checkpoint: ckpt });
    }
    let mut workers = (0..cfg.num_envs as u64)
        .map(|i| Worker::new(ckpt.make_env()?, cfg.seed, i))
        .collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(ckpt.policy.num_params(), cfg.learning_rate);

    for iteration in 0..cfg.total_iterations {
        let ac = &ckpt.policy;
        let parts: Vec<Result<(RolloutBatch, StepTotals)>> = workers
            .par_iter_mut()
            .map(|w| w.collect(ac, cfg.rollout_length))
            .collect();
        let mut batch = RolloutBatch::default();
        let mut totals = StepTotals::default();
        for part in parts {
            let (b, t) = part?;
            batch.append(b);
            totals.add(&t);
        }
        batch.finish(cfg.discount, cfg.gae_lambda)?;
        ckpt.policy.value_stat.update(&batch.returns);
        let stats = ppo_update(&mut ckpt.policy, &mut adam, &batch, cfg, iteration as u64)?;

        let n = totals.steps as f64;
        let row = LogRow {
            iteration,
            mean_total_reward: totals.total / n,
            mean_r_v: totals.r_v / n,
            mean_r_vdot: totals.r_vdot / n,
            mean_abs_eta: totals.eta / n,
            mean_vel_err: totals.vel_err / n,
            clip_fraction: stats.clip_fraction,
            kl: stats.kl,
            entropy: stats.entropy,
        };
        on_iteration(&row);
        log.push(row);
        ckpt.iterations = iteration + 1;
    }
    Ok(TrainOutput { log, checkpoint: ckpt })
}

/// Deterministic roll-out summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub command: f64,
    pub seed: u64,
    pub com_height_scale: f64,
    pub steps: u64,
    pub terminated: bool,
    /// Mean `‖η‖` over the final [`EVAL_WINDOW`] ticks of the episode length;
    /// after an early termination the last error is held.
    pub tracking_error: f64,
    pub mean_eta: f64,
    pub mean_vel_err: f64,
    pub mean_total_reward: f64,
}

/// Runs one episode with the policy mean.
pub fn evaluate(
    policy: &GaussianPolicy,
    env: &mut Env,
    seed: u64,
    command: f64,
    com_height_scale: Option<f64>,
    mut trajectory: Option<&mut Trajectory>,
) -> Result<EpisodeSummary> {
    let (mut obs, priv_obs) = env.reset_with(seed, command, com_height_scale)?;
    let len = env.config().episode_len as usize;
    let mut errors = Vec::with_capacity(len);
    let (mut vel, mut total) = (0.0, 0.0);
    let mut terminated = false;
    while !env.is_done() {
        let action = policy.mean_action(&obs.values)?;
        let r = env.step(&action)?;
        if let Some(t) = trajectory.as_deref_mut() {
            t.record(env, &action, &r);
        }
        errors.push(r.info.eta_norm);
        vel += r.info.vel_err;
        total += r.reward.total;
        terminated = r.info.terminated;
        obs = r.obs;
    }
    let steps = errors.len();
    let mean_eta = errors.iter().sum::<f64>() / steps as f64;
    let last = *errors.last().expect("at least one step");
    errors.resize(len.max(steps), last);
    let window = EVAL_WINDOW.min(errors.len());
    let tracking_error = errors[errors.len() - window..].iter().sum::<f64>() / window as f64;
    Ok(EpisodeSummary {
        command,
        seed,
        com_height_scale: priv_obs.com_height_scale,
        steps: steps as u64,
        terminated,
        tracking_error,
        mean_eta,
        mean_vel_err: vel / steps as f64,
        mean_total_reward: total / steps as f64,
    })
}
