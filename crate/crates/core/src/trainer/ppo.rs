//! Gaussian actor, privileged critic, GAE and the clipped-surrogate update.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpCache};
use crate::error::{Error, Result};
use crate::rng;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_ratio: f64,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    pub gae_lambda: f64,
    pub discount: f64,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    /// Steps collected per environment per iteration.
    pub rollout_length: usize,
    pub num_envs: usize,
    pub total_iterations: usize,
    pub seed: u64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_ratio: 0.2,
            entropy_coeff: 0.005,
            value_coeff: 0.5,
            gae_lambda: 0.95,
            discount: 0.99,
            learning_rate: 3e-4,
            max_grad_norm: 1.0,
            epochs_per_update: 5,
            minibatch_size: 256,
            rollout_length: 64,
            num_envs: 8,
            total_iterations: 200,
            seed: 0,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            init_log_std: -0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::validation("ppo config", reason.to_string()));
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip_ratio must lie in (0, 1)");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0 && self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("discount and gae_lambda must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.max_grad_norm > 0.0) {
            return bad("learning_rate and max_grad_norm must be positive");
        }
        if !(self.entropy_coeff >= 0.0 && self.value_coeff >= 0.0 && self.init_log_std.is_finite()) {
            return bad("coefficients must be non-negative and finite");
        }
        if self.epochs_per_update == 0 || self.minibatch_size == 0 || self.rollout_length == 0 || self.num_envs == 0 {
            return bad("epochs, minibatch_size, rollout_length and num_envs must be positive");
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }
}

/// Diagonal Gaussian policy with a state-independent log-std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Vec<f64>,
}

impl GaussianPolicy {
    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.mean.forward(obs)
    }

    pub fn sample<R: Rng>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let mu = self.mean.forward(obs)?;
        let action: Vec<f64> = mu
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lp = gaussian_log_prob(&mu, &self.log_std, &action);
        Ok((action, lp))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        if action.len() != self.action_dim() {
            return Err(Error::Dimension {
                what: "action",
                expected: self.action_dim(),
                got: action.len(),
            });
        }
        Ok(gaussian_log_prob(&self.mean.forward(obs)?, &self.log_std, action))
    }

    /// `Σ log σ + ½ k (1 + ln 2π)`
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().sum::<f64>() + 0.5 * self.action_dim() as f64 * (1.0 + LOG_2PI)
    }

    /// `∇ log π(a | o)` split into (mean-network params, log-std).
    pub fn log_prob_grad(&self, obs: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mu, cache) = self.mean.forward_cached(obs)?;
        let mut g_net = vec![0.0; self.mean.num_params()];
        let mut g_ls = vec![0.0; self.action_dim()];
        self.accumulate_log_prob_grad(&mu, &cache, action, 1.0, &mut g_net, &mut g_ls);
        Ok((g_net, g_ls))
    }

    fn accumulate_log_prob_grad(
        &self,
        mu: &[f64],
        cache: &MlpCache,
        action: &[f64],
        scale: f64,
        g_net: &mut [f64],
        g_ls: &mut [f64],
    ) {
        let mut g_mu = vec![0.0; mu.len()];
        for i in 0..mu.len() {
            let sigma = self.log_std[i].exp();
            let z = (action[i] - mu[i]) / sigma;
            g_mu[i] = scale * z / sigma;
            g_ls[i] += scale * (z * z - 1.0);
        }
        self.mean.backward(cache, &g_mu, g_net);
    }
}

pub fn gaussian_log_prob(mu: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mu.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * LOG_2PI
        })
        .sum()
}

/// Running mean and variance of the value targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStat {
    pub count: f64,
    pub mean: f64,
    pub var: f64,
}

impl Default for RunningStat {
    fn default() -> Self {
        Self {
            count: 0.0,
            mean: 0.0,
            var: 1.0,
        }
    }
}

impl RunningStat {
    pub fn std(&self) -> f64 {
        self.var.sqrt().max(1e-4)
    }

    pub fn update(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        if self.count == 0.0 {
            *self = Self { count: n, mean, var };
            return;
        }
        let total = self.count + n;
        let delta = mean - self.mean;
        let m2 = self.var * self.count + var * n + delta * delta * self.count * n / total;
        self.mean += delta * n / total;
        self.var = m2 / total;
        self.count = total;
    }
}

/// Actor and privileged critic; the critic predicts normalized returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub actor: GaussianPolicy,
    pub critic: Mlp,
    pub value_stat: RunningStat,
}

impl ActorCritic {
    pub fn new(obs_dim: usize, priv_dim: usize, action_dim: usize, cfg: &PpoConfig) -> Result<Self> {
        let mut r = rng::stream(cfg.seed, "trainer.init", 0);
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend(&cfg.actor_hidden);
        actor_sizes.push(action_dim);
        let mut critic_sizes = vec![obs_dim + priv_dim];
        critic_sizes.extend(&cfg.critic_hidden);
        critic_sizes.push(1);
        Ok(Self {
            actor: GaussianPolicy {
                mean: Mlp::init(&actor_sizes, 0.01, &mut r)?,
                log_std: vec![cfg.init_log_std; action_dim],
            },
            critic: Mlp::init(&critic_sizes, 1.0, &mut r)?,
            value_stat: RunningStat::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.actor.mean.validate()?;
        self.critic.validate()?;
        if self.actor.log_std.len() != self.actor.mean.output_dim() {
            return Err(Error::Dimension {
                what: "log_std",
                expected: self.actor.mean.output_dim(),
                got: self.actor.log_std.len(),
            });
        }
        if self.critic.output_dim() != 1 {
            return Err(Error::Dimension {
                what: "critic output",
                expected: 1,
                got: self.critic.output_dim(),
            });
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.mean.input_dim()
    }

    pub fn priv_dim(&self) -> usize {
        self.critic.input_dim() - self.obs_dim()
    }

    pub fn critic_input(obs: &[f64], priv_obs: &[f64]) -> Vec<f64> {
        obs.iter().chain(priv_obs).copied().collect()
    }

    /// Raw critic output (normalized units).
    pub fn value_normalized(&self, obs: &[f64], priv_obs: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(&Self::critic_input(obs, priv_obs))?[0])
    }

    pub fn value(&self, obs: &[f64], priv_obs: &[f64]) -> Result<f64> {
        Ok(self.value_stat.mean + self.value_stat.std() * self.value_normalized(obs, priv_obs)?)
    }

    pub fn num_params(&self) -> usize {
        self.actor.mean.num_params() + self.actor.log_std.len() + self.critic.num_params()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend(self.actor.mean.params());
        v.extend(&self.actor.log_std);
        v.extend(self.critic.params());
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let a = self.actor.mean.num_params();
        let k = self.actor.log_std.len();
        self.actor.mean.params_mut().copy_from_slice(&flat[..a]);
        self.actor.log_std.copy_from_slice(&flat[a..a + k]);
        self.critic.params_mut().copy_from_slice(&flat[a + k..]);
    }
}

/// GAE backward recursion.
///
/// `next_values[t]` is the value of the observation after step `t`; it is
/// ignored when `terminal[t]`. `episode_end[t]` (termination, truncation or
/// the end of a rollout segment) stops the advantage from leaking across
/// episodes.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    terminal: &[bool],
    episode_end: &[bool],
    discount: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    for (what, len) in [
        ("values", values.len()),
        ("next_values", next_values.len()),
        ("terminal", terminal.len()),
        ("episode_end", episode_end.len()),
    ] {
        if len != n {
            return Err(Error::Dimension {
                what,
                expected: n,
                got: len,
            });
        }
    }
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        if episode_end[t] {
            carry = 0.0;
        }
        let next = if terminal[t] { 0.0 } else { next_values[t] };
        let delta = rewards[t] + discount * next - values[t];
        carry = delta + discount * gae_lambda * carry;
        adv[t] = carry;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shift to zero mean and scale to unit (population) std; a constant batch becomes zeros.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
    for a in adv.iter_mut() {
        *a = (*a - mean) * scale;
    }
}

/// One iteration's worth of transitions, concatenated env by env.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub obs: Vec<Vec<f64>>,
    pub priv_obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub next_values: Vec<f64>,
    pub terminal: Vec<bool>,
    pub episode_end: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn append(&mut self, mut other: RolloutBatch) {
        self.obs.append(&mut other.obs);
        self.priv_obs.append(&mut other.priv_obs);
        self.actions.append(&mut other.actions);
        self.log_probs.append(&mut other.log_probs);
        self.rewards.append(&mut other.rewards);
        self.values.append(&mut other.values);
        self.next_values.append(&mut other.next_values);
        self.terminal.append(&mut other.terminal);
        self.episode_end.append(&mut other.episode_end);
        self.advantages.append(&mut other.advantages);
        self.returns.append(&mut other.returns);
    }

    /// Fills advantages (normalized) and returns.
    pub fn finish(&mut self, discount: f64, gae_lambda: f64) -> Result<()> {
        let (mut adv, ret) = compute_gae(
            &self.rewards,
            &self.values,
            &self.next_values,
            &self.terminal,
            &self.episode_end,
            discount,
            gae_lambda,
        )?;
        normalize_advantages(&mut adv);
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }
}

/// First-order adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MinibatchLoss {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    pub clipped: usize,
    /// Sum over samples of `(ρ − 1) − ln ρ`.
    pub kl_sum: f64,
}

/// Loss and flat gradient (actor | log-std | critic) over the given samples.
pub fn minibatch_loss_grad(
    ac: &ActorCritic,
    batch: &RolloutBatch,
    idx: &[usize],
    cfg: &PpoConfig,
) -> Result<(MinibatchLoss, Vec<f64>)> {
    let a_n = ac.actor.mean.num_params();
    let k = ac.actor.log_std.len();
    let mut grad = vec![0.0; ac.num_params()];
    let (g_actor, rest) = grad.split_at_mut(a_n);
    let (g_ls, g_critic) = rest.split_at_mut(k);
    let m = idx.len() as f64;
    let eps = cfg.clip_ratio;
    let mut out = MinibatchLoss::default();
    let stat = &ac.value_stat;
    for &j in idx {
        let (mu, cache) = ac.actor.mean.forward_cached(&batch.obs[j])?;
        let logp = gaussian_log_prob(&mu, &ac.actor.log_std, &batch.actions[j]);
        let ratio = (logp - batch.log_probs[j]).exp();
        let adv = batch.advantages[j];
        let surr1 = ratio * adv;
        let surr2 = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        out.policy -= surr1.min(surr2) / m;
        if (ratio - 1.0).abs() > eps {
            out.clipped += 1;
        }
        out.kl_sum += (ratio - 1.0) - (logp - batch.log_probs[j]);
        if surr1 <= surr2 {
            ac.actor
                .accumulate_log_prob_grad(&mu, &cache, &batch.actions[j], -ratio * adv / m, g_actor, g_ls);
        }

        let input = ActorCritic::critic_input(&batch.obs[j], &batch.priv_obs[j]);
        let (v, c_cache) = ac.critic.forward_cached(&input)?;
        let target = (batch.returns[j] - stat.mean) / stat.std();
        let diff = v[0] - target;
        out.value += diff * diff / m;
        ac.critic
            .backward(&c_cache, &[2.0 * cfg.value_coeff * diff / m], g_critic);
    }
    out.entropy = ac.actor.entropy();
    for g in g_ls.iter_mut() {
        *g -= cfg.entropy_coeff;
    }
    out.total = out.policy + cfg.value_coeff * out.value - cfg.entropy_coeff * out.entropy;
    Ok((out, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub minibatches: usize,
}

/// Runs `epochs_per_update` passes of shuffled minibatches over `batch`.
///
/// On a non-finite loss or gradient the parameters are restored and the
/// diagnostics gathered so far are returned inside the error.
pub fn ppo_update(
    ac: &mut ActorCritic,
    adam: &mut Adam,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    iteration: u64,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::validation("rollout batch", "empty"));
    }
    let snapshot = ac.clone();
    let adam_snapshot = adam.clone();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut shuffle = rng::stream(cfg.seed, "ppo.shuffle", iteration);
    let mut stats = UpdateStats::default();
    let mut samples = 0usize;
    let mut clipped = 0usize;
    let mut kl_sum = 0.0;
    let mut flat = ac.flat_params();
    for _ in 0..cfg.epochs_per_update {
        order.shuffle(&mut shuffle);
        for idx in order.chunks(cfg.minibatch_size) {
            let (loss, mut grad) = minibatch_loss_grad(ac, batch, idx, cfg)?;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !loss.total.is_finite() || !norm.is_finite() {
                *ac = snapshot;
                *adam = adam_snapshot;
                return Err(Error::NonFinite(format!(
                    "ppo update at iteration {iteration}: loss {:?}, grad norm {norm}, after {} minibatches",
                    loss, stats.minibatches
                )));
            }
            if norm > cfg.max_grad_norm {
                let s = cfg.max_grad_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam.step(&mut flat, &grad);
            ac.set_flat_params(&flat);

            stats.policy_loss += loss.policy;
            stats.value_loss += loss.value;
            stats.entropy = loss.entropy;
            stats.minibatches += 1;
            samples += idx.len();
            clipped += loss.clipped;
            kl_sum += loss.kl_sum;
        }
    }
    let nb = stats.minibatches as f64;
    stats.policy_loss /= nb;
    stats.value_loss /= nb;
    stats.entropy = ac.actor.entropy();
    stats.clip_fraction = clipped as f64 / samples as f64;
    stats.kl = kl_sum / samples as f64;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// `−½ k ln 2π − Σ log σ`
    fn log_prob_at_mode(log_std: &[f64]) -> f64 {
        -0.5 * log_std.len() as f64 * (2.0 * PI).ln() - log_std.iter().sum::<f64>()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
    }

    fn small_ac(seed: u64) -> ActorCritic {
        let cfg = PpoConfig {
            seed,
            actor_hidden: vec![8, 6],
            critic_hidden: vec![7],
            ..PpoConfig::default()
        };
        ActorCritic::new(4, 2, 2, &cfg).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_mean() {
        let p = GaussianPolicy {
            mean: Mlp::zeros(&[3, 5, 2]).unwrap(),
            log_std: vec![0.1, -0.3],
        };
        assert_eq!(p.mean_action(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let lp = p.log_prob(&[1.0, 2.0, 3.0], &[0.0, 0.0]).unwrap();
        assert!((lp - log_prob_at_mode(&p.log_std)).abs() < 1e-14);
        assert!((lp - (-(2.0 * PI).ln() - (0.1 - 0.3))).abs() < 1e-14);
        assert!(p.log_prob(&[1.0], &[0.0, 0.0]).is_err());
        assert!(p.log_prob(&[1.0, 2.0, 3.0], &[0.0]).is_err());
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let ac = small_ac(11);
        let p = &ac.actor;
        let obs = [0.2, -0.4, 0.9, 0.1];
        let act = [0.3, -0.2];
        let (g_net, g_ls) = p.log_prob_grad(&obs, &act).unwrap();
        let h = 1e-5;
        for i in 0..p.mean.num_params() {
            let mut q = p.clone();
            q.mean.params_mut()[i] += h;
            let up = q.log_prob(&obs, &act).unwrap();
            q.mean.params_mut()[i] -= 2.0 * h;
            let dn = q.log_prob(&obs, &act).unwrap();
            assert!(rel_err((up - dn) / (2.0 * h), g_net[i]) < 1e-4, "param {i}");
        }
        for i in 0..2 {
            let mut q = p.clone();
            q.log_std[i] += h;
            let up = q.log_prob(&obs, &act).unwrap();
            q.log_std[i] -= 2.0 * h;
            let dn = q.log_prob(&obs, &act).unwrap();
            assert!(rel_err((up - dn) / (2.0 * h), g_ls[i]) < 1e-4);
        }
    }

    #[test]
    fn entropy_matches_sampled_estimate() {
        let ac = small_ac(2);
        let p = GaussianPolicy {
            log_std: vec![-0.4, 0.3],
            ..ac.actor
        };
        let obs = [0.1, 0.2, 0.3, 0.4];
        let mut r = rng::stream(5, "test.entropy", 0);
        let n = 20_000;
        let samples: Vec<f64> = (0..n).map(|_| -p.sample(&obs, &mut r).unwrap().1).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - p.entropy()).abs() < 3.0 * se, "{mean} vs {}", p.entropy());
    }

    #[test]
    fn gae_telescopes_without_discount() {
        let r = [1.0, 2.0, 3.0, 4.0];
        let z = [0.0; 4];
        let end = [false, false, false, true];
        let (adv, ret) = compute_gae(&r, &z, &z, &[false; 4], &end, 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![10.0, 9.0, 7.0, 4.0]);
        assert_eq!(ret, adv);
    }

    #[test]
    fn gae_zero_lambda_is_td_error() {
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.1, -0.2];
        let nv = [0.1, -0.2, 0.7];
        let (adv, _) = compute_gae(&r, &v, &nv, &[false; 3], &[false, false, true], 0.9, 0.0).unwrap();
        for t in 0..3 {
            assert!((adv[t] - (r[t] + 0.9 * nv[t] - v[t])).abs() < 1e-15);
        }
    }

    #[test]
    fn gae_bellman_fixed_point() {
        let gamma = 0.99;
        let n = 50;
        let v = vec![1.0 / (1.0 - gamma); n];
        let mut end = vec![false; n];
        end[n - 1] = true;
        let (adv, _) = compute_gae(&vec![1.0; n], &v, &v, &vec![false; n], &end, gamma, 0.95).unwrap();
        assert!(adv.iter().all(|a| a.abs() < 1e-9));
    }

    #[test]
    fn gae_respects_boundaries() {
        let r = [1.0, 1.0, 1.0, 1.0];
        let z = [0.0; 4];
        let term = [false, true, false, false];
        let end = [false, true, false, true];
        // The terminal next-value must be ignored; the segment end bootstraps 5.
        let nv = [0.0, 100.0, 0.0, 5.0];
        let (adv, _) = compute_gae(&r, &z, &nv, &term, &end, 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![2.0, 1.0, 7.0, 6.0]);
        assert!(compute_gae(&r, &z[..3], &z, &term, &end, 1.0, 1.0).is_err());
    }

    #[test]
    fn advantage_normalization() {
        let mut a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.7).sin() * 3.0 + 2.0).collect();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6);
        let mut c = vec![4.0; 5];
        normalize_advantages(&mut c);
        assert_eq!(c, vec![0.0; 5]);
    }

    #[test]
    fn running_stat_matches_pooled_moments() {
        let xs: Vec<f64> = (0..40).map(|i| (i as f64).sqrt() - 2.0).collect();
        let mut s = RunningStat::default();
        s.update(&xs[..13]);
        s.update(&xs[13..]);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((s.mean - mean).abs() < 1e-12 && (s.var - var).abs() < 1e-12);
    }

    fn toy_batch(ac: &ActorCritic, n: usize, seed: u64) -> RolloutBatch {
        let mut r = rng::stream(seed, "test.batch", 0);
        let mut b = RolloutBatch::default();
        for i in 0..n {
            let obs: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
            let priv_obs: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
            let (a, lp) = ac.actor.sample(&obs, &mut r).unwrap();
            b.obs.push(obs);
            b.priv_obs.push(priv_obs);
            b.actions.push(a);
            b.log_probs.push(lp);
            b.rewards.push(r.random_range(-1.0..1.0));
            b.values.push(0.0);
            b.next_values.push(0.0);
            b.terminal.push(false);
            b.episode_end.push(i + 1 == n);
        }
        b.finish(0.99, 0.95).unwrap();
        b
    }

    #[test]
    fn minibatch_gradient_matches_finite_differences() {
        let ac = small_ac(4);
        let mut batch = toy_batch(&ac, 12, 1);
        // Move the stored log-probs so that some samples sit in the clipped region.
        for (i, lp) in batch.log_probs.iter_mut().enumerate() {
            *lp += [0.0, 0.5, -0.5][i % 3];
        }
        let cfg = PpoConfig::default();
        let idx: Vec<usize> = (0..12).collect();
        let (loss, grad) = minibatch_loss_grad(&ac, &batch, &idx, &cfg).unwrap();
        assert!(loss.clipped > 0);
        let base = ac.flat_params();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut p = ac.clone();
            let mut x = base.clone();
            x[i] += h;
            p.set_flat_params(&x);
            let up = minibatch_loss_grad(&p, &batch, &idx, &cfg).unwrap().0.total;
            x[i] -= 2.0 * h;
            p.set_flat_params(&x);
            let dn = minibatch_loss_grad(&p, &batch, &idx, &cfg).unwrap().0.total;
            assert!(rel_err((up - dn) / (2.0 * h), grad[i]) < 1e-4, "param {i}: {} vs {}", (up - dn) / (2.0 * h), grad[i]);
        }
    }

    #[test]
    fn unit_ratio_gives_vanilla_policy_gradient() {
        let ac = small_ac(6);
        let batch = toy_batch(&ac, 8, 2);
        let cfg = PpoConfig {
            value_coeff: 0.0,
            entropy_coeff: 0.0,
            ..PpoConfig::default()
        };
        let idx: Vec<usize> = (0..8).collect();
        let (_, grad) = minibatch_loss_grad(&ac, &batch, &idx, &cfg).unwrap();
        let mut pg = vec![0.0; ac.actor.mean.num_params()];
        for j in 0..8 {
            let (g, _) = ac.actor.log_prob_grad(&batch.obs[j], &batch.actions[j]).unwrap();
            for (p, gi) in pg.iter_mut().zip(g) {
                *p -= batch.advantages[j] * gi / 8.0;
            }
        }
        for (a, b) in pg.iter().zip(&grad) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clipped_positive_advantage_has_no_policy_gradient() {
        let ac = small_ac(7);
        let mut batch = toy_batch(&ac, 1, 3);
        batch.advantages[0] = 1.0;
        batch.log_probs[0] -= 1.0; // ρ = e > 1 + ε
        let cfg = PpoConfig {
            value_coeff: 0.0,
            entropy_coeff: 0.0,
            ..PpoConfig::default()
        };
        let (loss, grad) = minibatch_loss_grad(&ac, &batch, &[0], &cfg).unwrap();
        assert_eq!(loss.clipped, 1);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn one_small_step_decreases_loss() {
        let mut ac = small_ac(8);
        let batch = toy_batch(&ac, 1, 4);
        let cfg = PpoConfig {
            learning_rate: 1e-4,
            epochs_per_update: 1,
            minibatch_size: 1,
            ..PpoConfig::default()
        };
        let before = minibatch_loss_grad(&ac, &batch, &[0], &cfg).unwrap().0.total;
        let mut adam = Adam::new(ac.num_params(), cfg.learning_rate);
        let stats = ppo_update(&mut ac, &mut adam, &batch, &cfg, 0).unwrap();
        let after = minibatch_loss_grad(&ac, &batch, &[0], &cfg).unwrap().0.total;
        assert!(after < before, "{after} ≥ {before}");
        assert!((0.0..=1.0).contains(&stats.clip_fraction));
    }

    #[test]
    fn non_finite_update_is_rejected_and_rolled_back() {
        let mut ac = small_ac(9);
        let mut batch = toy_batch(&ac, 4, 5);
        batch.returns[2] = f64::NAN;
        let cfg = PpoConfig::default();
        let before = ac.clone();
        let mut adam = Adam::new(ac.num_params(), cfg.learning_rate);
        assert!(matches!(ppo_update(&mut ac, &mut adam, &batch, &cfg, 0), Err(Error::NonFinite(_))));
        assert_eq!(ac, before);
        assert!(ppo_update(&mut ac, &mut adam, &RolloutBatch::default(), &cfg, 0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        assert!(PpoConfig { clip_ratio: 1.0, ..PpoConfig::default() }.validate().is_err());
        assert!(PpoConfig { discount: 0.0, ..PpoConfig::default() }.validate().is_err());
        assert!(PpoConfig { num_envs: 0, ..PpoConfig::default() }.validate().is_err());
    }
}
