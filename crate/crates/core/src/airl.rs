//! Adversarial IRL baseline.
//!
//! The discriminator is `D(s,a) = exp(f(s,a)) / (exp(f(s,a)) + pi(a|s))`,
//! evaluated as `sigmoid(f - log pi)`. The reward network `f` sees the state
//! concatenated with the action.

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::{AirlConfig, PolicyConfig};
use crate::envs::EnvModel;
use crate::numcore::{
    derive_seed, rng_from_seed, stable_mean, AdamConfig, AdamState, ForwardCache, MlpParams,
    OutputInit, Rng,
};
use crate::policy::{
    collect_rollouts, improve_policy, Policy, PolicyOptimizer, PolicyUpdateConfig, RewardField,
    Trajectory, Transition,
};
use crate::{Error, Result};

/// Seed stream labels shared with the multi-strategy trainer so that a
/// single-strategy run consumes randomness identically.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_TRAIN: u64 = 2;

pub(crate) fn strategy_stream(seed: u64, strategy: usize) -> Rng {
    rng_from_seed(derive_seed(derive_seed(seed, STREAM_TRAIN), strategy as u64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardNet {
    pub net: MlpParams,
}

impl RewardNet {
    pub fn new(feature_dim: usize, hidden: &[usize], init: OutputInit, rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![feature_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Ok(Self {
            net: MlpParams::new(&sizes, init, rng)?,
        })
    }

    pub fn from_params(net: MlpParams) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::Config(format!(
                "reward network must have scalar output, has {}",
                net.output_dim()
            )));
        }
        Ok(Self { net })
    }

    pub fn eval(&self, features: &[f64]) -> Result<f64> {
        self.net.forward_scalar(features)
    }

    pub fn eval_sa(&self, env: &EnvModel, state: &[f64], action: &[f64]) -> Result<f64> {
        self.eval(&env.reward_features(state, action))
    }
}

/// Numerically stable `1 / (1 + exp(-x))`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn discriminator_prob(f_value: f64, log_pi: f64) -> f64 {
    sigmoid(f_value - log_pi)
}

/// Reward-network inputs and current-policy log-densities for a set of
/// transitions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiscBatch {
    pub features: Vec<Vec<f64>>,
    pub log_pi: Vec<f64>,
}

impl DiscBatch {
    /// `log_pi` is evaluated under `policy` (the current generator), for
    /// expert and generated transitions alike.
    pub fn from_transitions<'a>(
        env: &EnvModel,
        policy: &Policy,
        transitions: impl IntoIterator<Item = &'a Transition>,
    ) -> Result<Self> {
        let mut b = DiscBatch::default();
        for tr in transitions {
            b.features.push(env.reward_features(&tr.state, &tr.action));
            b.log_pi.push(policy.log_prob(&env.observation(&tr.state), &tr.action)?);
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// `-E_expert[log D] - E_gen[log(1 - D)]` and its gradient with respect to
/// the reward parameters.
pub fn airl_discriminator_loss(
    reward: &RewardNet,
    expert: &DiscBatch,
    gen: &DiscBatch,
) -> Result<(f64, MlpParams)> {
    if expert.is_empty() || gen.is_empty() {
        return Err(Error::Usage("discriminator batches must be non-empty".into()));
    }
    let mut grad = reward.net.zeros_like();
    let mut cache = ForwardCache::default();
    let mut terms_e = Vec::with_capacity(expert.len());
    let ne = expert.len() as f64;
    for (x, lp) in expert.features.iter().zip(&expert.log_pi) {
        reward.net.forward_cached(x, &mut cache)?;
        let logit = cache.output()[0] - lp;
        // -log D = softplus(-logit); d/df = D - 1
        terms_e.push(softplus(-logit));
        reward
            .net
            .backward_into(&cache, &[(sigmoid(logit) - 1.0) / ne], &mut grad)?;
    }
    let mut terms_g = Vec::with_capacity(gen.len());
    let ng = gen.len() as f64;
    for (x, lp) in gen.features.iter().zip(&gen.log_pi) {
        reward.net.forward_cached(x, &mut cache)?;
        let logit = cache.output()[0] - lp;
        // -log(1 - D) = softplus(logit); d/df = D
        terms_g.push(softplus(logit));
        reward.net.backward_into(&cache, &[sigmoid(logit) / ng], &mut grad)?;
    }
    let loss = stable_mean(&terms_e) + stable_mean(&terms_g);
    if !loss.is_finite() {
        return Err(Error::Training(format!(
            "non-finite discriminator loss (expert {}, generated {})",
            expert.len(),
            gen.len()
        )));
    }
    Ok((loss, grad))
}

/// Draws `k` demonstrations without replacement when possible.
pub(crate) fn sample_demos<'a>(demos: &'a [Trajectory], k: usize, rng: &mut Rng) -> Vec<&'a Trajectory> {
    if k <= demos.len() {
        sample_indices(rng, demos.len(), k)
            .into_iter()
            .map(|i| &demos[i])
            .collect()
    } else {
        (0..k).map(|_| &demos[rng.random_range(0..demos.len())]).collect()
    }
}

/// `n` transitions drawn uniformly with replacement.
pub(crate) fn sample_transitions<'a>(
    trajs: &[&'a Trajectory],
    n: usize,
    rng: &mut Rng,
) -> Vec<&'a Transition> {
    let total: usize = trajs.iter().map(|t| t.len()).sum();
    (0..n)
        .map(|_| {
            let mut idx = rng.random_range(0..total);
            for t in trajs {
                if idx < t.len() {
                    return &t.transitions[idx];
                }
                idx -= t.len();
            }
            unreachable!("index within total")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirlLogRow {
    pub iteration: usize,
    pub disc_loss: f64,
    pub mean_pseudo_reward: f64,
    pub mean_task_reward: f64,
}

#[derive(Debug, Clone)]
pub struct AirlOutcome {
    pub reward: RewardNet,
    pub policy: Policy,
    pub log: Vec<AirlLogRow>,
}

/// Task (or AIRL) reward network followed by `n` policies, all drawn from the
/// init stream of `seed`.
pub(crate) fn init_reward_and_policies(
    env: &EnvModel,
    hidden: &[usize],
    policy_cfg: &PolicyConfig,
    n: usize,
    seed: u64,
) -> Result<(RewardNet, Vec<Policy>)> {
    let mut init = rng_from_seed(derive_seed(seed, STREAM_INIT));
    let reward = RewardNet::new(env.feature_dim(), hidden, OutputInit::Scaled(0.1), &mut init)?;
    let policies = (0..n)
        .map(|_| Policy::new(env, &policy_cfg.hidden_sizes, policy_cfg.init_log_std, &mut init))
        .collect::<Result<Vec<_>>>()?;
    Ok((reward, policies))
}

pub(crate) fn assign_rewards(
    env: &EnvModel,
    trajs: &mut [Trajectory],
    f: impl Fn(&[f64]) -> Result<f64>,
) -> Result<()> {
    for t in trajs {
        for tr in &mut t.transitions {
            tr.pseudo_reward = Some(f(&env.reward_features(&tr.state, &tr.action))?);
        }
    }
    Ok(())
}

/// Alternates discriminator steps with policy updates on the pseudo-reward
/// `f(s,a)`.
pub fn airl_train(
    env: &EnvModel,
    demos: &[Trajectory],
    cfg: &AirlConfig,
    policy_cfg: &PolicyConfig,
    rng: &mut Rng,
) -> Result<AirlOutcome> {
    if demos.is_empty() || demos.iter().all(|d| d.is_empty()) {
        return Err(Error::Usage("airl_train needs at least one demonstration".into()));
    }
    if cfg.k_rollouts == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("airl.k_rollouts and airl.batch_size must be >= 1".into()));
    }
    let seed: u64 = rng.random();
    let (mut reward, mut policies) =
        init_reward_and_policies(env, &cfg.hidden_sizes, policy_cfg, 1, seed)?;
    let mut policy = policies.remove(0);
    let mut train_rng = strategy_stream(seed, 0);
    let mut adam = AdamState::new(&reward.net, AdamConfig::with_lr(cfg.lr));
    let mut popt = PolicyOptimizer::new(&policy, policy_cfg.lr);
    let update_cfg: PolicyUpdateConfig = policy_cfg.update();
    let mut log = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let mut gen = collect_rollouts(&policy, env, cfg.k_rollouts, &mut train_rng)?;
        let expert = sample_demos(demos, cfg.k_rollouts, &mut train_rng);
        let mut disc_loss = 0.0;
        for _ in 0..cfg.disc_steps {
            let gen_refs: Vec<&Trajectory> = gen.iter().collect();
            let e = sample_transitions(&expert, cfg.batch_size, &mut train_rng);
            let g = sample_transitions(&gen_refs, cfg.batch_size, &mut train_rng);
            let eb = DiscBatch::from_transitions(env, &policy, e)?;
            let gb = DiscBatch::from_transitions(env, &policy, g)?;
            let (loss, grad) = airl_discriminator_loss(&reward, &eb, &gb)?;
            adam.step(&mut reward.net, &grad)?;
            disc_loss = loss;
        }
        assign_rewards(env, &mut gen, |x| reward.eval(x))?;
        improve_policy(&mut policy, &mut popt, env, &gen, RewardField::Pseudo, &update_cfg)?;
        let n: usize = gen.iter().map(|t| t.len()).sum();
        let mean_pseudo = gen
            .iter()
            .flat_map(|t| &t.transitions)
            .map(|tr| tr.pseudo_reward.unwrap_or(0.0))
            .sum::<f64>()
            / n as f64;
        let mean_task = gen
            .iter()
            .flat_map(|t| &t.transitions)
            .map(|tr| tr.task_reward)
            .sum::<f64>()
            / n as f64;
        log.push(AirlLogRow {
            iteration: it,
            disc_loss,
            mean_pseudo_reward: mean_pseudo,
            mean_task_reward: mean_task,
        });
        if !reward.net.is_finite() {
            return Err(Error::Training(format!(
                "reward parameters non-finite after iteration {it}"
            )));
        }
    }
    Ok(AirlOutcome {
        reward,
        policy,
        log,
    })
}
