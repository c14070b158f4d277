//! Synthesis of heterogeneous demonstrations.
//!
//! N policies are trained on `task + weight * diversity`, where the diversity
//! term is either the DIAYN skill-posterior reward `log q(z|s) - log p(z)` or
//! the summed KL divergence from the other strategies' action distributions
//! at the same state. The same diversity values are written onto the final
//! demonstrations as the ground-truth strategy preference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::airl::strategy_stream;
use crate::config::{DiversityConfig, PolicyConfig};
use crate::envs::{ActionSpace, EnvModel};
use crate::numcore::{
    derive_seed, log_softmax, rng_from_seed, AdamConfig, AdamState, ForwardCache, MlpParams,
    OutputInit, Rng,
};
use crate::policy::{
    collect_rollouts, improve_policy, mean_task_return, ActionDist, Policy, PolicyOptimizer,
    PolicyUpdateConfig, RewardField, Trajectory,
};
use crate::{Error, Result};

pub use crate::config::DiversityMode;

/// `q(z|s)` over `n` skills plus the prior `p(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillClassifier {
    pub net: MlpParams,
    pub prior: Vec<f64>,
}

impl SkillClassifier {
    /// Uniform prior.
    pub fn new(obs_dim: usize, n: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("skill classifier needs n >= 2, got {n}")));
        }
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(n);
        Ok(Self {
            net: MlpParams::new(&sizes, OutputInit::Scaled(0.1), rng)?,
            prior: vec![1.0 / n as f64; n],
        })
    }

    pub fn with_prior(net: MlpParams, prior: Vec<f64>) -> Result<Self> {
        let total: f64 = prior.iter().sum();
        if prior.len() != net.output_dim()
            || prior.len() < 2
            || prior.iter().any(|p| !(*p > 0.0))
            || (total - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(
                "classifier prior must be a positive probability vector matching the output".into(),
            ));
        }
        Ok(Self { net, prior })
    }

    pub fn n_skills(&self) -> usize {
        self.prior.len()
    }

    pub fn log_posterior(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(log_softmax(&self.net.forward(obs)?))
    }

    pub fn predict(&self, obs: &[f64]) -> Result<usize> {
        let lp = self.log_posterior(obs)?;
        Ok(argmax(&lp))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn check_skill(z: usize, n: usize) -> Result<()> {
    if z >= n {
        return Err(Error::IndexOutOfRange {
            what: "strategy index",
            index: z,
            len: n,
        });
    }
    Ok(())
}

/// `log q(z|obs) - log p(z)`.
pub fn diayn_pseudo_reward(classifier: &SkillClassifier, obs: &[f64], z: usize) -> Result<f64> {
    check_skill(z, classifier.n_skills())?;
    Ok(classifier.log_posterior(obs)?[z] - classifier.prior[z].ln())
}

/// Mean cross-entropy of the labels under `q` and its parameter gradient.
pub fn classifier_loss(
    classifier: &SkillClassifier,
    states: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, MlpParams)> {
    if states.is_empty() || states.len() != labels.len() {
        return Err(Error::Usage(format!(
            "classifier batch needs matching non-empty states/labels ({} vs {})",
            states.len(),
            labels.len()
        )));
    }
    let n = states.len() as f64;
    let mut grad = classifier.net.zeros_like();
    let mut cache = ForwardCache::default();
    let mut loss = 0.0;
    for (s, &z) in states.iter().zip(labels) {
        check_skill(z, classifier.n_skills())?;
        classifier.net.forward_cached(s, &mut cache)?;
        let lsm = log_softmax(cache.output());
        loss -= lsm[z];
        let up: Vec<f64> = lsm
            .iter()
            .enumerate()
            .map(|(j, l)| (l.exp() - if j == z { 1.0 } else { 0.0 }) / n)
            .collect();
        classifier.net.backward_into(&cache, &up, &mut grad)?;
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::Training(format!(
            "non-finite classifier loss on a batch of {} states",
            states.len()
        )));
    }
    Ok((loss, grad))
}

/// One Adam step on the cross-entropy; returns the pre-step loss.
pub fn classifier_update(
    classifier: &mut SkillClassifier,
    adam: &mut AdamState,
    states: &[Vec<f64>],
    labels: &[usize],
) -> Result<f64> {
    let (loss, grad) = classifier_loss(classifier, states, labels)?;
    adam.step(&mut classifier.net, &grad)?;
    Ok(loss)
}

pub fn classifier_accuracy(
    classifier: &SkillClassifier,
    states: &[Vec<f64>],
    labels: &[usize],
) -> Result<f64> {
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (s, &z) in states.iter().zip(labels) {
        if classifier.predict(s)? == z {
            hits += 1;
        }
    }
    Ok(hits as f64 / states.len() as f64)
}

/// `sum_i KL(pi_k(.|obs) || pi_i(.|obs))` over all policies (the `i = k`
/// term is zero). With `mean_limit`, Gaussian means are first clamped to
/// `[-limit, limit]`, so policies cannot gain diversity by disagreeing about
/// actions the environment would clip anyway.
pub fn kl_diversity_reward(
    policies: &[Policy],
    k: usize,
    obs: &[f64],
    mean_limit: Option<f64>,
) -> Result<f64> {
    check_skill(k, policies.len())?;
    let dist = |p: &Policy| -> Result<ActionDist> {
        let mut d = p.dist(obs)?;
        if let (Some(lim), ActionDist::Gaussian { mean, .. }) = (mean_limit, &mut d) {
            mean.iter_mut().for_each(|m| *m = m.clamp(-lim, lim));
        }
        Ok(d)
    };
    let pk = dist(&policies[k])?;
    let mut total = 0.0;
    for (i, p) in policies.iter().enumerate() {
        if i != k {
            total += pk.kl(&dist(p)?)?;
        }
    }
    Ok(total)
}

/// Whatever produced the diversity reward, needed to recompute it.
#[derive(Debug, Clone, Copy)]
pub enum DiversityArtifacts<'a> {
    Diayn(&'a SkillClassifier),
    /// Strategy policies and the optional mean clamp of
    /// [`kl_diversity_reward`].
    Kl(&'a [Policy], Option<f64>),
}

impl DiversityArtifacts<'_> {
    pub fn mode(&self) -> DiversityMode {
        match self {
            DiversityArtifacts::Diayn(_) => DiversityMode::Diayn,
            DiversityArtifacts::Kl(..) => DiversityMode::Kl,
        }
    }

    pub fn reward(&self, obs: &[f64], k: usize) -> Result<f64> {
        match self {
            DiversityArtifacts::Diayn(c) => diayn_pseudo_reward(c, obs, k),
            DiversityArtifacts::Kl(p, lim) => kl_diversity_reward(p, k, obs, *lim),
        }
    }
}

/// Fills every transition's diversity annotation for the trajectory's own
/// strategy.
pub fn annotate_ground_truth_strategy(
    env: &EnvModel,
    traj: &mut Trajectory,
    mode: DiversityMode,
    artifacts: DiversityArtifacts<'_>,
) -> Result<()> {
    if artifacts.mode() != mode {
        return Err(Error::Usage(format!(
            "diversity mode {} does not match the supplied {} artifacts",
            mode.as_str(),
            artifacts.mode().as_str()
        )));
    }
    let k = traj
        .strategy_id
        .ok_or_else(|| Error::Usage("cannot annotate an unlabeled trajectory".into()))?;
    for tr in &mut traj.transitions {
        tr.diversity = Some(artifacts.reward(&env.observation(&tr.state), k)?);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMeta {
    pub mode: DiversityMode,
    pub seed: u64,
    pub weight: f64,
    pub iterations: usize,
}

/// Strategy-labelled demonstrations `D^(1..N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub env_name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub strategies: Vec<Vec<Trajectory>>,
    pub meta: GenerationMeta,
}

impl DemoSet {
    pub fn n_strategies(&self) -> usize {
        self.strategies.len()
    }

    /// Smallest per-strategy demo count.
    pub fn min_per_strategy(&self) -> usize {
        self.strategies.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Format("demo set has no strategies".into()));
        }
        for (i, ds) in self.strategies.iter().enumerate() {
            if ds.is_empty() {
                return Err(Error::Format(format!("strategy {i} has no demonstrations")));
            }
            for t in ds {
                if t.strategy_id != Some(i) {
                    return Err(Error::Format(format!(
                        "trajectory in strategy {i} is labelled {:?}",
                        t.strategy_id
                    )));
                }
                for tr in &t.transitions {
                    if tr.state.len() != self.state_dim || tr.action.len() != self.action_dim {
                        return Err(Error::Format(format!(
                            "transition shape ({}, {}) does not match header ({}, {})",
                            tr.state.len(),
                            tr.action.len(),
                            self.state_dim,
                            self.action_dim
                        )));
                    }
                    if tr.state.iter().chain(&tr.action).any(|v| !v.is_finite()) {
                        return Err(Error::Format(format!(
                            "non-finite state or action in strategy {i}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks the header against an environment.
    pub fn check_env(&self, env: &EnvModel) -> Result<()> {
        if self.env_name != env.name()
            || self.state_dim != env.state_dim()
            || self.action_dim != env.action_dim()
        {
            return Err(Error::Config(format!(
                "demo set is for {} ({}-d state, {}-d action), config selects {} ({}, {})",
                self.env_name,
                self.state_dim,
                self.action_dim,
                env.name(),
                env.state_dim(),
                env.action_dim()
            )));
        }
        Ok(())
    }

    pub fn all(&self) -> impl Iterator<Item = &Trajectory> {
        self.strategies.iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityLogRow {
    pub iteration: usize,
    pub strategy: usize,
    pub mean_task_return: f64,
    pub mean_diversity: f64,
    /// Classifier accuracy on this iteration's rollout states (DIAYN only).
    pub classifier_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct HeterogeneousOutcome {
    pub policies: Vec<Policy>,
    pub classifier: Option<SkillClassifier>,
    pub demos: DemoSet,
    pub log: Vec<DiversityLogRow>,
}

const STREAM_CLASSIFIER: u64 = 4;
const STREAM_DEMOS: u64 = 5;

fn mean_diversity(trajs: &[Trajectory]) -> f64 {
    let vals: Vec<f64> = trajs
        .iter()
        .flat_map(|t| &t.transitions)
        .filter_map(|tr| tr.diversity)
        .collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Trains `cfg.n_strategies` policies on task plus weighted diversity reward,
/// then records `cfg.demos_per_strategy` annotated demonstrations from each.
///
/// Within an iteration every strategy reads the same frozen snapshot of the
/// other policies (and of the classifier), so the per-strategy work runs in
/// parallel without affecting results.
pub fn train_heterogeneous_policies(
    env: &EnvModel,
    cfg: &DiversityConfig,
    policy_cfg: &PolicyConfig,
    rng: &mut Rng,
) -> Result<HeterogeneousOutcome> {
    let n = cfg.n_strategies;
    if n < 2 {
        return Err(Error::Config(format!("diversity needs n_strategies >= 2, got {n}")));
    }
    if cfg.rollouts_per_iteration == 0 || cfg.demos_per_strategy == 0 {
        return Err(Error::Config(
            "diversity.rollouts_per_iteration and demos_per_strategy must be >= 1".into(),
        ));
    }
    let seed: u64 = rand::Rng::random(rng);
    let mut init = rng_from_seed(derive_seed(seed, crate::airl::STREAM_INIT));
    let mut policies = (0..n)
        .map(|_| Policy::new(env, &policy_cfg.hidden_sizes, policy_cfg.init_log_std, &mut init))
        .collect::<Result<Vec<_>>>()?;
    let mut opts: Vec<PolicyOptimizer> =
        policies.iter().map(|p| PolicyOptimizer::new(p, policy_cfg.lr)).collect();
    let mut rngs: Vec<Rng> = (0..n).map(|i| strategy_stream(seed, i)).collect();
    let mut classifier = match cfg.mode {
        DiversityMode::Diayn => {
            let mut crng = rng_from_seed(derive_seed(seed, STREAM_CLASSIFIER));
            Some(SkillClassifier::new(env.obs_dim(), n, &cfg.classifier_hidden, &mut crng)?)
        }
        DiversityMode::Kl => None,
    };
    let mut cadam = classifier
        .as_ref()
        .map(|c| AdamState::new(&c.net, AdamConfig::with_lr(cfg.classifier_lr)));
    let update_cfg = PolicyUpdateConfig {
        learn_log_std: !cfg.fixed_std,
        ..policy_cfg.update()
    };
    let mean_limit = match env.action_space() {
        ActionSpace::Continuous { limit, .. } if cfg.kl_clip_means => Some(limit),
        _ => None,
    };
    let mut log = Vec::with_capacity(cfg.iterations * n);

    for it in 0..cfg.iterations {
        let snapshot = policies.clone();
        let artifacts = match &classifier {
            Some(c) => DiversityArtifacts::Diayn(c),
            None => DiversityArtifacts::Kl(&snapshot, mean_limit),
        };
        let results: Vec<Result<Vec<Trajectory>>> = policies
            .par_iter_mut()
            .zip(opts.par_iter_mut())
            .zip(rngs.par_iter_mut())
            .enumerate()
            .map(|(k, ((policy, opt), srng))| {
                let mut trajs = collect_rollouts(policy, env, cfg.rollouts_per_iteration, srng)?;
                for t in &mut trajs {
                    t.strategy_id = Some(k);
                    annotate_ground_truth_strategy(env, t, cfg.mode, artifacts)?;
                    for tr in &mut t.transitions {
                        tr.pseudo_reward =
                            Some(tr.task_reward + cfg.weight * tr.diversity.unwrap_or(0.0));
                    }
                }
                improve_policy(policy, opt, env, &trajs, RewardField::Pseudo, &update_cfg)
                    .map_err(|e| match e {
                        Error::Training(m) => {
                            Error::Training(format!("strategy {k}, iteration {it}: {m}"))
                        }
                        other => other,
                    })?;
                Ok(trajs)
            })
            .collect();
        let batches = results.into_iter().collect::<Result<Vec<_>>>()?;

        let mut acc = None;
        if let (Some(c), Some(adam)) = (classifier.as_mut(), cadam.as_mut()) {
            let mut states = Vec::new();
            let mut labels = Vec::new();
            for (k, trajs) in batches.iter().enumerate() {
                for tr in trajs.iter().flat_map(|t| &t.transitions) {
                    states.push(env.observation(&tr.state));
                    labels.push(k);
                }
            }
            for _ in 0..cfg.classifier_steps {
                classifier_update(c, adam, &states, &labels)?;
            }
            acc = Some(classifier_accuracy(c, &states, &labels)?);
        }
        for (k, trajs) in batches.iter().enumerate() {
            log.push(DiversityLogRow {
                iteration: it,
                strategy: k,
                mean_task_return: mean_task_return(trajs, env.gamma()),
                mean_diversity: mean_diversity(trajs),
                classifier_accuracy: acc,
            });
        }
    }

    let artifacts = match &classifier {
        Some(c) => DiversityArtifacts::Diayn(c),
        None => DiversityArtifacts::Kl(&policies, mean_limit),
    };
    let mut strategies = Vec::with_capacity(n);
    for (k, policy) in policies.iter().enumerate() {
        let mut drng = rng_from_seed(derive_seed(derive_seed(seed, STREAM_DEMOS), k as u64));
        let mut demos = collect_rollouts(policy, env, cfg.demos_per_strategy, &mut drng)?;
        for t in &mut demos {
            t.strategy_id = Some(k);
            annotate_ground_truth_strategy(env, t, cfg.mode, artifacts)?;
        }
        strategies.push(demos);
    }
    let demos = DemoSet {
        env_name: env.name().to_string(),
        state_dim: env.state_dim(),
        action_dim: env.action_dim(),
        strategies,
        meta: GenerationMeta {
            mode: cfg.mode,
            seed,
            weight: cfg.weight,
            iterations: cfg.iterations,
        },
    };
    Ok(HeterogeneousOutcome {
        policies,
        classifier,
        demos,
        log,
    })
}

/// Mean `x` over every visited state, per strategy (point-balance).
pub fn state_centroids(demos: &DemoSet) -> Vec<f64> {
    demos
        .strategies
        .iter()
        .map(|ds| {
            let xs: Vec<f64> = ds
                .iter()
                .flat_map(|t| &t.transitions)
                .map(|tr| tr.state[0])
                .collect();
            xs.iter().sum::<f64>() / xs.len().max(1) as f64
        })
        .collect()
}
