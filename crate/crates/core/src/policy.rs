//! Stochastic policies, rollouts and a clipped-surrogate policy update.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::{ActionSpace, EnvModel};
use crate::numcore::{
    categorical_entropy, categorical_kl, categorical_log_prob, clamp_log_std, gaussian_entropy,
    gaussian_kl, gaussian_log_prob, log_softmax, AdamConfig, AdamState, AdamVec, ForwardCache,
    MlpParams, OutputInit, Rng,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyHead {
    /// State-independent learnable log standard deviation.
    Gaussian { log_std: Vec<f64> },
    Categorical { n: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    /// observation -> Gaussian mean or categorical logits
    pub net: MlpParams,
    pub head: PolicyHead,
}

pub type PolicySet = Vec<Policy>;

#[derive(Debug, Clone, PartialEq)]
pub enum ActionDist {
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
    Categorical { logits: Vec<f64> },
}

impl ActionDist {
    pub fn log_prob(&self, action: &[f64]) -> Result<f64> {
        match self {
            ActionDist::Gaussian { mean, log_std } => gaussian_log_prob(mean, log_std, action),
            ActionDist::Categorical { logits } => {
                categorical_log_prob(logits, action_index(action, logits.len())?)
            }
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            ActionDist::Gaussian { log_std, .. } => gaussian_entropy(log_std),
            ActionDist::Categorical { logits } => categorical_entropy(logits),
        }
    }

    /// `KL(self || other)`; both must be of the same family and size.
    pub fn kl(&self, other: &ActionDist) -> Result<f64> {
        match (self, other) {
            (
                ActionDist::Gaussian { mean, log_std },
                ActionDist::Gaussian {
                    mean: m2,
                    log_std: l2,
                },
            ) if mean.len() == m2.len() => Ok(gaussian_kl(mean, log_std, m2, l2)),
            (ActionDist::Categorical { logits }, ActionDist::Categorical { logits: l2 })
                if logits.len() == l2.len() =>
            {
                Ok(categorical_kl(logits, l2))
            }
            _ => Err(Error::Config("KL between mismatched action distributions".into())),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            ActionDist::Gaussian { mean, log_std } => mean
                .iter()
                .zip(log_std)
                .map(|(m, ls)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + ls.exp() * z
                })
                .collect(),
            ActionDist::Categorical { logits } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let lp = log_softmax(logits);
                for (i, l) in lp.iter().enumerate() {
                    acc += l.exp();
                    if u < acc {
                        return vec![i as f64];
                    }
                }
                vec![(logits.len() - 1) as f64]
            }
        }
    }
}

fn action_index(action: &[f64], n: usize) -> Result<usize> {
    let a = action.first().copied().unwrap_or(f64::NAN);
    if !(a >= 0.0) || a.fract() != 0.0 || a as usize >= n {
        return Err(Error::IndexOutOfRange {
            what: "discrete action",
            index: if a >= 0.0 { a as usize } else { usize::MAX },
            len: n,
        });
    }
    Ok(a as usize)
}

impl Policy {
    /// Fresh policy for `env`. The output layer is initialised small so the
    /// initial action distribution is close to `N(0, exp(init_log_std))` or
    /// uniform.
    pub fn new(env: &EnvModel, hidden: &[usize], init_log_std: f64, rng: &mut Rng) -> Result<Self> {
        let out_dim = match env.action_space() {
            ActionSpace::Continuous { dim, .. } => dim,
            ActionSpace::Discrete { n } => n,
        };
        let mut sizes = vec![env.obs_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(out_dim);
        let net = MlpParams::new(&sizes, OutputInit::Scaled(0.1), rng)?;
        let head = match env.action_space() {
            ActionSpace::Continuous { dim, .. } => PolicyHead::Gaussian {
                log_std: vec![clamp_log_std(init_log_std); dim],
            },
            ActionSpace::Discrete { n } => PolicyHead::Categorical { n },
        };
        Ok(Self { net, head })
    }

    pub fn dist(&self, obs: &[f64]) -> Result<ActionDist> {
        let out = self.net.forward(obs)?;
        Ok(self.dist_from_output(out))
    }

    fn dist_from_output(&self, out: Vec<f64>) -> ActionDist {
        match &self.head {
            PolicyHead::Gaussian { log_std } => ActionDist::Gaussian {
                mean: out,
                log_std: log_std.clone(),
            },
            PolicyHead::Categorical { .. } => ActionDist::Categorical { logits: out },
        }
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        self.dist(obs)?.log_prob(action)
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite()
            && match &self.head {
                PolicyHead::Gaussian { log_std } => log_std.iter().all(|v| v.is_finite()),
                PolicyHead::Categorical { .. } => true,
            }
    }

    fn log_std_mut(&mut self) -> Option<&mut Vec<f64>> {
        match &mut self.head {
            PolicyHead::Gaussian { log_std } => Some(log_std),
            PolicyHead::Categorical { .. } => None,
        }
    }
}

/// Adam state for a policy's network and (for Gaussian heads) its log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOptimizer {
    pub net: AdamState,
    pub log_std: AdamVec,
}

impl PolicyOptimizer {
    pub fn new(policy: &Policy, lr: f64) -> Self {
        let n = match &policy.head {
            PolicyHead::Gaussian { log_std } => log_std.len(),
            PolicyHead::Categorical { .. } => 0,
        };
        Self {
            net: AdamState::new(&policy.net, AdamConfig::with_lr(lr)),
            log_std: AdamVec::new(n, AdamConfig::with_lr(lr)),
        }
    }
}

/// Samples an action for an observation and returns it with its log-density.
pub fn policy_sample(policy: &Policy, obs: &[f64], rng: &mut Rng) -> Result<(Vec<f64>, f64)> {
    let dist = policy.dist(obs)?;
    let action = dist.sample(rng);
    let lp = dist.log_prob(&action)?;
    Ok((action, lp))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    /// Log-density of `action` under the generating policy at collection time.
    pub log_prob: f64,
    /// Ground-truth task reward; evaluation only.
    pub task_reward: f64,
    pub pseudo_reward: Option<f64>,
    /// Strategy diversity reward (DIAYN or KL) recorded as ground truth.
    pub diversity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub strategy_id: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// `sum_t gamma^t r_t` of the ground-truth task reward.
    pub fn discounted_task_return(&self, gamma: f64) -> f64 {
        let mut disc = 1.0;
        let mut total = 0.0;
        for tr in &self.transitions {
            total += disc * tr.task_reward;
            disc *= gamma;
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardField {
    Task,
    Pseudo,
    Diversity,
}

impl Transition {
    pub fn reward(&self, field: RewardField) -> Option<f64> {
        match field {
            RewardField::Task => Some(self.task_reward),
            RewardField::Pseudo => self.pseudo_reward,
            RewardField::Diversity => self.diversity,
        }
    }
}

/// One episode of `env.horizon()` steps. With probability `noise` each
/// action is replaced by a uniformly random one. `noise <= 0` and
/// `noise >= 1` draw no coin flips, so they reproduce clean and purely random
/// rollouts respectively for the same generator state.
pub fn rollout(policy: &Policy, env: &EnvModel, noise: f64, rng: &mut Rng) -> Result<Trajectory> {
    let mut state = env.reset(rng);
    let mut transitions = Vec::with_capacity(env.horizon());
    for _ in 0..env.horizon() {
        let obs = env.observation(&state);
        let dist = policy.dist(&obs)?;
        let random = if noise <= 0.0 {
            false
        } else if noise >= 1.0 {
            true
        } else {
            rng.random::<f64>() < noise
        };
        let action = if random {
            env.random_action(rng)
        } else {
            dist.sample(rng)
        };
        let log_prob = dist.log_prob(&action)?;
        let (next, task_reward) = env.step(&state, &action);
        transitions.push(Transition {
            state,
            action,
            log_prob,
            task_reward,
            pseudo_reward: None,
            diversity: None,
        });
        state = next;
    }
    Ok(Trajectory {
        transitions,
        strategy_id: None,
    })
}

pub fn collect_rollouts(
    policy: &Policy,
    env: &EnvModel,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return Err(Error::Usage("collect_rollouts needs count >= 1".into()));
    }
    (0..count).map(|_| rollout(policy, env, 0.0, rng)).collect()
}

/// `sum_{t' >= t} gamma^{t'-t} r_{t'}` for every step.
pub fn reward_to_go(traj: &Trajectory, field: RewardField, gamma: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; traj.len()];
    let mut acc = 0.0;
    for (t, tr) in traj.transitions.iter().enumerate().rev() {
        let r = tr.reward(field).ok_or_else(|| {
            Error::Usage(format!("reward field {field:?} missing at step {t}"))
        })?;
        acc = r + gamma * acc;
        out[t] = acc;
    }
    Ok(out)
}

/// Reward-to-go minus a batch-mean baseline taken per time step across the
/// batch.
pub fn compute_advantages(
    trajs: &[Trajectory],
    field: RewardField,
    gamma: f64,
) -> Result<Vec<Vec<f64>>> {
    let rtg: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| reward_to_go(t, field, gamma))
        .collect::<Result<_>>()?;
    let max_len = rtg.iter().map(Vec::len).max().unwrap_or(0);
    let mut sum = vec![0.0; max_len];
    let mut cnt = vec![0usize; max_len];
    for r in &rtg {
        for (t, v) in r.iter().enumerate() {
            sum[t] += v;
            cnt[t] += 1;
        }
    }
    Ok(rtg
        .into_iter()
        .map(|r| {
            r.into_iter()
                .enumerate()
                .map(|(t, v)| v - sum[t] / cnt[t] as f64)
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyUpdateConfig {
    pub lr: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    /// When false the Gaussian log-std is left untouched.
    pub learn_log_std: bool,
}

impl Default for PolicyUpdateConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            clip: 0.2,
            entropy_coef: 0.01,
            epochs: 5,
            learn_log_std: true,
        }
    }
}

/// Flattened transitions for the surrogate objective.
#[derive(Debug, Clone, Default)]
pub struct SurrogateBatch {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl SurrogateBatch {
    pub fn from_trajectories(
        env: &EnvModel,
        trajs: &[Trajectory],
        advantages: &[Vec<f64>],
    ) -> Result<Self> {
        if trajs.len() != advantages.len() {
            return Err(Error::Usage("advantages not aligned with trajectories".into()));
        }
        let mut b = SurrogateBatch::default();
        for (traj, adv) in trajs.iter().zip(advantages) {
            if traj.len() != adv.len() {
                return Err(Error::Usage("advantages not aligned with transitions".into()));
            }
            for (tr, a) in traj.transitions.iter().zip(adv) {
                b.obs.push(env.observation(&tr.state));
                b.actions.push(tr.action.clone());
                b.old_log_probs.push(tr.log_prob);
                b.advantages.push(*a);
            }
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateEval {
    pub loss: f64,
    pub net_grad: MlpParams,
    pub log_std_grad: Vec<f64>,
    pub mean_entropy: f64,
    pub clip_fraction: f64,
}

/// Loss `-mean(min(r A, clip(r, 1-c, 1+c) A)) - entropy_coef * mean H` and
/// its gradient with respect to the network and the log-std.
pub fn surrogate_loss(
    policy: &Policy,
    batch: &SurrogateBatch,
    clip: f64,
    entropy_coef: f64,
) -> Result<SurrogateEval> {
    if batch.is_empty() {
        return Err(Error::Usage("empty surrogate batch".into()));
    }
    let n = batch.len() as f64;
    let mut net_grad = policy.net.zeros_like();
    let mut log_std_grad = match &policy.head {
        PolicyHead::Gaussian { log_std } => vec![0.0; log_std.len()],
        PolicyHead::Categorical { .. } => Vec::new(),
    };
    let mut cache = ForwardCache::default();
    let mut surr = 0.0;
    let mut ent = 0.0;
    let mut clipped = 0usize;
    for i in 0..batch.len() {
        policy.net.forward_cached(&batch.obs[i], &mut cache)?;
        let out = cache.output().to_vec();
        let adv = batch.advantages[i];
        let action = &batch.actions[i];
        // d logp / d output, d logp / d log_std, d H / d output
        let (lp, dlp_out, dlp_ls, dh_out, h) = match &policy.head {
            PolicyHead::Gaussian { log_std } => {
                let lp = gaussian_log_prob(&out, log_std, action)?;
                let mut d_out = vec![0.0; out.len()];
                let mut d_ls = vec![0.0; out.len()];
                for j in 0..out.len() {
                    let inv_var = (-2.0 * log_std[j]).exp();
                    let diff = action[j] - out[j];
                    d_out[j] = diff * inv_var;
                    d_ls[j] = diff * diff * inv_var - 1.0;
                }
                (lp, d_out, d_ls, vec![0.0; out.len()], gaussian_entropy(log_std))
            }
            PolicyHead::Categorical { .. } => {
                let k = action_index(action, out.len())?;
                let lsm = log_softmax(&out);
                let h: f64 = lsm.iter().map(|l| -l.exp() * l).sum();
                let d_out: Vec<f64> = lsm
                    .iter()
                    .enumerate()
                    .map(|(j, l)| if j == k { 1.0 } else { 0.0 } - l.exp())
                    .collect();
                let dh: Vec<f64> = lsm.iter().map(|l| -l.exp() * (l + h)).collect();
                (lsm[k], d_out, Vec::new(), dh, h)
            }
        };
        let ratio = (lp - batch.old_log_probs[i]).exp();
        let clipped_ratio = ratio.clamp(1.0 - clip, 1.0 + clip);
        let unclipped_obj = ratio * adv;
        let clipped_obj = clipped_ratio * adv;
        let use_unclipped = unclipped_obj <= clipped_obj;
        surr += unclipped_obj.min(clipped_obj);
        ent += h;
        // d loss / d logp
        let coef = if use_unclipped {
            -adv * ratio / n
        } else {
            clipped += 1;
            0.0
        };
        let upstream: Vec<f64> = dlp_out
            .iter()
            .zip(&dh_out)
            .map(|(g, dh)| coef * g - entropy_coef * dh / n)
            .collect();
        if upstream.iter().any(|u| *u != 0.0) {
            policy.net.backward_into(&cache, &upstream, &mut net_grad)?;
        }
        for (g, d) in log_std_grad.iter_mut().zip(&dlp_ls) {
            *g += coef * d;
        }
    }
    // Gaussian entropy is state independent: dH/dlog_std = 1 per dimension.
    for g in &mut log_std_grad {
        *g -= entropy_coef;
    }
    let mean_entropy = ent / n;
    let loss = -surr / n - entropy_coef * mean_entropy;
    Ok(SurrogateEval {
        loss,
        net_grad,
        log_std_grad,
        mean_entropy,
        clip_fraction: clipped as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub mean_entropy: f64,
    pub clip_fraction: f64,
}

/// Full-batch clipped-surrogate update for `epochs` Adam steps. Advantages are
/// rescaled by their batch standard deviation (direction is unchanged).
pub fn policy_update(
    policy: &mut Policy,
    opt: &mut PolicyOptimizer,
    env: &EnvModel,
    trajs: &[Trajectory],
    advantages: &[Vec<f64>],
    cfg: &PolicyUpdateConfig,
) -> Result<UpdateStats> {
    let mut batch = SurrogateBatch::from_trajectories(env, trajs, advantages)?;
    let n = batch.len() as f64;
    let mean = batch.advantages.iter().sum::<f64>() / n;
    let var = batch.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !std.is_finite() || !mean.is_finite() {
        return Err(Error::Training(format!(
            "non-finite advantages (batch {}, mean {mean}, std {std})",
            batch.len()
        )));
    }
    if std > 1e-8 {
        batch.advantages.iter_mut().for_each(|a| *a /= std);
    }
    opt.net.config.lr = cfg.lr;
    opt.log_std.config.lr = cfg.lr;
    let mut stats = UpdateStats {
        initial_loss: f64::NAN,
        final_loss: f64::NAN,
        mean_entropy: f64::NAN,
        clip_fraction: 0.0,
    };
    for epoch in 0..cfg.epochs {
        let ev = surrogate_loss(policy, &batch, cfg.clip, cfg.entropy_coef)?;
        if !ev.loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite surrogate loss at epoch {epoch} (batch {}, adv mean {mean:.4e}, adv std {std:.4e}, entropy {:.4e})",
                batch.len(),
                ev.mean_entropy
            )));
        }
        if epoch == 0 {
            stats.initial_loss = ev.loss;
        }
        stats.final_loss = ev.loss;
        stats.mean_entropy = ev.mean_entropy;
        stats.clip_fraction = ev.clip_fraction;
        opt.net.step(&mut policy.net, &ev.net_grad)?;
        if let Some(ls) = policy.log_std_mut().filter(|_| cfg.learn_log_std) {
            opt.log_std.step(ls, &ev.log_std_grad)?;
            ls.iter_mut().for_each(|v| *v = clamp_log_std(*v));
        }
    }
    if !policy.is_finite() {
        return Err(Error::Training("policy parameters became non-finite".into()));
    }
    Ok(stats)
}

/// Advantages from `field` followed by [`policy_update`].
pub fn improve_policy(
    policy: &mut Policy,
    opt: &mut PolicyOptimizer,
    env: &EnvModel,
    trajs: &[Trajectory],
    field: RewardField,
    cfg: &PolicyUpdateConfig,
) -> Result<UpdateStats> {
    let adv = compute_advantages(trajs, field, env.gamma())?;
    policy_update(policy, opt, env, trajs, &adv, cfg)
}

pub fn mean_task_return(trajs: &[Trajectory], gamma: f64) -> f64 {
    if trajs.is_empty() {
        return 0.0;
    }
    trajs.iter().map(|t| t.discounted_task_return(gamma)).sum::<f64>() / trajs.len() as f64
}
