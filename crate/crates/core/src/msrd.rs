//! Multi-strategy reward distillation.
//!
//! Each strategy's reward is `R_i = R_0 + alpha_i * Rt_i`: a task network
//! shared by every strategy plus a strategy-only residual network. Both are
//! trained through the AIRL discriminator built on `R_i`, and the residual
//! output is penalised by `alpha_i * E|Rt_i|`, which pushes shared structure
//! into `R_0`.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, WriteBytesExt};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::airl::{
    init_reward_and_policies, sample_demos, sample_transitions, sigmoid, softplus,
    strategy_stream, DiscBatch, RewardNet,
};
use crate::config::{MsrdConfig, PolicyConfig, RegSource};
use crate::diversity::DemoSet;
use crate::envs::EnvModel;
use crate::numcore::codec::{
    read_adam, read_f64s, read_magic, read_mlp_body, read_rng, read_u32, read_u64, read_u8,
    write_adam, write_f64s, write_magic, write_mlp_body, write_rng,
};
use crate::numcore::{
    derive_seed, rng_from_seed, stable_mean, AdamConfig, AdamState, ForwardCache, MlpParams,
    OutputInit, Rng,
};
use crate::persist::{read_policy, read_policy_opt, write_policy, write_policy_opt};
use crate::policy::{
    collect_rollouts, improve_policy, Policy, PolicyOptimizer, RewardField, Trajectory,
};
use crate::{Error, Result};

const STREAM_RESIDUAL: u64 = 3;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSRDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Task network, per-strategy residual networks and their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MsrdRewardModel {
    pub task: RewardNet,
    pub residuals: Vec<RewardNet>,
    pub alphas: Vec<f64>,
}

impl MsrdRewardModel {
    pub fn new(task: RewardNet, residuals: Vec<RewardNet>, alphas: Vec<f64>) -> Result<Self> {
        if residuals.is_empty() || residuals.len() != alphas.len() {
            return Err(Error::Config(format!(
                "{} residual networks for {} alpha values",
                residuals.len(),
                alphas.len()
            )));
        }
        let d = task.net.input_dim();
        if residuals.iter().any(|r| r.net.input_dim() != d) {
            return Err(Error::Config("residual networks must share the task input".into()));
        }
        if alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::Config("alpha values must be finite and >= 0".into()));
        }
        Ok(Self {
            task,
            residuals,
            alphas,
        })
    }

    pub fn n_strategies(&self) -> usize {
        self.residuals.len()
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.n_strategies() {
            return Err(Error::IndexOutOfRange {
                what: "strategy index",
                index: i,
                len: self.n_strategies(),
            });
        }
        Ok(())
    }

    pub fn task_reward(&self, features: &[f64]) -> Result<f64> {
        self.task.eval(features)
    }

    pub fn residual(&self, i: usize, features: &[f64]) -> Result<f64> {
        self.check(i)?;
        self.residuals[i].eval(features)
    }

    /// `R_0(x) + alpha_i * Rt_i(x)` on reward features.
    pub fn combined(&self, i: usize, features: &[f64]) -> Result<f64> {
        self.check(i)?;
        Ok(self.task.eval(features)? + self.alphas[i] * self.residuals[i].eval(features)?)
    }
}

pub fn strategy_combined_reward(
    model: &MsrdRewardModel,
    i: usize,
    env: &EnvModel,
    state: &[f64],
    action: &[f64],
) -> Result<f64> {
    model.combined(i, &env.reward_features(state, action))
}

/// Value and gradients of the distillation loss for one strategy.
#[derive(Debug, Clone)]
pub struct MsrdLoss {
    /// Discriminator cross-entropy plus the regulariser.
    pub loss: f64,
    pub disc_loss: f64,
    /// `alpha_i * mean |Rt_i|` (or of `Rt_i^2`) over the regularisation batch.
    pub reg_value: f64,
    pub task_grad: MlpParams,
    pub residual_grad: MlpParams,
}

/// Cross-entropy of the discriminator built on `f = R_0 + alpha_i Rt_i`
/// plus `alpha_i * mean |Rt_i|` over `reg`.
pub fn msrd_discriminator_loss(
    model: &MsrdRewardModel,
    i: usize,
    expert: &DiscBatch,
    gen: &DiscBatch,
    reg: &[Vec<f64>],
    l2_squared: bool,
) -> Result<MsrdLoss> {
    model.check(i)?;
    if expert.is_empty() || gen.is_empty() || reg.is_empty() {
        return Err(Error::Usage("distillation batches must be non-empty".into()));
    }
    let alpha = model.alphas[i];
    let task = &model.task.net;
    let res = &model.residuals[i].net;
    let mut task_grad = task.zeros_like();
    let mut residual_grad = res.zeros_like();
    let mut c0 = ForwardCache::default();
    let mut ci = ForwardCache::default();

    let mut disc_terms = |batch: &DiscBatch,
                          expert_side: bool,
                          tg: &mut MlpParams,
                          rg: &mut MlpParams|
     -> Result<Vec<f64>> {
        let n = batch.len() as f64;
        let mut terms = Vec::with_capacity(batch.len());
        for (x, lp) in batch.features.iter().zip(&batch.log_pi) {
            task.forward_cached(x, &mut c0)?;
            res.forward_cached(x, &mut ci)?;
            let f = c0.output()[0] + alpha * ci.output()[0];
            let z = f - lp;
            let (term, dz) = if expert_side {
                (softplus(-z), sigmoid(z) - 1.0)
            } else {
                (softplus(z), sigmoid(z))
            };
            terms.push(term);
            task.backward_into(&c0, &[dz / n], tg)?;
            if alpha != 0.0 {
                res.backward_into(&ci, &[alpha * dz / n], rg)?;
            }
        }
        Ok(terms)
    };
    let te = disc_terms(expert, true, &mut task_grad, &mut residual_grad)?;
    let tg = disc_terms(gen, false, &mut task_grad, &mut residual_grad)?;
    let disc_loss = stable_mean(&te) + stable_mean(&tg);

    let nr = reg.len() as f64;
    let mut penalties = Vec::with_capacity(reg.len());
    for x in reg {
        res.forward_cached(x, &mut ci)?;
        let r = ci.output()[0];
        let (p, dp) = if l2_squared {
            (r * r, 2.0 * r)
        } else {
            (r.abs(), if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 })
        };
        penalties.push(p);
        if alpha != 0.0 && dp != 0.0 {
            res.backward_into(&ci, &[alpha * dp / nr], &mut residual_grad)?;
        }
    }
    let reg_value = alpha * stable_mean(&penalties);
    let loss = disc_loss + reg_value;
    if !loss.is_finite() {
        return Err(Error::Training(format!(
            "non-finite distillation loss for strategy {i} (disc {disc_loss}, reg {reg_value})"
        )));
    }
    Ok(MsrdLoss {
        loss,
        disc_loss,
        reg_value,
        task_grad,
        residual_grad,
    })
}

/// Value and gradients of the unstructured distillation ablation.
#[derive(Debug, Clone)]
pub struct VanillaLoss {
    pub loss: f64,
    pub disc_loss: f64,
    /// `mean |R_i - R_0|` (or squared) over the regularisation batch.
    pub reg_value: f64,
    pub task_grad: MlpParams,
    pub combined_grad: MlpParams,
}

/// Discriminator cross-entropy on a standalone `R_i` plus
/// `mean |R_i - R_0|` over `reg`. `R_0` only receives gradient through the
/// distance term.
pub fn vanilla_distill_loss(
    task: &RewardNet,
    combined: &RewardNet,
    expert: &DiscBatch,
    gen: &DiscBatch,
    reg: &[Vec<f64>],
    l2_squared: bool,
) -> Result<VanillaLoss> {
    if expert.is_empty() || gen.is_empty() || reg.is_empty() {
        return Err(Error::Usage("distillation batches must be non-empty".into()));
    }
    let mut task_grad = task.net.zeros_like();
    let mut combined_grad = combined.net.zeros_like();
    let mut ci = ForwardCache::default();
    let mut c0 = ForwardCache::default();
    let mut sides = [Vec::new(), Vec::new()];
    for (side, (batch, expert_side)) in [(expert, true), (gen, false)].into_iter().enumerate() {
        let n = batch.len() as f64;
        for (x, lp) in batch.features.iter().zip(&batch.log_pi) {
            combined.net.forward_cached(x, &mut ci)?;
            let z = ci.output()[0] - lp;
            let (term, dz) = if expert_side {
                (softplus(-z), sigmoid(z) - 1.0)
            } else {
                (softplus(z), sigmoid(z))
            };
            sides[side].push(term);
            combined.net.backward_into(&ci, &[dz / n], &mut combined_grad)?;
        }
    }
    let disc_loss = stable_mean(&sides[0]) + stable_mean(&sides[1]);
    let nr = reg.len() as f64;
    let mut dist = Vec::with_capacity(reg.len());
    for x in reg {
        combined.net.forward_cached(x, &mut ci)?;
        task.net.forward_cached(x, &mut c0)?;
        let d = ci.output()[0] - c0.output()[0];
        let (p, dp) = if l2_squared {
            (d * d, 2.0 * d)
        } else {
            (d.abs(), if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 })
        };
        dist.push(p);
        if dp != 0.0 {
            combined.net.backward_into(&ci, &[dp / nr], &mut combined_grad)?;
            task.net.backward_into(&c0, &[-dp / nr], &mut task_grad)?;
        }
    }
    let reg_value = stable_mean(&dist);
    let loss = disc_loss + reg_value;
    if !loss.is_finite() {
        return Err(Error::Training(format!(
            "non-finite vanilla distillation loss (disc {disc_loss}, reg {reg_value})"
        )));
    }
    Ok(VanillaLoss {
        loss,
        disc_loss,
        reg_value,
        task_grad,
        combined_grad,
    })
}

/// Sets every transition's pseudo-reward to `R_i(s, a)`.
pub fn assign_pseudo_rewards(
    env: &EnvModel,
    model: &MsrdRewardModel,
    i: usize,
    trajs: &mut [Trajectory],
) -> Result<()> {
    model.check(i)?;
    for t in trajs {
        for tr in &mut t.transitions {
            tr.pseudo_reward = Some(model.combined(i, &env.reward_features(&tr.state, &tr.action))?);
        }
    }
    Ok(())
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub strategy: usize,
    pub disc_loss: f64,
    pub regularizer: f64,
    pub mean_pseudo_reward: f64,
    pub mean_task_reward: f64,
}

pub const EPOCH_CSV_HEADER: &str =
    "epoch,strategy,disc_loss,regularizer,mean_pseudo_reward,mean_task_reward";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            self.strategy,
            self.disc_loss,
            self.regularizer,
            self.mean_pseudo_reward,
            self.mean_task_reward
        )
    }
}

pub fn epoch_log_csv(rows: &[EpochRecord]) -> String {
    let mut s = String::from(EPOCH_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn mean_rewards(trajs: &[Trajectory]) -> (f64, f64) {
    let mut n = 0usize;
    let (mut p, mut t) = (0.0, 0.0);
    for tr in trajs.iter().flat_map(|t| &t.transitions) {
        p += tr.pseudo_reward.unwrap_or(0.0);
        t += tr.task_reward;
        n += 1;
    }
    let n = n.max(1) as f64;
    (p / n, t / n)
}

/// Everything needed to continue training bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct MsrdTrainState {
    pub model: MsrdRewardModel,
    pub policies: Vec<Policy>,
    pub policy_opts: Vec<PolicyOptimizer>,
    pub task_adam: AdamState,
    pub residual_adams: Vec<AdamState>,
    /// One generator per strategy.
    pub rngs: Vec<Rng>,
    pub epoch: usize,
    pub defer_task_update: bool,
    pub seed: u64,
}

fn check_demos(demos: &DemoSet, env: &EnvModel, k: usize) -> Result<()> {
    demos.check_env(env)?;
    if demos.n_strategies() == 0 {
        return Err(Error::Usage("demo set has no strategies".into()));
    }
    if k == 0 || k > demos.min_per_strategy() {
        return Err(Error::Config(format!(
            "k_rollouts = {k} must satisfy 1 <= K <= M = {}",
            demos.min_per_strategy()
        )));
    }
    Ok(())
}

/// Fresh networks, policies and optimiser state.
pub fn msrd_init(
    env: &EnvModel,
    demos: &DemoSet,
    cfg: &MsrdConfig,
    policy_cfg: &PolicyConfig,
    rng: &mut Rng,
) -> Result<MsrdTrainState> {
    check_demos(demos, env, cfg.k_rollouts)?;
    let n = demos.n_strategies();
    let alphas = cfg.alphas(n)?;
    let seed: u64 = rng.random();
    let (task, policies) = init_reward_and_policies(env, &cfg.hidden_sizes, policy_cfg, n, seed)?;
    let mut rrng = rng_from_seed(derive_seed(seed, STREAM_RESIDUAL));
    let residuals = (0..n)
        .map(|_| RewardNet::new(env.feature_dim(), &cfg.hidden_sizes, OutputInit::Scaled(0.01), &mut rrng))
        .collect::<Result<Vec<_>>>()?;
    let model = MsrdRewardModel::new(task, residuals, alphas)?;
    let adam = AdamConfig::with_lr(cfg.lr);
    Ok(MsrdTrainState {
        task_adam: AdamState::new(&model.task.net, adam),
        residual_adams: model.residuals.iter().map(|r| AdamState::new(&r.net, adam)).collect(),
        policy_opts: policies.iter().map(|p| PolicyOptimizer::new(p, policy_cfg.lr)).collect(),
        rngs: (0..n).map(|i| strategy_stream(seed, i)).collect(),
        model,
        policies,
        epoch: 0,
        defer_task_update: cfg.defer_task_update,
        seed,
    })
}

fn reg_features(source: RegSource, eb: &DiscBatch, gb: &DiscBatch) -> Vec<Vec<f64>> {
    match source {
        RegSource::Expert => eb.features.clone(),
        RegSource::Generated => gb.features.clone(),
        RegSource::Both => eb.features.iter().chain(&gb.features).cloned().collect(),
    }
}

fn tag_strategy(trajs: &mut [Trajectory], i: usize) {
    for t in trajs {
        t.strategy_id = Some(i);
    }
}

/// Runs `epochs` sweeps over all strategies. `after_epoch` is called with the
/// state and that epoch's log rows once each sweep is complete.
pub fn msrd_train_epochs(
    state: &mut MsrdTrainState,
    env: &EnvModel,
    demos: &DemoSet,
    cfg: &MsrdConfig,
    policy_cfg: &PolicyConfig,
    epochs: usize,
    mut after_epoch: impl FnMut(&MsrdTrainState, &[EpochRecord]) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    check_demos(demos, env, cfg.k_rollouts)?;
    let n = state.model.n_strategies();
    if n != demos.n_strategies() || state.policies.len() != n || state.rngs.len() != n {
        return Err(Error::Config(format!(
            "training state has {n} strategies, demo set has {}",
            demos.n_strategies()
        )));
    }
    let update_cfg = policy_cfg.update();
    let k = cfg.k_rollouts;
    let mut log = Vec::with_capacity(epochs * n);
    for _ in 0..epochs {
        let epoch = state.epoch;
        let mut gens: Vec<Vec<Trajectory>> = if cfg.parallel_rollouts {
            state
                .policies
                .par_iter()
                .zip(state.rngs.par_iter_mut())
                .map(|(p, r)| collect_rollouts(p, env, k, r))
                .collect::<Result<_>>()?
        } else {
            state
                .policies
                .iter()
                .zip(state.rngs.iter_mut())
                .map(|(p, r)| collect_rollouts(p, env, k, r))
                .collect::<Result<_>>()?
        };
        let experts: Vec<Vec<&Trajectory>> = (0..n)
            .map(|i| {
                tag_strategy(&mut gens[i], i);
                sample_demos(&demos.strategies[i], k, &mut state.rngs[i])
            })
            .collect();
        let mut last: Vec<Option<MsrdLoss>> = vec![None; n];
        // Each discriminator step visits every strategy; with deferral the
        // task network moves once per visit round by the mean gradient.
        for _ in 0..cfg.disc_steps {
            let mut task_acc = state.model.task.net.zeros_like();
            for i in 0..n {
                let gen_refs: Vec<&Trajectory> = gens[i].iter().collect();
                let e = sample_transitions(&experts[i], cfg.batch_size, &mut state.rngs[i]);
                let g = sample_transitions(&gen_refs, cfg.batch_size, &mut state.rngs[i]);
                let eb = DiscBatch::from_transitions(env, &state.policies[i], e)?;
                let gb = DiscBatch::from_transitions(env, &state.policies[i], g)?;
                let reg = reg_features(cfg.reg_source, &eb, &gb);
                let l = msrd_discriminator_loss(&state.model, i, &eb, &gb, &reg, cfg.l2_squared)?;
                state.residual_adams[i].step(&mut state.model.residuals[i].net, &l.residual_grad)?;
                if state.defer_task_update {
                    task_acc.add_scaled(&l.task_grad, 1.0);
                } else {
                    state.task_adam.step(&mut state.model.task.net, &l.task_grad)?;
                }
                last[i] = Some(l);
            }
            if state.defer_task_update {
                task_acc.scale(1.0 / n as f64);
                state.task_adam.step(&mut state.model.task.net, &task_acc)?;
            }
        }
        let mut rows = Vec::with_capacity(n);
        for (i, gen) in gens.iter_mut().enumerate() {
            assign_pseudo_rewards(env, &state.model, i, gen)?;
            improve_policy(
                &mut state.policies[i],
                &mut state.policy_opts[i],
                env,
                gen,
                RewardField::Pseudo,
                &update_cfg,
            )
            .map_err(|e| match e {
                Error::Training(m) => Error::Training(format!("epoch {epoch}, strategy {i}: {m}")),
                other => other,
            })?;
            let (mp, mt) = mean_rewards(gen);
            rows.push(EpochRecord {
                epoch,
                strategy: i,
                disc_loss: last[i].as_ref().map_or(f64::NAN, |l| l.disc_loss),
                regularizer: last[i].as_ref().map_or(f64::NAN, |l| l.reg_value),
                mean_pseudo_reward: mp,
                mean_task_reward: mt,
            });
        }
        state.epoch += 1;
        check_finite(state)?;
        after_epoch(state, &rows)?;
        log.extend(rows);
    }
    Ok(log)
}

fn check_finite(state: &MsrdTrainState) -> Result<()> {
    if let Some(l) = state.model.task.net.first_non_finite_layer() {
        return Err(Error::Training(format!(
            "task reward layer {l} non-finite after epoch {}",
            state.epoch
        )));
    }
    for (i, r) in state.model.residuals.iter().enumerate() {
        if let Some(l) = r.net.first_non_finite_layer() {
            return Err(Error::Training(format!(
                "strategy {i} residual layer {l} non-finite after epoch {}",
                state.epoch
            )));
        }
    }
    Ok(())
}

/// Initialises and runs `cfg.epochs` epochs.
pub fn msrd_train(
    env: &EnvModel,
    demos: &DemoSet,
    cfg: &MsrdConfig,
    policy_cfg: &PolicyConfig,
    rng: &mut Rng,
) -> Result<(MsrdTrainState, Vec<EpochRecord>)> {
    let mut state = msrd_init(env, demos, cfg, policy_cfg, rng)?;
    let log = msrd_train_epochs(&mut state, env, demos, cfg, policy_cfg, cfg.epochs, |_, _| Ok(()))?;
    Ok((state, log))
}

/// Checkpoint layout (`MSRDCKPT`, version 1): `u32 N`, `u64 epoch`,
/// `u64 seed`, `u8 defer`, `f64[N] alphas`, task network, N residual
/// networks, N policies, task Adam state, N residual Adam states, N policy
/// optimiser states, N generator states.
pub fn write_checkpoint<W: Write>(w: &mut W, s: &MsrdTrainState) -> Result<()> {
    write_magic(w, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let n = s.model.n_strategies();
    w.write_u32::<LE>(n as u32)?;
    w.write_u64::<LE>(s.epoch as u64)?;
    w.write_u64::<LE>(s.seed)?;
    w.write_u8(s.defer_task_update as u8)?;
    write_f64s(w, &s.model.alphas)?;
    write_mlp_body(w, &s.model.task.net)?;
    for r in &s.model.residuals {
        write_mlp_body(w, &r.net)?;
    }
    for p in &s.policies {
        write_policy(w, p)?;
    }
    write_adam(w, &s.task_adam)?;
    for a in &s.residual_adams {
        write_adam(w, a)?;
    }
    for o in &s.policy_opts {
        write_policy_opt(w, o)?;
    }
    for r in &s.rngs {
        write_rng(w, r)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<MsrdTrainState> {
    read_magic(r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let n = read_u32(r)? as usize;
    if n == 0 || n > 1 << 16 {
        return Err(Error::Format(format!("implausible strategy count {n}")));
    }
    let epoch = read_u64(r)? as usize;
    let seed = read_u64(r)?;
    let defer_task_update = match read_u8(r)? {
        0 => false,
        1 => true,
        t => return Err(Error::Format(format!("bad defer flag {t}"))),
    };
    let alphas = read_f64s(r, n)?;
    let fmt = |e: Error| Error::Format(e.to_string());
    let task = RewardNet::from_params(read_mlp_body(r)?).map_err(fmt)?;
    let residuals = (0..n)
        .map(|_| RewardNet::from_params(read_mlp_body(r)?).map_err(fmt))
        .collect::<Result<Vec<_>>>()?;
    let policies = (0..n).map(|_| read_policy(r)).collect::<Result<Vec<_>>>()?;
    let task_adam = read_adam(r)?;
    let residual_adams = (0..n).map(|_| read_adam(r)).collect::<Result<Vec<_>>>()?;
    let policy_opts = (0..n).map(|_| read_policy_opt(r)).collect::<Result<Vec<_>>>()?;
    let rngs = (0..n).map(|_| read_rng(r)).collect::<Result<Vec<_>>>()?;
    let model = MsrdRewardModel::new(task, residuals, alphas).map_err(fmt)?;
    if !task_adam.m.same_shape(&model.task.net)
        || residual_adams
            .iter()
            .zip(&model.residuals)
            .any(|(a, r)| !a.m.same_shape(&r.net))
    {
        return Err(Error::Format("optimiser state does not match network shapes".into()));
    }
    Ok(MsrdTrainState {
        model,
        policies,
        policy_opts,
        task_adam,
        residual_adams,
        rngs,
        epoch,
        defer_task_update,
        seed,
    })
}

pub fn save_checkpoint(path: &Path, s: &MsrdTrainState) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, s)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MsrdTrainState> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&mut bytes.as_slice())
}

/// Result of the unstructured distillation ablation.
#[derive(Debug, Clone)]
pub struct VanillaOutcome {
    pub task: RewardNet,
    pub combined: Vec<RewardNet>,
    pub policies: Vec<Policy>,
    pub log: Vec<EpochRecord>,
}

/// Same loop as [`msrd_train_epochs`] with one standalone reward network per
/// strategy, tied to the task network only through `mean |R_i - R_0|`.
pub fn vanilla_distill_train(
    env: &EnvModel,
    demos: &DemoSet,
    cfg: &MsrdConfig,
    policy_cfg: &PolicyConfig,
    rng: &mut Rng,
) -> Result<VanillaOutcome> {
    check_demos(demos, env, cfg.k_rollouts)?;
    let n = demos.n_strategies();
    let seed: u64 = rng.random();
    let (mut task, mut policies) =
        init_reward_and_policies(env, &cfg.hidden_sizes, policy_cfg, n, seed)?;
    let mut crng = rng_from_seed(derive_seed(seed, STREAM_RESIDUAL));
    let mut combined = (0..n)
        .map(|_| RewardNet::new(env.feature_dim(), &cfg.hidden_sizes, OutputInit::Scaled(0.1), &mut crng))
        .collect::<Result<Vec<_>>>()?;
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let mut task_adam = AdamState::new(&task.net, adam_cfg);
    let mut adams: Vec<AdamState> = combined.iter().map(|c| AdamState::new(&c.net, adam_cfg)).collect();
    let mut opts: Vec<PolicyOptimizer> =
        policies.iter().map(|p| PolicyOptimizer::new(p, policy_cfg.lr)).collect();
    let mut rngs: Vec<Rng> = (0..n).map(|i| strategy_stream(seed, i)).collect();
    let update_cfg = policy_cfg.update();
    let k = cfg.k_rollouts;
    let mut log = Vec::with_capacity(cfg.epochs * n);
    for epoch in 0..cfg.epochs {
        let mut gens: Vec<Vec<Trajectory>> = policies
            .iter()
            .zip(rngs.iter_mut())
            .map(|(p, r)| collect_rollouts(p, env, k, r))
            .collect::<Result<_>>()?;
        let experts: Vec<Vec<&Trajectory>> = (0..n)
            .map(|i| {
                tag_strategy(&mut gens[i], i);
                sample_demos(&demos.strategies[i], k, &mut rngs[i])
            })
            .collect();
        let mut last: Vec<Option<VanillaLoss>> = vec![None; n];
        for _ in 0..cfg.disc_steps {
            let mut acc = task.net.zeros_like();
            for i in 0..n {
                let gen_refs: Vec<&Trajectory> = gens[i].iter().collect();
                let e = sample_transitions(&experts[i], cfg.batch_size, &mut rngs[i]);
                let g = sample_transitions(&gen_refs, cfg.batch_size, &mut rngs[i]);
                let eb = DiscBatch::from_transitions(env, &policies[i], e)?;
                let gb = DiscBatch::from_transitions(env, &policies[i], g)?;
                let reg = reg_features(cfg.reg_source, &eb, &gb);
                let l = vanilla_distill_loss(&task, &combined[i], &eb, &gb, &reg, cfg.l2_squared)?;
                adams[i].step(&mut combined[i].net, &l.combined_grad)?;
                if cfg.defer_task_update {
                    acc.add_scaled(&l.task_grad, 1.0);
                } else {
                    task_adam.step(&mut task.net, &l.task_grad)?;
                }
                last[i] = Some(l);
            }
            if cfg.defer_task_update {
                acc.scale(1.0 / n as f64);
                task_adam.step(&mut task.net, &acc)?;
            }
        }
        for (i, gen) in gens.iter_mut().enumerate() {
            for t in gen.iter_mut() {
                for tr in &mut t.transitions {
                    tr.pseudo_reward = Some(combined[i].eval(&env.reward_features(&tr.state, &tr.action))?);
                }
            }
            improve_policy(&mut policies[i], &mut opts[i], env, gen, RewardField::Pseudo, &update_cfg)?;
            let (mp, mt) = mean_rewards(gen);
            log.push(EpochRecord {
                epoch,
                strategy: i,
                disc_loss: last[i].as_ref().map_or(f64::NAN, |l| l.disc_loss),
                regularizer: last[i].as_ref().map_or(f64::NAN, |l| l.reg_value),
                mean_pseudo_reward: mp,
                mean_task_reward: mt,
            });
        }
        if !task.net.is_finite() || combined.iter().any(|c| !c.net.is_finite()) {
            return Err(Error::Training(format!("reward parameters non-finite after epoch {epoch}")));
        }
    }
    Ok(VanillaOutcome {
        task,
        combined,
        policies,
        log,
    })
}
