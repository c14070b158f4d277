//! Evaluation harness: noise-injection datasets, correlations against the
//! ground truth, strategy cross-evaluation, reward slices and the exact
//! Max-Ent trajectory distribution on an enumerable gridworld.

use serde::{Deserialize, Serialize};

use crate::airl::RewardNet;
use crate::config::EvalConfig;
use crate::diversity::DemoSet;
use crate::envs::{enumerate_trajectories, EnumeratedTrajectory, EnvModel, GridWorld};
use crate::msrd::MsrdRewardModel;
use crate::numcore::Rng;
use crate::policy::{rollout, Policy, Trajectory};
use crate::{Error, Result};

/// A trajectory from the evaluation set with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTrajectory {
    pub traj: Trajectory,
    pub noise: f64,
    pub true_return: f64,
}

/// For each policy and noise level, `per_level` rollouts in which every
/// action is replaced by a uniformly random one with probability `noise`.
pub fn noise_injection_dataset(
    policies: &[Policy],
    env: &EnvModel,
    noise_levels: &[f64],
    per_level: usize,
    rng: &mut Rng,
) -> Result<Vec<EvalTrajectory>> {
    if noise_levels.is_empty() {
        return Err(Error::Usage("noise_levels must be non-empty".into()));
    }
    let mut out = Vec::with_capacity(policies.len() * noise_levels.len() * per_level);
    for (k, p) in policies.iter().enumerate() {
        for &eps in noise_levels {
            for _ in 0..per_level {
                let mut traj = rollout(p, env, eps, rng)?;
                traj.strategy_id = Some(k);
                let true_return = traj.discounted_task_return(env.gamma());
                out.push(EvalTrajectory {
                    traj,
                    noise: eps,
                    true_return,
                });
            }
        }
    }
    Ok(out)
}

/// Pearson product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Usage(format!(
            "pearson needs equal lengths >= 2 (got {} and {})",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(format!(
            "constant input (var x = {sxx}, var y = {syy}) over {} points",
            xs.len()
        )));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `Some(r)`, or `None` when the correlation is undefined.
pub fn pearson_opt(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    match pearson(xs, ys) {
        Ok(r) => Ok(Some(r)),
        Err(Error::UndefinedCorrelation(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// `sum_t gamma^t r(s_t, a_t)`, or the plain sum when `discounted` is false.
pub fn trajectory_reward_sum(
    reward: impl Fn(&[f64], &[f64]) -> Result<f64>,
    traj: &Trajectory,
    gamma: f64,
    discounted: bool,
) -> Result<f64> {
    let mut total = 0.0;
    let mut disc = 1.0;
    for tr in &traj.transitions {
        total += disc * reward(&tr.state, &tr.action)?;
        if discounted {
            disc *= gamma;
        }
    }
    Ok(total)
}

/// Probability of every enumerated trajectory under
/// `p(tau) ∝ exp(sum_t gamma^t r(s_t, a_t))`, normalised with log-sum-exp.
pub fn maxent_likelihood_oracle(
    reward: impl Fn(&[f64], &[f64]) -> Result<f64>,
    grid: &GridWorld,
    horizon: usize,
) -> Result<Vec<(EnumeratedTrajectory, f64)>> {
    let trajs = enumerate_trajectories(grid, horizon)?;
    let mut returns = Vec::with_capacity(trajs.len());
    for t in &trajs {
        let mut ret = 0.0;
        let mut disc = 1.0;
        for (s, a) in t.states.iter().zip(&t.actions) {
            ret += disc * reward(&[s.0 as f64], &[*a as f64])?;
            disc *= grid.gamma;
        }
        returns.push(ret);
    }
    let max = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Training("non-finite trajectory return in oracle".into()));
    }
    let z: f64 = returns.iter().map(|r| (r - max).exp()).sum();
    let log_z = max + z.ln();
    Ok(trajs
        .into_iter()
        .zip(returns)
        .map(|(t, r)| (t, (r - log_z).exp()))
        .collect())
}

/// Cross-evaluation of strategy rewards on strategy demonstrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossEval {
    /// `raw[i][j]`: mean over strategy `j`'s demos of the undiscounted sum of
    /// strategy reward `i`.
    pub raw: Vec<Vec<f64>>,
    /// Each row mapped affinely onto `[0, 1]`.
    pub normalized: Vec<Vec<f64>>,
    /// Rows with max = min, mapped to all 0.5.
    pub degenerate_rows: Vec<bool>,
    /// Rows whose own-strategy column is the unique maximum.
    pub diagonal_argmax: usize,
}

pub fn row_normalize(row: &[f64]) -> (Vec<f64>, bool) {
    let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return (vec![0.5; row.len()], true);
    }
    (row.iter().map(|v| (v - min) / (max - min)).collect(), false)
}

/// `reward(i, state, action)` is strategy reward `i`.
pub fn cross_eval_with(
    demos: &DemoSet,
    n_rewards: usize,
    reward: impl Fn(usize, &[f64], &[f64]) -> Result<f64>,
) -> Result<CrossEval> {
    if demos.strategies.is_empty() || demos.strategies.iter().any(Vec::is_empty) {
        return Err(Error::Usage("cross evaluation needs demos for every strategy".into()));
    }
    let mut raw = Vec::with_capacity(n_rewards);
    for i in 0..n_rewards {
        let mut row = Vec::with_capacity(demos.n_strategies());
        for ds in &demos.strategies {
            let mut total = 0.0;
            for t in ds {
                total += trajectory_reward_sum(|s, a| reward(i, s, a), t, 1.0, false)?;
            }
            row.push(total / ds.len() as f64);
        }
        raw.push(row);
    }
    let mut normalized = Vec::with_capacity(n_rewards);
    let mut degenerate_rows = Vec::with_capacity(n_rewards);
    let mut diagonal_argmax = 0;
    for (i, row) in raw.iter().enumerate() {
        let (norm, degenerate) = row_normalize(row);
        if !degenerate && i < row.len() {
            let own = row[i];
            if row.iter().enumerate().all(|(j, v)| j == i || *v < own) {
                diagonal_argmax += 1;
            }
        }
        normalized.push(norm);
        degenerate_rows.push(degenerate);
    }
    Ok(CrossEval {
        raw,
        normalized,
        degenerate_rows,
        diagonal_argmax,
    })
}

/// Residual `Rt_i` evaluated on every strategy's demonstrations.
pub fn strategy_cross_eval(env: &EnvModel, model: &MsrdRewardModel, demos: &DemoSet) -> Result<CrossEval> {
    cross_eval_with(demos, model.n_strategies(), |i, s, a| {
        model.residual(i, &env.reward_features(s, a))
    })
}

/// Reward along one axis of the input with every other coordinate frozen at
/// `base`.
pub fn reward_slice(
    reward: impl Fn(&[f64]) -> Result<f64>,
    base: &[f64],
    dim: usize,
    grid: &[f64],
) -> Result<Vec<f64>> {
    if dim >= base.len() {
        return Err(Error::IndexOutOfRange {
            what: "slice dimension",
            index: dim,
            len: base.len(),
        });
    }
    let mut x = base.to_vec();
    grid.iter()
        .map(|&g| {
            x[dim] = g;
            reward(&x)
        })
        .collect()
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceCurve {
    pub name: String,
    pub values: Vec<f64>,
    /// Grid value at which the curve peaks.
    pub argmax: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slices {
    /// Index of the varied reward-feature coordinate.
    pub dim: usize,
    pub base: Vec<f64>,
    pub grid: Vec<f64>,
    pub curves: Vec<SliceCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub index: usize,
    pub strategy: usize,
    pub noise: f64,
    pub true_return: f64,
    pub msrd_task: f64,
    /// Per-strategy AIRL baselines, in strategy order.
    pub airl: Vec<f64>,
}

/// Mean absolute reward magnitudes over demonstration transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Magnitudes {
    pub mean_abs_task: f64,
    /// `mean |Rt_i|` on strategy `i`'s demos.
    pub mean_abs_residual: Vec<f64>,
    /// `mean |alpha_i Rt_i|` on strategy `i`'s demos.
    pub mean_abs_weighted_residual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env: String,
    pub n_strategies: usize,
    pub n_eval_trajectories: usize,
    pub noise_levels: Vec<f64>,
    /// H1: Pearson r between the learned task reward's discounted trajectory
    /// sum and the true discounted return on the noise-injection set.
    pub msrd_task_r: Option<f64>,
    /// H1 for the AIRL baseline trained on strategy `i` alone.
    pub airl_task_r: Vec<Option<f64>>,
    /// H2: per-step Pearson r between `Rt_i` and the recorded diversity
    /// reward on strategy `i`'s demos.
    pub msrd_strategy_r: Vec<Option<f64>>,
    pub airl_strategy_r: Vec<Option<f64>>,
    pub msrd_strategy_r_mean: Option<f64>,
    pub airl_strategy_r_mean: Option<f64>,
    pub cross_eval: CrossEval,
    pub airl_cross_eval: Option<CrossEval>,
    pub slices: Slices,
    pub magnitudes: Magnitudes,
    pub scatter: Vec<ScatterPoint>,
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

/// Per-step correlation of a reward with the diversity annotations on
/// strategy `i`'s demonstrations.
pub fn strategy_correlation(
    env: &EnvModel,
    demos: &DemoSet,
    i: usize,
    reward: impl Fn(&[f64]) -> Result<f64>,
) -> Result<Option<f64>> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for tr in demos.strategies[i].iter().flat_map(|t| &t.transitions) {
        if let Some(d) = tr.diversity {
            xs.push(reward(&env.reward_features(&tr.state, &tr.action))?);
            ys.push(d);
        }
    }
    if xs.len() < 2 {
        return Ok(None);
    }
    pearson_opt(&xs, &ys)
}

/// Task-reward correlation of a reward network over the evaluation set.
pub fn task_correlation(
    env: &EnvModel,
    eval_set: &[EvalTrajectory],
    reward: impl Fn(&[f64]) -> Result<f64>,
) -> Result<(Option<f64>, Vec<f64>)> {
    let sums = eval_set
        .iter()
        .map(|e| {
            trajectory_reward_sum(|s, a| reward(&env.reward_features(s, a)), &e.traj, env.gamma(), true)
        })
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<f64> = eval_set.iter().map(|e| e.true_return).collect();
    Ok((pearson_opt(&sums, &truth)?, sums))
}

/// Default slice for an environment: position for point-balance (velocity
/// and action at 0), cell index for the gridworld.
pub fn default_slice_base(env: &EnvModel) -> (Vec<f64>, usize) {
    (vec![0.0; env.feature_dim()], 0)
}

/// H1/H2 comparison of an MSRD model against per-strategy AIRL rewards.
pub fn run_h1_h2_report(
    env: &EnvModel,
    demos: &DemoSet,
    eval_set: &[EvalTrajectory],
    model: &MsrdRewardModel,
    airl: &[RewardNet],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let n = model.n_strategies();
    if n != demos.n_strategies() {
        return Err(Error::Config(format!(
            "model has {n} strategies, demo set has {}",
            demos.n_strategies()
        )));
    }
    if !airl.is_empty() && airl.len() != n {
        return Err(Error::Config(format!(
            "{} AIRL baselines for {n} strategies",
            airl.len()
        )));
    }
    let (msrd_task_r, msrd_sums) = task_correlation(env, eval_set, |x| model.task_reward(x))?;
    let mut airl_task_r = Vec::with_capacity(airl.len());
    let mut airl_sums = Vec::with_capacity(airl.len());
    for a in airl {
        let (r, s) = task_correlation(env, eval_set, |x| a.eval(x))?;
        airl_task_r.push(r);
        airl_sums.push(s);
    }
    let msrd_strategy_r = (0..n)
        .map(|i| strategy_correlation(env, demos, i, |x| model.residual(i, x)))
        .collect::<Result<Vec<_>>>()?;
    let airl_strategy_r = airl
        .iter()
        .enumerate()
        .map(|(i, a)| strategy_correlation(env, demos, i, |x| a.eval(x)))
        .collect::<Result<Vec<_>>>()?;
    let cross_eval = strategy_cross_eval(env, model, demos)?;
    let airl_cross_eval = if airl.is_empty() {
        None
    } else {
        Some(cross_eval_with(demos, n, |i, s, a| airl[i].eval(&env.reward_features(s, a)))?)
    };

    let (base, dim) = default_slice_base(env);
    let grid = match env {
        EnvModel::GridWorld(g) => (0..g.n_cells()).map(|c| c as f64).collect(),
        EnvModel::PointBalance(_) => linspace(-cfg.slice_range, cfg.slice_range, cfg.slice_points),
    };
    let mut curves = Vec::with_capacity(1 + 2 * n);
    let mut push = |name: String, values: Vec<f64>| {
        let argmax = grid[argmax(&values)];
        curves.push(SliceCurve {
            name,
            values,
            argmax,
        });
    };
    push("msrd_task".into(), reward_slice(|x| model.task_reward(x), &base, dim, &grid)?);
    for i in 0..n {
        push(format!("msrd_residual_{i}"), reward_slice(|x| model.residual(i, x), &base, dim, &grid)?);
    }
    for (i, a) in airl.iter().enumerate() {
        push(format!("airl_{i}"), reward_slice(|x| a.eval(x), &base, dim, &grid)?);
    }
    let slices = Slices {
        dim,
        base,
        grid,
        curves,
    };

    let mut task_abs = Vec::new();
    let mut res_abs = Vec::with_capacity(n);
    let mut wres_abs = Vec::with_capacity(n);
    for (i, ds) in demos.strategies.iter().enumerate() {
        let mut acc = Vec::new();
        for tr in ds.iter().flat_map(|t| &t.transitions) {
            let x = env.reward_features(&tr.state, &tr.action);
            task_abs.push(model.task_reward(&x)?.abs());
            acc.push(model.residual(i, &x)?.abs());
        }
        let m = acc.iter().sum::<f64>() / acc.len().max(1) as f64;
        res_abs.push(m);
        wres_abs.push(model.alphas[i] * m);
    }
    let magnitudes = Magnitudes {
        mean_abs_task: task_abs.iter().sum::<f64>() / task_abs.len().max(1) as f64,
        mean_abs_residual: res_abs,
        mean_abs_weighted_residual: wres_abs,
    };

    let scatter = eval_set
        .iter()
        .enumerate()
        .map(|(k, e)| ScatterPoint {
            index: k,
            strategy: e.traj.strategy_id.unwrap_or(0),
            noise: e.noise,
            true_return: e.true_return,
            msrd_task: msrd_sums[k],
            airl: airl_sums.iter().map(|s| s[k]).collect(),
        })
        .collect();

    Ok(EvalReport {
        env: env.name().into(),
        n_strategies: n,
        n_eval_trajectories: eval_set.len(),
        noise_levels: cfg.noise_levels.clone(),
        msrd_task_r,
        airl_task_r,
        msrd_strategy_r_mean: mean_defined(&msrd_strategy_r),
        airl_strategy_r_mean: mean_defined(&airl_strategy_r),
        msrd_strategy_r,
        airl_strategy_r,
        cross_eval,
        airl_cross_eval,
        slices,
        magnitudes,
        scatter,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }

    /// One row per evaluation trajectory. The `*_norm` columns rescale each
    /// quantity to `[0, 1]` within the trajectory's strategy.
    pub fn scatter_csv(&self) -> String {
        let mut cols = vec!["true_return".to_string(), "msrd_task".to_string()];
        let n_airl = self.scatter.first().map_or(0, |p| p.airl.len());
        cols.extend((0..n_airl).map(|i| format!("airl_{i}")));
        let values = |p: &ScatterPoint| {
            let mut v = vec![p.true_return, p.msrd_task];
            v.extend_from_slice(&p.airl);
            v
        };
        let mut lo = vec![vec![f64::INFINITY; cols.len()]; self.n_strategies];
        let mut hi = vec![vec![f64::NEG_INFINITY; cols.len()]; self.n_strategies];
        for p in &self.scatter {
            for (c, v) in values(p).into_iter().enumerate() {
                let s = p.strategy.min(self.n_strategies.saturating_sub(1));
                lo[s][c] = lo[s][c].min(v);
                hi[s][c] = hi[s][c].max(v);
            }
        }
        let mut out = String::from("index,strategy,noise");
        for c in &cols {
            out.push_str(&format!(",{c}"));
        }
        for c in &cols {
            out.push_str(&format!(",{c}_norm"));
        }
        out.push('\n');
        for p in &self.scatter {
            let s = p.strategy.min(self.n_strategies.saturating_sub(1));
            let v = values(p);
            out.push_str(&format!("{},{},{}", p.index, p.strategy, p.noise));
            for x in &v {
                out.push_str(&format!(",{x}"));
            }
            for (c, x) in v.iter().enumerate() {
                let span = hi[s][c] - lo[s][c];
                let norm = if span > 0.0 { (x - lo[s][c]) / span } else { 0.5 };
                out.push_str(&format!(",{norm}"));
            }
            out.push('\n');
        }
        out
    }

    /// Long format: `row,col,raw,normalized`.
    pub fn heatmap_csv(cross: &CrossEval) -> String {
        let mut out = String::from("reward,demos,raw,normalized\n");
        for (i, (r, nrow)) in cross.raw.iter().zip(&cross.normalized).enumerate() {
            for (j, (v, nv)) in r.iter().zip(nrow).enumerate() {
                out.push_str(&format!("{i},{j},{v},{nv}\n"));
            }
        }
        out
    }

    pub fn slices_csv(&self) -> String {
        let mut out = String::from("x");
        for c in &self.slices.curves {
            out.push_str(&format!(",{}", c.name));
        }
        out.push('\n');
        for (k, g) in self.slices.grid.iter().enumerate() {
            out.push_str(&g.to_string());
            for c in &self.slices.curves {
                out.push_str(&format!(",{}", c.values[k]));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diversity::{DiversityMode, GenerationMeta};
    use crate::envs::{GridState, PointBalance};
    use crate::numcore::rng_from_seed;
    use crate::policy::Transition;

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let aff: Vec<f64> = xs.iter().map(|x| 2.0 * x + 3.0).collect();
        assert!((pearson(&xs, &aff).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(
            pearson(&xs, &[1.0; 4]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0], &[2.0]).is_err());
        assert_eq!(pearson_opt(&xs, &[2.0; 4]).unwrap(), None);
    }

    fn const_traj(t: usize) -> Trajectory {
        Trajectory {
            transitions: (0..t)
                .map(|_| Transition {
                    state: vec![0.0, 0.0],
                    action: vec![0.0],
                    log_prob: 0.0,
                    task_reward: 0.0,
                    pseudo_reward: None,
                    diversity: None,
                })
                .collect(),
            strategy_id: None,
        }
    }

    #[test]
    fn reward_sums() {
        let t = const_traj(3);
        assert_eq!(trajectory_reward_sum(|_, _| Ok(0.0), &t, 0.5, true).unwrap(), 0.0);
        assert!((trajectory_reward_sum(|_, _| Ok(1.0), &t, 0.5, true).unwrap() - 1.75).abs() < 1e-15);
        assert_eq!(trajectory_reward_sum(|_, _| Ok(1.0), &t, 0.5, false).unwrap(), 3.0);
    }

    #[test]
    fn maxent_oracle_examples() {
        let g = GridWorld::default();
        let p = maxent_likelihood_oracle(|_, _| Ok(0.3), &g, 3).unwrap();
        assert_eq!(p.len(), 64);
        assert!(p.iter().all(|(_, q)| (q - 1.0 / 64.0).abs() < 1e-15));
        let target = vec![0usize, 0, 0];
        let special = |s: &[f64], a: &[f64]| -> Result<f64> {
            Ok(if s[0] == 0.0 && a[0] == 0.0 { 10.0 } else { 0.0 })
        };
        // "up" from the top-left corner stays put, so the all-up sequence
        // collects 10 at every step: 10 * (1 + 0.9 + 0.81).
        let p = maxent_likelihood_oracle(special, &g, 3).unwrap();
        let total: f64 = p.iter().map(|(_, q)| q).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let rets: Vec<f64> = p
            .iter()
            .map(|(t, _)| {
                let mut r = 0.0;
                let mut d = 1.0;
                for (s, a) in t.states.iter().zip(&t.actions) {
                    r += d * special(&[s.0 as f64], &[*a as f64]).unwrap();
                    d *= 0.9;
                }
                r
            })
            .collect();
        let z: f64 = rets.iter().map(|r| r.exp()).sum();
        let (t, q) = p.iter().find(|(t, _)| t.actions == target).unwrap();
        assert_eq!(t.states[0], GridState(0));
        assert!((q - (10.0 * 2.71f64).exp() / z).abs() < 1e-12);
        assert!((q - rets[0].exp() / z).abs() < 1e-12);
    }

    #[test]
    fn maxent_single_high_return_closed_form() {
        // 1-step horizon: exactly one trajectory (action 1 from the start)
        // earns +10.
        let g = GridWorld::default();
        let p = maxent_likelihood_oracle(|_, a| Ok(if a[0] == 1.0 { 10.0 } else { 0.0 }), &g, 1).unwrap();
        let expect = 10f64.exp() / (10f64.exp() + 3.0);
        let q = p.iter().find(|(t, _)| t.actions == vec![1]).unwrap().1;
        assert!((q - expect).abs() < 1e-12);
    }

    fn demo_set(per: Vec<Vec<f64>>) -> DemoSet {
        // per[j] = x-positions visited by strategy j's single demo
        DemoSet {
            env_name: "point_balance".into(),
            state_dim: 2,
            action_dim: 1,
            strategies: per
                .into_iter()
                .enumerate()
                .map(|(j, xs)| {
                    vec![Trajectory {
                        transitions: xs
                            .into_iter()
                            .map(|x| Transition {
                                state: vec![x, 0.0],
                                action: vec![0.0],
                                log_prob: 0.0,
                                task_reward: -x.abs(),
                                pseudo_reward: None,
                                diversity: Some(x),
                            })
                            .collect(),
                        strategy_id: Some(j),
                    }]
                })
                .collect(),
            meta: GenerationMeta {
                mode: DiversityMode::Kl,
                seed: 0,
                weight: 0.0,
                iterations: 0,
            },
        }
    }

    #[test]
    fn synthetic_cross_eval_is_diagonal() {
        let centers = [-1.0, 0.0, 1.0];
        let d = demo_set(centers.iter().map(|c| vec![*c; 4]).collect());
        let ce = cross_eval_with(&d, 3, |i, s, _| {
            Ok(if (s[0] - centers[i]).abs() < 0.1 { 1.0 } else { 0.0 })
        })
        .unwrap();
        assert_eq!(ce.diagonal_argmax, 3);
        for (i, row) in ce.normalized.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
        let zero = cross_eval_with(&d, 3, |_, _, _| Ok(0.0)).unwrap();
        assert!(zero.degenerate_rows.iter().all(|b| *b));
        assert!(zero.raw.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(zero.diagonal_argmax, 0);
    }

    #[test]
    fn cross_eval_is_permutation_equivariant() {
        let d = demo_set(vec![vec![0.1, 0.5], vec![-0.3, 0.2], vec![0.9, -0.7]]);
        let w = [0.3, -1.2, 2.0];
        let f = |i: usize, s: &[f64]| (w[i] * s[0]).sin() + i as f64 * s[0];
        let ce = cross_eval_with(&d, 3, |i, s, _| Ok(f(i, s))).unwrap();
        let perm = [2, 0, 1];
        let dp = DemoSet {
            strategies: perm
                .iter()
                .enumerate()
                .map(|(new, &old)| {
                    let mut ts = d.strategies[old].clone();
                    ts.iter_mut().for_each(|t| t.strategy_id = Some(new));
                    ts
                })
                .collect(),
            ..d.clone()
        };
        let cp = cross_eval_with(&dp, 3, |i, s, _| Ok(f(perm[i], s))).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(cp.raw[a][b], ce.raw[perm[a]][perm[b]]);
            }
        }
    }

    #[test]
    fn row_normalize_keeps_order() {
        let row = [3.0, -1.0, 2.5, 7.0];
        let (n, deg) = row_normalize(&row);
        assert!(!deg);
        assert_eq!(n[1], 0.0);
        assert_eq!(n[3], 1.0);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(row[i] < row[j], n[i] < n[j]);
            }
        }
        assert_eq!(row_normalize(&[2.0, 2.0]), (vec![0.5, 0.5], true));
    }

    #[test]
    fn slices() {
        let grid = linspace(-1.0, 1.0, 5);
        let flat = reward_slice(|_| Ok(4.0), &[0.0, 0.0, 0.0], 0, &grid).unwrap();
        assert!(flat.iter().all(|v| *v == 4.0));
        let w = [0.5, -2.0, 1.0];
        let lin = reward_slice(|x| Ok(x.iter().zip(&w).map(|(a, b)| a * b).sum()), &[0.3, 0.1, 0.0], 1, &grid)
            .unwrap();
        for k in 1..lin.len() {
            assert!(((lin[k] - lin[k - 1]) - w[1] * 0.5).abs() < 1e-12);
        }
        assert!(reward_slice(|_| Ok(0.0), &[0.0], 1, &grid).is_err());
    }

    #[test]
    fn noise_extremes() {
        let env = EnvModel::PointBalance(PointBalance::default());
        let p = Policy::new(&env, &[4], -1.0, &mut rng_from_seed(1)).unwrap();
        let a = noise_injection_dataset(std::slice::from_ref(&p), &env, &[0.0], 2, &mut rng_from_seed(3)).unwrap();
        let mut rng = rng_from_seed(3);
        let clean: Vec<Trajectory> = (0..2).map(|_| rollout(&p, &env, 0.0, &mut rng).unwrap()).collect();
        for (e, c) in a.iter().zip(&clean) {
            assert_eq!(e.traj.transitions, c.transitions);
            assert_eq!(e.true_return, c.discounted_task_return(env.gamma()));
        }
        let b = noise_injection_dataset(&[p], &env, &[1.0], 1, &mut rng_from_seed(4)).unwrap();
        // every action drawn uniformly within the action bounds
        assert!(b[0].traj.transitions.iter().all(|t| t.action[0].abs() <= 2.0));
        assert!(noise_injection_dataset(&[], &env, &[], 1, &mut rng_from_seed(4)).is_err());
    }
}
