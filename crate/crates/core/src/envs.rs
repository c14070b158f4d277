//! Toy MDPs with known task rewards.
//!
//! * [`PointBalance`]: a 1-d double integrator (`x' = x + dt v`,
//!   `v' = v + dt a`) whose task reward is `-|x|`, maximised exactly on
//!   `x = 0`. No termination; every episode runs for the full horizon.
//! * [`GridWorld`]: a small deterministic grid with wall semantics and a
//!   per-cell reward table, small enough to enumerate every action sequence.
//!
//! States and actions cross the generic API as `f64` vectors. A gridworld
//! state is `[cell]` and a discrete action is `[index]`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::numcore::Rng;
use crate::{Error, Result};

pub const ENUMERATION_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointBalanceState {
    pub x: f64,
    pub v: f64,
}

impl PointBalanceState {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.v]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointBalance {
    pub dt: f64,
    pub horizon: usize,
    pub init_noise: f64,
    pub gamma: f64,
    /// Actions are clipped to `[-action_limit, action_limit]`.
    pub action_limit: f64,
    pub x_limit: f64,
    pub v_limit: f64,
}

impl Default for PointBalance {
    fn default() -> Self {
        Self {
            dt: 0.05,
            horizon: 100,
            init_noise: 0.1,
            gamma: 0.99,
            action_limit: 2.0,
            x_limit: 3.0,
            v_limit: 5.0,
        }
    }
}

impl PointBalance {
    pub fn reset(&self, rng: &mut Rng) -> PointBalanceState {
        if self.init_noise <= 0.0 {
            return PointBalanceState { x: 0.0, v: 0.0 };
        }
        let n = self.init_noise;
        let x = rng.random_range(-n..=n);
        let v = rng.random_range(-n..=n);
        PointBalanceState {
            x: x.clamp(-self.x_limit, self.x_limit),
            v: v.clamp(-self.v_limit, self.v_limit),
        }
    }

    pub fn task_reward(&self, s: PointBalanceState) -> f64 {
        -s.x.abs()
    }

    pub fn step(&self, s: PointBalanceState, action: f64) -> (PointBalanceState, f64) {
        let a = if action.is_nan() {
            0.0
        } else {
            action.clamp(-self.action_limit, self.action_limit)
        };
        let reward = self.task_reward(s);
        let next = PointBalanceState {
            x: (s.x + self.dt * s.v).clamp(-self.x_limit, self.x_limit),
            v: (s.v + self.dt * a).clamp(-self.v_limit, self.v_limit),
        };
        (next, reward)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState(pub usize);

/// Grid moves: up, right, down, left.
pub const GRID_ACTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridWorld {
    pub width: usize,
    pub height: usize,
    pub start: usize,
    pub gamma: f64,
    pub horizon: usize,
    /// Reward for acting from each cell, row-major.
    pub cell_rewards: Vec<f64>,
}

impl Default for GridWorld {
    fn default() -> Self {
        Self::with_goal(5, 5, 0.9, 6)
    }
}

impl GridWorld {
    /// Start at the top-left corner, +1 in the bottom-right goal cell, -1 in
    /// the cell left of the centre.
    pub fn with_goal(width: usize, height: usize, gamma: f64, horizon: usize) -> Self {
        let n = width * height;
        let mut cell_rewards = vec![0.0; n];
        cell_rewards[n - 1] = 1.0;
        let centre = (height / 2) * width + width / 2;
        if centre > 0 && centre - 1 != 0 && centre - 1 != n - 1 {
            cell_rewards[centre - 1] = -1.0;
        }
        Self {
            width,
            height,
            start: 0,
            gamma,
            horizon,
            cell_rewards,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("grid dimensions must be > 0".into()));
        }
        if self.start >= self.n_cells() {
            return Err(Error::Config(format!("grid start {} out of range", self.start)));
        }
        if self.cell_rewards.len() != self.n_cells() {
            return Err(Error::Config("grid reward table size mismatch".into()));
        }
        Ok(())
    }

    pub fn task_reward(&self, s: GridState) -> f64 {
        self.cell_rewards[s.0]
    }

    pub fn step(&self, s: GridState, action: usize) -> (GridState, f64) {
        let (col, row) = (s.0 % self.width, s.0 / self.width);
        let (col, row) = match action {
            0 if row > 0 => (col, row - 1),
            1 if col + 1 < self.width => (col + 1, row),
            2 if row + 1 < self.height => (col, row + 1),
            3 if col > 0 => (col - 1, row),
            _ => (col, row),
        };
        (GridState(row * self.width + col), self.task_reward(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Continuous { dim: usize, limit: f64 },
    Discrete { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EnvModel {
    PointBalance(PointBalance),
    GridWorld(GridWorld),
}

impl EnvModel {
    pub fn name(&self) -> &'static str {
        match self {
            EnvModel::PointBalance(_) => "point_balance",
            EnvModel::GridWorld(_) => "gridworld",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            EnvModel::PointBalance(_) => 2,
            EnvModel::GridWorld(_) => 1,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            EnvModel::PointBalance(p) => ActionSpace::Continuous {
                dim: 1,
                limit: p.action_limit,
            },
            EnvModel::GridWorld(_) => ActionSpace::Discrete { n: GRID_ACTIONS },
        }
    }

    /// Stored action length (a discrete action is stored as its index).
    pub fn action_dim(&self) -> usize {
        match self.action_space() {
            ActionSpace::Continuous { dim, .. } => dim,
            ActionSpace::Discrete { .. } => 1,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvModel::PointBalance(p) => p.horizon,
            EnvModel::GridWorld(g) => g.horizon,
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            EnvModel::PointBalance(p) => p.gamma,
            EnvModel::GridWorld(g) => g.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon() == 0 {
            return Err(Error::Config("env.horizon must be >= 1".into()));
        }
        let g = self.gamma();
        if !(g > 0.0 && g < 1.0) {
            return Err(Error::Config(format!("env.gamma must lie in (0, 1), got {g}")));
        }
        match self {
            EnvModel::PointBalance(p) => {
                if !(p.dt > 0.0 && p.dt.is_finite()) {
                    return Err(Error::Config("env.dt must be positive".into()));
                }
                if !(p.init_noise >= 0.0 && p.init_noise.is_finite()) {
                    return Err(Error::Config("env.init_noise must be >= 0".into()));
                }
                if !(p.action_limit > 0.0 && p.action_limit.is_finite()) {
                    return Err(Error::Config("env.action_limit must be positive".into()));
                }
                Ok(())
            }
            EnvModel::GridWorld(g) => g.validate(),
        }
    }

    /// Policy network input for a state.
    pub fn observation(&self, state: &[f64]) -> Vec<f64> {
        match self {
            EnvModel::PointBalance(_) => state.to_vec(),
            EnvModel::GridWorld(g) => one_hot(state[0] as usize, g.n_cells()),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            EnvModel::PointBalance(_) => 2,
            EnvModel::GridWorld(g) => g.n_cells(),
        }
    }

    /// Reward network input: observation concatenated with the action
    /// (one-hot for discrete actions).
    pub fn reward_features(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let mut f = self.observation(state);
        match self.action_space() {
            ActionSpace::Continuous { .. } => f.extend_from_slice(action),
            ActionSpace::Discrete { n } => f.extend(one_hot(action[0] as usize, n)),
        }
        f
    }

    pub fn feature_dim(&self) -> usize {
        self.obs_dim()
            + match self.action_space() {
                ActionSpace::Continuous { dim, .. } => dim,
                ActionSpace::Discrete { n } => n,
            }
    }

    pub fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            EnvModel::PointBalance(p) => p.reset(rng).to_vec(),
            EnvModel::GridWorld(g) => vec![g.start as f64],
        }
    }

    /// Advances one step and returns `(next_state, task_reward(state, action))`.
    pub fn step(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, f64) {
        match self {
            EnvModel::PointBalance(p) => {
                let s = PointBalanceState {
                    x: state[0],
                    v: state[1],
                };
                let (next, r) = p.step(s, action[0]);
                (next.to_vec(), r)
            }
            EnvModel::GridWorld(g) => {
                let a = (action[0].max(0.0) as usize).min(GRID_ACTIONS - 1);
                let (next, r) = g.step(GridState(state[0] as usize), a);
                (vec![next.0 as f64], r)
            }
        }
    }

    pub fn task_reward(&self, state: &[f64], _action: &[f64]) -> f64 {
        match self {
            EnvModel::PointBalance(p) => p.task_reward(PointBalanceState {
                x: state[0],
                v: state[1],
            }),
            EnvModel::GridWorld(g) => g.task_reward(GridState(state[0] as usize)),
        }
    }

    /// Uniformly random action over the declared action bounds.
    pub fn random_action(&self, rng: &mut Rng) -> Vec<f64> {
        match self.action_space() {
            ActionSpace::Continuous { dim, limit } => {
                (0..dim).map(|_| rng.random_range(-limit..=limit)).collect()
            }
            ActionSpace::Discrete { n } => vec![rng.random_range(0..n) as f64],
        }
    }
}

fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    if i < n {
        v[i] = 1.0;
    }
    v
}

pub fn env_reset(env: &EnvModel, rng: &mut Rng) -> Vec<f64> {
    env.reset(rng)
}

pub fn env_step(env: &EnvModel, state: &[f64], action: &[f64]) -> (Vec<f64>, f64) {
    env.step(state, action)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedTrajectory {
    pub actions: Vec<usize>,
    /// `horizon + 1` states, starting from the start cell.
    pub states: Vec<GridState>,
    pub rewards: Vec<f64>,
    pub discounted_return: f64,
}

/// Every action sequence of length `horizon` from the start cell.
pub fn enumerate_trajectories(grid: &GridWorld, horizon: usize) -> Result<Vec<EnumeratedTrajectory>> {
    grid.validate()?;
    let required = (GRID_ACTIONS as u128).checked_pow(horizon as u32).unwrap_or(u128::MAX);
    if required > ENUMERATION_BUDGET as u128 {
        return Err(Error::BudgetExceeded {
            required,
            budget: ENUMERATION_BUDGET,
        });
    }
    let count = required as usize;
    let mut out = Vec::with_capacity(count);
    for code in 0..count {
        let mut actions = Vec::with_capacity(horizon);
        let mut c = code;
        for _ in 0..horizon {
            actions.push(c % GRID_ACTIONS);
            c /= GRID_ACTIONS;
        }
        actions.reverse();
        let mut states = vec![GridState(grid.start)];
        let mut rewards = Vec::with_capacity(horizon);
        let mut ret = 0.0;
        let mut disc = 1.0;
        for &a in &actions {
            let (next, r) = grid.step(*states.last().unwrap(), a);
            rewards.push(r);
            ret += disc * r;
            disc *= grid.gamma;
            states.push(next);
        }
        out.push(EnumeratedTrajectory {
            actions,
            states,
            rewards,
            discounted_return: ret,
        });
    }
    Ok(out)
}
