//! Run configuration.
//!
//! A TOML document with one table per stage. Every key has a default and
//! unknown keys are rejected. Only the seed and output directory may be
//! overridden from the environment (`MSRD_SEED`, `MSRD_OUT`).
//!
//! ```toml
//! seed = 7
//! out_dir = "runs/demo"
//!
//! [env]
//! name = "point_balance"
//! horizon = 100
//!
//! [msrd]
//! alpha = 0.01
//! reg_source = "both"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{EnvModel, GridWorld, PointBalance};
use crate::policy::PolicyUpdateConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// `point_balance` or `gridworld`.
    pub name: String,
    /// Defaults to 100 (point-balance) or 6 (gridworld).
    pub horizon: Option<usize>,
    pub init_noise: f64,
    pub dt: f64,
    pub action_limit: f64,
    pub grid_w: usize,
    pub grid_h: usize,
    /// Defaults to 0.99 (point-balance) or 0.9 (gridworld).
    pub gamma: Option<f64>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let pb = PointBalance::default();
        Self {
            name: "point_balance".into(),
            horizon: None,
            init_noise: pb.init_noise,
            dt: pb.dt,
            action_limit: pb.action_limit,
            grid_w: 5,
            grid_h: 5,
            gamma: None,
        }
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<EnvModel> {
        let env = match self.name.as_str() {
            "point_balance" => {
                let d = PointBalance::default();
                EnvModel::PointBalance(PointBalance {
                    dt: self.dt,
                    horizon: self.horizon.unwrap_or(d.horizon),
                    init_noise: self.init_noise,
                    gamma: self.gamma.unwrap_or(d.gamma),
                    action_limit: self.action_limit,
                    ..d
                })
            }
            "gridworld" => EnvModel::GridWorld(GridWorld::with_goal(
                self.grid_w,
                self.grid_h,
                self.gamma.unwrap_or(0.9),
                self.horizon.unwrap_or(6),
            )),
            other => {
                return Err(Error::Config(format!(
                    "unknown env.name {other:?} (expected point_balance or gridworld)"
                )))
            }
        };
        env.validate()?;
        Ok(env)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityMode {
    Diayn,
    Kl,
}

impl DiversityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiversityMode::Diayn => "diayn",
            DiversityMode::Kl => "kl",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "diayn" => Ok(DiversityMode::Diayn),
            "kl" => Ok(DiversityMode::Kl),
            other => Err(Error::Format(format!("unknown diversity mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiversityConfig {
    pub mode: DiversityMode,
    pub n_strategies: usize,
    pub weight: f64,
    pub iterations: usize,
    /// `M`, demonstrations recorded per strategy.
    pub demos_per_strategy: usize,
    pub rollouts_per_iteration: usize,
    pub classifier_lr: f64,
    pub classifier_steps: usize,
    pub classifier_hidden: Vec<usize>,
    /// Keep every strategy policy's log-std at its initial value.
    pub fixed_std: bool,
    /// Clamp Gaussian means to the action limit inside the KL bonus.
    pub kl_clip_means: bool,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self {
            mode: DiversityMode::Kl,
            n_strategies: 4,
            weight: 0.2,
            iterations: 200,
            demos_per_strategy: 10,
            rollouts_per_iteration: 10,
            classifier_lr: 1e-3,
            classifier_steps: 5,
            classifier_hidden: vec![32, 32],
            fixed_std: true,
            kl_clip_means: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub lr: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub hidden_sizes: Vec<usize>,
    pub init_log_std: f64,
    /// Train the Gaussian log-std; when false it stays at `init_log_std`.
    pub learn_log_std: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let u = PolicyUpdateConfig::default();
        Self {
            lr: u.lr,
            clip: u.clip,
            entropy_coef: u.entropy_coef,
            epochs: u.epochs,
            hidden_sizes: vec![32, 32],
            init_log_std: -0.5,
            learn_log_std: u.learn_log_std,
        }
    }
}

impl PolicyConfig {
    /// Slower than the demo-policy default: discriminator rewards are weak
    /// early on and fast updates drift the generator into the walls.
    pub fn generator_default() -> Self {
        Self {
            lr: 1e-3,
            ..Self::default()
        }
    }

    pub fn update(&self) -> PolicyUpdateConfig {
        PolicyUpdateConfig {
            lr: self.lr,
            clip: self.clip,
            entropy_coef: self.entropy_coef,
            epochs: self.epochs,
            learn_log_std: self.learn_log_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AirlConfig {
    pub lr: f64,
    pub iterations: usize,
    /// Transitions drawn from each of the expert and generated sets per
    /// discriminator step.
    pub batch_size: usize,
    pub k_rollouts: usize,
    pub disc_steps: usize,
    pub hidden_sizes: Vec<usize>,
}

impl Default for AirlConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            iterations: 200,
            batch_size: 256,
            k_rollouts: 5,
            disc_steps: 5,
            hidden_sizes: vec![32, 32],
        }
    }
}

/// Which transitions the residual-output regulariser averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegSource {
    Expert,
    Generated,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsrdConfig {
    /// Shared residual weight.
    pub alpha: f64,
    /// Optional per-strategy override of `alpha`.
    pub alpha_per_strategy: Option<Vec<f64>>,
    pub reg_source: RegSource,
    pub k_rollouts: usize,
    pub epochs: usize,
    pub defer_task_update: bool,
    pub l2_squared: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub disc_steps: usize,
    pub hidden_sizes: Vec<usize>,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
    /// Collect all strategies' rollouts concurrently from the epoch-start
    /// snapshot. Results are identical to the sequential order.
    pub parallel_rollouts: bool,
}

impl Default for MsrdConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            alpha_per_strategy: None,
            reg_source: RegSource::Both,
            k_rollouts: 5,
            epochs: 200,
            defer_task_update: true,
            l2_squared: false,
            lr: 1e-3,
            batch_size: 256,
            disc_steps: 5,
            hidden_sizes: vec![32, 32],
            checkpoint_every: 50,
            parallel_rollouts: false,
        }
    }
}

impl MsrdConfig {
    pub fn alphas(&self, n: usize) -> Result<Vec<f64>> {
        let a = match &self.alpha_per_strategy {
            Some(v) if v.len() != n => {
                return Err(Error::Config(format!(
                    "msrd.alpha_per_strategy has {} entries for {n} strategies",
                    v.len()
                )))
            }
            Some(v) => v.clone(),
            None => vec![self.alpha; n],
        };
        if a.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("msrd alpha values must be finite and >= 0".into()));
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub noise_levels: Vec<f64>,
    /// Trajectories per (policy, noise level).
    pub per_level: usize,
    pub slice_points: usize,
    pub slice_range: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            noise_levels: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            per_level: 5,
            slice_points: 61,
            slice_range: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub diversity: DiversityConfig,
    /// Strategy policies trained by `gen-demos`.
    pub policy: PolicyConfig,
    /// Generator policies inside AIRL, MSRD and vanilla distillation.
    pub generator: PolicyConfig,
    pub airl: AirlConfig,
    pub msrd: MsrdConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            env: EnvConfig::default(),
            diversity: DiversityConfig::default(),
            policy: PolicyConfig::default(),
            generator: PolicyConfig::generator_default(),
            airl: AirlConfig::default(),
            msrd: MsrdConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Applies `MSRD_SEED` / `MSRD_OUT` from the given lookup.
    pub fn apply_env_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(s) = lookup("MSRD_SEED") {
            self.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("MSRD_SEED is not an integer: {s:?}")))?;
        }
        if let Some(o) = lookup("MSRD_OUT") {
            self.out_dir = PathBuf::from(o);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.build()?;
        let d = &self.diversity;
        if d.n_strategies < 2 {
            return Err(Error::Config("diversity.n_strategies must be >= 2".into()));
        }
        if d.demos_per_strategy == 0 || d.rollouts_per_iteration == 0 {
            return Err(Error::Config(
                "diversity.demos_per_strategy and rollouts_per_iteration must be >= 1".into(),
            ));
        }
        if !(d.weight.is_finite() && d.weight >= 0.0) {
            return Err(Error::Config("diversity.weight must be finite and >= 0".into()));
        }
        for (name, p) in [("policy", &self.policy), ("generator", &self.generator)] {
            if !(p.lr > 0.0 && p.clip > 0.0 && p.entropy_coef >= 0.0) || p.hidden_sizes.contains(&0) {
                return Err(Error::Config(format!("invalid {name} section")));
            }
        }
        if self.airl.k_rollouts == 0 || self.airl.batch_size == 0 || !(self.airl.lr > 0.0) {
            return Err(Error::Config("invalid airl section".into()));
        }
        let m = &self.msrd;
        if m.k_rollouts == 0 || m.batch_size == 0 || !(m.lr > 0.0) {
            return Err(Error::Config("invalid msrd section".into()));
        }
        if m.k_rollouts > d.demos_per_strategy {
            return Err(Error::Config(format!(
                "msrd.k_rollouts ({}) must not exceed diversity.demos_per_strategy ({})",
                m.k_rollouts, d.demos_per_strategy
            )));
        }
        m.alphas(d.n_strategies)?;
        if self.eval.noise_levels.is_empty()
            || self.eval.noise_levels.iter().any(|e| !(0.0..=1.0).contains(e))
        {
            return Err(Error::Config("eval.noise_levels must be non-empty, within [0,1]".into()));
        }
        if self.eval.per_level == 0 || self.eval.slice_points < 2 {
            return Err(Error::Config("invalid eval section".into()));
        }
        Ok(())
    }

    /// Canonical TOML rendering of the full configuration (defaults filled in).
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.diversity.n_strategies, 4);
        assert_eq!(c.diversity.demos_per_strategy, 10);
        assert_eq!(c.msrd.alpha, 0.01);
        assert!(c.msrd.defer_task_update);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_toml_str("[msrd]\nalpah = 0.1\n"),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn sections_parse() {
        let c = RunConfig::from_toml_str(
            "seed = 9\n[env]\nname = \"gridworld\"\ngrid_w = 3\ngrid_h = 3\n[msrd]\nreg_source = \"expert\"\nl2_squared = true\n[diversity]\nmode = \"diayn\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.msrd.reg_source, RegSource::Expert);
        assert_eq!(c.diversity.mode, DiversityMode::Diayn);
        assert_eq!(c.env.build().unwrap().horizon(), 6);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("[env]\nname = \"hopper\"\n").is_err());
        assert!(RunConfig::from_toml_str("[env]\ngamma = 1.5\n").is_err());
        assert!(RunConfig::from_toml_str("[diversity]\nn_strategies = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[msrd]\nalpha_per_strategy = [0.1]\n").is_err());
    }

    #[test]
    fn env_overrides_and_hash() {
        let mut c = RunConfig::default();
        let h0 = c.hash();
        c.apply_env_overrides(|k| match k {
            "MSRD_SEED" => Some("42".into()),
            "MSRD_OUT" => Some("/tmp/x".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x"));
        assert_ne!(c.hash(), h0);
        assert!(c.apply_env_overrides(|_| Some("nope".into())).is_err());
        let again = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(again, c);
    }
}
