//! File-level stages: generate demonstrations, train, evaluate.
//!
//! Every stage writes into one output directory and finishes with a
//! `manifest.json` holding the full config snapshot, its hash and SHA-256
//! digests of the stage's inputs and outputs. Nothing time-dependent is
//! recorded, so identical `(config, seed)` runs produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::airl::{airl_train, AirlLogRow, RewardNet};
use crate::config::RunConfig;
use crate::diversity::{train_heterogeneous_policies, DemoSet, DiversityLogRow};
use crate::envs::EnvModel;
use crate::eval::{noise_injection_dataset, run_h1_h2_report, EvalReport};
use crate::msrd::{
    epoch_log_csv, load_checkpoint, msrd_init, msrd_train_epochs, save_checkpoint,
    vanilla_distill_train, MsrdTrainState, EPOCH_CSV_HEADER,
};
use crate::numcore::codec::save_mlp;
use crate::numcore::{derive_seed, rng_from_seed};
use crate::persist::{
    demo_set_to_text, load_airl, load_demo_set, load_policy_set, save_airl, save_demo_set,
    save_policy_set, AirlCheckpoint,
};
use crate::policy::Policy;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEMOS_FILE: &str = "demos.bin";
pub const DEMOS_TEXT_FILE: &str = "demos.jsonl";
pub const POLICIES_FILE: &str = "policies.bin";
pub const DIVERSITY_LOG_FILE: &str = "diversity_log.csv";
pub const MSRD_CHECKPOINT_FILE: &str = "msrd.ckpt";
pub const MSRD_LOG_FILE: &str = "msrd_log.csv";
pub const AIRL_LOG_FILE: &str = "airl_log.csv";
pub const VANILLA_TASK_FILE: &str = "vanilla_task.bin";
pub const VANILLA_LOG_FILE: &str = "vanilla_log.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SCATTER_FILE: &str = "scatter.csv";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const AIRL_HEATMAP_FILE: &str = "airl_heatmap.csv";
pub const SLICES_FILE: &str = "slices.csv";

const STAGE_DEMOS: u64 = 11;
const STAGE_MSRD: u64 = 12;
const STAGE_AIRL: u64 = 13;
const STAGE_VANILLA: u64 = 14;
const STAGE_EVAL: u64 = 15;

pub fn airl_file(i: usize) -> String {
    format!("airl_{i}.bin")
}

pub fn vanilla_file(i: usize) -> String {
    format!("vanilla_{i}.bin")
}

pub fn msrd_epoch_file(epoch: usize) -> String {
    format!("msrd_epoch_{epoch:05}.ckpt")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Msrd,
    Airl,
    VanillaDistill,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Msrd => "msrd",
            Method::Airl => "airl",
            Method::VanillaDistill => "vanilla_distill",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "msrd" => Ok(Method::Msrd),
            "airl" => Ok(Method::Airl),
            "vanilla_distill" => Ok(Method::VanillaDistill),
            other => Err(Error::Usage(format!(
                "unknown method {other:?} (expected msrd, airl or vanilla_distill)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    /// Full TOML rendering of the effective configuration.
    pub config: String,
    /// Stage parameters that are not part of the config (method, resume).
    pub params: BTreeMap<String, String>,
    /// Input path -> SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name -> SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    fn new(stage: &str, cfg: &RunConfig) -> Self {
        Self {
            stage: stage.into(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.to_toml_string(),
            params: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    /// Hashes the listed files in `dir` and writes the manifest there.
    fn finish(mut self, dir: &Path, outputs: &[String]) -> Result<Self> {
        for name in outputs {
            self.outputs.insert(name.clone(), file_sha256(&dir.join(name))?);
        }
        let text = serde_json::to_string_pretty(&self)
            .map_err(|e| Error::Format(format!("manifest: {e}")))?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn diversity_log_csv(rows: &[DiversityLogRow]) -> String {
    let mut s = String::from("iteration,strategy,mean_task_return,mean_diversity,classifier_accuracy\n");
    for r in rows {
        let acc = r.classifier_accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.iteration, r.strategy, r.mean_task_return, r.mean_diversity, acc
        );
    }
    s
}

pub fn airl_log_csv(logs: &[Vec<AirlLogRow>]) -> String {
    let mut s = String::from("strategy,iteration,disc_loss,mean_pseudo_reward,mean_task_reward\n");
    for (i, rows) in logs.iter().enumerate() {
        for r in rows {
            let _ = writeln!(
                s,
                "{i},{},{},{},{}",
                r.iteration, r.disc_loss, r.mean_pseudo_reward, r.mean_task_reward
            );
        }
    }
    s
}

#[derive(Debug, Clone)]
pub struct GenDemosOutput {
    pub demos: DemoSet,
    pub policies: Vec<Policy>,
    pub manifest: Manifest,
}

/// Trains the strategy policies and writes the demo set (binary and text),
/// the policy set, the training log and a manifest into `out`.
pub fn gen_demos(cfg: &RunConfig, out: &Path) -> Result<GenDemosOutput> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    ensure_dir(out)?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, STAGE_DEMOS));
    let het = train_heterogeneous_policies(&env, &cfg.diversity, &cfg.policy, &mut rng)?;
    save_demo_set(&out.join(DEMOS_FILE), &het.demos)?;
    std::fs::write(out.join(DEMOS_TEXT_FILE), demo_set_to_text(&het.demos)?)?;
    save_policy_set(&out.join(POLICIES_FILE), &het.policies)?;
    std::fs::write(out.join(DIVERSITY_LOG_FILE), diversity_log_csv(&het.log))?;
    let mut m = Manifest::new("gen-demos", cfg);
    m.params.insert("mode".into(), cfg.diversity.mode.as_str().into());
    m.params.insert("generation_seed".into(), het.demos.meta.seed.to_string());
    let outputs = [DEMOS_FILE, DEMOS_TEXT_FILE, POLICIES_FILE, DIVERSITY_LOG_FILE].map(String::from);
    let manifest = m.finish(out, &outputs)?;
    Ok(GenDemosOutput {
        demos: het.demos,
        policies: het.policies,
        manifest,
    })
}

/// Loads a demo set and checks it against the configured environment.
pub fn load_demos_for(env: &EnvModel, path: &Path) -> Result<DemoSet> {
    let demos = load_demo_set(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("cannot read demo file {}: {io}", path.display()),
        )),
        other => other,
    })?;
    demos.validate()?;
    demos.check_env(env)?;
    Ok(demos)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub resume: Option<PathBuf>,
    /// Worker threads for per-strategy AIRL baselines; 0 uses rayon's default.
    pub jobs: usize,
}

/// Runs one trainer on the demo file and writes checkpoints, a CSV log and a
/// manifest into `out`.
pub fn train(
    cfg: &RunConfig,
    demos_path: &Path,
    method: Method,
    out: &Path,
    opts: &TrainOptions,
) -> Result<Manifest> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let demos = load_demos_for(&env, demos_path)?;
    if opts.resume.is_some() && method != Method::Msrd {
        return Err(Error::Usage("--resume is only supported for method msrd".into()));
    }
    ensure_dir(out)?;
    let mut m = Manifest::new("train", cfg);
    m.params.insert("method".into(), method.as_str().into());
    m.input(demos_path)?;
    let outputs = match method {
        Method::Msrd => train_msrd(cfg, &env, &demos, out, opts, &mut m)?,
        Method::Airl => train_airl(cfg, &env, &demos, out, opts.jobs)?,
        Method::VanillaDistill => train_vanilla(cfg, &env, &demos, out)?,
    };
    m.finish(out, &outputs)
}

fn train_msrd(
    cfg: &RunConfig,
    env: &EnvModel,
    demos: &DemoSet,
    out: &Path,
    opts: &TrainOptions,
    m: &mut Manifest,
) -> Result<Vec<String>> {
    let mut state = match &opts.resume {
        Some(path) => {
            m.input(path)?;
            m.params.insert("resume".into(), path.display().to_string());
            let s = load_checkpoint(path)?;
            check_resume(&s, cfg, demos)?;
            s
        }
        None => {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, STAGE_MSRD));
            msrd_init(env, demos, &cfg.msrd, &cfg.generator, &mut rng)?
        }
    };
    let start = state.epoch;
    let remaining = cfg.msrd.epochs.saturating_sub(start);
    // Keep log rows from before the resume point so a resumed run leaves the
    // same log as an uninterrupted one.
    let mut log = String::from(EPOCH_CSV_HEADER);
    log.push('\n');
    if start > 0 {
        if let Ok(prev) = std::fs::read_to_string(out.join(MSRD_LOG_FILE)) {
            for line in prev.lines().skip(1) {
                let epoch = line.split(',').next().and_then(|e| e.parse::<usize>().ok());
                if epoch.is_some_and(|e| e < start) {
                    log.push_str(line);
                    log.push('\n');
                }
            }
        }
    }
    let mut outputs = Vec::new();
    let every = cfg.msrd.checkpoint_every;
    msrd_train_epochs(&mut state, env, demos, &cfg.msrd, &cfg.generator, remaining, |s, rows| {
        for r in rows {
            log.push_str(&r.csv_row());
            log.push('\n');
        }
        if every > 0 && s.epoch % every == 0 {
            let name = msrd_epoch_file(s.epoch);
            save_checkpoint(&out.join(&name), s)?;
            outputs.push(name);
        }
        Ok(())
    })?;
    std::fs::write(out.join(MSRD_LOG_FILE), &log)?;
    save_checkpoint(&out.join(MSRD_CHECKPOINT_FILE), &state)?;
    outputs.push(MSRD_LOG_FILE.into());
    outputs.push(MSRD_CHECKPOINT_FILE.into());
    Ok(outputs)
}

fn check_resume(s: &MsrdTrainState, cfg: &RunConfig, demos: &DemoSet) -> Result<()> {
    let n = demos.n_strategies();
    if s.model.n_strategies() != n {
        return Err(Error::Config(format!(
            "checkpoint has {} strategies, demo set has {n}",
            s.model.n_strategies()
        )));
    }
    if s.model.alphas != cfg.msrd.alphas(n)? {
        return Err(Error::Config("checkpoint alphas differ from the configured msrd.alpha".into()));
    }
    if s.defer_task_update != cfg.msrd.defer_task_update {
        return Err(Error::Config(
            "checkpoint defer_task_update differs from msrd.defer_task_update".into(),
        ));
    }
    Ok(())
}

fn train_airl(
    cfg: &RunConfig,
    env: &EnvModel,
    demos: &DemoSet,
    out: &Path,
    jobs: usize,
) -> Result<Vec<String>> {
    let base = derive_seed(cfg.seed, STAGE_AIRL);
    let run = || -> Result<Vec<_>> {
        (0..demos.n_strategies())
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_from_seed(derive_seed(base, i as u64));
                airl_train(env, &demos.strategies[i], &cfg.airl, &cfg.generator, &mut rng)
            })
            .collect()
    };
    let outcomes = if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start {jobs} worker threads: {e}")))?
            .install(run)?
    } else {
        run()?
    };
    let mut outputs = Vec::new();
    let mut logs = Vec::with_capacity(outcomes.len());
    for (i, o) in outcomes.into_iter().enumerate() {
        let name = airl_file(i);
        save_airl(
            &out.join(&name),
            &AirlCheckpoint {
                strategy: Some(i),
                reward: o.reward,
                policy: o.policy,
            },
        )?;
        outputs.push(name);
        logs.push(o.log);
    }
    std::fs::write(out.join(AIRL_LOG_FILE), airl_log_csv(&logs))?;
    outputs.push(AIRL_LOG_FILE.into());
    Ok(outputs)
}

fn train_vanilla(cfg: &RunConfig, env: &EnvModel, demos: &DemoSet, out: &Path) -> Result<Vec<String>> {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, STAGE_VANILLA));
    let v = vanilla_distill_train(env, demos, &cfg.msrd, &cfg.generator, &mut rng)?;
    save_mlp(&out.join(VANILLA_TASK_FILE), &v.task.net)?;
    let mut outputs = vec![VANILLA_TASK_FILE.to_string()];
    for (i, (reward, policy)) in v.combined.into_iter().zip(v.policies).enumerate() {
        let name = vanilla_file(i);
        save_airl(
            &out.join(&name),
            &AirlCheckpoint {
                strategy: Some(i),
                reward,
                policy,
            },
        )?;
        outputs.push(name);
    }
    std::fs::write(out.join(VANILLA_LOG_FILE), epoch_log_csv(&v.log))?;
    outputs.push(VANILLA_LOG_FILE.into());
    Ok(outputs)
}

/// Loads the per-strategy AIRL baselines from `dir` if all `n` are present.
fn load_airl_baselines(dir: &Path, n: usize, feature_dim: usize) -> Result<Vec<RewardNet>> {
    if !(0..n).all(|i| dir.join(airl_file(i)).exists()) {
        return Ok(Vec::new());
    }
    (0..n)
        .map(|i| {
            let c = load_airl(&dir.join(airl_file(i)))?;
            if c.strategy.is_some_and(|s| s != i) || c.reward.net.input_dim() != feature_dim {
                return Err(Error::Config(format!(
                    "{} does not match strategy {i} of this environment",
                    airl_file(i)
                )));
            }
            Ok(c.reward)
        })
        .collect()
}

/// Evaluates the MSRD checkpoint in `checkpoints` (plus any AIRL baselines
/// found next to it) against the demo set. The generating policies are read
/// from `policies.bin` beside the demo file.
pub fn evaluate(
    cfg: &RunConfig,
    checkpoints: &Path,
    demos_path: &Path,
    out: &Path,
) -> Result<EvalReport> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let demos = load_demos_for(&env, demos_path)?;
    let policies_path = demos_path.with_file_name(POLICIES_FILE);
    let policies = load_policy_set(&policies_path)?;
    if policies.len() != demos.n_strategies() {
        return Err(Error::Config(format!(
            "{} holds {} policies for {} strategies",
            policies_path.display(),
            policies.len(),
            demos.n_strategies()
        )));
    }
    let ckpt_path = checkpoints.join(MSRD_CHECKPOINT_FILE);
    let state = load_checkpoint(&ckpt_path)?;
    let n = demos.n_strategies();
    if state.model.n_strategies() != n {
        return Err(Error::Config(format!(
            "checkpoint has {} strategies, demo set has {n}",
            state.model.n_strategies()
        )));
    }
    if state.model.task.net.input_dim() != env.feature_dim() {
        return Err(Error::Config(format!(
            "checkpoint reward input is {}-d, environment features are {}-d",
            state.model.task.net.input_dim(),
            env.feature_dim()
        )));
    }
    let airl = load_airl_baselines(checkpoints, n, env.feature_dim())?;

    let mut rng = rng_from_seed(derive_seed(cfg.seed, STAGE_EVAL));
    let eval_set =
        noise_injection_dataset(&policies, &env, &cfg.eval.noise_levels, cfg.eval.per_level, &mut rng)?;
    let report = run_h1_h2_report(&env, &demos, &eval_set, &state.model, &airl, &cfg.eval)?;

    ensure_dir(out)?;
    std::fs::write(out.join(REPORT_FILE), report.to_json()? + "\n")?;
    std::fs::write(out.join(SCATTER_FILE), report.scatter_csv())?;
    std::fs::write(out.join(HEATMAP_FILE), EvalReport::heatmap_csv(&report.cross_eval))?;
    std::fs::write(out.join(SLICES_FILE), report.slices_csv())?;
    let mut outputs: Vec<String> =
        [REPORT_FILE, SCATTER_FILE, HEATMAP_FILE, SLICES_FILE].map(String::from).to_vec();
    if let Some(c) = &report.airl_cross_eval {
        std::fs::write(out.join(AIRL_HEATMAP_FILE), EvalReport::heatmap_csv(c))?;
        outputs.push(AIRL_HEATMAP_FILE.into());
    }
    let mut m = Manifest::new("eval", cfg);
    m.input(demos_path)?;
    m.input(&policies_path)?;
    m.input(&ckpt_path)?;
    for i in 0..airl.len() {
        m.input(&checkpoints.join(airl_file(i)))?;
    }
    m.finish(out, &outputs)?;
    Ok(report)
}
