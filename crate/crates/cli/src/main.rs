use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msrd_core::config::RunConfig;
use msrd_core::pipeline::{self, Method, TrainOptions};
use msrd_core::{Error, Result};

#[derive(Parser)]
#[command(name = "msrd", version, about = "Multi-strategy reward distillation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; every key has a default.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `seed` (and MSRD_SEED).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; defaults to `<out_dir>/<stage>` from the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train diverse strategy policies and record their demonstrations.
    GenDemos {
        #[command(flatten)]
        common: Common,
    },
    /// Learn rewards from a demo file.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        demos: PathBuf,
        /// msrd, airl or vanilla_distill.
        #[arg(long, value_name = "NAME", default_value = "msrd")]
        method: String,
        /// Continue an msrd run from a checkpoint.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
        /// Threads for the per-strategy AIRL baselines.
        #[arg(long, value_name = "N", default_value_t = 1)]
        jobs: usize,
    },
    /// Score trained rewards against the demonstrations.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding msrd.ckpt and optionally airl_<i>.bin.
        #[arg(long, value_name = "DIR")]
        checkpoints: PathBuf,
        #[arg(long, value_name = "PATH")]
        demos: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env_overrides(|k| std::env::var(k).ok())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &RunConfig, stage: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| cfg.out_dir.join(stage))
}

fn fmt_r(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDemos { common } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common, &cfg, "demos");
            let res = pipeline::gen_demos(&cfg, &out)?;
            println!(
                "wrote {} strategies x {} demos ({} mode) to {}",
                res.demos.n_strategies(),
                res.demos.min_per_strategy(),
                cfg.diversity.mode.as_str(),
                out.display()
            );
        }
        Command::Train {
            common,
            demos,
            method,
            resume,
            jobs,
        } => {
            let method = Method::parse(&method)?;
            if jobs == 0 {
                return Err(Error::Usage("--jobs must be >= 1".into()));
            }
            let cfg = load_config(&common)?;
            let out = out_dir(&common, &cfg, method.as_str());
            let opts = TrainOptions { resume, jobs };
            let m = pipeline::train(&cfg, &demos, method, &out, &opts)?;
            println!(
                "{} training done; {} files written to {}",
                method.as_str(),
                m.outputs.len(),
                out.display()
            );
        }
        Command::Eval {
            common,
            checkpoints,
            demos,
        } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common, &cfg, "eval");
            let report = pipeline::evaluate(&cfg, &checkpoints, &demos, &out)?;
            println!("task reward r (msrd): {}", fmt_r(report.msrd_task_r));
            for (i, r) in report.airl_task_r.iter().enumerate() {
                println!("task reward r (airl {i}): {}", fmt_r(*r));
            }
            println!("strategy reward r (msrd mean): {}", fmt_r(report.msrd_strategy_r_mean));
            if !report.airl_strategy_r.is_empty() {
                println!("strategy reward r (airl mean): {}", fmt_r(report.airl_strategy_r_mean));
            }
            println!(
                "own-strategy maxima: {}/{}",
                report.cross_eval.diagonal_argmax, report.n_strategies
            );
            println!("report written to {}", Path::new(&out).join(pipeline::REPORT_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
