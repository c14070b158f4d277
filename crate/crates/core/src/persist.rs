//! On-disk formats for demonstrations, policies and trained reward models.
//!
//! Every binary file starts with an 8-byte magic string and a `u32` version
//! and stores all numbers little-endian, floats as 64-bit.
//!
//! Trajectory file (`MSRDTRAJ`, version 1):
//!
//! ```text
//! header   str env_name, u32 state_dim, u32 action_dim, u32 n_strategies,
//!          u32 demos_per_strategy, u32 n_records,
//!          u8 mode (0 = diayn, 1 = kl), u64 seed, f64 weight, u64 iterations
//! record   u32 strategy_id, u32 T, then T steps of
//!          f64[state_dim] state, f64[action_dim] action, f64 log_prob,
//!          f64 task_reward, u8 has_diversity, f64 diversity (0 when absent)
//! ```
//!
//! Strings are a `u32` byte length followed by UTF-8 bytes. Records are
//! grouped by strategy in ascending order.
//!
//! The text variant is JSON lines: one header object, then one object per
//! trajectory.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::airl::RewardNet;
use crate::diversity::{DemoSet, DiversityMode, GenerationMeta};
use crate::numcore::codec::{
    eof_as_format, read_adam, read_adam_vec, read_f64, read_f64s, read_magic, read_mlp_body,
    read_str, read_u32, read_u64, read_u8, write_adam, write_adam_vec, write_f64s, write_magic,
    write_mlp_body, write_str,
};
use crate::policy::{Policy, PolicyHead, PolicyOptimizer, Trajectory, Transition};
use crate::{Error, Result};

pub const TRAJ_MAGIC: &[u8; 8] = b"MSRDTRAJ";
pub const POLICY_SET_MAGIC: &[u8; 8] = b"MSRDPSET";
pub const AIRL_MAGIC: &[u8; 8] = b"MSRDAIRL";
pub const FORMAT_VERSION: u32 = 1;

const NO_STRATEGY: u32 = u32::MAX;

pub fn write_policy<W: Write>(w: &mut W, p: &Policy) -> Result<()> {
    write_mlp_body(w, &p.net)?;
    match &p.head {
        PolicyHead::Gaussian { log_std } => {
            w.write_u8(0)?;
            w.write_u32::<LE>(log_std.len() as u32)?;
            write_f64s(w, log_std)
        }
        PolicyHead::Categorical { n } => {
            w.write_u8(1)?;
            w.write_u32::<LE>(*n as u32)?;
            Ok(())
        }
    }
}

pub fn read_policy<R: Read>(r: &mut R) -> Result<Policy> {
    let net = read_mlp_body(r)?;
    let tag = read_u8(r)?;
    let n = read_u32(r)? as usize;
    if n != net.output_dim() {
        return Err(Error::Format(format!(
            "policy head size {n} does not match network output {}",
            net.output_dim()
        )));
    }
    let head = match tag {
        0 => PolicyHead::Gaussian {
            log_std: read_f64s(r, n)?,
        },
        1 => PolicyHead::Categorical { n },
        t => return Err(Error::Format(format!("unknown policy head tag {t}"))),
    };
    Ok(Policy { net, head })
}

pub fn write_policy_opt<W: Write>(w: &mut W, o: &PolicyOptimizer) -> Result<()> {
    write_adam(w, &o.net)?;
    write_adam_vec(w, &o.log_std)
}

pub fn read_policy_opt<R: Read>(r: &mut R) -> Result<PolicyOptimizer> {
    Ok(PolicyOptimizer {
        net: read_adam(r)?,
        log_std: read_adam_vec(r)?,
    })
}

pub fn write_policy_set<W: Write>(w: &mut W, ps: &[Policy]) -> Result<()> {
    write_magic(w, POLICY_SET_MAGIC, FORMAT_VERSION)?;
    w.write_u32::<LE>(ps.len() as u32)?;
    for p in ps {
        write_policy(w, p)?;
    }
    Ok(())
}

pub fn read_policy_set<R: Read>(r: &mut R) -> Result<Vec<Policy>> {
    read_magic(r, POLICY_SET_MAGIC, FORMAT_VERSION)?;
    let n = read_u32(r)?;
    if n > 1 << 16 {
        return Err(Error::Format(format!("implausible policy count {n}")));
    }
    (0..n).map(|_| read_policy(r)).collect()
}

/// A trained single-strategy AIRL baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct AirlCheckpoint {
    pub strategy: Option<usize>,
    pub reward: RewardNet,
    pub policy: Policy,
}

pub fn write_airl<W: Write>(w: &mut W, c: &AirlCheckpoint) -> Result<()> {
    write_magic(w, AIRL_MAGIC, FORMAT_VERSION)?;
    w.write_u32::<LE>(c.strategy.map_or(NO_STRATEGY, |s| s as u32))?;
    write_mlp_body(w, &c.reward.net)?;
    write_policy(w, &c.policy)
}

pub fn read_airl<R: Read>(r: &mut R) -> Result<AirlCheckpoint> {
    read_magic(r, AIRL_MAGIC, FORMAT_VERSION)?;
    let s = read_u32(r)?;
    let reward = RewardNet::from_params(read_mlp_body(r)?).map_err(|e| Error::Format(e.to_string()))?;
    let policy = read_policy(r)?;
    Ok(AirlCheckpoint {
        strategy: (s != NO_STRATEGY).then_some(s as usize),
        reward,
        policy,
    })
}

fn mode_tag(m: DiversityMode) -> u8 {
    match m {
        DiversityMode::Diayn => 0,
        DiversityMode::Kl => 1,
    }
}

fn check_dims(t: &Trajectory, state_dim: usize, action_dim: usize) -> Result<()> {
    for tr in &t.transitions {
        if tr.state.len() != state_dim || tr.action.len() != action_dim {
            return Err(Error::Format("transition shape does not match header".into()));
        }
    }
    Ok(())
}

pub fn write_demo_set<W: Write>(w: &mut W, d: &DemoSet) -> Result<()> {
    write_magic(w, TRAJ_MAGIC, FORMAT_VERSION)?;
    write_str(w, &d.env_name)?;
    let records: usize = d.strategies.iter().map(Vec::len).sum();
    for v in [
        d.state_dim,
        d.action_dim,
        d.n_strategies(),
        d.min_per_strategy(),
        records,
    ] {
        w.write_u32::<LE>(v as u32)?;
    }
    w.write_u8(mode_tag(d.meta.mode))?;
    w.write_u64::<LE>(d.meta.seed)?;
    w.write_f64::<LE>(d.meta.weight)?;
    w.write_u64::<LE>(d.meta.iterations as u64)?;
    for t in d.all() {
        check_dims(t, d.state_dim, d.action_dim)?;
        w.write_u32::<LE>(t.strategy_id.map_or(NO_STRATEGY, |s| s as u32))?;
        w.write_u32::<LE>(t.len() as u32)?;
        for tr in &t.transitions {
            write_f64s(w, &tr.state)?;
            write_f64s(w, &tr.action)?;
            write_f64s(w, &[tr.log_prob, tr.task_reward])?;
            w.write_u8(tr.diversity.is_some() as u8)?;
            w.write_f64::<LE>(tr.diversity.unwrap_or(0.0))?;
        }
    }
    Ok(())
}

pub fn read_demo_set<R: Read>(r: &mut R) -> Result<DemoSet> {
    read_magic(r, TRAJ_MAGIC, FORMAT_VERSION)?;
    let env_name = read_str(r)?;
    let state_dim = read_u32(r)? as usize;
    let action_dim = read_u32(r)? as usize;
    let n = read_u32(r)? as usize;
    let _m = read_u32(r)?;
    let records = read_u32(r)? as usize;
    if state_dim == 0 || state_dim > 4096 || action_dim == 0 || action_dim > 4096 || n > 1 << 16 {
        return Err(Error::Format("implausible trajectory file header".into()));
    }
    let mode = match read_u8(r)? {
        0 => DiversityMode::Diayn,
        1 => DiversityMode::Kl,
        t => return Err(Error::Format(format!("unknown diversity mode tag {t}"))),
    };
    let meta = GenerationMeta {
        mode,
        seed: read_u64(r)?,
        weight: read_f64(r)?,
        iterations: read_u64(r)? as usize,
    };
    let mut strategies: Vec<Vec<Trajectory>> = vec![Vec::new(); n];
    for _ in 0..records {
        let sid = read_u32(r)?;
        if sid as usize >= n {
            return Err(Error::Format(format!("record strategy {sid} outside 0..{n}")));
        }
        let len = read_u32(r)? as usize;
        if len > 1 << 24 {
            return Err(Error::Format(format!("implausible trajectory length {len}")));
        }
        let mut transitions = Vec::with_capacity(len);
        for _ in 0..len {
            let state = read_f64s(r, state_dim)?;
            let action = read_f64s(r, action_dim)?;
            let lp_tr = read_f64s(r, 2)?;
            let has = read_u8(r)?;
            let dv = read_f64(r)?;
            transitions.push(Transition {
                state,
                action,
                log_prob: lp_tr[0],
                task_reward: lp_tr[1],
                pseudo_reward: None,
                diversity: match has {
                    0 => None,
                    1 => Some(dv),
                    t => return Err(Error::Format(format!("bad annotation flag {t}"))),
                },
            });
        }
        strategies[sid as usize].push(Trajectory {
            transitions,
            strategy_id: Some(sid as usize),
        });
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe).map_err(eof_as_format)? != 0 {
        return Err(Error::Format("trailing bytes after the last record".into()));
    }
    let d = DemoSet {
        env_name,
        state_dim,
        action_dim,
        strategies,
        meta,
    };
    d.validate()?;
    Ok(d)
}

#[derive(Serialize, Deserialize)]
struct TextHeader {
    format: String,
    version: u32,
    env_name: String,
    state_dim: usize,
    action_dim: usize,
    n_strategies: usize,
    demos_per_strategy: usize,
    n_records: usize,
    meta: GenerationMeta,
}

#[derive(Serialize, Deserialize)]
struct TextStep {
    s: Vec<f64>,
    a: Vec<f64>,
    logp: f64,
    r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    div: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TextRecord {
    strategy: usize,
    steps: Vec<TextStep>,
}

/// JSON-lines rendering of a demo set.
pub fn demo_set_to_text(d: &DemoSet) -> Result<String> {
    let header = TextHeader {
        format: "msrd-trajectories".into(),
        version: FORMAT_VERSION,
        env_name: d.env_name.clone(),
        state_dim: d.state_dim,
        action_dim: d.action_dim,
        n_strategies: d.n_strategies(),
        demos_per_strategy: d.min_per_strategy(),
        n_records: d.strategies.iter().map(Vec::len).sum(),
        meta: d.meta.clone(),
    };
    let json = |e: serde_json::Error| Error::Format(e.to_string());
    let mut out = serde_json::to_string(&header).map_err(json)?;
    out.push('\n');
    for t in d.all() {
        let rec = TextRecord {
            strategy: t.strategy_id.unwrap_or(usize::MAX),
            steps: t
                .transitions
                .iter()
                .map(|tr| TextStep {
                    s: tr.state.clone(),
                    a: tr.action.clone(),
                    logp: tr.log_prob,
                    r: tr.task_reward,
                    div: tr.diversity,
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&rec).map_err(json)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn demo_set_from_text(text: &str) -> Result<DemoSet> {
    let json = |e: serde_json::Error| Error::Format(e.to_string());
    let mut lines = text.lines();
    let header: TextHeader =
        serde_json::from_str(lines.next().ok_or_else(|| Error::Format("empty file".into()))?)
            .map_err(json)?;
    if header.format != "msrd-trajectories" || header.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported text trajectory format {} v{}",
            header.format, header.version
        )));
    }
    let mut strategies: Vec<Vec<Trajectory>> = vec![Vec::new(); header.n_strategies];
    let mut count = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let rec: TextRecord = serde_json::from_str(line).map_err(json)?;
        let slot = strategies.get_mut(rec.strategy).ok_or_else(|| {
            Error::Format(format!("record strategy {} out of range", rec.strategy))
        })?;
        slot.push(Trajectory {
            transitions: rec
                .steps
                .into_iter()
                .map(|s| Transition {
                    state: s.s,
                    action: s.a,
                    log_prob: s.logp,
                    task_reward: s.r,
                    pseudo_reward: None,
                    diversity: s.div,
                })
                .collect(),
            strategy_id: Some(rec.strategy),
        });
        count += 1;
    }
    if count != header.n_records {
        return Err(Error::Format(format!(
            "header announces {} records, file has {count}",
            header.n_records
        )));
    }
    let d = DemoSet {
        env_name: header.env_name,
        state_dim: header.state_dim,
        action_dim: header.action_dim,
        strategies,
        meta: header.meta,
    };
    d.validate()?;
    Ok(d)
}

fn save_with<T: ?Sized>(path: &Path, value: &T, f: impl Fn(&mut Vec<u8>, &T) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf, value)?;
    std::fs::write(path, buf)?;
    Ok(())
}

fn load_with<T>(path: &Path, f: impl Fn(&mut &[u8]) -> Result<T>) -> Result<T> {
    let bytes = std::fs::read(path)?;
    f(&mut bytes.as_slice())
}

pub fn save_demo_set(path: &Path, d: &DemoSet) -> Result<()> {
    save_with(path, d, |w, d| write_demo_set(w, d))
}

pub fn load_demo_set(path: &Path) -> Result<DemoSet> {
    load_with(path, |r| read_demo_set(r))
}

pub fn save_policy_set(path: &Path, ps: &[Policy]) -> Result<()> {
    save_with(path, ps, |w, p| write_policy_set(w, p))
}

pub fn load_policy_set(path: &Path) -> Result<Vec<Policy>> {
    load_with(path, |r| read_policy_set(r))
}

pub fn save_airl(path: &Path, c: &AirlCheckpoint) -> Result<()> {
    save_with(path, c, |w, c| write_airl(w, c))
}

pub fn load_airl(path: &Path) -> Result<AirlCheckpoint> {
    load_with(path, |r| read_airl(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvModel, GridWorld, PointBalance};
    use crate::numcore::rng_from_seed;
    use crate::policy::collect_rollouts;

    fn sample_set(env: &EnvModel) -> DemoSet {
        let mut rng = rng_from_seed(11);
        let p = Policy::new(env, &[4], -0.5, &mut rng).unwrap();
        let strategies = (0..3)
            .map(|k| {
                let mut ts = collect_rollouts(&p, env, 2, &mut rng).unwrap();
                for (j, t) in ts.iter_mut().enumerate() {
                    t.strategy_id = Some(k);
                    for (s, tr) in t.transitions.iter_mut().enumerate() {
                        if j == 0 {
                            tr.diversity = Some(0.1 * s as f64 - 0.3);
                        }
                    }
                }
                ts
            })
            .collect();
        DemoSet {
            env_name: env.name().into(),
            state_dim: env.state_dim(),
            action_dim: env.action_dim(),
            strategies,
            meta: GenerationMeta {
                mode: DiversityMode::Kl,
                seed: 99,
                weight: 0.1,
                iterations: 7,
            },
        }
    }

    #[test]
    fn binary_roundtrip_is_byte_identical() {
        for env in [
            EnvModel::PointBalance(PointBalance::default()),
            EnvModel::GridWorld(GridWorld::default()),
        ] {
            let d = sample_set(&env);
            let mut a = Vec::new();
            write_demo_set(&mut a, &d).unwrap();
            let back = read_demo_set(&mut a.as_slice()).unwrap();
            assert_eq!(back, d);
            let mut b = Vec::new();
            write_demo_set(&mut b, &back).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let d = sample_set(&EnvModel::PointBalance(PointBalance::default()));
        let t = demo_set_to_text(&d).unwrap();
        let back = demo_set_from_text(&t).unwrap();
        assert_eq!(back, d);
        assert_eq!(demo_set_to_text(&back).unwrap(), t);
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let d = sample_set(&EnvModel::PointBalance(PointBalance::default()));
        let mut a = Vec::new();
        write_demo_set(&mut a, &d).unwrap();
        let mut bad = a.clone();
        bad[3] ^= 0xff;
        assert!(matches!(read_demo_set(&mut bad.as_slice()), Err(Error::Format(_))));
        let short = &a[..a.len() - 5];
        assert!(matches!(read_demo_set(&mut &short[..]), Err(Error::Format(_))));
        let mut long = a.clone();
        long.push(0);
        assert!(matches!(read_demo_set(&mut long.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn policy_set_and_airl_roundtrip() {
        let env = EnvModel::GridWorld(GridWorld::default());
        let mut rng = rng_from_seed(2);
        let ps: Vec<Policy> = (0..2).map(|_| Policy::new(&env, &[6], 0.0, &mut rng).unwrap()).collect();
        let mut a = Vec::new();
        write_policy_set(&mut a, &ps).unwrap();
        assert_eq!(read_policy_set(&mut a.as_slice()).unwrap(), ps);
        let pb = EnvModel::PointBalance(PointBalance::default());
        let c = AirlCheckpoint {
            strategy: Some(3),
            reward: RewardNet::new(3, &[5], crate::numcore::OutputInit::Default, &mut rng).unwrap(),
            policy: Policy::new(&pb, &[5], -0.3, &mut rng).unwrap(),
        };
        let mut b = Vec::new();
        write_airl(&mut b, &c).unwrap();
        assert_eq!(read_airl(&mut b.as_slice()).unwrap(), c);
        assert!(read_policy_set(&mut b.as_slice()).is_err());
    }
}
