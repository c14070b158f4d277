//! Oracle checks shared by the oracle tests and the acceptance run. Each
//! returns `Err` with a description of the first mismatch.
#![allow(dead_code)]

use msrd_core::airl::{airl_discriminator_loss, discriminator_prob, DiscBatch, RewardNet};
use msrd_core::envs::{EnvModel, GridWorld, PointBalance};
use msrd_core::eval::maxent_likelihood_oracle;
use msrd_core::msrd::{msrd_discriminator_loss, vanilla_distill_loss, MsrdRewardModel};
use msrd_core::numcore::{mlp_backward, rng_from_seed, MlpParams, OutputInit, Rng};
use msrd_core::policy::{surrogate_loss, Policy, PolicyHead, SurrogateBatch};
use rand::Rng as _;

pub type Check = Result<(), String>;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

/// Central differences of `loss` over every entry of `flat`.
pub fn fd_gradient(flat: &[f64], loss: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = flat.to_vec();
    (0..flat.len())
        .map(|k| {
            p[k] = flat[k] + H;
            let up = loss(&p);
            p[k] = flat[k] - H;
            let down = loss(&p);
            p[k] = flat[k];
            (up - down) / (2.0 * H)
        })
        .collect()
}

pub fn compare_grad(what: &str, analytic: &[f64], numeric: &[f64]) -> Check {
    if analytic.len() != numeric.len() {
        return Err(format!("{what}: {} analytic vs {} numeric entries", analytic.len(), numeric.len()));
    }
    for (k, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        if (a - n).abs() > REL_TOL * a.abs().max(n.abs()) + 1e-9 {
            return Err(format!("{what}[{k}]: analytic {a:.10e} numeric {n:.10e}"));
        }
    }
    Ok(())
}

fn with_flat(net: &MlpParams, flat: &[f64]) -> MlpParams {
    let mut n = net.clone();
    n.set_flat(flat).unwrap();
    n
}

pub fn random_batch(rng: &mut Rng, n: usize, dim: usize) -> DiscBatch {
    DiscBatch {
        features: (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect(),
        log_pi: (0..n).map(|_| rng.random_range(-2.0..0.5)).collect(),
    }
}

/// Large output init keeps the loss away from the flat sigmoid tails.
pub fn reward_net(rng: &mut Rng) -> RewardNet {
    RewardNet::new(3, &[6, 5], OutputInit::Scaled(1.0), rng).unwrap()
}

pub fn check_mlp_gradients() -> Check {
    let mut rng = rng_from_seed(1);
    let net = MlpParams::new(&[3, 7, 5, 2], OutputInit::Scaled(1.0), &mut rng).unwrap();
    let x = [0.3, -1.1, 0.8];
    let up = [0.7, -1.3];
    let (g, dx) = mlp_backward(&net, &x, &up).unwrap();
    let dot = |p: &MlpParams, x: &[f64]| {
        let y = p.forward(x).unwrap();
        y[0] * up[0] + y[1] * up[1]
    };
    let fd = fd_gradient(&net.to_flat(), |f| dot(&with_flat(&net, f), &x));
    compare_grad("mlp params", &g.to_flat(), &fd)?;
    let fd_x = fd_gradient(&x, |xx| dot(&net, xx));
    compare_grad("mlp input", &dx, &fd_x)
}

pub fn check_airl_gradients() -> Check {
    let mut rng = rng_from_seed(2);
    let reward = reward_net(&mut rng);
    let e = random_batch(&mut rng, 9, 3);
    let g = random_batch(&mut rng, 7, 3);
    let (_, grad) = airl_discriminator_loss(&reward, &e, &g).unwrap();
    let fd = fd_gradient(&reward.net.to_flat(), |f| {
        let r = RewardNet::from_params(with_flat(&reward.net, f)).unwrap();
        airl_discriminator_loss(&r, &e, &g).unwrap().0
    });
    compare_grad("airl", &grad.to_flat(), &fd)
}

pub fn check_msrd_gradients() -> Check {
    let mut rng = rng_from_seed(3);
    let task = reward_net(&mut rng);
    let residuals = vec![reward_net(&mut rng), reward_net(&mut rng)];
    let model = MsrdRewardModel::new(task, residuals, vec![0.3, 0.7]).unwrap();
    let e = random_batch(&mut rng, 8, 3);
    let g = random_batch(&mut rng, 6, 3);
    let reg = random_batch(&mut rng, 10, 3).features;
    for l2 in [false, true] {
        let l = msrd_discriminator_loss(&model, 1, &e, &g, &reg, l2).unwrap();
        let fd_task = fd_gradient(&model.task.net.to_flat(), |f| {
            let mut m = model.clone();
            m.task.net.set_flat(f).unwrap();
            msrd_discriminator_loss(&m, 1, &e, &g, &reg, l2).unwrap().loss
        });
        compare_grad("msrd task", &l.task_grad.to_flat(), &fd_task)?;
        let fd_res = fd_gradient(&model.residuals[1].net.to_flat(), |f| {
            let mut m = model.clone();
            m.residuals[1].net.set_flat(f).unwrap();
            msrd_discriminator_loss(&m, 1, &e, &g, &reg, l2).unwrap().loss
        });
        compare_grad("msrd residual", &l.residual_grad.to_flat(), &fd_res)?;
    }
    Ok(())
}

pub fn check_vanilla_gradients() -> Check {
    let mut rng = rng_from_seed(4);
    let task = reward_net(&mut rng);
    let combined = reward_net(&mut rng);
    let e = random_batch(&mut rng, 8, 3);
    let g = random_batch(&mut rng, 6, 3);
    let reg = random_batch(&mut rng, 5, 3).features;
    for l2 in [false, true] {
        let l = vanilla_distill_loss(&task, &combined, &e, &g, &reg, l2).unwrap();
        let fd_c = fd_gradient(&combined.net.to_flat(), |f| {
            let c = RewardNet::from_params(with_flat(&combined.net, f)).unwrap();
            vanilla_distill_loss(&task, &c, &e, &g, &reg, l2).unwrap().loss
        });
        compare_grad("vanilla combined", &l.combined_grad.to_flat(), &fd_c)?;
        let fd_t = fd_gradient(&task.net.to_flat(), |f| {
            let t = RewardNet::from_params(with_flat(&task.net, f)).unwrap();
            vanilla_distill_loss(&t, &combined, &e, &g, &reg, l2).unwrap().loss
        });
        compare_grad("vanilla task", &l.task_grad.to_flat(), &fd_t)?;
    }
    Ok(())
}

pub fn check_surrogate_gradients() -> Check {
    let env = EnvModel::PointBalance(PointBalance::default());
    let mut rng = rng_from_seed(5);
    let mut policy = Policy::new(&env, &[6], -0.3, &mut rng).unwrap();
    policy.net = MlpParams::new(&[2, 6, 1], OutputInit::Scaled(1.0), &mut rng).unwrap();
    let mut batch = SurrogateBatch::default();
    for _ in 0..40 {
        let obs = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let action = vec![rng.random_range(-1.5..1.5)];
        // old log-probs near the current ones: some ratios land inside the
        // clip range, some outside
        let lp = policy.log_prob(&obs, &action).unwrap() + rng.random_range(-0.5..0.5);
        batch.obs.push(obs);
        batch.actions.push(action);
        batch.old_log_probs.push(lp);
        batch.advantages.push(rng.random_range(-1.0..1.0));
    }
    let ev = surrogate_loss(&policy, &batch, 0.2, 0.01).unwrap();
    if !(ev.clip_fraction > 0.0 && ev.clip_fraction < 1.0) {
        return Err(format!("batch does not exercise clipping (fraction {})", ev.clip_fraction));
    }
    let fd = fd_gradient(&policy.net.to_flat(), |f| {
        let mut p = policy.clone();
        p.net.set_flat(f).unwrap();
        surrogate_loss(&p, &batch, 0.2, 0.01).unwrap().loss
    });
    compare_grad("surrogate net", &ev.net_grad.to_flat(), &fd)?;
    let PolicyHead::Gaussian { log_std } = &policy.head else {
        return Err("expected a Gaussian head".into());
    };
    let fd_ls = fd_gradient(log_std, |v| {
        let mut p = policy.clone();
        p.head = PolicyHead::Gaussian { log_std: v.to_vec() };
        surrogate_loss(&p, &batch, 0.2, 0.01).unwrap().loss
    });
    compare_grad("surrogate log-std", &ev.log_std_grad, &fd_ls)
}

pub fn check_discriminator_identities() -> Check {
    for lp in [-3.0, -0.5, 0.0, 1.7] {
        let d = discriminator_prob(lp, lp);
        if d != 0.5 {
            return Err(format!("D(f = log pi = {lp}) = {d}"));
        }
        let mut prev = 0.0;
        for k in -20..=20 {
            let d = discriminator_prob(lp + k as f64 * 0.5, lp);
            if d <= prev {
                return Err(format!("D not increasing in f at log pi {lp}, step {k}"));
            }
            prev = d;
        }
    }
    Ok(())
}

pub fn check_maxent() -> Check {
    let grid = GridWorld::default();
    let r = |s: &[f64], a: &[f64]| grid.cell_rewards[s[0] as usize] + 0.1 * a[0];
    for horizon in [1, 3, 5] {
        let base = maxent_likelihood_oracle(|s, a| Ok(r(s, a)), &grid, horizon).unwrap();
        if base.len() != 4usize.pow(horizon as u32) {
            return Err(format!("horizon {horizon}: {} trajectories", base.len()));
        }
        let total: f64 = base.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("horizon {horizon}: probabilities sum to {total}"));
        }
        let shifted = maxent_likelihood_oracle(|s, a| Ok(r(s, a) + 2.5), &grid, horizon).unwrap();
        for ((_, p), (_, q)) in base.iter().zip(&shifted) {
            if (p - q).abs() > 1e-12 {
                return Err(format!("horizon {horizon}: shift changed {p} to {q}"));
            }
        }
    }
    Ok(())
}

/// Every check above, by name.
pub fn oracle_suite() -> Vec<(&'static str, Check)> {
    vec![
        ("mlp gradients", check_mlp_gradients()),
        ("airl loss gradients", check_airl_gradients()),
        ("two-column loss gradients", check_msrd_gradients()),
        ("vanilla distillation gradients", check_vanilla_gradients()),
        ("policy surrogate gradients", check_surrogate_gradients()),
        ("discriminator identities", check_discriminator_identities()),
        ("max-ent gridworld", check_maxent()),
    ]
}
