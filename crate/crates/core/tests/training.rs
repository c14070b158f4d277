use msrd_core::airl::{airl_train, RewardNet};
use msrd_core::config::{AirlConfig, DiversityConfig, DiversityMode, MsrdConfig, PolicyConfig};
use msrd_core::diversity::{train_heterogeneous_policies, DemoSet};
use msrd_core::envs::{EnvModel, PointBalance};
use msrd_core::eval::{noise_injection_dataset, task_correlation};
use msrd_core::msrd::{msrd_init, msrd_train_epochs, read_checkpoint, write_checkpoint};
use msrd_core::numcore::rng_from_seed;
use msrd_core::policy::{
    collect_rollouts, improve_policy, mean_task_return, Policy, PolicyOptimizer, RewardField,
};

fn pb() -> EnvModel {
    EnvModel::PointBalance(PointBalance::default())
}

fn trained_policy(env: &EnvModel, seed: u64, iterations: usize) -> (Policy, f64, f64) {
    let cfg = PolicyConfig::default();
    let mut rng = rng_from_seed(seed);
    let mut policy = Policy::new(env, &cfg.hidden_sizes, cfg.init_log_std, &mut rng).unwrap();
    let mut opt = PolicyOptimizer::new(&policy, cfg.lr);
    let before = mean_task_return(&collect_rollouts(&policy, env, 20, &mut rng).unwrap(), env.gamma());
    for _ in 0..iterations {
        let trajs = collect_rollouts(&policy, env, 10, &mut rng).unwrap();
        improve_policy(&mut policy, &mut opt, env, &trajs, RewardField::Task, &cfg.update()).unwrap();
    }
    let after = mean_task_return(&collect_rollouts(&policy, env, 20, &mut rng).unwrap(), env.gamma());
    (policy, before, after)
}

#[test]
fn policy_training_improves_return() {
    let env = pb();
    let improved = (0..10)
        .filter(|&seed| {
            let (_, before, after) = trained_policy(&env, seed, 200);
            after > before
        })
        .count();
    assert!(improved >= 10, "improved on {improved}/10 seeds");
}

#[test]
fn noise_injection_degrades_a_trained_policy() {
    let env = pb();
    let (policy, _, _) = trained_policy(&env, 3, 200);
    let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
    let set = noise_injection_dataset(&[policy], &env, &levels, 20, &mut rng_from_seed(4)).unwrap();
    let means: Vec<f64> = levels
        .iter()
        .map(|&e| {
            let r: Vec<f64> = set.iter().filter(|t| t.noise == e).map(|t| t.true_return).collect();
            r.iter().sum::<f64>() / r.len() as f64
        })
        .collect();
    for w in means.windows(2) {
        assert!(w[1] <= w[0], "mean returns by noise level {means:?}");
    }
}

fn task_only_demos(env: &EnvModel, n: usize, seed: u64) -> (Vec<Policy>, DemoSet) {
    let cfg = DiversityConfig {
        n_strategies: n,
        weight: 0.0,
        ..DiversityConfig::default()
    };
    let out = train_heterogeneous_policies(env, &cfg, &PolicyConfig::default(), &mut rng_from_seed(seed)).unwrap();
    (out.policies, out.demos)
}

#[test]
fn airl_recovers_task_reward_from_good_demos() {
    let env = pb();
    let (policies, demos) = task_only_demos(&env, 2, 21);
    let out = airl_train(
        &env,
        &demos.strategies[0],
        &AirlConfig::default(),
        &PolicyConfig::generator_default(),
        &mut rng_from_seed(22),
    )
    .unwrap();
    let eval = noise_injection_dataset(&policies, &env, &[0.0, 0.25, 0.5, 0.75, 1.0], 10, &mut rng_from_seed(23)).unwrap();
    let (r, _) = task_correlation(&env, &eval, |x| out.reward.eval(x)).unwrap();
    let r = r.unwrap();
    assert!(r > 0.6, "airl task r = {r:.3}");
}

#[test]
fn untrained_rewards_are_weakly_correlated() {
    let env = pb();
    let (policies, _) = task_only_demos(&env, 2, 31);
    let eval = noise_injection_dataset(&policies, &env, &[0.0, 0.25, 0.5, 0.75, 1.0], 10, &mut rng_from_seed(32)).unwrap();
    let mut rs: Vec<f64> = (0..7)
        .map(|s| {
            let net = RewardNet::new(
                env.feature_dim(),
                &[32, 32],
                msrd_core::numcore::OutputInit::Scaled(0.1),
                &mut rng_from_seed(100 + s),
            )
            .unwrap();
            task_correlation(&env, &eval, |x| net.eval(x)).unwrap().0.unwrap().abs()
        })
        .collect();
    rs.sort_by(f64::total_cmp);
    assert!(rs[3] < 0.4, "median |r| of fresh nets {rs:?}");
}

#[test]
fn diayn_classifier_beats_chance() {
    let env = pb();
    // below weight ~1 the task reward pulls every strategy to the same
    // states and the classifier never leaves chance
    let cfg = DiversityConfig {
        mode: DiversityMode::Diayn,
        weight: 1.0,
        ..DiversityConfig::default()
    };
    let out = train_heterogeneous_policies(&env, &cfg, &PolicyConfig::default(), &mut rng_from_seed(41)).unwrap();
    let acc = out.log.last().unwrap().classifier_accuracy.unwrap();
    assert!(acc > 1.0 / cfg.n_strategies as f64 + 0.2, "classifier accuracy {acc}");
}

#[test]
fn msrd_resume_matches_continuous_training() {
    let env = pb();
    let div = DiversityConfig {
        iterations: 5,
        demos_per_strategy: 3,
        rollouts_per_iteration: 2,
        ..DiversityConfig::default()
    };
    let pol = PolicyConfig {
        hidden_sizes: vec![8],
        ..PolicyConfig::default()
    };
    let demos = train_heterogeneous_policies(&env, &div, &pol, &mut rng_from_seed(51)).unwrap().demos;
    let cfg = MsrdConfig {
        k_rollouts: 2,
        batch_size: 32,
        hidden_sizes: vec![8],
        ..MsrdConfig::default()
    };
    let mut full = msrd_init(&env, &demos, &cfg, &pol, &mut rng_from_seed(52)).unwrap();
    let log_full = msrd_train_epochs(&mut full, &env, &demos, &cfg, &pol, 3, |_, _| Ok(())).unwrap();

    let mut part = msrd_init(&env, &demos, &cfg, &pol, &mut rng_from_seed(52)).unwrap();
    let mut log = msrd_train_epochs(&mut part, &env, &demos, &cfg, &pol, 1, |_, _| Ok(())).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &part).unwrap();
    let mut resumed = read_checkpoint(&mut bytes.as_slice()).unwrap();
    log.extend(msrd_train_epochs(&mut resumed, &env, &demos, &cfg, &pol, 2, |_, _| Ok(())).unwrap());

    assert_eq!(resumed, full);
    assert_eq!(log, log_full);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    write_checkpoint(&mut a, &full).unwrap();
    write_checkpoint(&mut b, &resumed).unwrap();
    assert_eq!(a, b);
}
