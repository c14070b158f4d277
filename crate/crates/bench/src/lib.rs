//! Shared fixtures for the benchmarks.

use msrd_core::airl::{DiscBatch, RewardNet};
use msrd_core::envs::{EnvModel, PointBalance};
use msrd_core::msrd::MsrdRewardModel;
use msrd_core::numcore::{rng_from_seed, OutputInit};
use msrd_core::policy::{collect_rollouts, Policy, Trajectory};

pub struct Fixture {
    pub env: EnvModel,
    pub policy: Policy,
    pub trajs: Vec<Trajectory>,
    pub expert: DiscBatch,
    pub gen: DiscBatch,
    pub model: MsrdRewardModel,
}

/// Point-balance with a fresh policy, five rollouts and 256-transition
/// discriminator batches.
pub fn fixture() -> Fixture {
    let env = EnvModel::PointBalance(PointBalance::default());
    let mut rng = rng_from_seed(7);
    let policy = Policy::new(&env, &[32, 32], -0.5, &mut rng).unwrap();
    let trajs = collect_rollouts(&policy, &env, 5, &mut rng).unwrap();
    let all: Vec<_> = trajs.iter().flat_map(|t| &t.transitions).collect();
    let expert = DiscBatch::from_transitions(&env, &policy, all.iter().copied().take(256)).unwrap();
    let gen = DiscBatch::from_transitions(&env, &policy, all.iter().copied().skip(244)).unwrap();
    let dim = env.feature_dim();
    let task = RewardNet::new(dim, &[32, 32], OutputInit::Scaled(0.1), &mut rng).unwrap();
    let residuals = (0..4)
        .map(|_| RewardNet::new(dim, &[32, 32], OutputInit::Scaled(0.01), &mut rng).unwrap())
        .collect();
    let model = MsrdRewardModel::new(task, residuals, vec![0.01; 4]).unwrap();
    Fixture {
        env,
        policy,
        trajs,
        expert,
        gen,
        model,
    }
}
