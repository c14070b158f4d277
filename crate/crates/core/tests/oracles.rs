mod common;

use common::*;
use msrd_core::airl::airl_discriminator_loss;
use msrd_core::envs::GridWorld;
use msrd_core::eval::maxent_likelihood_oracle;
use msrd_core::numcore::{rng_from_seed, AdamConfig, AdamState};

#[test]
fn mlp_gradients_match_finite_differences() {
    check_mlp_gradients().unwrap();
}

#[test]
fn airl_loss_gradient_matches_finite_differences() {
    check_airl_gradients().unwrap();
}

#[test]
fn distillation_loss_gradients_match_finite_differences() {
    check_msrd_gradients().unwrap();
}

#[test]
fn vanilla_distillation_gradients_match_finite_differences() {
    check_vanilla_gradients().unwrap();
}

#[test]
fn policy_surrogate_gradient_matches_finite_differences() {
    check_surrogate_gradients().unwrap();
}

#[test]
fn discriminator_identities() {
    check_discriminator_identities().unwrap();
}

#[test]
fn maxent_probabilities_normalise_and_ignore_reward_shifts() {
    check_maxent().unwrap();
}

#[test]
fn maxent_prefers_the_highest_return_trajectory() {
    let grid = GridWorld::default();
    let probs = maxent_likelihood_oracle(|s, _| Ok(grid.cell_rewards[s[0] as usize]), &grid, 4).unwrap();
    let best = probs
        .iter()
        .max_by(|a, b| a.0.discounted_return.total_cmp(&b.0.discounted_return))
        .unwrap();
    let top = probs.iter().map(|(_, p)| *p).fold(0.0, f64::max);
    assert_eq!(best.1, top);
}

#[test]
fn tied_batches_never_beat_two_ln_two() {
    let mut rng = rng_from_seed(6);
    let mut reward = reward_net(&mut rng);
    let batch = random_batch(&mut rng, 32, 3);
    let mut adam = AdamState::new(&reward.net, AdamConfig::with_lr(1e-2));
    let floor = 2.0 * std::f64::consts::LN_2;
    for _ in 0..300 {
        let (loss, grad) = airl_discriminator_loss(&reward, &batch, &batch).unwrap();
        assert!(loss >= floor - 1e-12, "loss {loss}");
        adam.step(&mut reward.net, &grad).unwrap();
    }
}
