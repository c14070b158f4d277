//! Self-contained dense-network numerics.

mod adam;
pub mod codec;
mod dist;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState, AdamVec};
pub use dist::{
    categorical_entropy, categorical_kl, categorical_log_prob, clamp_log_std, gaussian_entropy,
    gaussian_kl, gaussian_log_prob, log_softmax, softmax, LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{mlp_backward, mlp_forward, Activation, Dense, ForwardCache, MlpParams, OutputInit};

use rand::SeedableRng;

/// Deterministic generator used everywhere. Portable and reproducible across
/// platforms for a given seed.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Derives an independent sub-seed from `seed` and a stream label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    // splitmix64 finaliser over the combined input
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pairwise summation over values sorted by `total_cmp`, so the result does
/// not depend on input order.
pub fn stable_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    pairwise(&v)
}

pub fn stable_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    stable_sum(values) / values.len() as f64
}

fn pairwise(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise(&v[..mid]) + pairwise(&v[mid..])
}
