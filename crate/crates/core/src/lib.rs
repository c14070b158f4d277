//! Multi-strategy reward distillation.
//!
//! Learns one shared task reward and a residual reward per strategy from
//! demonstrations that solve the same task in different styles. The crate
//! also carries an adversarial IRL baseline, tools to synthesise diverse
//! demonstrations, and an evaluation harness.

pub mod error;
pub mod numcore;
pub mod envs;
pub mod policy;
pub mod config;
pub mod airl;
pub mod diversity;
pub mod persist;
pub mod msrd;
pub mod eval;
pub mod pipeline;

pub use error::{Error, Result};
