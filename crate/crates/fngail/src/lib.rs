//! Adversarial imitation learning lab on compact instruction-conditioned
//! gridworld tasks.
//!
//! The crate bundles a deterministic partially-observable gridworld with four
//! task families, a scripted BFS expert, a small reverse-mode autodiff core,
//! instruction-conditioned recurrent actor-critic and multi-head discriminator
//! networks, the discriminator losses (conventional, oracle-filtered, fake
//! conditioning, blank conditioning, done detection, sub-trajectory), a PPO
//! trainer with terminal-only rewards, a behavioral-cloning baseline, and a
//! CLI harness (`gen-demos`, `train`, `eval`, `diagnose-fn`).

pub mod autodiff;
pub mod bc;
pub mod bot;
pub mod env;
pub mod gail;
pub mod harness;
pub mod lang;
pub mod models;
pub mod ppo;
pub mod rng;

/// Scalar type used by all numerics. f32 by default; the `f64` feature swaps
/// in doubles for gradient-check oracle tests.
#[cfg(not(feature = "f64"))]
pub type Scalar = f32;
#[cfg(feature = "f64")]
pub type Scalar = f64;
