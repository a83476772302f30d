//! Candidate-based action selection for offline reinforcement learning.
//!
//! The library trains three coupled pieces on a fixed transition dataset:
//! a conditional Gaussian-mixture actor fitted by guided EM, an ensemble
//! of Q critics with an expectile value baseline, and a frozen behavior
//! density. At decision time it builds a small candidate set (the actor's
//! dominant mode mean plus sampled proposals), scores every candidate with
//! a lower confidence bound on the critic ensemble plus a support term
//! computed under the behavior density, and executes the best candidate.
//!
//! The fastest way to explore the crate is through the runnable examples:
//!
//! ```text
//! cargo run --release --example train_bandit
//! cargo run --release --example select_action
//! cargo run --release --example candidate_scaling
//! cargo run --release --example ablation_stress
//! cargo run --release --example support_frontier
//! cargo run --release --example nll_gap
//! cargo run --release --example extreme_value
//! cargo run --release --example profile_decision
//! cargo run --release --example maze_rollout
//! ```
//!
//! The same functionality is reachable from the `gem` binary
//! (`train`, `eval`, `sweep`, `diagnose`, `ablate`, `profile`, `gen-data`).

pub mod actor;
pub mod audits;
pub mod behavior;
pub mod checkpoint;
pub mod cli;
pub mod critic;
pub mod envs;
pub mod error;
pub mod gmm;
pub mod inference;
pub mod nn;
pub mod train;

pub use error::{GemError, Result};

/// Derives an independent child seed from a base seed and a stream id.
///
/// Used everywhere a component needs its own reproducible RNG stream
/// (model init, per-episode rollouts, sweep cells) so that streams do not
/// alias and results do not depend on execution order.
pub fn child_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
