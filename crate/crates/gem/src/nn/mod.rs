//! Minimal dense-network substrate: flat parameter vectors with named
//! segments, MLP forward/backward passes, and an Adam optimizer.
//!
//! Everything is `f64`; gradients are accumulated into plain slices so the
//! same buffers serve batched updates and finite-difference checks.

mod adam;
mod mlp;
mod param;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{glorot_init, mlp_backward, mlp_forward, Activation, MlpSpec};
pub use param::{ParamLayout, ParamVector, Segment};
