//! Minimal network substrate: ELU perceptrons, Adam, gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{GradCheck, GradCheckReport};
pub use mlp::{elu, Cache, GradCache, Mlp};
