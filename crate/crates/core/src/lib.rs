//! Learning stochastic Hamiltonian systems from trajectory data with
//! stochastic generating function networks (SGFNN), plus the flow-map
//! baseline, data generation and evaluation metrics.

pub mod error;
pub mod eval;
pub mod io;
pub mod latent;
pub mod nn;
pub mod predictor;
pub mod rng;
pub mod sfml;
pub mod sgfnn;
pub mod sim;
pub mod systems;

pub use error::{Error, Result};
pub use systems::{PhaseState, SystemKind, SystemSpec};
