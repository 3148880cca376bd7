//! Stochastic generating function networks: an encoder that recovers the
//! per-transition latent noise and a decoder for the generating function,
//! trained on nearest-neighbour batches. The flow-map baseline shares every
//! piece except the decoder head.

pub mod batch;
pub mod gate;
pub mod loss;
pub mod model;
pub mod train;

pub use gate::{gradient_gate, GateConfig, GateReport};
pub use batch::{make_batches, nearest_indices, Batch};
pub use loss::{evaluate, latent_samples, loss_mse, loss_total, LossConfig, LossTerms, LossWeights};
pub use model::{EncoderScaling, GeneratingValue, Model, ModelKind};
pub use train::{batch_scaling, train, train_from, EncoderInput, LossRecord, TrainConfig, Trained};
