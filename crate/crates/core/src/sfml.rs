//! Flow-map baseline: the decoder maps `(x0, z)` straight to `x1`.
//!
//! Encoder, distribution loss, batching and the training loop are the ones in
//! [`crate::sgfnn`]; only the decoder head and its reconstruction loss
//! `1/K sum |x1 - G(x0, z)|^2` differ. Its steps are explicit and carry no
//! symplecticity guarantee.

use crate::error::Result;
use crate::sgfnn::{train, ModelKind, TrainConfig, Trained};
use crate::sim::Dataset;

pub use crate::predictor::sfml_step;

pub fn train_sfml(dataset: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    let cfg = TrainConfig {
        model: ModelKind::Sfml,
        ..cfg.clone()
    };
    train(dataset, &cfg)
}
