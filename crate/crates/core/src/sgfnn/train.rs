use serde::{Deserialize, Serialize};

use super::batch::{make_batches, Batch};
use super::loss::{evaluate, LossConfig, LossTerms};
use super::model::{EncoderScaling, Model, ModelKind};
use crate::error::{Error, Result};
use crate::latent::{DistributionLossConfig, KdeConfig};
use crate::nn::{AdamConfig, AdamState};
use crate::rng::{self, Domain};
use crate::sim::Dataset;

/// How the encoder features `(x0, x1 - x0)` are standardized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderInput {
    Raw,
    /// Dataset-wide mean and std per feature.
    Dataset,
    /// `x0` as in `Dataset`; the increment with the statistics of its batch.
    Batch,
    /// `x0` as in `Dataset`; the increment whitened along the principal axes
    /// of its batch.
    Whitened,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    /// Pairs per batch, `K`.
    pub batch_size: usize,
    /// Batches per epoch, `N_B`.
    pub n_batches: usize,
    /// Latent dimension; defaults to the system's noise channel count.
    pub n_z: Option<usize>,
    pub hidden: Vec<usize>,
    pub lambda: f64,
    pub tau: f64,
    pub nu: f64,
    pub epochs: usize,
    pub lr: f64,
    /// If set, the learning rate decays geometrically from `lr` to this value
    /// over the epochs.
    pub lr_final: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Draw fresh anchors every epoch instead of reusing the first set.
    pub recompute_batches: bool,
    pub encoder_input: EncoderInput,
    pub kde: KdeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Sgfnn,
            batch_size: 500,
            n_batches: 100,
            n_z: None,
            hidden: vec![20, 20, 20],
            lambda: 1.0,
            tau: 1.0,
            nu: 0.1,
            epochs: 50,
            lr: 1e-3,
            lr_final: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            recompute_batches: false,
            encoder_input: EncoderInput::Dataset,
            kde: KdeConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            distribution: DistributionLossConfig {
                tau: self.tau,
                nu: self.nu,
                kde: self.kde,
            },
        }
    }

    /// Learning rate used during `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_final {
            Some(f) if self.epochs > 1 => {
                let frac = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
                self.lr * (f / self.lr).powf(frac)
            }
            _ => self.lr,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.n_batches == 0 {
            return Err(Error::Argument("need batch_size >= 2 and n_batches >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.tau >= 0.0 && self.nu >= 0.0) {
            return Err(Error::Argument("lambda, tau and nu must be non-negative".into()));
        }
        if let Some(f) = self.lr_final {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::Argument("lr_final must be positive".into()));
            }
        }
        if self.n_z == Some(0) {
            return Err(Error::Argument("n_z must be at least 1".into()));
        }
        self.kde.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss_mse: f64,
    pub loss_dist: f64,
    pub loss_moment: f64,
    pub loss_total: f64,
}

impl LossRecord {
    fn new(epoch: usize, batch: usize, t: &LossTerms) -> Self {
        LossRecord {
            epoch,
            batch,
            loss_mse: t.mse,
            loss_dist: t.distribution.distance,
            loss_moment: t.distribution.moment,
            loss_total: t.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: Model,
    pub history: Vec<LossRecord>,
}

impl Trained {
    /// Mean total loss over each epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.history {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss_total;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }
}

/// Per-batch encoder scaling for the batch-level input modes. The `x0`
/// part always comes from the model.
pub fn batch_scaling(model: &Model, batch: &Batch, mode: EncoderInput) -> Result<Option<EncoderScaling>> {
    let d = model.dim();
    let pairs = batch.pairs.iter().map(|(a, b)| (a, b));
    match mode {
        EncoderInput::Raw | EncoderInput::Dataset => Ok(None),
        EncoderInput::Batch => {
            let mut sc = EncoderScaling::fit(d, pairs)?;
            sc.shift[..2 * d].copy_from_slice(&model.scaling.shift[..2 * d]);
            sc.scale[..2 * d].copy_from_slice(&model.scaling.scale[..2 * d]);
            Ok(Some(sc))
        }
        EncoderInput::Whitened => Ok(Some(EncoderScaling::whiten_increments(&model.scaling, d, pairs)?)),
    }
}

/// Trains a model on sub-sampled batches with one Adam step per batch.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    dataset.validate()?;
    let n_z = cfg.n_z.unwrap_or_else(|| dataset.system.noise_channels());
    let mut model = Model::new(cfg.model, dataset.system.clone(), n_z, &cfg.hidden, dataset.delta, cfg.seed)?;
    if cfg.encoder_input != EncoderInput::Raw {
        model.scaling = EncoderScaling::fit(model.dim(), dataset.pairs())?;
    }
    train_from(model, dataset, cfg)
}

/// Continues training an existing model.
pub fn train_from(mut model: Model, dataset: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let loss_cfg = cfg.loss_config();
    let weights = loss_cfg.weights();
    let mut adam = AdamState::new(model.n_params(), cfg.adam())?;
    let mut params = model.params();
    let mut grad = vec![0.0; params.len()];
    let mut history = Vec::with_capacity(cfg.epochs * cfg.n_batches);
    let mut batches: Vec<Batch> = Vec::new();
    for epoch in 0..cfg.epochs {
        adam.config.learning_rate = cfg.lr_at(epoch);
        if epoch == 0 || cfg.recompute_batches {
            let seed = rng::sub_seed(cfg.seed, Domain::Batches, epoch as u64);
            batches = make_batches(dataset, cfg.batch_size, cfg.n_batches, seed)?;
            for b in batches.iter_mut() {
                b.scaling = batch_scaling(&model, b, cfg.encoder_input)?;
            }
        }
        for (b, batch) in batches.iter().enumerate() {
            let terms = evaluate(&model, batch, &loss_cfg, weights, Some(&mut grad))?;
            if !terms.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: terms.total,
                });
            }
            history.push(LossRecord::new(epoch, b, &terms));
            adam.step(&mut params, &grad)?;
            model.set_params(&params)?;
        }
    }
    Ok(Trained { model, history })
}
