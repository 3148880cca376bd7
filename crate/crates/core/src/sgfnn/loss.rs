//! Batch losses and their exact parameter gradients.
//!
//! The generating-function reconstruction loss
//!
//! ```text
//! L_mse = 1/K sum_i |p1 - p0 + dS/dq0|^2 + |q1 - q0 - dS/dp1|^2
//! ```
//!
//! depends on input gradients of the decoder, so its parameter gradient is a
//! mixed second derivative; see [`Mlp::second_order_backward`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::model::{Model, ModelKind};
use crate::error::{check_len, Error, Result};
use crate::latent::{distribution_loss, DistributionLossConfig, DistributionTerms};
use crate::nn::Mlp;

/// Pairs per work unit. Fixed so that the reduction order never depends on
/// the number of threads.
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub distribution: DistributionLossConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            distribution: DistributionLossConfig::default(),
        }
    }
}

/// Coefficients of the objective `mse * L_mse + distribution * L_D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub mse: f64,
    pub distribution: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub mse: f64,
    pub distribution: DistributionTerms,
    /// `mse + lambda * distribution.total`
    pub total: f64,
}

fn check_batch(model: &Model, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    for (x0, x1) in &batch.pairs {
        check_len("phase state dimension", model.dim(), x0.dim())?;
        check_len("phase state dimension", model.dim(), x1.dim())?;
    }
    Ok(())
}

fn encode_all(model: &Model, batch: &Batch) -> Vec<f64> {
    let n_z = model.n_z;
    let chunks: Vec<Vec<f64>> = batch
        .pairs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut cache = model.encoder.cache();
            let mut input = Vec::new();
            let mut out = Vec::with_capacity(chunk.len() * n_z);
            for (x0, x1) in chunk {
                batch.scaling.as_ref().unwrap_or(&model.scaling).features(x0.as_slice(), x1.as_slice(), &mut input);
                out.extend_from_slice(model.encoder.forward_cached(&input, &mut cache));
            }
            out
        })
        .collect();
    chunks.concat()
}

/// Reconstruction residual of one pair and, if requested, its backward pass.
struct PairWork {
    dec_cache: crate::nn::Cache,
    dec_gc: crate::nn::GradCache,
    input: Vec<f64>,
    input_adj: Vec<f64>,
    out_adj: Vec<f64>,
}

impl PairWork {
    fn new(decoder: &Mlp) -> Self {
        PairWork {
            dec_cache: decoder.cache(),
            dec_gc: decoder.grad_cache(),
            input: Vec::with_capacity(decoder.n_inputs()),
            input_adj: vec![0.0; decoder.n_inputs()],
            out_adj: vec![0.0; decoder.n_outputs()],
        }
    }
}

/// Squared reconstruction error of one pair. With `grad = Some((g, w))`,
/// accumulates `w * d err / d theta_decoder` into `g` and leaves
/// `w * d err / d z` in `work.input_adj[2d..]`.
fn pair_error(
    model: &Model,
    x0: &[f64],
    x1: &[f64],
    z: &[f64],
    work: &mut PairWork,
    grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let d = model.dim();
    let dec = &model.decoder;
    work.input.clear();
    match model.kind {
        ModelKind::Sgfnn => {
            // decoder input (p1, q0, z)
            work.input.extend_from_slice(&x1[..d]);
            work.input.extend_from_slice(&x0[d..]);
            work.input.extend_from_slice(z);
            dec.forward_cached(&work.input, &mut work.dec_cache);
            let g = dec.scalar_input_gradient(&work.dec_cache, &mut work.dec_gc);
            let mut err = 0.0;
            let mut g_adj = vec![0.0; g.len()];
            for i in 0..d {
                let rp = x1[i] - x0[i] + g[d + i];
                let rq = x1[d + i] - x0[d + i] - g[i];
                err += rp * rp + rq * rq;
                g_adj[d + i] = 2.0 * rp;
                g_adj[i] = -2.0 * rq;
            }
            if let Some((grad, w)) = grad {
                g_adj.iter_mut().for_each(|v| *v *= w);
                dec.second_order_backward(&work.dec_cache, &mut work.dec_gc, 0.0, &g_adj, grad, &mut work.input_adj);
            }
            err
        }
        ModelKind::Sfml => {
            work.input.extend_from_slice(x0);
            work.input.extend_from_slice(z);
            let out = dec.forward_cached(&work.input, &mut work.dec_cache);
            let mut err = 0.0;
            for i in 0..2 * d {
                let r = out[i] - x1[i];
                err += r * r;
                work.out_adj[i] = 2.0 * r;
            }
            if let Some((grad, w)) = grad {
                work.out_adj.iter_mut().for_each(|v| *v *= w);
                dec.backward(&work.dec_cache, &work.out_adj, grad, &mut work.input_adj);
            }
            err
        }
    }
}

/// Evaluates the batch losses; with `grad`, also writes the gradient of
/// `weights.mse * L_mse + weights.distribution * L_D` w.r.t. all model
/// parameters (encoder first) into it.
pub fn evaluate(
    model: &Model,
    batch: &Batch,
    cfg: &LossConfig,
    weights: LossWeights,
    grad: Option<&mut [f64]>,
) -> Result<LossTerms> {
    check_batch(model, batch)?;
    let k = batch.len();
    let n_z = model.n_z;
    let d2 = 2 * model.dim();
    let z = encode_all(model, batch);
    let want_grad = grad.is_some();
    let mut z_adj = vec![0.0; z.len()];
    let distribution = if k >= 2 {
        let g = want_grad.then_some((&mut z_adj[..], weights.distribution));
        distribution_loss(&z, n_z, &cfg.distribution, g)?
    } else if weights.distribution == 0.0 {
        DistributionTerms::default()
    } else {
        return Err(Error::Argument("distribution loss needs at least 2 pairs".into()));
    };

    let ne = model.encoder.n_params();
    let np = model.n_params();
    let w_pair = weights.mse / k as f64;
    let partial: Vec<(f64, Vec<f64>)> = batch
        .pairs
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut work = PairWork::new(&model.decoder);
            let mut enc_cache = model.encoder.cache();
            let mut enc_in = Vec::new();
            let mut enc_in_adj = vec![0.0; model.encoder.n_inputs()];
            let mut g = if want_grad { vec![0.0; np] } else { Vec::new() };
            let mut sum = 0.0;
            for (i, (x0, x1)) in chunk.iter().enumerate() {
                let row = c * CHUNK + i;
                let zi = &z[row * n_z..(row + 1) * n_z];
                if want_grad {
                    let (ge, gd) = g.split_at_mut(ne);
                    sum += pair_error(model, x0.as_slice(), x1.as_slice(), zi, &mut work, Some((gd, w_pair)));
                    let mut adj: Vec<f64> = work.input_adj[d2..].to_vec();
                    for (a, b) in adj.iter_mut().zip(&z_adj[row * n_z..(row + 1) * n_z]) {
                        *a += b;
                    }
                    batch.scaling.as_ref().unwrap_or(&model.scaling).features(x0.as_slice(), x1.as_slice(), &mut enc_in);
                    model.encoder.forward_cached(&enc_in, &mut enc_cache);
                    model.encoder.backward(&enc_cache, &adj, ge, &mut enc_in_adj);
                } else {
                    sum += pair_error(model, x0.as_slice(), x1.as_slice(), zi, &mut work, None);
                }
            }
            (sum, g)
        })
        .collect();

    let mut mse = 0.0;
    if let Some(out) = grad {
        check_len("gradient", np, out.len())?;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (s, g) in &partial {
            mse += s;
            for (o, v) in out.iter_mut().zip(g) {
                *o += v;
            }
        }
    } else {
        mse = partial.iter().map(|(s, _)| s).sum();
    }
    mse /= k as f64;
    Ok(LossTerms {
        mse,
        distribution,
        total: mse + cfg.lambda * distribution.total,
    })
}

/// Reconstruction loss `L_mse` of the batch.
pub fn loss_mse(model: &Model, batch: &Batch) -> Result<f64> {
    let w = LossWeights {
        mse: 1.0,
        distribution: 0.0,
    };
    Ok(evaluate(model, batch, &LossConfig::default(), w, None)?.mse)
}

/// Latent samples `z_i = E(x0_i, x1_i)` of a batch, row-major `K x n_z`.
pub fn latent_samples(model: &Model, batch: &Batch) -> Result<Vec<f64>> {
    check_batch(model, batch)?;
    Ok(encode_all(model, batch))
}

/// `L_mse + lambda * (L_distance + tau * L_moment)`.
pub fn loss_total(model: &Model, batch: &Batch, lambda: f64, tau: f64) -> Result<f64> {
    if !(lambda >= 0.0 && tau >= 0.0) {
        return Err(Error::Argument("lambda and tau must be non-negative".into()));
    }
    let cfg = LossConfig {
        lambda,
        distribution: DistributionLossConfig {
            tau,
            ..DistributionLossConfig::default()
        },
    };
    Ok(evaluate(model, batch, &cfg, cfg.weights(), None)?.total)
}

impl LossConfig {
    /// Weights of the training objective.
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            mse: 1.0,
            distribution: self.lambda,
        }
    }
}
