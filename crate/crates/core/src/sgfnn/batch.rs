//! Sub-sampled batches: the `K` pairs whose `x0` lie nearest a random anchor.

use std::cmp::Ordering;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::sim::Dataset;
use crate::systems::PhaseState;

use super::model::EncoderScaling;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `(x0, x1)` pairs.
    pub pairs: Vec<(PhaseState, PhaseState)>,
    /// Flat pair indices into the dataset, nearest first.
    pub indices: Vec<usize>,
    pub seed_point: PhaseState,
    /// Overrides the model's encoder scaling for this batch.
    pub scaling: Option<EncoderScaling>,
}

impl Batch {
    pub fn from_pairs(pairs: Vec<(PhaseState, PhaseState)>) -> Self {
        let seed_point = pairs.first().map(|p| p.0.clone()).unwrap_or_else(|| PhaseState::zeros(1));
        Batch {
            indices: (0..pairs.len()).collect(),
            pairs,
            seed_point,
            scaling: None,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Indices of the `k` points in the row-major `points` (stride `dim`) nearest
/// to `anchor`, ordered by distance with ties broken by smaller index.
pub fn nearest_indices(points: &[f64], dim: usize, anchor: &[f64], k: usize) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = points
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, x)| (x.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1));
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k, cmp);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(cmp);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Builds `n_batches` batches of `k` pairs. Each batch is anchored at a
/// uniformly drawn pair and holds the `k` pairs whose `x0` are nearest the
/// anchor's `x0`.
pub fn make_batches(dataset: &Dataset, k: usize, n_batches: usize, seed: u64) -> Result<Vec<Batch>> {
    let m = dataset.n_pairs();
    if k == 0 || k > m {
        return Err(Error::Argument(format!("batch size {k} must lie in 1..={m}")));
    }
    let dim = 2 * dataset.system.dim();
    let starts: Vec<f64> = dataset.pairs().flat_map(|(x0, _)| x0.as_slice().to_vec()).collect();
    let mut rng = rng::stream(seed, Domain::Batches, 0);
    (0..n_batches)
        .map(|_| {
            let anchor = rng.random_range(0..m);
            let seed_point = dataset.pair(anchor).0.clone();
            let indices = nearest_indices(&starts, dim, seed_point.as_slice(), k);
            let pairs = indices
                .iter()
                .map(|&i| {
                    let (a, b) = dataset.pair(i);
                    (a.clone(), b.clone())
                })
                .collect();
            Ok(Batch {
                pairs,
                indices,
                seed_point,
                scaling: None,
            })
        })
        .collect()
}
