//! Data generation: Brownian increments, the implicit midpoint scheme for
//! Stratonovich systems, and seeded trajectory ensembles.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{check_len, Error, Result};
use crate::rng::{self, Domain};
use crate::systems::{PhaseState, SystemSpec};

/// Fixed-point settings for the implicit midpoint solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MidpointSolver {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MidpointSolver {
    fn default() -> Self {
        MidpointSolver {
            tol: 1e-12,
            max_iter: 100,
        }
    }
}

/// `steps x channels` matrix of i.i.d. `N(0, delta)` increments.
pub fn brownian_increments(seed: u64, channels: usize, steps: usize, delta: f64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    brownian_from(&mut rng, channels, steps, delta)
}

fn brownian_from(rng: &mut ChaCha8Rng, channels: usize, steps: usize, delta: f64) -> Result<Vec<Vec<f64>>> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::Argument(format!("delta must be >= 0, got {delta}")));
    }
    let scale = delta.sqrt();
    Ok((0..steps)
        .map(|_| {
            (0..channels)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect())
}

/// One step of the implicit midpoint rule
///
/// ```text
/// x1 = x0 + delta * F(xm) + sum_k D_k(xm) * dW_k,   xm = (x0 + x1) / 2
/// ```
///
/// solved by fixed-point iteration from `x1 = x0`.
pub fn midpoint_step(
    spec: &SystemSpec,
    x: &PhaseState,
    delta: f64,
    dw: &[f64],
    solver: MidpointSolver,
) -> Result<PhaseState> {
    check_len("phase state dimension", spec.dim(), x.dim())?;
    check_len("brownian increment", spec.noise_channels(), dw.len())?;
    if !(solver.tol > 0.0) {
        return Err(Error::Argument(format!("tol must be positive, got {}", solver.tol)));
    }
    let n = x.as_slice().len();
    let x0 = x.as_slice();
    let mut drift: SmallVec<[f64; 2]> = SmallVec::from_elem(0.0, n);
    let mut diffusion: SmallVec<[f64; 4]> = SmallVec::from_elem(0.0, n * dw.len());
    let mut mid: SmallVec<[f64; 2]> = SmallVec::from_elem(0.0, n);
    let mut cur: SmallVec<[f64; 2]> = SmallVec::from_slice(x0);
    let mut next: SmallVec<[f64; 2]> = SmallVec::from_elem(0.0, n);
    let mut residual = f64::INFINITY;
    for _ in 0..solver.max_iter {
        for i in 0..n {
            mid[i] = 0.5 * (x0[i] + cur[i]);
        }
        spec.eval_into(&mid, &mut drift, &mut diffusion);
        for i in 0..n {
            let mut v = x0[i] + delta * drift[i];
            for (k, w) in dw.iter().enumerate() {
                v += diffusion[k * n + i] * w;
            }
            next[i] = v;
        }
        residual = next
            .iter()
            .zip(&cur)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        std::mem::swap(&mut cur, &mut next);
        if !residual.is_finite() {
            break;
        }
        if residual < solver.tol {
            return Ok(PhaseState::from_raw(cur));
        }
    }
    Err(Error::Integration {
        iterations: solver.max_iter,
        residual,
    })
}

/// A uniformly spaced path `x_0, ..., x_L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub delta: f64,
    pub states: Vec<PhaseState>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.delta
    }

    pub fn last(&self) -> &PhaseState {
        self.states.last().expect("trajectory is non-empty")
    }
}

/// Initial-condition sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    /// Uniform (by volume) on the centred ball of the given radius; for one
    /// degree of freedom this is the disc of radius `radius`.
    Disc { radius: f64 },
}

impl Default for Region {
    fn default() -> Self {
        Region::Disc { radius: 3.0 }
    }
}

impl Region {
    pub fn sample(&self, d: usize, rng: &mut ChaCha8Rng) -> PhaseState {
        let Region::Disc { radius } = *self;
        if d == 1 {
            let r = radius * rng.random::<f64>().sqrt();
            let theta = std::f64::consts::TAU * rng.random::<f64>();
            return PhaseState::pq(r * theta.cos(), r * theta.sin());
        }
        let n = 2 * d;
        let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
        x.iter_mut().for_each(|v| *v *= r / norm);
        PhaseState::from_slice(&x).expect("finite sample")
    }
}

/// `N` trajectories of equal length and spacing, plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub system: SystemSpec,
    pub delta: f64,
    pub seed: u64,
    pub region: Region,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn n_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    /// Steps per trajectory, `L`.
    pub fn steps(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::steps)
    }

    /// Number of consecutive pairs, `M = N * L`.
    pub fn n_pairs(&self) -> usize {
        self.n_trajectories() * self.steps()
    }

    /// Pair by flat index `traj * L + step`.
    pub fn pair(&self, index: usize) -> (&PhaseState, &PhaseState) {
        let l = self.steps();
        let t = &self.trajectories[index / l];
        let j = index % l;
        (&t.states[j], &t.states[j + 1])
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&PhaseState, &PhaseState)> + '_ {
        self.trajectories
            .iter()
            .flat_map(|t| t.states.windows(2).map(|w| (&w[0], &w[1])))
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.steps();
        if self.trajectories.is_empty() || l == 0 {
            return Err(Error::Argument("dataset needs at least one pair".into()));
        }
        for t in &self.trajectories {
            if t.steps() != l || t.delta != self.delta {
                return Err(Error::Argument(
                    "trajectories must share step count and spacing".into(),
                ));
            }
            for s in &t.states {
                check_len("phase state dimension", self.system.dim(), s.dim())?;
            }
        }
        Ok(())
    }
}

/// Integrates one path of `steps` midpoint steps with its own Brownian stream.
pub fn simulate_trajectory(
    spec: &SystemSpec,
    x0: PhaseState,
    steps: usize,
    delta: f64,
    brownian_seed: u64,
    solver: MidpointSolver,
) -> Result<Trajectory> {
    let increments = brownian_increments(brownian_seed, spec.noise_channels(), steps, delta)?;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0);
    for (j, dw) in increments.iter().enumerate() {
        let next = midpoint_step(spec, &states[j], delta, dw, solver).map_err(|e| e.at(0, j))?;
        states.push(next);
    }
    Ok(Trajectory {
        t0: 0.0,
        delta,
        states,
    })
}

fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| match e {
                Error::AtStep { step, source, .. } => Error::AtStep {
                    trajectory: i,
                    step,
                    source,
                },
                other => other,
            })
        })
        .collect()
}

/// Simulates `n` trajectories from independently sampled initial points.
/// Each trajectory draws from streams keyed by `(seed, index)`, so the result
/// does not depend on the number of worker threads.
pub fn generate_dataset(
    spec: &SystemSpec,
    region: Region,
    n: usize,
    steps: usize,
    delta: f64,
    seed: u64,
    solver: MidpointSolver,
) -> Result<Dataset> {
    if n == 0 || steps == 0 {
        return Err(Error::Argument("N and L must be at least 1".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::Argument(format!("delta must be positive, got {delta}")));
    }
    let d = spec.dim();
    let results: Vec<Result<Trajectory>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut ic = rng::stream(seed, Domain::InitialCondition, i as u64);
            let x0 = region.sample(d, &mut ic);
            let bseed = rng::sub_seed(seed, Domain::Brownian, i as u64);
            simulate_trajectory(spec, x0, steps, delta, bseed, solver)
        })
        .collect();
    Ok(Dataset {
        system: spec.clone(),
        delta,
        seed,
        region,
        trajectories: first_error(results)?,
    })
}

/// Reference ensemble: `n` midpoint paths from a common initial state.
pub fn simulate_ensemble(
    spec: &SystemSpec,
    x0: &PhaseState,
    n: usize,
    steps: usize,
    delta: f64,
    seed: u64,
    solver: MidpointSolver,
) -> Result<Vec<Trajectory>> {
    let results: Vec<Result<Trajectory>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let bseed = rng::sub_seed(seed, Domain::Brownian, i as u64);
            simulate_trajectory(spec, x0.clone(), steps, delta, bseed, solver)
        })
        .collect();
    first_error(results)
}
