//! Ensemble prediction with a trained model.
//!
//! A generating-function model advances a state through the implicit map
//!
//! ```text
//! p1 = p0 - dS/dq(p1, q0, w),   q1 = q0 + dS/dp(p1, q0, w)
//! ```
//!
//! which is symplectic for any smooth `S`. The momentum half is solved by
//! fixed-point iteration.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::{Cache, GradCache};
use crate::rng::{self, Domain};
use crate::sgfnn::{Model, ModelKind};
use crate::sim::Trajectory;
use crate::systems::PhaseState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub steps: usize,
    pub n_traj: usize,
    pub seed: u64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            tol: 1e-12,
            max_iter: 100,
            steps: 100,
            n_traj: 1000,
            seed: 0,
        }
    }
}

impl PredictionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Argument("prediction needs tol > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }
}

/// Reusable buffers for repeated decoder evaluations.
pub struct StepScratch {
    input: Vec<f64>,
    cache: Cache,
    gc: GradCache,
}

impl StepScratch {
    pub fn new(model: &Model) -> Self {
        StepScratch {
            input: Vec::with_capacity(model.decoder.n_inputs()),
            cache: model.decoder.cache(),
            gc: model.decoder.grad_cache(),
        }
    }
}

/// Outcome of one implicit step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub state: PhaseState,
    pub iterations: usize,
    pub residual: f64,
}

fn generating_gradient<'s>(model: &Model, p1: &[f64], q0: &[f64], omega: &[f64], s: &'s mut StepScratch) -> &'s [f64] {
    s.input.clear();
    s.input.extend_from_slice(p1);
    s.input.extend_from_slice(q0);
    s.input.extend_from_slice(omega);
    model.decoder.forward_cached(&s.input, &mut s.cache);
    model.decoder.scalar_input_gradient(&s.cache, &mut s.gc)
}

fn check_step_args(model: &Model, x0: &PhaseState, omega: &[f64]) -> Result<()> {
    check_len("phase state dimension", model.dim(), x0.dim())?;
    check_len("omega", model.n_z, omega.len())
}

/// Implicit generating-function step, reporting the iteration count and the
/// final fixed-point residual.
pub fn sgf_step_report(
    model: &Model,
    x0: &PhaseState,
    omega: &[f64],
    tol: f64,
    max_iter: usize,
    scratch: &mut StepScratch,
) -> Result<StepReport> {
    if model.kind != ModelKind::Sgfnn {
        return Err(Error::Unsupported("sgf_step needs a generating-function model".into()));
    }
    check_step_args(model, x0, omega)?;
    let d = model.dim();
    let (p0, q0) = (x0.p(), x0.q());
    let mut p = p0.to_vec();
    let mut next = vec![0.0; d];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let g = generating_gradient(model, &p, q0, omega, scratch);
        let mut r2 = 0.0;
        for i in 0..d {
            next[i] = p0[i] - g[d + i];
            r2 += (next[i] - p[i]) * (next[i] - p[i]);
        }
        residual = r2.sqrt();
        std::mem::swap(&mut p, &mut next);
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            let g = generating_gradient(model, &p, q0, omega, scratch);
            let q1: Vec<f64> = (0..d).map(|i| q0[i] + g[i]).collect();
            let state = PhaseState::new(&p, &q1)?;
            return Ok(StepReport {
                state,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::Prediction {
        iterations: max_iter,
        residual,
    })
}

pub fn sgf_step(model: &Model, x0: &PhaseState, omega: &[f64], cfg: &PredictionConfig) -> Result<PhaseState> {
    cfg.validate()?;
    let mut scratch = StepScratch::new(model);
    Ok(sgf_step_report(model, x0, omega, cfg.tol, cfg.max_iter, &mut scratch)?.state)
}

/// Explicit flow-map step `x1 = G(x0, omega)`.
pub fn sfml_step(model: &Model, x0: &PhaseState, omega: &[f64]) -> Result<PhaseState> {
    if model.kind != ModelKind::Sfml {
        return Err(Error::Unsupported("sfml_step needs a flow-map model".into()));
    }
    check_step_args(model, x0, omega)?;
    let input: Vec<f64> = x0.as_slice().iter().chain(omega).copied().collect();
    let out = model.decoder.forward(&input)?;
    PhaseState::from_slice(&out).map_err(|_| Error::Prediction {
        iterations: 0,
        residual: f64::NAN,
    })
}

/// One step of whichever map the model defines.
pub fn step(model: &Model, x0: &PhaseState, omega: &[f64], cfg: &PredictionConfig, scratch: &mut StepScratch) -> Result<PhaseState> {
    match model.kind {
        ModelKind::Sgfnn => Ok(sgf_step_report(model, x0, omega, cfg.tol, cfg.max_iter, scratch)?.state),
        ModelKind::Sfml => sfml_step(model, x0, omega),
    }
}

/// `n_traj` independent rollouts of `steps` steps from `x0`. Trajectory `i`
/// draws its standard-normal `omega` sequence from the stream keyed by
/// `(seed, i)`.
pub fn predict_ensemble(model: &Model, x0: &PhaseState, cfg: &PredictionConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    check_len("phase state dimension", model.dim(), x0.dim())?;
    let results: Vec<Result<Trajectory>> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(cfg.seed, Domain::Prediction, i as u64);
            let mut scratch = StepScratch::new(model);
            let mut omega = vec![0.0; model.n_z];
            let mut states = Vec::with_capacity(cfg.steps + 1);
            states.push(x0.clone());
            for j in 0..cfg.steps {
                omega.iter_mut().for_each(|w| *w = rng.sample(StandardNormal));
                let next = step(model, &states[j], &omega, cfg, &mut scratch).map_err(|e| e.at(i, j))?;
                states.push(next);
            }
            Ok(Trajectory {
                t0: 0.0,
                delta: model.delta,
                states,
            })
        })
        .collect();
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;
    use crate::systems::{SystemKind, SystemSpec};

    fn model(kind: ModelKind) -> Model {
        Model::new(kind, SystemSpec::with_defaults(SystemKind::Kubo), 1, &[20, 20, 20], 0.01, 2).unwrap()
    }

    #[test]
    fn zero_decoder_is_identity() {
        let mut m = model(ModelKind::Sgfnn);
        m.decoder.params_mut().iter_mut().for_each(|v| *v = 0.0);
        let x = PhaseState::pq(0.7, -0.2);
        assert_eq!(sgf_step(&m, &x, &[0.5], &PredictionConfig::default()).unwrap(), x);
    }

    #[test]
    fn linear_generating_function_shifts_position() {
        let mut m = model(ModelKind::Sgfnn);
        m.decoder = Mlp::zeros(&[3, 1]).unwrap();
        m.decoder.weight_mut(0)[0] = 0.25; // S = 0.25 p1
        let r = sgf_step_report(&m, &PhaseState::pq(0.7, -0.2), &[1.0], 1e-12, 100, &mut StepScratch::new(&m)).unwrap();
        assert_eq!(r.state.p(), &[0.7]);
        assert!((r.state.q()[0] - 0.05).abs() < 1e-15);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn converged_residual_is_below_tolerance() {
        let mut m = model(ModelKind::Sgfnn);
        let last = m.decoder.n_layers() - 1;
        m.decoder.weight_mut(last).iter_mut().for_each(|w| *w *= 0.01);
        let r = sgf_step_report(&m, &PhaseState::pq(0.3, 0.4), &[0.1], 1e-12, 100, &mut StepScratch::new(&m)).unwrap();
        assert!(r.residual <= 1e-12);
        assert!(r.iterations > 1);
    }

    #[test]
    fn non_convergence_is_an_error() {
        let mut m = model(ModelKind::Sgfnn);
        let last = m.decoder.n_layers() - 1;
        m.decoder.weight_mut(last).iter_mut().for_each(|w| *w *= 50.0);
        let r = sgf_step_report(&m, &PhaseState::pq(0.3, 0.4), &[0.1], 1e-12, 5, &mut StepScratch::new(&m));
        assert!(matches!(r, Err(Error::Prediction { iterations: 5, .. })));
    }

    #[test]
    fn zero_decoder_flow_map_returns_bias() {
        let mut m = model(ModelKind::Sfml);
        m.decoder.params_mut().iter_mut().for_each(|v| *v = 0.0);
        let last = m.decoder.n_layers() - 1;
        m.decoder.bias_mut(last).copy_from_slice(&[0.5, -1.0]);
        for x in [PhaseState::pq(0.0, 0.0), PhaseState::pq(2.0, 1.0)] {
            assert_eq!(sfml_step(&m, &x, &[0.3]).unwrap(), PhaseState::pq(0.5, -1.0));
        }
        let m = model(ModelKind::Sfml);
        let x = PhaseState::pq(0.1, 0.2);
        assert_eq!(sfml_step(&m, &x, &[0.3]).unwrap(), sfml_step(&m, &x, &[0.3]).unwrap());
    }

    #[test]
    fn ensemble_shapes_and_determinism() {
        let mut m = model(ModelKind::Sgfnn);
        let last = m.decoder.n_layers() - 1;
        m.decoder.weight_mut(last).iter_mut().for_each(|w| *w *= 0.01);
        let x0 = PhaseState::pq(1.0, 0.0);
        let single = predict_ensemble(&m, &x0, &PredictionConfig { steps: 0, n_traj: 1, ..Default::default() }).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].states, vec![x0.clone()]);
        let cfg = PredictionConfig { steps: 20, n_traj: 8, seed: 4, ..Default::default() };
        let a = predict_ensemble(&m, &x0, &cfg).unwrap();
        assert_eq!(a, predict_ensemble(&m, &x0, &cfg).unwrap());
        assert_eq!(a.len(), 8);
        assert!(a.iter().all(|t| t.states.len() == 21));
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let m = model(ModelKind::Sfml);
        assert!(sgf_step(&m, &PhaseState::pq(0.0, 0.0), &[0.0], &PredictionConfig::default()).is_err());
        let g = model(ModelKind::Sgfnn);
        assert!(sfml_step(&g, &PhaseState::pq(0.0, 0.0), &[0.0]).is_err());
    }
}
