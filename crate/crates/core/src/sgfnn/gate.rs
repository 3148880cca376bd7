//! Finite-difference gate on random toy batches: parameter gradients of each
//! loss term and the input gradient of `S`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::loss::{evaluate, LossConfig, LossWeights};
use super::model::{Model, ModelKind};
use crate::error::Result;
use crate::nn::GradCheck;
use crate::rng::{self, Domain};
use crate::systems::{PhaseState, SystemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub n_batches: usize,
    pub pairs: usize,
    pub n_z: usize,
    pub hidden: Vec<usize>,
    pub step: f64,
    pub param_tolerance: f64,
    pub input_tolerance: f64,
    pub seed: u64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            n_batches: 10,
            pairs: 5,
            n_z: 1,
            hidden: vec![20, 20, 20],
            step: 1e-5,
            param_tolerance: 1e-4,
            input_tolerance: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateCheck {
    pub batch: usize,
    /// `mse`, `distribution`, `total` or `decode_s_input`.
    pub target: String,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub checks: Vec<GateCheck>,
    pub passed: bool,
}

impl GateReport {
    pub fn worst(&self, target: &str) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.target == target)
            .map(|c| c.max_relative_error)
            .fold(0.0, f64::max)
    }
}

fn toy_batch(r: &mut rng::Rng, pairs: usize, d: usize) -> Batch {
    Batch::from_pairs(
        (0..pairs)
            .map(|_| {
                let x0: Vec<f64> = (0..2 * d).map(|_| r.random_range(-2.0..2.0)).collect();
                let x1: Vec<f64> = x0.iter().map(|v| v + r.random_range(-0.1..0.1)).collect();
                (
                    PhaseState::from_slice(&x0).expect("finite"),
                    PhaseState::from_slice(&x1).expect("finite"),
                )
            })
            .collect(),
    )
}

/// Runs the gate on fresh SGFNN models for `system`.
pub fn gradient_gate(system: &SystemSpec, cfg: &GateConfig) -> Result<GateReport> {
    let fd = |tolerance| GradCheck {
        step: cfg.step,
        tolerance,
        floor: 1e-6,
    };
    let loss_cfg = LossConfig::default();
    let targets = [
        ("mse", LossWeights { mse: 1.0, distribution: 0.0 }),
        ("distribution", LossWeights { mse: 0.0, distribution: 1.0 }),
        ("total", LossWeights { mse: 1.0, distribution: loss_cfg.lambda }),
    ];
    let mut checks = Vec::new();
    for b in 0..cfg.n_batches {
        let model = Model::new(
            ModelKind::Sgfnn,
            system.clone(),
            cfg.n_z,
            &cfg.hidden,
            0.01,
            rng::sub_seed(cfg.seed, Domain::Init, b as u64),
        )?;
        let mut r = rng::stream(cfg.seed, Domain::Misc, b as u64);
        let batch = toy_batch(&mut r, cfg.pairs, system.dim());
        let params = model.params();
        for (name, w) in targets {
            let mut g = vec![0.0; model.n_params()];
            evaluate(&model, &batch, &loss_cfg, w, Some(&mut g))?;
            let mut scratch = model.clone();
            let tau = loss_cfg.distribution.tau;
            let report = fd(cfg.param_tolerance).run_terms(&params, &g, |theta| {
                scratch.set_params(theta).expect("same length");
                let t = evaluate(&scratch, &batch, &loss_cfg, w, None).expect("finite batch");
                vec![
                    w.mse * t.mse,
                    w.distribution * t.distribution.distance,
                    w.distribution * tau * t.distribution.moment,
                ]
            });
            checks.push(GateCheck {
                batch: b,
                target: name.into(),
                max_relative_error: report.max_relative_error,
                tolerance: report.tolerance,
                passed: report.passed,
            });
        }
        let d = system.dim();
        let mut worst = 0.0_f64;
        for (x0, x1) in &batch.pairs {
            let z: Vec<f64> = (0..cfg.n_z).map(|_| r.random_range(-2.0..2.0)).collect();
            let v = model.decode_s(x1.p(), x0.q(), &z)?;
            let point: Vec<f64> = x1.p().iter().chain(x0.q()).copied().collect();
            let analytic: Vec<f64> = v.ds_dp1.iter().chain(&v.ds_dq0).copied().collect();
            let report = fd(cfg.input_tolerance).run(&point, &analytic, |u| {
                model.decode_s(&u[..d], &u[d..], &z).expect("valid input").s
            });
            worst = worst.max(report.max_relative_error);
        }
        checks.push(GateCheck {
            batch: b,
            target: "decode_s_input".into(),
            max_relative_error: worst,
            tolerance: cfg.input_tolerance,
            passed: worst < cfg.input_tolerance,
        });
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(GateReport { checks, passed })
}
