//! Central-difference verification of analytic gradients.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Per-parameter `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    pub tolerance: f64,
    /// Magnitude below which errors are measured absolutely.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

impl GradCheck {
    /// Compares `analytic` against central differences of `loss` at `params`.
    pub fn run(&self, params: &[f64], analytic: &[f64], mut loss: impl FnMut(&[f64]) -> f64) -> GradCheckReport {
        self.run_terms(params, analytic, |theta| vec![loss(theta)])
    }

    /// Like [`GradCheck::run`] for a loss that is the sum of the returned
    /// terms. Each term is differenced on its own, so a large term that does
    /// not depend on a parameter adds no roundoff to that parameter's check.
    pub fn run_terms(
        &self,
        params: &[f64],
        analytic: &[f64],
        mut terms: impl FnMut(&[f64]) -> Vec<f64>,
    ) -> GradCheckReport {
        assert_eq!(params.len(), analytic.len(), "gradient length");
        let mut theta = params.to_vec();
        let relative_errors: Vec<f64> = (0..params.len())
            .map(|i| {
                let orig = theta[i];
                theta[i] = orig + self.step;
                let up = terms(&theta);
                theta[i] = orig - self.step;
                let down = terms(&theta);
                theta[i] = orig;
                assert_eq!(up.len(), down.len(), "term count");
                let numeric: f64 = up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * self.step)).sum();
                let scale = analytic[i].abs().max(numeric.abs()).max(self.floor);
                let err = (analytic[i] - numeric).abs() / scale;
                if err.is_nan() {
                    f64::INFINITY
                } else {
                    err
                }
            })
            .collect();
        let (worst_index, max_relative_error) = relative_errors
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
        GradCheckReport {
            n_params: params.len(),
            step: self.step,
            tolerance: self.tolerance,
            passed: max_relative_error < self.tolerance,
            relative_errors,
            max_relative_error,
            worst_index,
        }
    }
}
