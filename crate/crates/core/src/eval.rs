//! Ensemble statistics and comparison metrics between predicted and true
//! ensembles.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::latent::{self, KdeConfig};
use crate::sgfnn::{batch_scaling, latent_samples, make_batches, Batch, EncoderInput, Model};
use crate::sim::{Dataset, Trajectory};
use crate::systems::{PhaseState, SystemSpec};

const INV_SQRT_TAU: f64 = 0.398_942_280_401_432_7;

/// Per-time moments of an ensemble. `mean[j]` and `std[j]` are full state
/// vectors `(p, q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    /// Ensemble average of `|x|^2`.
    pub second_moment: Vec<f64>,
}

impl EnsembleStats {
    /// Index of the time closest to `t`, if within rounding distance.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.times.iter().position(|s| (s - t).abs() <= tol)
    }
}

fn check_ensemble(ensemble: &[Trajectory]) -> Result<(usize, usize)> {
    let first = ensemble
        .first()
        .ok_or_else(|| Error::Argument("empty ensemble".into()))?;
    let n_states = first.states.len();
    let n_f = first
        .states
        .first()
        .ok_or_else(|| Error::Argument("trajectory without states".into()))?
        .as_slice()
        .len();
    for tr in ensemble {
        check_len("trajectory length", n_states, tr.states.len())?;
        if tr.delta != first.delta || tr.t0 != first.t0 {
            return Err(Error::Argument("ensemble trajectories use different time grids".into()));
        }
        for x in &tr.states {
            check_len("state size", n_f, x.as_slice().len())?;
        }
    }
    Ok((n_states, n_f))
}

pub fn ensemble_stats(ensemble: &[Trajectory]) -> Result<EnsembleStats> {
    let (n_states, n_f) = check_ensemble(ensemble)?;
    let n = ensemble.len() as f64;
    let mut out = EnsembleStats {
        times: (0..n_states).map(|j| ensemble[0].time(j)).collect(),
        mean: Vec::with_capacity(n_states),
        std: Vec::with_capacity(n_states),
        second_moment: Vec::with_capacity(n_states),
    };
    for j in 0..n_states {
        let mut m = vec![0.0; n_f];
        let mut sm = 0.0;
        for tr in ensemble {
            let x = tr.states[j].as_slice();
            m.iter_mut().zip(x).for_each(|(a, b)| *a += b);
            sm += tr.states[j].squared_norm();
        }
        m.iter_mut().for_each(|a| *a /= n);
        let mut v = vec![0.0; n_f];
        for tr in ensemble {
            for ((a, b), mu) in v.iter_mut().zip(tr.states[j].as_slice()).zip(&m) {
                *a += (b - mu) * (b - mu);
            }
        }
        let std = v
            .iter()
            .map(|a| if ensemble.len() > 1 { (a / (n - 1.0)).sqrt() } else { 0.0 })
            .collect();
        out.mean.push(m);
        out.std.push(std);
        out.second_moment.push(sm / n);
    }
    Ok(out)
}

/// Mean and standard-deviation errors at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub time: f64,
    /// `|E x_T - E x~_T|`
    pub e_mean: f64,
    /// `|std x_T - std x~_T|`, component-wise std.
    pub e_std: f64,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn error_metrics_from_stats(pred: &EnsembleStats, truth: &EnsembleStats, t: f64) -> Result<ErrorMetrics> {
    let (i, j) = match (pred.index_of(t), truth.index_of(t)) {
        (Some(i), Some(j)) => (i, j),
        _ => return Err(Error::Argument(format!("time {t} is not on both ensemble grids"))),
    };
    check_len("state size", truth.mean[j].len(), pred.mean[i].len())?;
    Ok(ErrorMetrics {
        time: t,
        e_mean: euclid(&pred.mean[i], &truth.mean[j]),
        e_std: euclid(&pred.std[i], &truth.std[j]),
    })
}

pub fn error_metrics(pred: &[Trajectory], truth: &[Trajectory], t: f64) -> Result<ErrorMetrics> {
    error_metrics_from_stats(&ensemble_stats(pred)?, &ensemble_stats(truth)?, t)
}

/// Least-squares slope of `second_moment` against time over `t <= t_max`.
pub fn second_moment_slope(stats: &EnsembleStats, t_max: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = stats
        .times
        .iter()
        .zip(&stats.second_moment)
        .filter(|(t, _)| **t <= t_max + 1e-9)
        .map(|(t, m)| (*t, *m))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Argument("need two time points for a slope".into()));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    Ok(sxy / sxx)
}

/// Equal-width histogram; the last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(samples: &[f64], bins: usize) -> Self {
        let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Histogram::with_range(samples, bins, lo, hi)
    }

    pub fn with_range(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Self {
        let bins = bins.max(1);
        let (lo, hi) = if !(lo.is_finite() && hi.is_finite()) {
            (-0.5, 0.5)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        };
        let w = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|k| lo + k as f64 * w).collect();
        let mut counts = vec![0u64; bins];
        for &s in samples {
            if s >= lo && s <= hi {
                let k = (((s - lo) / w) as usize).min(bins - 1);
                counts[k] += 1;
            }
        }
        Histogram { edges, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Density comparison for one state component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPdf {
    pub component: usize,
    pub l2_distance: f64,
    /// Standardization applied to both sample sets before the KDE.
    pub truth_mean: f64,
    pub truth_std: f64,
    /// True when either sample set has zero spread.
    pub degenerate: bool,
    pub grid: Vec<f64>,
    pub density_pred: Vec<f64>,
    pub density_truth: Vec<f64>,
    pub hist_pred: Histogram,
    pub hist_truth: Histogram,
}

/// Compares the marginal densities of two state samples component by
/// component. Both sets are standardized with the truth mean and std so
/// the fixed KDE grid fits any system.
pub fn pdf_compare(
    pred: &[PhaseState],
    truth: &[PhaseState],
    kde: &KdeConfig,
    bins: usize,
) -> Result<Vec<ComponentPdf>> {
    kde.validate()?;
    if pred.len() < 100 || truth.len() < 100 {
        return Err(Error::Argument("pdf comparison needs at least 100 samples per set".into()));
    }
    let n_f = truth[0].as_slice().len();
    for x in pred.iter().chain(truth) {
        check_len("state size", n_f, x.as_slice().len())?;
    }
    let grid = kde.grid();
    (0..n_f)
        .map(|c| {
            let a: Vec<f64> = pred.iter().map(|x| x.as_slice()[c]).collect();
            let b: Vec<f64> = truth.iter().map(|x| x.as_slice()[c]).collect();
            let (mb, sb) = (latent::mean(&b), latent::sample_std(&b));
            let degenerate = !(sb > 0.0) || !(latent::sample_std(&a) > 0.0);
            let scale = if sb > 0.0 { sb } else { 1.0 };
            let za: Vec<f64> = a.iter().map(|v| (v - mb) / scale).collect();
            let zb: Vec<f64> = b.iter().map(|v| (v - mb) / scale).collect();
            let density_pred = kde.density(&za);
            let density_truth = kde.density(&zb);
            let l2_distance = kde.l2(density_pred.iter().zip(&density_truth).map(|(x, y)| x - y));
            let lo = a.iter().chain(&b).copied().fold(f64::INFINITY, f64::min);
            let hi = a.iter().chain(&b).copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(ComponentPdf {
                component: c,
                l2_distance,
                truth_mean: mb,
                truth_std: sb,
                degenerate,
                grid: grid.clone(),
                density_pred,
                density_truth,
                hist_pred: Histogram::with_range(&a, bins, lo, hi),
                hist_truth: Histogram::with_range(&b, bins, lo, hi),
            })
        })
        .collect()
}

/// Max-abs entry of `D^T J D - J` with `D` the central-difference Jacobian
/// of `step` at `x`.
pub fn symplecticity_residual<F>(mut step: F, x: &PhaseState, h: f64) -> Result<f64>
where
    F: FnMut(&PhaseState) -> Result<PhaseState>,
{
    if !(h > 0.0) {
        return Err(Error::Argument("finite-difference step must be positive".into()));
    }
    let n = x.as_slice().len();
    let d = n / 2;
    // column-major Jacobian
    let mut jac = vec![0.0; n * n];
    let mut buf = x.as_slice().to_vec();
    for k in 0..n {
        buf[k] = x.as_slice()[k] + h;
        let plus = step(&PhaseState::from_slice(&buf)?)?;
        buf[k] = x.as_slice()[k] - h;
        let minus = step(&PhaseState::from_slice(&buf)?)?;
        buf[k] = x.as_slice()[k];
        check_len("map output", n, plus.as_slice().len())?;
        for i in 0..n {
            jac[k * n + i] = (plus.as_slice()[i] - minus.as_slice()[i]) / (2.0 * h);
        }
    }
    // J = [[0, I], [-I, 0]]
    let j_entry = |r: usize, c: usize| -> f64 {
        if r < d && c == r + d {
            1.0
        } else if r >= d && c + d == r {
            -1.0
        } else {
            0.0
        }
    };
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let mut v = 0.0;
            for r in 0..n {
                for c in 0..n {
                    let w = j_entry(r, c);
                    if w != 0.0 {
                        v += jac[a * n + r] * w * jac[b * n + c];
                    }
                }
            }
            worst = worst.max((v - j_entry(a, b)).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantDrift {
    /// Max over trajectories and times of `|I(x_t) - I(x_0)|`.
    pub max_drift: f64,
    pub times: Vec<f64>,
    /// Ensemble mean of `|I(x_t) - I(x_0)|`.
    pub mean_drift: Vec<f64>,
}

pub fn invariant_drift(ensemble: &[Trajectory], spec: &SystemSpec) -> Result<InvariantDrift> {
    let (n_states, _) = check_ensemble(ensemble)?;
    let mut mean_drift = vec![0.0; n_states];
    let mut max_drift: f64 = 0.0;
    for tr in ensemble {
        let i0 = spec.eval_invariant(&tr.states[0])?;
        for (j, x) in tr.states.iter().enumerate() {
            let dev = (spec.eval_invariant(x)? - i0).abs();
            mean_drift[j] += dev;
            max_drift = max_drift.max(dev);
        }
    }
    mean_drift.iter_mut().for_each(|v| *v /= ensemble.len() as f64);
    Ok(InvariantDrift {
        max_drift,
        times: (0..n_states).map(|j| ensemble[0].time(j)).collect(),
        mean_drift,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDim {
    pub mean: f64,
    pub std: f64,
    /// Central moments 1..=6, divisor `n`.
    pub central_moments: [f64; 6],
    /// `mu4 / mu2^2 - 3`; `None` for constant samples.
    pub excess_kurtosis: Option<f64>,
    /// L2 distance between the KDE of the raw samples and `N(0, 1)`.
    pub kde_distance: f64,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCorrelation {
    pub i: usize,
    pub j: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentReport {
    pub n_samples: usize,
    pub dims: Vec<LatentDim>,
    pub correlations: Vec<LatentCorrelation>,
}

/// Summary statistics of row-major `K x n_z` latent samples.
pub fn latent_report(z: &[f64], n_z: usize, kde: &KdeConfig, bins: usize) -> Result<LatentReport> {
    kde.validate()?;
    if n_z == 0 || z.len() % n_z != 0 {
        return Err(Error::Argument("latent samples do not form a K x n_z matrix".into()));
    }
    let k = z.len() / n_z;
    if k < 2 {
        return Err(Error::Argument("latent report needs at least two samples".into()));
    }
    let cols: Vec<Vec<f64>> = (0..n_z).map(|j| latent::column(z, n_z, j)).collect();
    let normal: Vec<f64> = kde.grid().iter().map(|y| INV_SQRT_TAU * (-0.5 * y * y).exp()).collect();
    let dims = cols
        .iter()
        .map(|c| {
            let mu = latent::central_moments(c);
            let excess_kurtosis = (mu[1] > 0.0).then(|| mu[3] / (mu[1] * mu[1]) - 3.0);
            let dens = kde.density(c);
            LatentDim {
                mean: latent::mean(c),
                std: latent::sample_std(c),
                central_moments: mu,
                excess_kurtosis,
                kde_distance: kde.l2(dens.iter().zip(&normal).map(|(a, b)| a - b)),
                histogram: Histogram::new(c, bins),
            }
        })
        .collect();
    let mut correlations = Vec::new();
    for i in 0..n_z {
        for j in i + 1..n_z {
            correlations.push(LatentCorrelation {
                i,
                j,
                rho: latent::correlation(&cols[i], &cols[j]),
            });
        }
    }
    Ok(LatentReport {
        n_samples: k,
        dims,
        correlations,
    })
}

/// Row-major latent samples for held-out pairs.
///
/// Raw and dataset-scaled encoders see each pair on its own. Batch-scaled
/// encoders need the statistics of a neighbourhood, so pairs are encoded
/// inside `n_batches` kNN batches of `batch_size` and each pair keeps its
/// first value; the result then holds at most `batch_size * n_batches` rows.
pub fn held_out_latents(
    model: &Model,
    held_out: &Dataset,
    mode: EncoderInput,
    batch_size: usize,
    n_batches: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    match mode {
        EncoderInput::Raw | EncoderInput::Dataset => {
            let all = Batch::from_pairs(held_out.pairs().map(|(a, b)| (a.clone(), b.clone())).collect());
            latent_samples(model, &all)
        }
        EncoderInput::Batch | EncoderInput::Whitened => {
            let mut seen = vec![false; held_out.n_pairs()];
            let mut out = Vec::new();
            for mut b in make_batches(held_out, batch_size, n_batches, seed)? {
                b.scaling = batch_scaling(model, &b, mode)?;
                let z = latent_samples(model, &b)?;
                for (row, &i) in z.chunks(model.n_z).zip(&b.indices) {
                    if !std::mem::replace(&mut seen[i], true) {
                        out.extend_from_slice(row);
                    }
                }
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Domain};
    use crate::systems::SystemKind;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn traj(states: &[(f64, f64)]) -> Trajectory {
        Trajectory {
            t0: 0.0,
            delta: 0.5,
            states: states.iter().map(|&(p, q)| PhaseState::pq(p, q)).collect(),
        }
    }

    fn normals(n: usize, shift: f64, stream: u64) -> Vec<f64> {
        let mut r = rng::stream(11, Domain::Misc, stream);
        (0..n).map(|_| shift + r.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn identical_trajectories_have_zero_std() {
        let e = vec![traj(&[(1.0, 2.0), (0.5, -1.0)]); 4];
        let s = ensemble_stats(&e).unwrap();
        assert_eq!(s.times, vec![0.0, 0.5]);
        assert_eq!(s.std, vec![vec![0.0, 0.0]; 2]);
        assert_eq!(s.mean[1], vec![0.5, -1.0]);
        assert_eq!(s.second_moment, vec![5.0, 1.25]);
    }

    #[test]
    fn two_point_ensemble_uses_unbiased_std() {
        let e = vec![traj(&[(1.0, 0.0)]), traj(&[(-1.0, 0.0)])];
        let s = ensemble_stats(&e).unwrap();
        assert_eq!(s.mean[0], vec![0.0, 0.0]);
        assert!((s.std[0][0] - 2f64.sqrt()).abs() < 1e-15);
        assert!(ensemble_stats(&[]).is_err());
    }

    #[test]
    fn error_metrics_by_hand() {
        let truth = vec![traj(&[(0.0, 0.0), (1.0, 1.0)]), traj(&[(0.0, 0.0), (3.0, 1.0)])];
        let pred = vec![traj(&[(0.0, 0.0), (2.0, 2.0)]), traj(&[(0.0, 0.0), (2.0, 4.0)])];
        // truth at t=0.5: mean (2, 1), std (sqrt2, 0); pred: mean (2, 3), std (0, sqrt2)
        let m = error_metrics(&pred, &truth, 0.5).unwrap();
        assert!((m.e_mean - 2.0).abs() < 1e-12);
        assert!((m.e_std - 2.0).abs() < 1e-12);
        let same = error_metrics(&truth, &truth, 0.5).unwrap();
        assert_eq!((same.e_mean, same.e_std), (0.0, 0.0));
        assert!(error_metrics(&pred, &truth, 0.75).is_err());
    }

    #[test]
    fn metrics_ignore_trajectory_order() {
        let a = vec![traj(&[(0.1, 0.2), (0.3, 0.4)]), traj(&[(0.5, -0.2), (0.9, 1.4)]), traj(&[(2.0, 0.0), (-1.0, 0.0)])];
        let mut b = a.clone();
        b.reverse();
        let (sa, sb) = (ensemble_stats(&a).unwrap(), ensemble_stats(&b).unwrap());
        for j in 0..2 {
            for c in 0..2 {
                assert!((sa.mean[j][c] - sb.mean[j][c]).abs() < 1e-15);
                assert!((sa.std[j][c] - sb.std[j][c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn slope_of_exact_line() {
        let s = EnsembleStats {
            times: vec![0.0, 1.0, 2.0, 3.0],
            mean: vec![vec![]; 4],
            std: vec![vec![]; 4],
            second_moment: vec![1.0, 1.01, 1.02, 5.0],
        };
        assert!((second_moment_slope(&s, 2.0).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn histogram_counts_every_sample() {
        let v = normals(1234, 0.0, 1);
        let h = Histogram::new(&v, 50);
        assert_eq!(h.total(), 1234);
        assert_eq!(h.edges.len(), 51);
        let flat = Histogram::new(&[2.0; 7], 50);
        assert_eq!(flat.total(), 7);
    }

    #[test]
    fn shifted_normals_match_closed_form_distance() {
        // |N(0,1) - N(1,1)|_2^2 = (1 - exp(-1/4)) / sqrt(pi)
        let exact = ((1.0 - (-0.25f64).exp()) / std::f64::consts::PI.sqrt()).sqrt();
        let truth: Vec<PhaseState> = normals(10_000, 0.0, 2).iter().map(|&v| PhaseState::pq(v, v)).collect();
        let pred: Vec<PhaseState> = normals(10_000, 1.0, 3).iter().map(|&v| PhaseState::pq(v, v)).collect();
        let cmp = pdf_compare(&pred, &truth, &KdeConfig::default(), 50).unwrap();
        for c in &cmp {
            assert!((c.l2_distance - exact).abs() < 0.1 * exact, "{} vs {exact}", c.l2_distance);
            assert!(!c.degenerate);
            assert_eq!(c.hist_pred.total(), 10_000);
            assert_eq!(c.hist_truth.total(), 10_000);
        }
        let same = pdf_compare(&truth, &truth, &KdeConfig::default(), 50).unwrap();
        assert_eq!(same[0].l2_distance, 0.0);
    }

    #[test]
    fn degenerate_samples_are_flagged() {
        let flat = vec![PhaseState::pq(1.0, 1.0); 200];
        let cmp = pdf_compare(&flat, &flat, &KdeConfig::default(), 50).unwrap();
        assert!(cmp.iter().all(|c| c.degenerate && c.l2_distance.is_finite()));
        assert!(pdf_compare(&flat[..50], &flat, &KdeConfig::default(), 50).is_err());
    }

    #[test]
    fn symplecticity_of_simple_maps() {
        let x = PhaseState::pq(0.3, -0.7);
        let id = symplecticity_residual(|y| Ok(y.clone()), &x, 1e-6).unwrap();
        assert!(id < 1e-10);
        let double = symplecticity_residual(|y| Ok(PhaseState::pq(2.0 * y.p()[0], 2.0 * y.q()[0])), &x, 1e-6).unwrap();
        assert!((double - 3.0).abs() < 1e-8);
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = symplecticity_residual(
            |y| Ok(PhaseState::pq(c * y.p()[0] - s * y.q()[0], s * y.p()[0] + c * y.q()[0])),
            &x,
            1e-6,
        )
        .unwrap();
        assert!(rot < 1e-9);
    }

    #[test]
    fn symplecticity_in_two_dimensions() {
        // (p, q) -> (p / 2, 2 q) is symplectic; (p, q) -> (p, 2 q) is not
        let x = PhaseState::new(&[0.1, 0.2], &[0.3, 0.4]).unwrap();
        let ok = symplecticity_residual(
            |y| PhaseState::new(&[y.p()[0] / 2.0, y.p()[1] / 2.0], &[2.0 * y.q()[0], 2.0 * y.q()[1]]),
            &x,
            1e-6,
        )
        .unwrap();
        assert!(ok < 1e-9);
        let bad = symplecticity_residual(
            |y| PhaseState::new(y.p(), &[2.0 * y.q()[0], 2.0 * y.q()[1]]),
            &x,
            1e-6,
        )
        .unwrap();
        assert!((bad - 1.0).abs() < 1e-8);
    }

    #[test]
    fn drift_of_constant_and_unsupported() {
        let spec = SystemSpec::with_defaults(SystemKind::Kubo);
        let e = vec![traj(&[(0.6, 0.8), (0.6, 0.8)]), traj(&[(1.0, 0.0), (0.0, 2.0)])];
        let d = invariant_drift(&e, &spec).unwrap();
        assert_eq!(d.max_drift, 3.0);
        assert_eq!(d.mean_drift, vec![0.0, 1.5]);
        let other = SystemSpec::with_defaults(SystemKind::NonSeparable);
        assert!(invariant_drift(&e, &other).is_err());
    }

    #[test]
    fn latent_report_of_normal_sample() {
        let z = normals(100_000, 0.0, 4);
        let r = latent_report(&z, 1, &KdeConfig::default(), 50).unwrap();
        let d = &r.dims[0];
        assert!((d.central_moments[1] - 1.0).abs() < 0.02);
        assert!(d.mean.abs() < 0.02);
        assert!(d.excess_kurtosis.unwrap().abs() < 0.1);
        assert!(d.kde_distance < 0.02);
        assert!(r.correlations.is_empty());
    }

    #[test]
    fn latent_report_constant_and_pairs() {
        let r = latent_report(&[0.5; 10], 1, &KdeConfig::default(), 50).unwrap();
        assert_eq!(r.dims[0].std, 0.0);
        assert_eq!(r.dims[0].excess_kurtosis, None);
        assert!(r.dims[0].kde_distance > 1.0);
        let two: Vec<f64> = normals(400, 0.0, 5);
        let r2 = latent_report(&two, 2, &KdeConfig::default(), 50).unwrap();
        assert_eq!(r2.n_samples, 200);
        assert_eq!(r2.correlations.len(), 1);
        assert_eq!((r2.correlations[0].i, r2.correlations[0].j), (0, 1));
        assert!(latent_report(&two[..3], 2, &KdeConfig::default(), 50).is_err());
    }

    #[test]
    fn held_out_latents_cover_distinct_pairs() {
        let spec = SystemSpec::with_defaults(SystemKind::Kubo);
        let ds = crate::sim::generate_dataset(&spec, Default::default(), 10, 20, 0.01, 4, Default::default()).unwrap();
        let m = Model::new(crate::sgfnn::ModelKind::Sgfnn, spec, 1, &[4], 0.01, 1).unwrap();
        let all = held_out_latents(&m, &ds, EncoderInput::Dataset, 50, 3, 0).unwrap();
        assert_eq!(all.len(), 200);
        let local = held_out_latents(&m, &ds, EncoderInput::Whitened, 50, 3, 0).unwrap();
        assert!(local.len() <= 150 && local.len() >= 50, "{}", local.len());
        assert!(local.iter().all(|v| v.is_finite()));
    }
}
