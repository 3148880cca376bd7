//! Distribution loss pushing latent samples towards `N(0, I)`: a KDE-vs-normal
//! L2 distance per dimension plus central-moment and cross-correlation
//! penalties, with exact gradients w.r.t. the samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INV_SQRT_TAU: f64 = 0.398_942_280_401_432_7;

/// Central moments 1..=6 of the standard normal.
pub const NORMAL_CENTRAL_MOMENTS: [f64; 6] = [0.0, 1.0, 0.0, 3.0, 0.0, 15.0];

/// Per-moment weights `c_j`.
pub const MOMENT_WEIGHTS: [f64; 6] = [1.0, 1.0, 2.0, 3.0, 8.0, 15.0];

#[inline]
fn normal_pdf(u: f64) -> f64 {
    INV_SQRT_TAU * (-0.5 * u * u).exp()
}

/// Gaussian KDE on a uniform grid with Silverman's bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KdeConfig {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    /// Bandwidth is `factor * std * K^(-1/5)`.
    pub bandwidth_factor: f64,
    /// Lower bound on the bandwidth; keeps degenerate samples finite.
    pub min_bandwidth: f64,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig {
            grid_min: -5.0,
            grid_max: 5.0,
            grid_points: 101,
            bandwidth_factor: 1.06,
            min_bandwidth: 1e-3,
        }
    }
}

impl KdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 2 || !(self.grid_max > self.grid_min) || !(self.min_bandwidth > 0.0) {
            return Err(Error::Argument("invalid KDE grid or bandwidth".into()));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.grid_max - self.grid_min) / (self.grid_points - 1) as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.grid_points).map(|g| self.grid_min + g as f64 * h).collect()
    }

    /// Bandwidth and whether it was clamped to the minimum.
    pub fn bandwidth(&self, samples: &[f64]) -> (f64, bool) {
        let n = samples.len() as f64;
        let h = self.bandwidth_factor * sample_std(samples) * n.powf(-0.2);
        if h >= self.min_bandwidth {
            (h, false)
        } else {
            (self.min_bandwidth, true)
        }
    }

    /// Density estimate on the grid.
    pub fn density(&self, samples: &[f64]) -> Vec<f64> {
        let (h, _) = self.bandwidth(samples);
        let norm = 1.0 / (samples.len() as f64 * h);
        self.grid()
            .iter()
            .map(|&y| norm * samples.iter().map(|&z| normal_pdf((y - z) / h)).sum::<f64>())
            .collect()
    }

    /// Discrete L2 norm `sqrt(sum f^2 * spacing)` of a grid function.
    pub fn l2(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        (values.into_iter().map(|v| v * v).sum::<f64>() * self.spacing()).sqrt()
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation, `n - 1` divisor.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Central moments `1..=6` (divisor `n`).
pub fn central_moments(v: &[f64]) -> [f64; 6] {
    let m = mean(v);
    let mut out = [0.0; 6];
    for x in v {
        let c = x - m;
        let mut pow = 1.0;
        for o in out.iter_mut() {
            pow *= c;
            *o += pow;
        }
    }
    out.iter_mut().for_each(|o| *o /= v.len() as f64);
    out
}

/// Pearson correlation; zero when either column is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa > 0.0 && sbb > 0.0 {
        sab / (saa * sbb).sqrt()
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistributionLossConfig {
    pub tau: f64,
    /// Weight of the correlation penalty.
    pub nu: f64,
    pub kde: KdeConfig,
}

impl Default for DistributionLossConfig {
    fn default() -> Self {
        DistributionLossConfig {
            tau: 1.0,
            nu: 0.1,
            kde: KdeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistributionTerms {
    /// Sum over dimensions of the KDE-vs-normal L2 distance.
    pub distance: f64,
    /// Moment penalty including the correlation term.
    pub moment: f64,
    /// `distance + tau * moment`
    pub total: f64,
}

/// Column `j` of a row-major `K x n_z` matrix.
pub fn column(z: &[f64], n_z: usize, j: usize) -> Vec<f64> {
    z.iter().skip(j).step_by(n_z).copied().collect()
}

/// Evaluates the distribution loss of the row-major `K x n_z` samples `z`.
/// When `grad` is given, `d total / d z` is accumulated into it, scaled by
/// `scale`.
pub fn distribution_loss(
    z: &[f64],
    n_z: usize,
    cfg: &DistributionLossConfig,
    mut grad: Option<(&mut [f64], f64)>,
) -> Result<DistributionTerms> {
    if n_z == 0 || z.len() % n_z != 0 {
        return Err(Error::Argument(format!("{} samples do not tile n_z = {n_z}", z.len())));
    }
    let k = z.len() / n_z;
    if k < 2 {
        return Err(Error::Argument("distribution loss needs at least 2 samples".into()));
    }
    cfg.kde.validate()?;
    let kf = k as f64;
    let grid = cfg.kde.grid();
    let dy = cfg.kde.spacing();
    let target: Vec<f64> = grid.iter().map(|&y| normal_pdf(y)).collect();
    let cols: Vec<Vec<f64>> = (0..n_z).map(|j| column(z, n_z, j)).collect();

    let mut distance = 0.0;
    let mut moment = 0.0;
    let mut kernel = vec![0.0; grid.len() * k];
    for (j, col) in cols.iter().enumerate() {
        // KDE distance
        let (h, clamped) = cfg.kde.bandwidth(col);
        let norm = 1.0 / (kf * h);
        let mut err = vec![0.0; grid.len()];
        for (g, &y) in grid.iter().enumerate() {
            let row = &mut kernel[g * k..(g + 1) * k];
            let mut s = 0.0;
            for (i, &zi) in col.iter().enumerate() {
                let v = normal_pdf((y - zi) / h);
                row[i] = v;
                s += v;
            }
            err[g] = norm * s - target[g];
        }
        let dist = (err.iter().map(|e| e * e).sum::<f64>() * dy).sqrt();
        distance += dist;

        // moments
        let m = mean(col);
        let mu = central_moments(col);
        for p in 0..6 {
            moment += (mu[p] - NORMAL_CENTRAL_MOMENTS[p]).powi(2) / MOMENT_WEIGHTS[p];
        }

        if let Some((g_out, scale)) = grad.as_mut() {
            let g_out: &mut [f64] = g_out;
            let scale = *scale;
            if dist > 0.0 {
                // d dist / d fhat_g = err_g * dy / dist
                let w: Vec<f64> = err.iter().map(|e| e * dy / dist).collect();
                let mut dfd_h = 0.0;
                let inv_h = 1.0 / h;
                for (g, &y) in grid.iter().enumerate() {
                    let row = &kernel[g * k..(g + 1) * k];
                    let mut acc = 0.0;
                    for (i, &zi) in col.iter().enumerate() {
                        let u = (y - zi) * inv_h;
                        acc += row[i] * (u * u - 1.0);
                        g_out[i * n_z + j] += scale * w[g] * norm * inv_h * u * row[i];
                    }
                    dfd_h += w[g] * norm * inv_h * acc;
                }
                if !clamped {
                    let s = sample_std(col);
                    if s > 0.0 {
                        let c = cfg.kde.bandwidth_factor * kf.powf(-0.2) / ((kf - 1.0) * s);
                        for (i, &zi) in col.iter().enumerate() {
                            g_out[i * n_z + j] += scale * dfd_h * c * (zi - m);
                        }
                    }
                }
            }
            // d mu_p / d z_i = (p / K) (c_i^(p-1) - mu_(p-1)),  mu_0 = 1
            let coef: Vec<f64> = (0..6)
                .map(|p| cfg.tau * 2.0 * (mu[p] - NORMAL_CENTRAL_MOMENTS[p]) / MOMENT_WEIGHTS[p] * (p + 1) as f64 / kf)
                .collect();
            for (i, &zi) in col.iter().enumerate() {
                let c = zi - m;
                let mut pow = 1.0; // c^p
                let mut acc = 0.0;
                for p in 0..6 {
                    let lower = if p == 0 { 1.0 } else { mu[p - 1] };
                    acc += coef[p] * (pow - lower);
                    pow *= c;
                }
                g_out[i * n_z + j] += scale * acc;
            }
        }
    }

    if n_z >= 2 {
        let v = (n_z * (n_z - 1) / 2) as f64;
        let weight = cfg.nu / v;
        for a in 0..n_z {
            for b in a + 1..n_z {
                let (ca, cb) = (&cols[a], &cols[b]);
                let (ma, mb) = (mean(ca), mean(cb));
                let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
                for (x, y) in ca.iter().zip(cb) {
                    sab += (x - ma) * (y - mb);
                    saa += (x - ma) * (x - ma);
                    sbb += (y - mb) * (y - mb);
                }
                if !(saa > 0.0 && sbb > 0.0) {
                    continue;
                }
                let root = (saa * sbb).sqrt();
                let rho = sab / root;
                moment += weight * rho * rho;
                if let Some((g_out, scale)) = grad.as_mut() {
                    let f = *scale * cfg.tau * weight * 2.0 * rho;
                    for i in 0..k {
                        let (xa, xb) = (ca[i] - ma, cb[i] - mb);
                        g_out[i * n_z + a] += f * (xb / root - rho * xa / saa);
                        g_out[i * n_z + b] += f * (xa / root - rho * xb / sbb);
                    }
                }
            }
        }
    }

    Ok(DistributionTerms {
        distance,
        moment,
        total: distance + cfg.tau * moment,
    })
}
