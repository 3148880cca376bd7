use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::Mlp;
use crate::rng::{self, Domain};
use crate::systems::{PhaseState, SystemSpec};

/// Which decoder head sits behind the shared encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Scalar generating function `S(p1, q0, z)`; steps are implicit and symplectic.
    Sgfnn,
    /// Flow map `G(x0, z) -> x1`; steps are explicit.
    Sfml,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Sgfnn => "sgfnn",
            ModelKind::Sfml => "sfml",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgfnn" => Ok(ModelKind::Sgfnn),
            "sfml" => Ok(ModelKind::Sfml),
            _ => Err(Error::Argument(format!("unknown model kind '{s}'"))),
        }
    }
}

/// Fixed affine map applied to the encoder features `(x0, x1 - x0)`.
///
/// Only the encoder sees it, so prediction is unaffected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderScaling {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    /// Row-major `2d x 2d` rotation applied to the centred increment before
    /// scaling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<Vec<f64>>,
}

impl EncoderScaling {
    pub fn identity(d: usize) -> Self {
        EncoderScaling {
            shift: vec![0.0; 4 * d],
            scale: vec![1.0; 4 * d],
            rotation: None,
        }
    }

    /// Per-feature mean and standard deviation over the given pairs.
    pub fn fit<'a, I>(d: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a PhaseState, &'a PhaseState)>,
    {
        let n_f = 4 * d;
        let mut sum = vec![0.0; n_f];
        let mut sq = vec![0.0; n_f];
        let mut n = 0usize;
        let mut f = Vec::with_capacity(n_f);
        let id = EncoderScaling::identity(d);
        for (x0, x1) in pairs {
            check_len("phase state dimension", d, x0.dim())?;
            check_len("phase state dimension", d, x1.dim())?;
            id.features(x0.as_slice(), x1.as_slice(), &mut f);
            for (k, v) in f.iter().enumerate() {
                sum[k] += v;
                sq[k] += v * v;
            }
            n += 1;
        }
        if n < 2 {
            return Err(Error::Argument("need at least two pairs to fit encoder scaling".into()));
        }
        let nf = n as f64;
        let shift: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let scale = sq
            .iter()
            .zip(&shift)
            .map(|(q, m)| {
                let var = ((q - nf * m * m) / (nf - 1.0)).max(0.0);
                let s = var.sqrt();
                if s > 1e-12 { s } else { 1.0 }
            })
            .collect();
        Ok(EncoderScaling {
            shift,
            scale,
            rotation: None,
        })
    }

    /// Keeps the `x0` part of `base` and whitens the increments of `pairs`
    /// along their principal axes, largest variance first. Each axis is
    /// oriented to have a non-negative component along the mean increment.
    pub fn whiten_increments<'a, I>(base: &EncoderScaling, d: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a PhaseState, &'a PhaseState)>,
    {
        let n_f = 2 * d;
        let mut incs: Vec<f64> = Vec::new();
        for (x0, x1) in pairs {
            check_len("phase state dimension", d, x0.dim())?;
            check_len("phase state dimension", d, x1.dim())?;
            incs.extend(x1.as_slice().iter().zip(x0.as_slice()).map(|(a, b)| a - b));
        }
        let n = incs.len() / n_f;
        if n < 2 {
            return Err(Error::Argument("need at least two pairs to whiten increments".into()));
        }
        let mut mu = vec![0.0; n_f];
        for row in incs.chunks_exact(n_f) {
            mu.iter_mut().zip(row).for_each(|(m, v)| *m += v / n as f64);
        }
        let mut cov = nalgebra::DMatrix::<f64>::zeros(n_f, n_f);
        for row in incs.chunks_exact(n_f) {
            for i in 0..n_f {
                for j in 0..n_f {
                    cov[(i, j)] += (row[i] - mu[i]) * (row[j] - mu[j]) / (n - 1) as f64;
                }
            }
        }
        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..n_f).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let mut rotation = Vec::with_capacity(n_f * n_f);
        let mut inc_scale = Vec::with_capacity(n_f);
        for &k in &order {
            let v = eig.eigenvectors.column(k);
            let along: f64 = v.iter().zip(&mu).map(|(a, b)| a * b).sum();
            let first = v.iter().copied().find(|c| c.abs() > 1e-12).unwrap_or(1.0);
            let sign = if along > 0.0 || (along == 0.0 && first > 0.0) { 1.0 } else { -1.0 };
            rotation.extend(v.iter().map(|c| sign * c));
            let lam = eig.eigenvalues[k];
            inc_scale.push(if lam > 1e-12 * top && lam > 0.0 { lam.sqrt() } else { 1.0 });
        }
        let mut shift = base.shift[..n_f].to_vec();
        shift.extend_from_slice(&mu);
        let mut scale = base.scale[..n_f].to_vec();
        scale.extend(inc_scale);
        Ok(EncoderScaling {
            shift,
            scale,
            rotation: Some(rotation),
        })
    }

    pub fn features(&self, x0: &[f64], x1: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(x0);
        buf.extend(x1.iter().zip(x0).map(|(a, b)| a - b));
        for (v, m) in buf.iter_mut().zip(&self.shift) {
            *v -= m;
        }
        if let Some(r) = &self.rotation {
            let n_f = x0.len();
            let c: Vec<f64> = buf[n_f..].to_vec();
            for (i, row) in r.chunks_exact(n_f).enumerate() {
                buf[n_f + i] = row.iter().zip(&c).map(|(a, b)| a * b).sum();
            }
        }
        for (v, s) in buf.iter_mut().zip(&self.scale) {
            *v /= s;
        }
    }
}

/// Autoencoder: encoder `(x0, x1) -> z` and a decoder head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub kind: ModelKind,
    pub encoder: Mlp,
    pub scaling: EncoderScaling,
    pub decoder: Mlp,
    pub n_z: usize,
    pub delta: f64,
    pub system: SystemSpec,
}

/// Result of evaluating the generating function and its state gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratingValue {
    pub s: f64,
    pub ds_dp1: Vec<f64>,
    pub ds_dq0: Vec<f64>,
}

impl Model {
    /// Fresh Glorot-initialised model with the given hidden widths.
    pub fn new(
        kind: ModelKind,
        system: SystemSpec,
        n_z: usize,
        hidden: &[usize],
        delta: f64,
        seed: u64,
    ) -> Result<Self> {
        if n_z == 0 {
            return Err(Error::Argument("n_z must be at least 1".into()));
        }
        let d = system.dim();
        let sizes = |input: usize, output: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(output);
            s
        };
        let encoder = Mlp::glorot(&sizes(4 * d, n_z), &mut rng::stream(seed, Domain::Init, 0))?;
        let out = match kind {
            ModelKind::Sgfnn => 1,
            ModelKind::Sfml => 2 * d,
        };
        let decoder = Mlp::glorot(&sizes(2 * d + n_z, out), &mut rng::stream(seed, Domain::Init, 1))?;
        let m = Model {
            kind,
            encoder,
            scaling: EncoderScaling::identity(d),
            decoder,
            n_z,
            delta,
            system,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        check_len("encoder input", 4 * d, self.encoder.n_inputs())?;
        check_len("encoder output", self.n_z, self.encoder.n_outputs())?;
        check_len("encoder shift", 4 * d, self.scaling.shift.len())?;
        check_len("encoder scale", 4 * d, self.scaling.scale.len())?;
        if self.scaling.scale.iter().any(|s| !(s.is_finite() && *s > 0.0))
            || self.scaling.shift.iter().any(|m| !m.is_finite())
        {
            return Err(Error::Argument("encoder scaling must be finite with positive scales".into()));
        }
        if let Some(r) = &self.scaling.rotation {
            check_len("encoder rotation", 4 * d * d, r.len())?;
        }
        check_len("decoder input", 2 * d + self.n_z, self.decoder.n_inputs())?;
        let out = match self.kind {
            ModelKind::Sgfnn => 1,
            ModelKind::Sfml => 2 * d,
        };
        check_len("decoder output", out, self.decoder.n_outputs())?;
        if !(self.delta > 0.0) {
            return Err(Error::Argument("model step size must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn n_params(&self) -> usize {
        self.encoder.n_params() + self.decoder.n_params()
    }

    /// Encoder parameters followed by decoder parameters.
    pub fn params(&self) -> Vec<f64> {
        let mut v = self.encoder.params().to_vec();
        v.extend_from_slice(self.decoder.params());
        v
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("model parameters", self.n_params(), params.len())?;
        let ne = self.encoder.n_params();
        self.encoder.params_mut().copy_from_slice(&params[..ne]);
        self.decoder.params_mut().copy_from_slice(&params[ne..]);
        Ok(())
    }

    fn check_state(&self, x: &PhaseState) -> Result<()> {
        check_len("phase state dimension", self.dim(), x.dim())
    }

    /// Multiplies the decoder's last layer by `factor`. Shrinking a random
    /// generating function makes its implicit step a contraction.
    pub fn scale_decoder_output(&mut self, factor: f64) {
        let k = self.decoder.n_layers() - 1;
        self.decoder.weight_mut(k).iter_mut().for_each(|w| *w *= factor);
        self.decoder.bias_mut(k).iter_mut().for_each(|w| *w *= factor);
    }

    /// Latent variable `z = E(x0, x1)`.
    pub fn encode(&self, x0: &PhaseState, x1: &PhaseState) -> Result<Vec<f64>> {
        self.check_state(x0)?;
        self.check_state(x1)?;
        let mut input = Vec::new();
        self.scaling.features(x0.as_slice(), x1.as_slice(), &mut input);
        self.encoder.forward(&input)
    }

    /// `S(p1, q0, z)` with its gradients w.r.t. `p1` and `q0`.
    pub fn decode_s(&self, p1: &[f64], q0: &[f64], z: &[f64]) -> Result<GeneratingValue> {
        if self.kind != ModelKind::Sgfnn {
            return Err(Error::Unsupported("decode_s needs a generating-function model".into()));
        }
        let d = self.dim();
        check_len("p1", d, p1.len())?;
        check_len("q0", d, q0.len())?;
        check_len("latent", self.n_z, z.len())?;
        let input: Vec<f64> = p1.iter().chain(q0).chain(z).copied().collect();
        let mut cache = self.decoder.cache();
        let mut gc = self.decoder.grad_cache();
        let s = self.decoder.forward_cached(&input, &mut cache)[0];
        let g = self.decoder.scalar_input_gradient(&cache, &mut gc);
        Ok(GeneratingValue {
            s,
            ds_dp1: g[..d].to_vec(),
            ds_dq0: g[d..2 * d].to_vec(),
        })
    }
}
