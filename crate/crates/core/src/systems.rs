//! Benchmark stochastic Hamiltonian systems.
//!
//! Each system is given by a drift Hamiltonian `H0` and `r` diffusion
//! Hamiltonians `H_k`. The vector fields are the closed-form canonical
//! gradients
//!
//! ```text
//! f = -dH0/dq,  g = dH0/dp,  sigma_k = -dH_k/dq,  gamma_k = dH_k/dp
//! ```
//!
//! and act as the ground truth for data generation and evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{check_len, Error, Result};

/// A point `x = (p, q)` in `R^{2d}`, stored as one contiguous vector.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PhaseStateRepr", into = "PhaseStateRepr")]
pub struct PhaseState {
    x: SmallVec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct PhaseStateRepr {
    p: Vec<f64>,
    q: Vec<f64>,
}

impl TryFrom<PhaseStateRepr> for PhaseState {
    type Error = Error;
    fn try_from(r: PhaseStateRepr) -> Result<Self> {
        PhaseState::new(&r.p, &r.q)
    }
}

impl From<PhaseState> for PhaseStateRepr {
    fn from(s: PhaseState) -> Self {
        PhaseStateRepr {
            p: s.p().to_vec(),
            q: s.q().to_vec(),
        }
    }
}

impl PhaseState {
    pub fn new(p: &[f64], q: &[f64]) -> Result<Self> {
        check_len("q", p.len(), q.len())?;
        if p.is_empty() {
            return Err(Error::Argument("phase state needs d >= 1".into()));
        }
        let x: SmallVec<[f64; 2]> = p.iter().chain(q).copied().collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("phase state has non-finite components".into()));
        }
        Ok(PhaseState { x })
    }

    /// Builds a state from the stacked vector `(p, q)`; `x.len()` must be even.
    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.is_empty() || x.len() % 2 != 0 {
            return Err(Error::Argument(format!(
                "stacked phase vector must have even positive length, got {}",
                x.len()
            )));
        }
        let d = x.len() / 2;
        PhaseState::new(&x[..d], &x[d..])
    }

    /// One-degree-of-freedom shorthand.
    pub fn pq(p: f64, q: f64) -> Self {
        PhaseState {
            x: SmallVec::from_buf([p, q]),
        }
    }

    pub(crate) fn from_raw(x: SmallVec<[f64; 2]>) -> Self {
        debug_assert!(x.len() % 2 == 0 && !x.is_empty());
        PhaseState { x }
    }

    pub fn zeros(d: usize) -> Self {
        PhaseState {
            x: SmallVec::from_elem(0.0, 2 * d),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len() / 2
    }

    pub fn p(&self) -> &[f64] {
        &self.x[..self.dim()]
    }

    pub fn q(&self) -> &[f64] {
        &self.x[self.dim()..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }


    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn squared_norm(&self) -> f64 {
        self.x.iter().map(|v| v * v).sum()
    }
}

impl fmt::Debug for PhaseState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhaseState(p={:?}, q={:?})", self.p(), self.q())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    LinearOscillator,
    Kubo,
    NonSeparable,
    Synchrotron,
}

impl SystemKind {
    pub const ALL: [SystemKind; 4] = [
        SystemKind::LinearOscillator,
        SystemKind::Kubo,
        SystemKind::NonSeparable,
        SystemKind::Synchrotron,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::LinearOscillator => "linear-oscillator",
            SystemKind::Kubo => "kubo",
            SystemKind::NonSeparable => "non-separable",
            SystemKind::Synchrotron => "synchrotron",
        }
    }

    /// Number of independent Brownian channels.
    pub fn noise_channels(self) -> usize {
        match self {
            SystemKind::Synchrotron => 2,
            _ => 1,
        }
    }

    /// Named constants with their default values, in canonical order.
    pub fn default_constants(self) -> &'static [(&'static str, f64)] {
        match self {
            SystemKind::LinearOscillator => &[("sigma", 0.1)],
            SystemKind::Kubo => &[("a", 2.0), ("sigma", 0.3)],
            SystemKind::NonSeparable => &[],
            SystemKind::Synchrotron => &[("omega", 1.0), ("sigma1", 0.2), ("sigma2", 0.2)],
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match key.as_str() {
            "linear" | "linearoscillator" => Ok(SystemKind::LinearOscillator),
            "kubo" | "kubooscillator" => Ok(SystemKind::Kubo),
            "nonseparable" => Ok(SystemKind::NonSeparable),
            "synchrotron" => Ok(SystemKind::Synchrotron),
            _ => Err(Error::Argument(format!("unknown system '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Params {
    Linear { sigma: f64 },
    Kubo { a: f64, sigma: f64 },
    NonSeparable,
    Synchrotron { omega: f64, sigma1: f64, sigma2: f64 },
}

/// One benchmark system with its constants resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SystemSpecRepr", into = "SystemSpecRepr")]
pub struct SystemSpec {
    kind: SystemKind,
    constants: BTreeMap<String, f64>,
    params: Params,
}

#[derive(Serialize, Deserialize)]
struct SystemSpecRepr {
    name: SystemKind,
    #[serde(default)]
    constants: BTreeMap<String, f64>,
}

impl TryFrom<SystemSpecRepr> for SystemSpec {
    type Error = Error;
    fn try_from(r: SystemSpecRepr) -> Result<Self> {
        SystemSpec::new(r.name, r.constants)
    }
}

impl From<SystemSpec> for SystemSpecRepr {
    fn from(s: SystemSpec) -> Self {
        SystemSpecRepr {
            name: s.kind,
            constants: s.constants,
        }
    }
}

impl SystemSpec {
    /// Builds a system; `constants` must name exactly the system's parameters.
    pub fn new(kind: SystemKind, constants: BTreeMap<String, f64>) -> Result<Self> {
        let expected = kind.default_constants();
        for (name, _) in expected {
            if !constants.contains_key(*name) {
                return Err(Error::Argument(format!("{kind}: missing constant '{name}'")));
            }
        }
        for (name, value) in &constants {
            if !expected.iter().any(|(n, _)| n == name) {
                return Err(Error::Argument(format!("{kind}: unknown constant '{name}'")));
            }
            if !value.is_finite() {
                return Err(Error::Argument(format!("{kind}: constant '{name}' is not finite")));
            }
        }
        let c = |n: &str| constants[n];
        let params = match kind {
            SystemKind::LinearOscillator => Params::Linear { sigma: c("sigma") },
            SystemKind::Kubo => Params::Kubo {
                a: c("a"),
                sigma: c("sigma"),
            },
            SystemKind::NonSeparable => Params::NonSeparable,
            SystemKind::Synchrotron => Params::Synchrotron {
                omega: c("omega"),
                sigma1: c("sigma1"),
                sigma2: c("sigma2"),
            },
        };
        Ok(SystemSpec {
            kind,
            constants,
            params,
        })
    }

    pub fn with_defaults(kind: SystemKind) -> Self {
        let constants = kind
            .default_constants()
            .iter()
            .map(|(n, v)| (n.to_string(), *v))
            .collect();
        SystemSpec::new(kind, constants).expect("defaults are valid")
    }

    /// Returns a copy with some constants replaced.
    pub fn with_overrides<'a>(
        &self,
        overrides: impl IntoIterator<Item = (&'a str, f64)>,
    ) -> Result<Self> {
        let mut constants = self.constants.clone();
        for (k, v) in overrides {
            if !constants.contains_key(k) {
                return Err(Error::Argument(format!("{}: unknown constant '{k}'", self.kind)));
            }
            constants.insert(k.to_string(), v);
        }
        SystemSpec::new(self.kind, constants)
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn constants(&self) -> &BTreeMap<String, f64> {
        &self.constants
    }

    /// Degrees of freedom; all built-in systems have `d = 1`.
    pub fn dim(&self) -> usize {
        1
    }

    pub fn noise_channels(&self) -> usize {
        self.kind.noise_channels()
    }

    /// Drift Hamiltonian `H0`.
    pub fn hamiltonian(&self, x: &PhaseState) -> Result<f64> {
        check_len("phase state dimension", self.dim(), x.dim())?;
        let (p, q) = (x.p()[0], x.q()[0]);
        Ok(match self.params {
            Params::Linear { .. } => 0.5 * (p * p + q * q),
            Params::Kubo { a, .. } => 0.5 * a * (p * p + q * q),
            Params::NonSeparable => 0.5 * (p * p + 1.0) * (q * q + 1.0),
            Params::Synchrotron { omega, .. } => -omega * omega * q.cos() + 0.5 * p * p,
        })
    }

    /// Diffusion Hamiltonian `H_k`, `k` counted from 0.
    pub fn diffusion_hamiltonian(&self, k: usize, x: &PhaseState) -> Result<f64> {
        check_len("phase state dimension", self.dim(), x.dim())?;
        if k >= self.noise_channels() {
            return Err(Error::Argument(format!("noise channel {k} out of range")));
        }
        let (p, q) = (x.p()[0], x.q()[0]);
        Ok(match self.params {
            Params::Linear { sigma } => -sigma * q,
            Params::Kubo { sigma, .. } => 0.5 * sigma * (p * p + q * q),
            Params::NonSeparable => 0.1 * (p + q) * (p + q),
            Params::Synchrotron { sigma1, sigma2, .. } => {
                if k == 0 {
                    sigma1 * q.sin()
                } else {
                    -sigma2 * q.cos()
                }
            }
        })
    }

    /// Writes `(f, g)` into `drift` and `(sigma_k, gamma_k)` into consecutive
    /// `2d` blocks of `diffusion`. Unchecked; callers validate shapes.
    pub(crate) fn eval_into(&self, x: &[f64], drift: &mut [f64], diffusion: &mut [f64]) {
        let (p, q) = (x[0], x[1]);
        match self.params {
            Params::Linear { sigma } => {
                drift[0] = -q;
                drift[1] = p;
                diffusion[0] = sigma;
                diffusion[1] = 0.0;
            }
            Params::Kubo { a, sigma } => {
                drift[0] = -a * q;
                drift[1] = a * p;
                diffusion[0] = -sigma * q;
                diffusion[1] = sigma * p;
            }
            Params::NonSeparable => {
                drift[0] = -(p * p + 1.0) * q;
                drift[1] = p * (q * q + 1.0);
                diffusion[0] = -0.2 * (p + q);
                diffusion[1] = 0.2 * (p + q);
            }
            Params::Synchrotron {
                omega,
                sigma1,
                sigma2,
            } => {
                let (s, c) = q.sin_cos();
                drift[0] = -omega * omega * s;
                drift[1] = p;
                diffusion[0] = -sigma1 * c;
                diffusion[1] = 0.0;
                diffusion[2] = -sigma2 * s;
                diffusion[3] = 0.0;
            }
        }
    }

    pub fn eval_vector_fields(&self, x: &PhaseState) -> Result<VectorFields> {
        check_len("phase state dimension", self.dim(), x.dim())?;
        let d2 = 2 * self.dim();
        let r = self.noise_channels();
        let mut drift = vec![0.0; d2];
        let mut diffusion = vec![0.0; d2 * r];
        self.eval_into(x.as_slice(), &mut drift, &mut diffusion);
        Ok(VectorFields {
            drift: PhaseState::from_raw(drift.into_iter().collect()),
            diffusion: diffusion
                .chunks(d2)
                .map(|c| PhaseState::from_raw(c.iter().copied().collect()))
                .collect(),
        })
    }

    /// The tracked quadratic quantity `p^2 + q^2`: conserved for Kubo, growing
    /// linearly in expectation for the linear oscillator.
    pub fn eval_invariant(&self, x: &PhaseState) -> Result<f64> {
        match self.kind {
            SystemKind::LinearOscillator | SystemKind::Kubo => {
                check_len("phase state dimension", self.dim(), x.dim())?;
                Ok(x.squared_norm())
            }
            other => Err(Error::Unsupported(format!(
                "no tracked invariant for system {other}"
            ))),
        }
    }

    pub fn supports_invariant(&self) -> bool {
        matches!(self.kind, SystemKind::LinearOscillator | SystemKind::Kubo)
    }
}

/// Drift `(f, g)` and per-channel diffusion `(sigma_k, gamma_k)` at a point.
/// Each is stored as a phase-space vector: the momentum block holds `f` or
/// `sigma_k`, the position block `g` or `gamma_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFields {
    pub drift: PhaseState,
    pub diffusion: Vec<PhaseState>,
}

impl VectorFields {
    pub fn f(&self) -> &[f64] {
        self.drift.p()
    }
    pub fn g(&self) -> &[f64] {
        self.drift.q()
    }
    pub fn sigma(&self, k: usize) -> &[f64] {
        self.diffusion[k].p()
    }
    pub fn gamma(&self, k: usize) -> &[f64] {
        self.diffusion[k].q()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(kind: SystemKind, c: &[(&str, f64)]) -> SystemSpec {
        SystemSpec::with_defaults(kind)
            .with_overrides(c.iter().copied())
            .unwrap()
    }

    #[test]
    fn linear_oscillator_fields() {
        let s = spec(SystemKind::LinearOscillator, &[("sigma", 0.1)]);
        let v = s.eval_vector_fields(&PhaseState::pq(0.0, 1.0)).unwrap();
        assert_eq!(v.f(), &[-1.0]);
        assert_eq!(v.g(), &[0.0]);
        assert_eq!(v.sigma(0), &[0.1]);
        assert_eq!(v.gamma(0), &[0.0]);
    }

    #[test]
    fn kubo_fields() {
        let s = spec(SystemKind::Kubo, &[("a", 2.0), ("sigma", 0.3)]);
        let v = s.eval_vector_fields(&PhaseState::pq(1.0, 0.0)).unwrap();
        assert_eq!(v.f(), &[0.0]);
        assert_eq!(v.g(), &[2.0]);
        assert_eq!(v.sigma(0), &[0.0]);
        assert_eq!(v.gamma(0), &[0.3]);
    }

    #[test]
    fn non_separable_fields_vanish_at_origin() {
        let s = SystemSpec::with_defaults(SystemKind::NonSeparable);
        let v = s.eval_vector_fields(&PhaseState::pq(0.0, 0.0)).unwrap();
        assert_eq!(v.f(), &[0.0]);
        assert_eq!(v.g(), &[0.0]);
        assert_eq!(v.sigma(0), &[0.0]);
        assert_eq!(v.gamma(0), &[0.0]);
    }

    #[test]
    fn synchrotron_has_two_channels() {
        let s = SystemSpec::with_defaults(SystemKind::Synchrotron);
        let v = s.eval_vector_fields(&PhaseState::pq(0.3, 0.7)).unwrap();
        assert_eq!(v.diffusion.len(), 2);
        assert_eq!(s.noise_channels(), 2);
    }

    #[test]
    fn invariant_values() {
        let s = SystemSpec::with_defaults(SystemKind::Kubo);
        assert_eq!(s.eval_invariant(&PhaseState::pq(1.0, 0.0)).unwrap(), 1.0);
        let v = s.eval_invariant(&PhaseState::pq(0.6, 0.8)).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let ns = SystemSpec::with_defaults(SystemKind::NonSeparable);
        assert!(matches!(
            ns.eval_invariant(&PhaseState::pq(0.1, 0.2)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let s = SystemSpec::with_defaults(SystemKind::Kubo);
        let x = PhaseState::new(&[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!(matches!(s.eval_vector_fields(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn constants_must_match_exactly() {
        let mut c = BTreeMap::new();
        c.insert("sigma".to_string(), 0.1);
        assert!(SystemSpec::new(SystemKind::Kubo, c.clone()).is_err());
        c.insert("a".to_string(), 1.0);
        assert!(SystemSpec::new(SystemKind::Kubo, c.clone()).is_ok());
        c.insert("omega".to_string(), 1.0);
        assert!(SystemSpec::new(SystemKind::Kubo, c).is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("kubo".parse::<SystemKind>().unwrap(), SystemKind::Kubo);
        assert_eq!("Linear".parse::<SystemKind>().unwrap(), SystemKind::LinearOscillator);
        assert_eq!("non-separable".parse::<SystemKind>().unwrap(), SystemKind::NonSeparable);
        assert!("lorenz".parse::<SystemKind>().is_err());
    }

    #[test]
    fn spec_serde_round_trip() {
        let s = SystemSpec::with_defaults(SystemKind::Synchrotron);
        let json = serde_json::to_string(&s).unwrap();
        let back: SystemSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
    }

    fn fd_grad(h: impl Fn(&PhaseState) -> f64, x: &PhaseState, step: f64) -> (f64, f64) {
        let (p, q) = (x.p()[0], x.q()[0]);
        let dp = (h(&PhaseState::pq(p + step, q)) - h(&PhaseState::pq(p - step, q))) / (2.0 * step);
        let dq = (h(&PhaseState::pq(p, q + step)) - h(&PhaseState::pq(p, q - step))) / (2.0 * step);
        (dp, dq)
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-3)
    }

    proptest! {
        #[test]
        fn fields_match_hamiltonian_gradients(
            p in -3.0f64..3.0,
            q in -3.0f64..3.0,
            which in 0usize..4,
        ) {
            let s = SystemSpec::with_defaults(SystemKind::ALL[which]);
            let x = PhaseState::pq(p, q);
            let v = s.eval_vector_fields(&x).unwrap();
            let (hp, hq) = fd_grad(|y| s.hamiltonian(y).unwrap(), &x, 1e-5);
            prop_assert!(close(v.f()[0], -hq), "f {} vs {}", v.f()[0], -hq);
            prop_assert!(close(v.g()[0], hp), "g {} vs {}", v.g()[0], hp);
            for k in 0..s.noise_channels() {
                let (hp, hq) = fd_grad(|y| s.diffusion_hamiltonian(k, y).unwrap(), &x, 1e-5);
                prop_assert!(close(v.sigma(k)[0], -hq));
                prop_assert!(close(v.gamma(k)[0], hp));
            }
        }
    }
}
