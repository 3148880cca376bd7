//! Experiment configuration: named profiles, JSON overrides and flag
//! overrides, resolved into one [`ExperimentConfig`].

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use sgfnn_core::latent::KdeConfig;
use sgfnn_core::predictor::PredictionConfig;
use sgfnn_core::sgfnn::{EncoderInput, TrainConfig};
use sgfnn_core::sim::{MidpointSolver, Region};
use sgfnn_core::{PhaseState, SystemKind, SystemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(format!("unknown profile '{s}' (expected desk or paper)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub delta: f64,
    pub seed: u64,
    pub radius: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl DataConfig {
    pub fn region(&self) -> Region {
        Region::Disc { radius: self.radius }
    }

    pub fn solver(&self) -> MidpointSolver {
        MidpointSolver {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub x0: PhaseState,
    pub steps: usize,
    pub n_traj: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl PredictConfig {
    pub fn prediction(&self) -> PredictionConfig {
        PredictionConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            steps: self.steps,
            n_traj: self.n_traj,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Time at which the error metrics and pdfs are taken.
    #[serde(rename = "T")]
    pub t: f64,
    pub bins: usize,
    pub kde: KdeConfig,
    /// Seed of the reference ensemble simulated from `predict.x0`.
    pub truth_seed: u64,
    /// Held-out data for the latent report: trajectories, steps, seed.
    pub latent_n: usize,
    pub latent_l: usize,
    pub latent_seed: u64,
    /// kNN batches used when the encoder scales inputs per batch.
    pub latent_batch_size: usize,
    pub latent_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub predict: PredictConfig,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

/// Evaluation horizon, prediction start and encoder recipe per system.
struct SystemDefaults {
    t: f64,
    x0: (f64, f64),
    paper_l: usize,
    encoder_input: EncoderInput,
    lambda: f64,
}

fn system_defaults(kind: SystemKind) -> SystemDefaults {
    match kind {
        SystemKind::LinearOscillator => SystemDefaults {
            t: 50.0,
            x0: (0.0, 1.0),
            paper_l: 1000,
            encoder_input: EncoderInput::Dataset,
            lambda: 1.0,
        },
        SystemKind::Kubo => SystemDefaults {
            t: 5.0,
            x0: (1.0, 0.0),
            paper_l: 100,
            encoder_input: EncoderInput::Whitened,
            lambda: 1e-4,
        },
        SystemKind::NonSeparable => SystemDefaults {
            t: 7.0,
            x0: (0.0, 1.0),
            paper_l: 100,
            encoder_input: EncoderInput::Dataset,
            lambda: 1.0,
        },
        SystemKind::Synchrotron => SystemDefaults {
            t: 10.0,
            x0: (0.0, 1.0),
            paper_l: 100,
            encoder_input: EncoderInput::Whitened,
            lambda: 1e-4,
        },
    }
}

impl ExperimentConfig {
    pub fn profile(kind: SystemKind, profile: Profile) -> Self {
        let sd = system_defaults(kind);
        let delta = 0.01;
        let steps = (sd.t / delta).round() as usize;
        let mut cfg = ExperimentConfig {
            system: SystemSpec::with_defaults(kind),
            data: DataConfig {
                n: 1000,
                l: 100,
                delta,
                seed: 1,
                radius: 3.0,
                tol: 1e-12,
                max_iter: 100,
            },
            train: TrainConfig {
                batch_size: 500,
                n_batches: 100,
                epochs: 100,
                lr: 1e-2,
                lr_final: Some(1e-3),
                recompute_batches: true,
                encoder_input: sd.encoder_input,
                lambda: sd.lambda,
                seed: 3,
                ..TrainConfig::default()
            },
            predict: PredictConfig {
                x0: PhaseState::pq(sd.x0.0, sd.x0.1),
                steps,
                n_traj: 1000,
                tol: 1e-12,
                max_iter: 100,
                seed: 5,
            },
            eval: EvalConfig {
                t: sd.t,
                bins: 50,
                kde: KdeConfig::default(),
                truth_seed: 6,
                latent_n: 200,
                latent_l: 50,
                latent_seed: 7,
                latent_batch_size: 250,
                latent_batches: 40,
            },
            output_dir: PathBuf::from("out"),
        };
        if profile == Profile::Paper {
            cfg.data.n = 10_000;
            cfg.data.l = sd.paper_l;
            cfg.train.batch_size = 10_000;
            cfg.train.n_batches = 1000;
            cfg.train.lr = 1e-3;
            cfg.train.lr_final = None;
            cfg.predict.n_traj = 10_000;
        }
        cfg
    }

    /// Hash of everything that affects results; the output directory is
    /// excluded so that relocated runs stay comparable.
    pub fn hash(&self) -> sgfnn_core::Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        sgfnn_core::io::config_hash(&v)
    }

    pub fn validate(&self) -> Result<(), String> {
        let d = self.system.dim();
        if self.data.n == 0 || self.data.l == 0 {
            return Err("data.N and data.L must be at least 1".into());
        }
        if !(self.data.delta > 0.0) || !(self.data.radius > 0.0) {
            return Err("data.delta and data.radius must be positive".into());
        }
        if !(self.data.tol > 0.0) || self.data.max_iter == 0 {
            return Err("data.tol must be positive and data.max_iter at least 1".into());
        }
        self.train.validate().map_err(|e| format!("train: {e}"))?;
        self.predict.prediction().validate().map_err(|e| format!("predict: {e}"))?;
        if self.predict.x0.dim() != d {
            return Err(format!("predict.x0 must have {} entries", 2 * d));
        }
        if self.predict.n_traj == 0 {
            return Err("predict.n_traj must be at least 1".into());
        }
        let horizon = self.predict.steps as f64 * self.data.delta;
        if !(self.eval.t >= 0.0) || self.eval.t > horizon + 1e-9 {
            return Err(format!("eval.T = {} lies outside the predicted span [0, {horizon}]", self.eval.t));
        }
        self.eval.kde.validate().map_err(|e| format!("eval.kde: {e}"))?;
        if self.eval.bins == 0 || self.eval.latent_n == 0 || self.eval.latent_l == 0 {
            return Err("eval.bins, eval.latent_n and eval.latent_l must be at least 1".into());
        }
        Ok(())
    }
}

/// Recursively overlays `patch` onto `base`; arrays and scalars replace.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Builds the config: profile for the chosen system, then the file (which may
/// name `system` and `profile` itself), then explicit flags.
pub fn resolve(
    file: Option<Value>,
    system: Option<SystemKind>,
    profile: Option<Profile>,
) -> Result<ExperimentConfig, String> {
    let mut file = file.unwrap_or_else(|| Value::Object(Default::default()));
    let obj = file
        .as_object_mut()
        .ok_or_else(|| "config file must hold a JSON object".to_string())?;
    let file_profile = match obj.remove("profile") {
        Some(v) => Some(serde_json::from_value::<Profile>(v).map_err(|e| format!("profile: {e}"))?),
        None => None,
    };
    let file_kind = match obj.get("system").and_then(|s| s.get("name")) {
        Some(v) => Some(serde_json::from_value::<SystemKind>(v.clone()).map_err(|e| format!("system.name: {e}"))?),
        None => None,
    };
    let kind = system.or(file_kind).unwrap_or(SystemKind::LinearOscillator);
    if let (Some(a), Some(b)) = (system, file_kind) {
        if a != b {
            // The file's constants belong to its own system.
            obj.remove("system");
        }
    }
    let profile = profile.or(file_profile).unwrap_or(Profile::Desk);
    let base = ExperimentConfig::profile(kind, profile);
    let mut v = serde_json::to_value(&base).map_err(|e| e.to_string())?;
    merge(&mut v, file);
    serde_json::from_value(v).map_err(|e| e.to_string())
}

/// Parses `k=v`.
pub fn parse_const(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("'{v}' is not a number"))?;
    Ok((k.trim().to_string(), v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn profiles_round_trip_and_validate() {
        for kind in SystemKind::ALL {
            for p in [Profile::Desk, Profile::Paper] {
                let cfg = ExperimentConfig::profile(kind, p);
                cfg.validate().unwrap();
                let back: ExperimentConfig = serde_json::from_value(serde_json::to_value(&cfg).unwrap()).unwrap();
                assert_eq!(back, cfg);
            }
        }
    }

    #[test]
    fn large_profile_scales_up_data_and_batches() {
        let c = ExperimentConfig::profile(SystemKind::LinearOscillator, Profile::Paper);
        assert_eq!((c.data.n, c.data.l, c.train.batch_size, c.train.n_batches), (10_000, 1000, 10_000, 1000));
        assert_eq!(c.train.lr, 1e-3);
        assert_eq!(c.predict.steps, 5000);
    }

    #[test]
    fn file_values_override_profile() {
        let file = json!({"system": {"name": "kubo", "constants": {"sigma": 0.5}}, "data": {"N": 7}, "profile": "paper"});
        let c = resolve(Some(file), None, None).unwrap();
        assert_eq!(c.system.kind(), SystemKind::Kubo);
        assert_eq!(c.system.constants()["sigma"], 0.5);
        assert_eq!(c.system.constants()["a"], 2.0);
        assert_eq!(c.data.n, 7);
        assert_eq!(c.data.l, 100);
        assert_eq!(c.train.batch_size, 10_000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(resolve(Some(json!({"data": {"n_traj": 3}})), None, None).is_err());
        assert!(resolve(Some(json!([1, 2])), None, None).is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::profile(SystemKind::Kubo, Profile::Desk);
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.train.seed += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn const_flags_parse() {
        assert_eq!(parse_const("sigma=0.2").unwrap(), ("sigma".into(), 0.2));
        assert!(parse_const("sigma").is_err());
        assert!(parse_const("sigma=x").is_err());
    }
}
