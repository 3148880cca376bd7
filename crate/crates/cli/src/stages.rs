//! Pipeline stages. Each reads its inputs from the output directory and
//! writes its artifacts back there.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sgfnn_core::eval::{self, LatentReport};
use sgfnn_core::io::{self, TrajectoryMeta, FORMAT_VERSION};
use sgfnn_core::predictor::predict_ensemble;
use sgfnn_core::sgfnn::{gradient_gate, train, GateConfig, GateReport, ModelKind};
use sgfnn_core::sim::{generate_dataset, simulate_ensemble, Dataset, Trajectory};
use sgfnn_core::{Error, SystemSpec};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const DATASET: &str = "dataset";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const LOSS: &str = "loss.csv";
pub const ENSEMBLE: &str = "ensemble";
pub const TRUTH: &str = "truth";
pub const METRICS: &str = "metrics.json";
pub const GRADCHECK: &str = "gradcheck.json";

/// A resolved config bound to its output directory.
pub struct Run<'a> {
    pub cfg: &'a ExperimentConfig,
    pub out: PathBuf,
    pub hash: String,
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a ExperimentConfig, out: &Path) -> Result<Self, CliError> {
        let hash = cfg.hash().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Run {
            cfg,
            out: out.to_path_buf(),
            hash,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn stage<T>(name: &'static str, r: sgfnn_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|source| CliError::Stage { stage: name, source })
}

pub fn simulate(run: &Run) -> Result<Dataset, CliError> {
    let c = &run.cfg.data;
    let ds = stage(
        "simulate",
        generate_dataset(&run.cfg.system, c.region(), c.n, c.l, c.delta, c.seed, c.solver()),
    )?;
    stage("simulate", io::write_dataset(&run.path(DATASET), &ds, &run.hash))?;
    println!("simulate: {} trajectories x {} steps -> {}", c.n, c.l, run.path(DATASET).display());
    Ok(ds)
}

fn load_dataset(run: &Run, name: &'static str) -> Result<Dataset, CliError> {
    let ds = stage(name, io::read_dataset(&run.path(DATASET)))?;
    if ds.system != run.cfg.system {
        return Err(CliError::Config(format!(
            "{name}: dataset was generated for {} {:?}, config names {} {:?}",
            ds.system.kind(),
            ds.system.constants(),
            run.cfg.system.kind(),
            run.cfg.system.constants()
        )));
    }
    Ok(ds)
}

pub fn train_stage(run: &Run) -> Result<(), CliError> {
    let ds = load_dataset(run, "train")?;
    let trained = stage("train", train(&ds, &run.cfg.train))?;
    stage(
        "train",
        io::write_checkpoint(&run.path(CHECKPOINT), &trained.model, &run.cfg.train, &run.hash),
    )?;
    stage("train", io::write_loss_history(&run.path(LOSS), &trained.history, &run.hash))?;
    let losses = trained.epoch_losses();
    println!(
        "train: {} epochs, final mean loss {:.6e} -> {}",
        losses.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        run.path(CHECKPOINT).display()
    );
    Ok(())
}

pub fn predict(run: &Run) -> Result<Vec<Trajectory>, CliError> {
    let ck_path = run.path(CHECKPOINT);
    let ck = stage("predict", io::read_checkpoint(&ck_path))?;
    let model = stage("predict", ck.model())?;
    let p = &run.cfg.predict;
    let ens = stage("predict", predict_ensemble(&model, &p.x0, &p.prediction()))?;
    let meta = TrajectoryMeta {
        format_version: FORMAT_VERSION,
        source: format!("{}-prediction", model.kind.as_str()),
        system: model.system.clone(),
        d: model.dim(),
        r: model.system.noise_channels(),
        n: p.n_traj,
        l: p.steps,
        delta: model.delta,
        seed: p.seed,
        region: None,
        x0: Some(p.x0.clone()),
        model: Some(model.kind),
        config_hash: run.hash.clone(),
        checkpoint_hash: Some(stage("predict", io::file_hash(&ck_path))?),
    };
    stage("predict", io::write_trajectories(&run.path(ENSEMBLE), &meta, &ens))?;
    println!("predict: {} trajectories x {} steps -> {}", p.n_traj, p.steps, run.path(ENSEMBLE).display());
    Ok(ens)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdfSummary {
    pub component: usize,
    pub l2_distance: f64,
    pub truth_mean: f64,
    pub truth_std: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    pub pred: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDimSummary {
    pub mean: f64,
    pub std: f64,
    pub excess_kurtosis: Option<f64>,
    pub kde_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSummary {
    pub n_samples: usize,
    pub dims: Vec<LatentDimSummary>,
    /// `(i, j, rho)` for every pair of latent dimensions.
    pub correlations: Vec<(usize, usize, f64)>,
}

impl From<&LatentReport> for LatentSummary {
    fn from(r: &LatentReport) -> Self {
        LatentSummary {
            n_samples: r.n_samples,
            dims: r
                .dims
                .iter()
                .map(|d| LatentDimSummary {
                    mean: d.mean,
                    std: d.std,
                    excess_kurtosis: d.excess_kurtosis,
                    kde_distance: d.kde_distance,
                })
                .collect(),
            correlations: r.correlations.iter().map(|c| (c.i, c.j, c.rho)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub format_version: u32,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub system: SystemSpec,
    pub model: ModelKind,
    #[serde(rename = "T")]
    pub t: f64,
    pub e_mean: f64,
    pub e_std: f64,
    /// Least-squares slope of E|x|^2 over [0, T]; needs two time points.
    pub second_moment_slope: Option<DriftSummary>,
    /// Largest deviation of the tracked invariant over the predicted span.
    pub invariant_drift: Option<DriftSummary>,
    /// Marginal pdf comparison at T; needs 100 trajectories.
    pub pdf: Vec<PdfSummary>,
    pub latent: LatentSummary,
}

pub fn evaluate(run: &Run) -> Result<Metrics, CliError> {
    const S: &str = "evaluate";
    let cfg = run.cfg;
    let (meta, pred) = stage(S, io::read_trajectories(&run.path(ENSEMBLE)))?;
    let ck_path = run.path(CHECKPOINT);
    let ck = stage(S, io::read_checkpoint(&ck_path))?;
    let model = stage(S, ck.model())?;
    let x0 = meta
        .x0
        .clone()
        .ok_or_else(|| CliError::Stage { stage: S, source: Error::Format("ensemble has no x0".into()) })?;

    let solver = cfg.data.solver();
    let truth = stage(
        S,
        simulate_ensemble(&meta.system, &x0, meta.n, meta.l, meta.delta, cfg.eval.truth_seed, solver),
    )?;
    let truth_meta = TrajectoryMeta {
        source: "midpoint".into(),
        seed: cfg.eval.truth_seed,
        model: None,
        checkpoint_hash: None,
        ..meta.clone()
    };
    stage(S, io::write_trajectories(&run.path(TRUTH), &truth_meta, &truth))?;

    let ps = stage(S, eval::ensemble_stats(&pred))?;
    let ts = stage(S, eval::ensemble_stats(&truth))?;
    let t = cfg.eval.t;
    let err = stage(S, eval::error_metrics_from_stats(&ps, &ts, t))?;
    stage(S, io::write_series(&run.path("series_pred.csv"), &ps, &run.hash))?;
    stage(S, io::write_series(&run.path("series_truth.csv"), &ts, &run.hash))?;

    let second_moment_slope = match (eval::second_moment_slope(&ps, t), eval::second_moment_slope(&ts, t)) {
        (Ok(pred), Ok(truth)) => Some(DriftSummary { pred, truth }),
        _ => None,
    };
    let invariant_drift = if meta.system.supports_invariant() {
        Some(DriftSummary {
            pred: stage(S, eval::invariant_drift(&pred, &meta.system))?.max_drift,
            truth: stage(S, eval::invariant_drift(&truth, &meta.system))?.max_drift,
        })
    } else {
        None
    };

    let j = ps.index_of(t).expect("checked by error_metrics");
    let mut pdf = Vec::new();
    if pred.len() >= 100 {
        let at = |e: &[Trajectory]| e.iter().map(|tr| tr.states[j].clone()).collect::<Vec<_>>();
        let comps = stage(S, eval::pdf_compare(&at(&pred), &at(&truth), &cfg.eval.kde, cfg.eval.bins))?;
        stage(S, io::write_densities(&run.path("density.csv"), &comps, &run.hash))?;
        stage(S, io::write_histograms(&run.path("histogram.csv"), &comps, &run.hash))?;
        pdf = comps
            .iter()
            .map(|c| PdfSummary {
                component: c.component,
                l2_distance: c.l2_distance,
                truth_mean: c.truth_mean,
                truth_std: c.truth_std,
                degenerate: c.degenerate,
            })
            .collect();
    }

    let held = stage(
        S,
        generate_dataset(
            &meta.system,
            cfg.data.region(),
            cfg.eval.latent_n,
            cfg.eval.latent_l,
            meta.delta,
            cfg.eval.latent_seed,
            solver,
        ),
    )?;
    let batch = cfg.eval.latent_batch_size.min(held.n_pairs());
    let z = stage(
        S,
        eval::held_out_latents(&model, &held, ck.train.encoder_input, batch, cfg.eval.latent_batches, cfg.eval.latent_seed),
    )?;
    let latent = stage(S, eval::latent_report(&z, model.n_z, &cfg.eval.kde, cfg.eval.bins))?;
    stage(S, io::write_latent_histogram(&run.path("latent_histogram.csv"), &latent, &run.hash))?;

    let metrics = Metrics {
        format_version: FORMAT_VERSION,
        config_hash: run.hash.clone(),
        checkpoint_hash: stage(S, io::file_hash(&ck_path))?,
        system: meta.system.clone(),
        model: model.kind,
        t,
        e_mean: err.e_mean,
        e_std: err.e_std,
        second_moment_slope,
        invariant_drift,
        pdf,
        latent: LatentSummary::from(&latent),
    };
    stage(S, io::write_json(&run.path(METRICS), &metrics))?;
    println!(
        "evaluate: T={t} e_mean={:.4e} e_std={:.4e} -> {}",
        metrics.e_mean,
        metrics.e_std,
        run.path(METRICS).display()
    );
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GateFile {
    format_version: u32,
    config_hash: String,
    config: GateConfig,
    report: GateReport,
}

pub fn gradcheck(run: &Run) -> Result<GateReport, CliError> {
    let cfg = run.cfg;
    let gate = GateConfig {
        n_z: cfg.train.n_z.unwrap_or(cfg.system.noise_channels()),
        hidden: cfg.train.hidden.clone(),
        seed: cfg.train.seed,
        ..GateConfig::default()
    };
    let report = stage("gradcheck", gradient_gate(&cfg.system, &gate))?;
    let file = GateFile {
        format_version: FORMAT_VERSION,
        config_hash: run.hash.clone(),
        config: gate,
        report,
    };
    stage("gradcheck", io::write_json(&run.path(GRADCHECK), &file))?;
    let r = file.report;
    for target in ["mse", "distribution", "total", "decode_s_input"] {
        println!("gradcheck: {target:<15} max relative error {:.3e}", r.worst(target));
    }
    if r.passed {
        println!("gradcheck: pass");
        Ok(r)
    } else {
        Err(CliError::GateFailed)
    }
}
