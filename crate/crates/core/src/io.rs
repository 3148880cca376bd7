//! On-disk formats: JSON with 17 significant digits, CSV tables with a
//! leading `#` metadata line, and SHA-256 content hashes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{ComponentPdf, EnsembleStats, LatentReport};
use crate::nn::Mlp;
use crate::sgfnn::{EncoderScaling, LossRecord, Model, ModelKind, TrainConfig};
use crate::sim::{Dataset, Region, Trajectory};
use crate::systems::{PhaseState, SystemSpec};

pub const FORMAT_VERSION: u32 = 1;

/// Floats as `{:.16e}`; everything else as `PrettyFormatter`.
struct SciFormatter(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        write!(w, "{:.16e}", value as f64)
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with every float printed to 17 significant digits.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SciFormatter(serde_json::ser::PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    String::from_utf8(out).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Creates `path` and writes the `# format_version=.. config_hash=..` line.
fn csv_writer(path: &Path, config_hash: &str) -> Result<csv::Writer<BufWriter<File>>> {
    ensure_parent(path)?;
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# format_version={FORMAT_VERSION} config_hash={config_hash}")?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?)
}

fn state_columns(d: usize) -> Vec<String> {
    let mut cols: Vec<String> = (0..d).map(|i| format!("p{i}")).collect();
    cols.extend((0..d).map(|i| format!("q{i}")));
    cols
}

/// Metadata stored next to a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub format_version: u32,
    /// `"midpoint"` for simulated data, `"sgfnn-prediction"` for model output.
    pub source: String,
    pub system: SystemSpec,
    pub d: usize,
    pub r: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub delta: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<PhaseState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
}

impl TrajectoryMeta {
    pub fn for_dataset(ds: &Dataset, config_hash: &str) -> Self {
        TrajectoryMeta {
            format_version: FORMAT_VERSION,
            source: "midpoint".into(),
            system: ds.system.clone(),
            d: ds.system.dim(),
            r: ds.system.noise_channels(),
            n: ds.n_trajectories(),
            l: ds.steps(),
            delta: ds.delta,
            seed: ds.seed,
            region: Some(ds.region),
            x0: None,
            model: None,
            config_hash: config_hash.into(),
            checkpoint_hash: None,
        }
    }
}

/// `<stem>.json` and `<stem>.csv`.
pub fn trajectory_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("csv"))
}

pub fn write_trajectories(stem: &Path, meta: &TrajectoryMeta, trajectories: &[Trajectory]) -> Result<()> {
    let (json, csv_path) = trajectory_paths(stem);
    if meta.n != trajectories.len() || trajectories.iter().any(|t| t.steps() != meta.l) {
        return Err(Error::Format("trajectory metadata does not match the data".into()));
    }
    write_json(&json, meta)?;
    let mut w = csv_writer(&csv_path, &meta.config_hash)?;
    let mut header = vec!["traj".to_string(), "step".to_string()];
    header.extend(state_columns(meta.d));
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for (i, tr) in trajectories.iter().enumerate() {
        for (j, x) in tr.states.iter().enumerate() {
            if x.dim() != meta.d {
                return Err(Error::Format("state dimension differs from metadata".into()));
            }
            row.clear();
            row.push(i.to_string());
            row.push(j.to_string());
            row.extend(x.as_slice().iter().map(|&v| num(v)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories(stem: &Path) -> Result<(TrajectoryMeta, Vec<Trajectory>)> {
    let (json, csv_path) = trajectory_paths(stem);
    let meta: TrajectoryMeta = read_json(&json)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {}", meta.format_version)));
    }
    let d = meta.d;
    let mut rdr = csv_reader(&csv_path)?;
    let mut expected = vec!["traj".to_string(), "step".to_string()];
    expected.extend(state_columns(d));
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(Error::Format(format!("unexpected CSV header {header:?}")));
    }
    let mut trajs: Vec<Trajectory> = Vec::with_capacity(meta.n);
    let mut vals = vec![0.0; 2 * d];
    for rec in rdr.records() {
        let rec = rec?;
        let parse_idx = |k: usize| -> Result<usize> {
            rec[k].parse().map_err(|_| Error::Format(format!("bad index '{}'", &rec[k])))
        };
        let (i, j) = (parse_idx(0)?, parse_idx(1)?);
        for (k, v) in vals.iter_mut().enumerate() {
            *v = rec[2 + k]
                .parse()
                .map_err(|_| Error::Format(format!("bad number '{}'", &rec[2 + k])))?;
        }
        if i == trajs.len() && j == 0 {
            trajs.push(Trajectory {
                t0: 0.0,
                delta: meta.delta,
                states: Vec::with_capacity(meta.l + 1),
            });
        }
        let last = trajs.len().checked_sub(1);
        match trajs.last_mut() {
            Some(tr) if last == Some(i) && tr.states.len() == j => {
                tr.states.push(PhaseState::from_slice(&vals)?);
            }
            _ => return Err(Error::Format(format!("rows out of order at traj {i}, step {j}"))),
        }
    }
    if trajs.len() != meta.n || trajs.iter().any(|t| t.steps() != meta.l) {
        return Err(Error::Format("CSV rows do not match N and L in the metadata".into()));
    }
    Ok((meta, trajs))
}

pub fn write_dataset(stem: &Path, ds: &Dataset, config_hash: &str) -> Result<()> {
    write_trajectories(stem, &TrajectoryMeta::for_dataset(ds, config_hash), &ds.trajectories)
}

pub fn read_dataset(stem: &Path) -> Result<Dataset> {
    let (meta, trajectories) = read_trajectories(stem)?;
    let region = meta
        .region
        .ok_or_else(|| Error::Format("dataset metadata has no sampling region".into()))?;
    let ds = Dataset {
        system: meta.system,
        delta: meta.delta,
        seed: meta.seed,
        region,
        trajectories,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub activation: String,
}

/// Serialized model plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelKind,
    pub architecture: Architecture,
    pub n_z: usize,
    pub delta: f64,
    pub system: SystemSpec,
    pub encoder_scaling: EncoderScaling,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub train: TrainConfig,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(model: &Model, train: &TrainConfig, config_hash: &str) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            model: model.kind,
            architecture: Architecture {
                encoder: model.encoder.sizes().to_vec(),
                decoder: model.decoder.sizes().to_vec(),
                activation: "elu".into(),
            },
            n_z: model.n_z,
            delta: model.delta,
            system: model.system.clone(),
            encoder_scaling: model.scaling.clone(),
            encoder: model.encoder.clone(),
            decoder: model.decoder.clone(),
            train: train.clone(),
            config_hash: config_hash.into(),
        }
    }

    pub fn model(&self) -> Result<Model> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {}", self.format_version)));
        }
        if self.encoder.sizes() != self.architecture.encoder.as_slice()
            || self.decoder.sizes() != self.architecture.decoder.as_slice()
        {
            return Err(Error::Format("checkpoint layers disagree with its architecture".into()));
        }
        let m = Model {
            kind: self.model,
            encoder: self.encoder.clone(),
            scaling: self.encoder_scaling.clone(),
            decoder: self.decoder.clone(),
            n_z: self.n_z,
            delta: self.delta,
            system: self.system.clone(),
        };
        m.validate()?;
        Ok(m)
    }
}

pub fn write_checkpoint(path: &Path, model: &Model, train: &TrainConfig, config_hash: &str) -> Result<()> {
    write_json(path, &Checkpoint::new(model, train, config_hash))
}

/// Reads and validates a checkpoint; the model is rebuilt with [`Checkpoint::model`].
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck: Checkpoint = read_json(path)?;
    ck.model()?;
    Ok(ck)
}

pub fn write_loss_history(path: &Path, history: &[LossRecord], config_hash: &str) -> Result<()> {
    let mut w = csv_writer(path, config_hash)?;
    w.write_record(["epoch", "batch", "loss_mse", "loss_dist", "loss_moment", "loss_total"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.batch.to_string(),
            num(r.loss_mse),
            num(r.loss_dist),
            num(r.loss_moment),
            num(r.loss_total),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_history(path: &Path) -> Result<Vec<LossRecord>> {
    let mut rdr = csv_reader(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// `t,mean_p,mean_q,std_p,std_q,second_moment`; for `d > 1` the state
/// columns carry an index suffix.
pub fn write_series(path: &Path, stats: &EnsembleStats, config_hash: &str) -> Result<()> {
    let n_f = stats.mean.first().map_or(0, Vec::len);
    let d = n_f / 2;
    let names: Vec<String> = if d == 1 {
        vec!["p".into(), "q".into()]
    } else {
        state_columns(d)
    };
    let mut w = csv_writer(path, config_hash)?;
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().map(|n| format!("mean_{n}")));
    header.extend(names.iter().map(|n| format!("std_{n}")));
    header.push("second_moment".into());
    w.write_record(&header)?;
    for (j, t) in stats.times.iter().enumerate() {
        let mut row = vec![num(*t)];
        row.extend(stats.mean[j].iter().map(|&v| num(v)));
        row.extend(stats.std[j].iter().map(|&v| num(v)));
        row.push(num(stats.second_moment[j]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format KDE table `component,x,density_pred,density_truth`; `x` is in
/// standardized units.
pub fn write_densities(path: &Path, comps: &[ComponentPdf], config_hash: &str) -> Result<()> {
    let mut w = csv_writer(path, config_hash)?;
    w.write_record(["component", "x", "density_pred", "density_truth"])?;
    for c in comps {
        for ((x, a), b) in c.grid.iter().zip(&c.density_pred).zip(&c.density_truth) {
            w.write_record([c.component.to_string(), num(*x), num(*a), num(*b)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `component,bin_lo,bin_hi,count_pred,count_truth`.
pub fn write_histograms(path: &Path, comps: &[ComponentPdf], config_hash: &str) -> Result<()> {
    let mut w = csv_writer(path, config_hash)?;
    w.write_record(["component", "bin_lo", "bin_hi", "count_pred", "count_truth"])?;
    for c in comps {
        for (k, (a, b)) in c.hist_pred.counts.iter().zip(&c.hist_truth.counts).enumerate() {
            w.write_record([
                c.component.to_string(),
                num(c.hist_pred.edges[k]),
                num(c.hist_pred.edges[k + 1]),
                a.to_string(),
                b.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `dim,bin_lo,bin_hi,count`.
pub fn write_latent_histogram(path: &Path, report: &LatentReport, config_hash: &str) -> Result<()> {
    let mut w = csv_writer(path, config_hash)?;
    w.write_record(["dim", "bin_lo", "bin_hi", "count"])?;
    for (j, dim) in report.dims.iter().enumerate() {
        let h = &dim.histogram;
        for (k, c) in h.counts.iter().enumerate() {
            w.write_record([j.to_string(), num(h.edges[k]), num(h.edges[k + 1]), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sgfnn::ModelKind;
    use crate::sim::{generate_dataset, MidpointSolver};
    use crate::systems::SystemKind;

    fn dataset() -> Dataset {
        let spec = SystemSpec::with_defaults(SystemKind::Kubo);
        generate_dataset(&spec, Region::default(), 3, 4, 0.01, 9, MidpointSolver::default()).unwrap()
    }

    #[test]
    fn floats_keep_seventeen_digits() {
        let s = to_json_string(&vec![0.1, 1.0 / 3.0, -2.5e-300]).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("3.3333333333333331e-1"), "{s}");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, 1.0 / 3.0, -2.5e-300]);
    }

    #[test]
    fn non_finite_floats_become_null() {
        let s = to_json_string(&vec![f64::NAN]).unwrap();
        assert!(s.contains("null"));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&vec![1, 2, 3]).unwrap();
        assert_eq!(a, config_hash(&vec![1, 2, 3]).unwrap());
        assert_ne!(a, config_hash(&vec![1, 2, 4]).unwrap());
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("data/kubo");
        let ds = dataset();
        write_dataset(&stem, &ds, "abc").unwrap();
        let back = read_dataset(&stem).unwrap();
        assert_eq!(back, ds);
        let csv = fs::read_to_string(stem.with_extension("csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "# format_version=1 config_hash=abc");
        assert_eq!(lines.next().unwrap(), "traj,step,p0,q0");
        assert_eq!(csv.lines().count(), 2 + 3 * 5);
        let meta: serde_json::Value = read_json(&stem.with_extension("json")).unwrap();
        assert_eq!(meta["system"]["name"], "kubo");
        assert_eq!(meta["N"], 3);
        assert_eq!(meta["L"], 4);
        assert_eq!(meta["format_version"], 1);
    }

    #[test]
    fn rewriting_gives_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        write_dataset(&a, &dataset(), "h").unwrap();
        write_dataset(&b, &dataset(), "h").unwrap();
        assert_eq!(file_hash(&a.with_extension("csv")).unwrap(), file_hash(&b.with_extension("csv")).unwrap());
        assert_eq!(file_hash(&a.with_extension("json")).unwrap(), file_hash(&b.with_extension("json")).unwrap());
    }

    #[test]
    fn shuffled_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("d");
        write_dataset(&stem, &dataset(), "h").unwrap();
        let path = stem.with_extension("csv");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.swap(3, 4);
        fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(read_dataset(&stem), Err(Error::Format(_))));
        assert!(read_dataset(&dir.path().join("missing")).unwrap_err().is_io());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut m = Model::new(ModelKind::Sfml, SystemSpec::with_defaults(SystemKind::Kubo), 1, &[5, 5], 0.01, 4).unwrap();
        m.scaling = EncoderScaling::fit(1, dataset().pairs()).unwrap();
        let train = TrainConfig::default();
        write_checkpoint(&path, &m, &train, "cfg").unwrap();
        let ck = read_checkpoint(&path).unwrap();
        assert_eq!(ck.model().unwrap(), m);
        assert_eq!(ck.config_hash, "cfg");
        assert_eq!(ck.train, train);
        let v: serde_json::Value = read_json(&path).unwrap();
        assert_eq!(v["model"], "sfml");
        assert_eq!(v["architecture"]["decoder"], serde_json::json!([3, 5, 5, 2]));
    }

    #[test]
    fn loss_history_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let h = vec![
            LossRecord { epoch: 0, batch: 0, loss_mse: 0.1, loss_dist: 0.2, loss_moment: 0.3, loss_total: 0.6 },
            LossRecord { epoch: 0, batch: 1, loss_mse: 1e-9, loss_dist: 2.0, loss_moment: 19.0, loss_total: 21.0 },
        ];
        write_loss_history(&path, &h, "x").unwrap();
        assert_eq!(read_loss_history(&path).unwrap(), h);
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "epoch,batch,loss_mse,loss_dist,loss_moment,loss_total");
    }

    #[test]
    fn series_header_for_one_degree_of_freedom() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let ens = dataset().trajectories;
        let stats = crate::eval::ensemble_stats(&ens).unwrap();
        write_series(&path, &stats, "x").unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "t,mean_p,mean_q,std_p,std_q,second_moment");
        assert_eq!(text.lines().count(), 2 + 5);
    }
}
