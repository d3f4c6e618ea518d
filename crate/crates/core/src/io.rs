//! Files: numeric CSV, dataset directories, checkpoints, NDJSON logs and
//! run manifests.
//!
//! CSV floats are written with 17 significant digits so they round-trip
//! exactly. JSON floats use the shortest representation that round-trips.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{EpisodeDataset, Matrix};
use crate::densities::{GridDensity, StateGrid};
use crate::error::{Error, Result};
use crate::inference::PosteriorSequence;
use crate::learning::{Algorithm, LagPoint, QBreakdown, TrainConfig};
use crate::metrics::HPD_LEVEL;
use crate::prediction::PredictionModel;
use crate::ssm::Ssm;
use crate::transition::LinearGaussianTransition;

/// Checkpoint format version; bumped on incompatible changes.
pub const CHECKPOINT_VERSION: u32 = 1;

pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const STATES_FILE: &str = "states.csv";
pub const SPEC_FILE: &str = "spec.json";

/// 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a header line and one row per matrix row.
pub fn write_csv(path: &Path, header: &[String], m: &Matrix) -> Result<()> {
    if header.len() != m.cols() {
        return Err(Error::LengthMismatch(header.len(), m.cols()));
    }
    let mut w = create(path)?;
    let mut text = header.join(",");
    text.push('\n');
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format_float(*v)).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

/// Reads a numeric CSV with one header line.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header: Vec<String> = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?.split(',').map(|s| s.trim().to_string()).collect(),
        None => return Err(Error::parse(path, "empty file")),
    };
    let mut data = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, format!("line {}: not a number: {field:?}", i + 2)))?;
            data.push(v);
        }
        if data.len() - before != header.len() {
            return Err(Error::parse(
                path,
                format!("line {}: {} fields, header has {}", i + 2, data.len() - before, header.len()),
            ));
        }
    }
    let m = Matrix::new(header.len(), data).map_err(|e| Error::parse(path, e.to_string()))?;
    Ok((header, m))
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Column names of a state file with `dims` columns.
pub fn state_header(dims: usize) -> Vec<String> {
    match dims {
        1 => vec!["x".into()],
        2 => vec!["x".into(), "y".into()],
        _ => numbered("x", dims),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

/// Writes `observations.csv`, `states.csv` (when present) and `spec.json`
/// into `dir`, which must already exist. Returns the files written.
pub fn write_dataset<S: Serialize>(dir: &Path, ep: &EpisodeDataset, spec: &S) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist")));
    }
    let mut written = Vec::new();
    let obs = dir.join(OBSERVATIONS_FILE);
    write_csv(&obs, &numbered("s", ep.channels()), &ep.observations)?;
    written.push(obs);
    if let Some(st) = &ep.states {
        let p = dir.join(STATES_FILE);
        write_csv(&p, &state_header(st.cols()), st)?;
        written.push(p);
    }
    let p = dir.join(SPEC_FILE);
    write_json(&p, spec)?;
    written.push(p);
    Ok(written)
}

/// Reads a dataset directory; `states.csv` is optional.
pub fn read_dataset(dir: &Path) -> Result<EpisodeDataset> {
    let (_, obs) = read_csv(&dir.join(OBSERVATIONS_FILE))?;
    let states_path = dir.join(STATES_FILE);
    let states = if states_path.exists() {
        Some(read_csv(&states_path)?.1)
    } else {
        None
    };
    EpisodeDataset::new(obs, states)
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hex SHA-256 of a value's canonical JSON.
pub fn sha256_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

/// The fitted decoder stored in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Decoder {
    /// DDD or D4 prediction process with its state transition.
    Discriminative {
        model: PredictionModel,
        trans: LinearGaussianTransition,
    },
    Ssm(Ssm),
}

/// A trained decoder with the grid and configuration it was fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub config: TrainConfig,
    pub grid: StateGrid,
    pub decoder: Decoder,
    /// `None` for the state-space baseline.
    #[serde(default)]
    pub algorithm: Option<Algorithm>,
    #[serde(default)]
    pub q: Option<QBreakdown>,
    /// Greedy search only: final Q of each history length tried.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lag_curve: Vec<LagPoint>,
}

impl Checkpoint {
    pub fn new(config: &TrainConfig, grid: &StateGrid, decoder: Decoder) -> Result<Self> {
        Ok(Self {
            version: CHECKPOINT_VERSION,
            config_hash: sha256_json(config)?,
            config: config.clone(),
            grid: grid.clone(),
            decoder,
            algorithm: None,
            q: None,
            lag_curve: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Loads and checks version and configuration hash.
    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = read_json(path)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::parse(
                path,
                format!("checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})", ck.version),
            ));
        }
        if sha256_json(&ck.config)? != ck.config_hash {
            return Err(Error::parse(path, "configuration hash does not match the stored configuration"));
        }
        Ok(ck)
    }

    pub fn grid(&self) -> Arc<StateGrid> {
        Arc::new(self.grid.clone())
    }

    /// Filter + smoother over `ep`.
    pub fn decode(&self, ep: &EpisodeDataset) -> Result<PosteriorSequence> {
        let grid = self.grid();
        match &self.decoder {
            Decoder::Discriminative { model, trans } => crate::inference::Decoder::new(model, trans, &grid)?.decode(ep, 0, 0),
            Decoder::Ssm(ssm) => ssm.decode(ep, &grid),
        }
    }

    pub fn label(&self) -> String {
        match &self.decoder {
            Decoder::Discriminative { model, .. } => format!("{}-l{}", model.kind(), model.lag()),
            Decoder::Ssm(_) => "ssm".into(),
        }
    }
}

/// Appends one JSON document per line.
pub struct NdjsonWriter {
    path: PathBuf,
    out: BufWriter<fs::File>,
}

impl NdjsonWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            out: create(path)?,
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(self) -> Result<()> {
        finish(self.out, &self.path)
    }
}

/// Reads every line of an NDJSON file.
pub fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// Everything needed to reproduce a run: the command, its resolved
/// configuration, the root seed and content hashes of inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// File name → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Outputs left unhashed because they record wall-clock timings.
    #[serde(default)]
    pub volatile: Vec<String>,
    pub version: String,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            volatile: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
        })
    }

    fn key(path: &Path) -> String {
        path.to_string_lossy().into_owned()
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(Self::key(path), sha256_file(path)?);
        Ok(())
    }

    /// Records an output by its file name (outputs live in one directory).
    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let name = path.file_name().map_or_else(|| Self::key(path), |n| n.to_string_lossy().into_owned());
        self.outputs.insert(name, sha256_file(path)?);
        Ok(())
    }

    pub fn add_volatile(&mut self, path: &Path) {
        let name = path.file_name().map_or_else(|| Self::key(path), |n| n.to_string_lossy().into_owned());
        self.volatile.push(name);
    }
}

/// Per-step decode table: truth (if any), point estimate and HPD bounds.
///
/// Columns per dimension `d`: `mean_d`, `std_d`, `hpd_lo_d`, `hpd_hi_d`
/// (outer limits of the marginal HPD set), plus `true_d` when states are
/// known.
pub fn write_decode_csv(path: &Path, densities: &[GridDensity], truth: Option<&Matrix>) -> Result<()> {
    let grid = densities
        .first()
        .map(|d| d.grid().clone())
        .ok_or_else(|| Error::InsufficientData("nothing decoded".into()))?;
    let names = state_header(grid.dims());
    let mut header = vec!["step".to_string()];
    for n in &names {
        if truth.is_some() {
            header.push(format!("true_{n}"));
        }
        header.extend([format!("mean_{n}"), format!("std_{n}"), format!("hpd_lo_{n}"), format!("hpd_hi_{n}")]);
    }
    let mut m = Matrix::zeros(densities.len(), header.len());
    for (k, d) in densities.iter().enumerate() {
        let (mean, std) = (d.mean(), d.std());
        let row = m.row_mut(k);
        row[0] = k as f64;
        let mut c = 1;
        for a in 0..grid.dims() {
            if let Some(t) = truth {
                row[c] = t.get(k, a);
                c += 1;
            }
            let axis = grid.axis(a);
            let hpd = crate::densities::hpd_cells(&d.marginal(a), axis.width(), HPD_LEVEL);
            let lo = hpd.cells.iter().min().map_or(f64::NAN, |&i| axis.center(i) - 0.5 * axis.width());
            let hi = hpd.cells.iter().max().map_or(f64::NAN, |&i| axis.center(i) + 0.5 * axis.width());
            row[c..c + 4].copy_from_slice(&[mean[a], std[a], lo, hi]);
            c += 4;
        }
    }
    write_csv(path, &header, &m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::TrainConfig;
    use crate::prediction::{ModelKind, ModelSpec};
    use crate::transition::LinearGaussianTransition;

    #[test]
    fn csv_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = Matrix::from_rows(&[[0.1, -1.0 / 3.0], [f64::MIN_POSITIVE, 1e300], [std::f64::consts::PI, -0.0]]).unwrap();
        write_csv(&p, &["a".into(), "b".into()], &m).unwrap();
        let (h, back) = read_csv(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        for (x, y) in m.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "a,b\n1,2\n3\n").unwrap();
        assert!(matches!(read_csv(&p), Err(Error::Parse { .. })));
        assert!(matches!(read_csv(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn checkpoint_round_trip_and_tamper_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        let cfg = TrainConfig {
            model: ModelKind::Ddd,
            ..Default::default()
        };
        let trans = LinearGaussianTransition::ar1(0.9, 0.0, 0.1).unwrap();
        let model = PredictionModel::new(
            &ModelSpec::new(ModelKind::Ddd, 2),
            3,
            crate::dataset::FeatureScaling::identity(3),
            &trans.initial,
            1,
        )
        .unwrap();
        let ck = Checkpoint::new(&cfg, &StateGrid::default_line(), Decoder::Discriminative { model, trans }).unwrap();
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), ck);
        let text = fs::read_to_string(&p).unwrap().replacen("\"lag\": 20", "\"lag\": 21", 1);
        fs::write(&p, text).unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_output_directory_is_an_io_error() {
        let ep = EpisodeDataset::new(Matrix::column(vec![1.0, 2.0]), None).unwrap();
        let err = write_dataset(Path::new("/nonexistent/dir"), &ep, &()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
