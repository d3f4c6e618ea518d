//! Command-line front end: `simulate`, `train`, `decode`, `evaluate`,
//! `compare` and `sweep`.
//!
//! Every command writes its artifacts plus a `manifest.json` (resolved
//! configuration, root seed, SHA-256 of inputs and outputs) into `--out`.
//! Training options can also come from a flat JSON file (`--config`);
//! flags override the file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{EpisodeDataset, Matrix};
use crate::densities::{Axis, StateGrid};
use crate::error::{Error, Result};
use crate::io::{self, Checkpoint, Manifest, NdjsonWriter};
use crate::learning::{train, Algorithm, Dynamics, OptimizerKind, Supervision, TrainConfig};
use crate::metrics::{self, DecodeReport, Estimator};
use crate::prediction::ModelKind;
use crate::simulation::{generate_place_cells, generate_sim, PlaceCellSpec, SimSpec};
use crate::ssm::{EmissionKind, Ssm};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOG_FILE: &str = "train_log.ndjson";

fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// `start:end` (half-open, 0-based steps).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRange {
    pub start: usize,
    pub end: usize,
}

impl std::str::FromStr for StepRange {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or_else(|| format!("expected start:end, got {s:?}"))?;
        let start = a.trim().parse().map_err(|_| format!("bad range start {a:?}"))?;
        let end = b.trim().parse().map_err(|_| format!("bad range end {b:?}"))?;
        Ok(Self { start, end })
    }
}

impl StepRange {
    fn apply(range: Option<Self>, ep: &EpisodeDataset) -> Result<EpisodeDataset> {
        match range {
            None => Ok(ep.clone()),
            Some(r) => ep.slice(r.start, r.end),
        }
    }
}

/// `lower:upper:cells` for one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisArg {
    pub lower: f64,
    pub upper: f64,
    pub cells: usize,
}

impl std::str::FromStr for AxisArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected lower:upper:cells, got {s:?}"));
        }
        Ok(Self {
            lower: parts[0].trim().parse().map_err(|_| format!("bad lower bound {:?}", parts[0]))?,
            upper: parts[1].trim().parse().map_err(|_| format!("bad upper bound {:?}", parts[1]))?,
            cells: parts[2].trim().parse().map_err(|_| format!("bad cell count {:?}", parts[2]))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelArg {
    D4,
    Ddd,
    Ssm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimKind {
    Sim20,
    Placecells,
}

#[derive(Debug, Parser)]
#[command(name = "d4", version, about = "Grid-based discriminative state decoding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Fit a decoder and write a checkpoint.
    Train(TrainArgs),
    /// Run filter and smoother with a checkpoint.
    Decode(DecodeArgs),
    /// Decode and score against known states.
    Evaluate(DecodeArgs),
    /// Score several checkpoints on the same data.
    Compare(CompareArgs),
    /// Train over a grid of λ or history lengths.
    Sweep(SweepArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_enum::<SimKind>)]
    pub kind: SimKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Existing output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON generator spec; omitted fields take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the step count (sim20) .
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overrides the session length in seconds (placecells).
    #[arg(long)]
    pub duration: Option<f64>,
}

/// Training options. Every field is optional so a JSON file and flags can
/// be layered; unset fields take library defaults.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    /// d4 | ddd | ssm
    #[arg(long, value_parser = parse_enum::<ModelArg>)]
    pub model: Option<ModelArg>,
    /// greedy | regularized
    #[arg(long = "algo", value_parser = parse_enum::<Algorithm>)]
    #[serde(alias = "algo")]
    pub algorithm: Option<Algorithm>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lag: Option<usize>,
    #[arg(long)]
    pub max_lag: Option<usize>,
    #[arg(long = "lr")]
    #[serde(alias = "lr")]
    pub learning_rate: Option<f64>,
    /// adam | sgd
    #[arg(long, value_parser = parse_enum::<OptimizerKind>)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub em_iterations: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_steps: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// observed | latent
    #[arg(long, value_parser = parse_enum::<Supervision>)]
    pub supervision: Option<Supervision>,
    /// ar1 | random_walk (default: ar1 in 1-D, random_walk in 2-D)
    #[arg(long, value_parser = parse_enum::<Dynamics>)]
    pub dynamics: Option<Dynamics>,
    #[arg(long)]
    pub warm_start: Option<bool>,
    #[arg(long)]
    pub kl_threshold: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// gaussian | poisson (SSM only; default: poisson for count data)
    #[arg(long, value_parser = parse_enum::<EmissionKind>)]
    pub emission: Option<EmissionKind>,
    /// One `lower:upper:cells` per state axis.
    #[arg(long, num_args = 1..=2)]
    pub grid: Option<Vec<AxisArg>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

macro_rules! layer {
    ($top:expr, $base:expr, $($f:ident),*) => {
        TrainOptions { $($f: $top.$f.or($base.$f)),* }
    };
}

impl TrainOptions {
    /// Fields of `self` win; unset ones come from `base`.
    pub fn over(self, base: TrainOptions) -> TrainOptions {
        layer!(
            self, base, model, algorithm, lambda, lag, max_lag, learning_rate, optimizer, em_iterations, epochs,
            batch_steps, samples, tolerance, patience, supervision, dynamics, warm_start, kl_threshold, hidden,
            emission, grid, seed
        )
    }

    /// Layers these flags over the `--config` file when given.
    pub fn resolve(self, config: Option<&Path>) -> Result<TrainOptions> {
        match config {
            Some(p) => Ok(self.over(io::read_json(p)?)),
            None => Ok(self),
        }
    }

    pub fn model_kind(&self) -> ModelArg {
        self.model.unwrap_or(ModelArg::D4)
    }

    pub fn train_config(&self, state_dims: usize) -> TrainConfig {
        let mut c = TrainConfig::default();
        if let ModelArg::Ddd = self.model_kind() {
            c.model = ModelKind::Ddd;
        }
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { c.$f = v; })* };
        }
        set!(lambda, lag, max_lag, optimizer, em_iterations, epochs, samples, tolerance, patience, supervision,
            dynamics, warm_start, kl_threshold, hidden, seed);
        if self.learning_rate.is_some() {
            c.learning_rate = self.learning_rate;
        }
        if self.batch_steps.is_some() {
            c.batch_steps = self.batch_steps;
        }
        if self.dynamics.is_none() && state_dims == 2 {
            c.dynamics = Dynamics::RandomWalk;
        }
        c
    }

    /// Explicit grid, else the default line (1-D) or the padded bounding
    /// box of the training states with 80 cells per axis (2-D).
    pub fn state_grid(&self, train: &EpisodeDataset) -> Result<StateGrid> {
        if let Some(axes) = &self.grid {
            return StateGrid::new(axes.iter().map(|a| Axis::new(a.lower, a.upper, a.cells)).collect::<Result<_>>()?);
        }
        match train.state_dims() {
            Some(2) => StateGrid::bounding(train.require_states()?, 0.1, 80),
            Some(1) | None => Ok(StateGrid::default_line()),
            Some(d) => Err(Error::InvalidConfig(format!("no default grid for {d}-dimensional states; pass --grid"))),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Flat JSON file of training options.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Steps used for training.
    #[arg(long)]
    pub range: Option<StepRange>,
    #[command(flatten)]
    pub options: TrainOptions,
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub range: Option<StepRange>,
    /// smoother | filter
    #[arg(long, value_parser = parse_enum::<Estimator>, default_value = "smoother")]
    pub estimator: Estimator,
    /// Tag written into reports.
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    /// Two or more checkpoints.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub range: Option<StepRange>,
    #[arg(long, value_parser = parse_enum::<Estimator>, default_value = "smoother")]
    pub estimator: Estimator,
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Lambda,
    Lag,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// lambda | lag
    #[arg(long, value_parser = parse_enum::<SweepParam>)]
    pub param: SweepParam,
    /// Comma-separated values of the swept parameter.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long)]
    pub train_range: Option<StepRange>,
    /// Scored steps; defaults to the training steps.
    #[arg(long)]
    pub test_range: Option<StepRange>,
    #[command(flatten)]
    pub options: TrainOptions,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(cli.command),
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            Ok(())
        }
        Err(e) => Err(Error::InvalidConfig(e.to_string())),
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Decode(a) => decode(&a, false),
        Command::Evaluate(a) => decode(&a, true),
        Command::Compare(a) => compare(&a),
        Command::Sweep(a) => sweep(&a),
    }
}

fn require_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist")))
    }
}

fn add_dataset_inputs(m: &mut Manifest, dir: &Path) -> Result<()> {
    m.add_input(&dir.join(io::OBSERVATIONS_FILE))?;
    let states = dir.join(io::STATES_FILE);
    if states.exists() {
        m.add_input(&states)?;
    }
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    require_dir(&a.out)?;
    let mut manifest = Manifest::new("simulate", a.seed, a)?;
    if let Some(p) = &a.spec {
        manifest.add_input(p)?;
    }
    let written = match a.kind {
        SimKind::Sim20 => {
            let mut spec: SimSpec = a.spec.as_deref().map(io::read_json).transpose()?.unwrap_or_default();
            if let Some(k) = a.steps {
                spec.steps = k;
            }
            spec.channel_specs = Some(spec.resolve_channels(a.seed));
            let data = generate_sim(&spec, a.seed)?;
            println!("sim20: {} steps x {} channels", data.episode.len(), data.episode.channels());
            io::write_dataset(&a.out, &data.episode, &spec)?
        }
        SimKind::Placecells => {
            let mut spec: PlaceCellSpec = a.spec.as_deref().map(io::read_json).transpose()?.unwrap_or_default();
            if let Some(d) = a.duration {
                spec.duration_s = d;
            }
            spec.fields = Some(spec.resolve_fields(a.seed));
            let data = generate_place_cells(&spec, a.seed)?;
            let spikes: f64 = data.episode.observations.as_slice().iter().sum();
            println!(
                "placecells: {} bins x {} cells, {spikes} spikes",
                data.episode.len(),
                data.episode.channels()
            );
            io::write_dataset(&a.out, &data.episode, &spec)?
        }
    };
    for p in &written {
        manifest.add_output(p)?;
    }
    io::write_json(&a.out.join(MANIFEST_FILE), &manifest)
}

fn is_count_data(ep: &EpisodeDataset) -> bool {
    ep.observations.as_slice().iter().all(|v| *v >= 0.0 && v.fract() == 0.0)
}

/// Fits the decoder described by `opts` on `train_ep`.
pub fn fit_checkpoint(opts: &TrainOptions, train_ep: &EpisodeDataset) -> Result<(Checkpoint, Vec<crate::learning::IterationRecord>)> {
    let dims = train_ep.state_dims().unwrap_or(1);
    let cfg = opts.train_config(dims);
    let grid = opts.state_grid(train_ep)?;
    let episodes = std::slice::from_ref(train_ep);
    match opts.model_kind() {
        ModelArg::Ssm => {
            let emission = opts.emission.unwrap_or(if is_count_data(train_ep) {
                EmissionKind::Poisson
            } else {
                EmissionKind::Gaussian
            });
            let ssm = Ssm::fit(episodes, emission, cfg.dynamics)?;
            Ok((Checkpoint::new(&cfg, &grid, io::Decoder::Ssm(ssm))?, Vec::new()))
        }
        ModelArg::D4 | ModelArg::Ddd => {
            let algorithm = opts.algorithm.unwrap_or(Algorithm::Greedy);
            let out = train(episodes, &Arc::new(grid.clone()), &cfg, algorithm)?;
            let mut ck = Checkpoint::new(
                &cfg,
                &grid,
                io::Decoder::Discriminative {
                    model: out.model,
                    trans: out.trans,
                },
            )?;
            ck.algorithm = Some(algorithm);
            ck.q = Some(out.q);
            ck.lag_curve = out.curve;
            Ok((ck, out.log))
        }
    }
}

const Q_COLUMNS: [&str; 9] = [
    "expected_log_initial",
    "expected_log_transition",
    "expected_log_prediction",
    "kl_sum",
    "entropy_sum",
    "penalty_sum",
    "q_greedy",
    "q_regularized",
    "below_threshold",
];

fn q_values(q: &crate::learning::QBreakdown) -> [f64; 9] {
    [
        q.expected_log_initial,
        q.expected_log_transition,
        q.expected_log_prediction,
        q.kl_sum,
        q.entropy_sum,
        q.penalty_sum,
        q.q_greedy,
        q.q_regularized,
        q.below_threshold as f64,
    ]
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    require_dir(&a.out)?;
    let opts = a.options.clone().resolve(a.config.as_deref())?;
    let ep = StepRange::apply(a.range, &io::read_dataset(&a.data)?)?;
    let resolved = opts.train_config(ep.state_dims().unwrap_or(1));
    let mut manifest = Manifest::new("train", resolved.seed, &serde_json::json!({ "args": a, "resolved": resolved }))?;
    add_dataset_inputs(&mut manifest, &a.data)?;
    if let Some(p) = &a.config {
        manifest.add_input(p)?;
    }
    let (ck, log) = fit_checkpoint(&opts, &ep)?;
    let ck_path = a.out.join(CHECKPOINT_FILE);
    ck.save(&ck_path)?;
    manifest.add_output(&ck_path)?;
    if !log.is_empty() {
        let log_path = a.out.join(LOG_FILE);
        let mut w = NdjsonWriter::create(&log_path)?;
        for r in &log {
            w.write(r)?;
        }
        w.finish()?;
        manifest.add_volatile(&log_path);

        let mut header = vec!["record".to_string(), "lag".into(), "lambda".into(), "iteration".into()];
        header.extend(Q_COLUMNS.iter().map(|s| s.to_string()));
        let mut trace = Matrix::zeros(log.len(), header.len());
        for (i, r) in log.iter().enumerate() {
            let row = trace.row_mut(i);
            row[..4].copy_from_slice(&[i as f64, r.lag as f64, r.lambda, r.iteration as f64]);
            row[4..].copy_from_slice(&q_values(&r.q));
        }
        let trace_path = a.out.join("q_trace.csv");
        io::write_csv(&trace_path, &header, &trace)?;
        manifest.add_output(&trace_path)?;
    }
    if !ck.lag_curve.is_empty() {
        let mut header = vec!["lag".to_string()];
        header.extend(Q_COLUMNS.iter().map(|s| s.to_string()));
        let mut curve = Matrix::zeros(ck.lag_curve.len(), header.len());
        for (i, p) in ck.lag_curve.iter().enumerate() {
            curve.row_mut(i)[0] = p.lag as f64;
            curve.row_mut(i)[1..].copy_from_slice(&q_values(&p.q));
        }
        let curve_path = a.out.join("q_curve.csv");
        io::write_csv(&curve_path, &header, &curve)?;
        manifest.add_output(&curve_path)?;
    }
    match &ck.q {
        Some(q) => println!("trained {}: q_greedy {:.6} q_regularized {:.6}", ck.label(), q.q_greedy, q.q_regularized),
        None => println!("trained {}", ck.label()),
    }
    io::write_json(&a.out.join(MANIFEST_FILE), &manifest)
}

fn report_rows(label: &str, algorithm: Option<Algorithm>, r: &DecodeReport) -> Vec<Vec<String>> {
    let algo = algorithm.map_or_else(|| "none".to_string(), |a| a.to_string());
    r.axes
        .iter()
        .enumerate()
        .map(|(d, a)| {
            vec![
                label.to_string(),
                algo.clone(),
                r.split.clone(),
                io::state_header(r.axes.len())[d].clone(),
                io::format_float(a.mse),
                io::format_float(a.mae),
                io::format_float(a.cc),
                a.cc_defined.to_string(),
                io::format_float(a.hpd_width),
                io::format_float(a.coverage),
            ]
        })
        .collect()
}

fn write_report_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::from("model,algorithm,split,dim,mse,mae,cc,cc_defined,hpd_width,coverage\n");
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn decode(a: &DecodeArgs, score: bool) -> Result<()> {
    require_dir(&a.out)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let ep = StepRange::apply(a.range, &io::read_dataset(&a.data)?)?;
    let mut manifest = Manifest::new(if score { "evaluate" } else { "decode" }, ck.config.seed, a)?;
    manifest.add_input(&a.checkpoint)?;
    add_dataset_inputs(&mut manifest, &a.data)?;
    let post = ck.decode(&ep)?;
    let dens = match a.estimator {
        Estimator::Smoother => &post.smoother,
        Estimator::Filter => &post.filter,
    };
    if score {
        let report = metrics::evaluate_densities(ep.require_states()?, dens, &a.split, a.estimator)?;
        let json = a.out.join("report.json");
        io::write_json(&json, &report)?;
        let csv = a.out.join("report.csv");
        write_report_csv(&csv, &report_rows(&ck.label(), ck.algorithm, &report))?;
        manifest.add_output(&json)?;
        manifest.add_output(&csv)?;
        for (d, ax) in report.axes.iter().enumerate() {
            println!(
                "{} dim {d}: mse {:.6} mae {:.6} cc {:.4} hpd {:.4} coverage {:.3}",
                ck.label(),
                ax.mse,
                ax.mae,
                ax.cc,
                ax.hpd_width,
                ax.coverage
            );
        }
    } else {
        let path = a.out.join("decode.csv");
        io::write_decode_csv(&path, dens, ep.states.as_ref())?;
        manifest.add_output(&path)?;
        println!("decoded {} steps with {}", ep.len(), ck.label());
    }
    io::write_json(&a.out.join(MANIFEST_FILE), &manifest)
}

#[derive(Debug, Serialize)]
struct Comparison {
    note: &'static str,
    entries: Vec<ComparisonEntry>,
}

#[derive(Debug, Serialize)]
struct ComparisonEntry {
    label: String,
    checkpoint: String,
    algorithm: Option<Algorithm>,
    q: Option<crate::learning::QBreakdown>,
    report: DecodeReport,
}

fn compare(a: &CompareArgs) -> Result<()> {
    if a.checkpoints.len() < 2 {
        return Err(Error::InvalidConfig("compare needs at least two --checkpoint files".into()));
    }
    require_dir(&a.out)?;
    let ep = StepRange::apply(a.range, &io::read_dataset(&a.data)?)?;
    let truth = ep.require_states()?;
    let mut manifest = Manifest::new("compare", 0, a)?;
    add_dataset_inputs(&mut manifest, &a.data)?;
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    for path in &a.checkpoints {
        manifest.add_input(path)?;
        let ck = Checkpoint::load(path)?;
        let post = ck.decode(&ep)?;
        let dens = match a.estimator {
            Estimator::Smoother => &post.smoother,
            Estimator::Filter => &post.filter,
        };
        if let Some(first) = entries.first() {
            let first: &ComparisonEntry = first;
            if first.report.axes.len() != truth.cols() {
                return Err(Error::GridMismatch);
            }
        }
        let report = metrics::evaluate_densities(truth, dens, &a.split, a.estimator)?;
        rows.extend(report_rows(&ck.label(), ck.algorithm, &report));
        entries.push(ComparisonEntry {
            label: ck.label(),
            checkpoint: path.to_string_lossy().into_owned(),
            algorithm: ck.algorithm,
            q: ck.q,
            report,
        });
    }
    for e in &entries {
        let q = e.q.map_or_else(|| "-".to_string(), |q| format!("{:.3}", q.q_greedy));
        let cells: Vec<String> = e.report.axes.iter().map(|x| format!("mse {:.6} cc {:.4}", x.mse, x.cc)).collect();
        println!("{:<12} q_greedy {q:>12}  {}", e.label, cells.join(" | "));
    }
    let json = a.out.join("comparison.json");
    io::write_json(
        &json,
        &Comparison {
            note: "recurrent-network baselines are not included",
            entries,
        },
    )?;
    let csv = a.out.join("comparison.csv");
    write_report_csv(&csv, &rows)?;
    manifest.add_output(&json)?;
    manifest.add_output(&csv)?;
    io::write_json(&a.out.join(MANIFEST_FILE), &manifest)
}

#[derive(Debug, Clone, Serialize)]
struct SweepPoint {
    index: usize,
    value: f64,
    q: crate::learning::QBreakdown,
    report: DecodeReport,
}

fn sweep(a: &SweepArgs) -> Result<()> {
    require_dir(&a.out)?;
    let base = a.options.clone().resolve(a.config.as_deref())?;
    if base.model_kind() == ModelArg::Ssm {
        return Err(Error::InvalidConfig("sweep trains discriminative models only".into()));
    }
    let data = io::read_dataset(&a.data)?;
    let train_ep = StepRange::apply(a.train_range, &data)?;
    let test_ep = StepRange::apply(a.test_range.or(a.train_range), &data)?;
    let split = if a.test_range.is_some() { "test" } else { "train" };
    let mut manifest = Manifest::new("sweep", base.seed.unwrap_or(0), &serde_json::json!({ "args": a, "resolved": base }))?;
    add_dataset_inputs(&mut manifest, &a.data)?;
    let points: Vec<Result<SweepPoint>> = a
        .values
        .par_iter()
        .enumerate()
        .map(|(index, &value)| {
            let mut opts = base.clone();
            match a.param {
                SweepParam::Lambda => opts.lambda = Some(value),
                SweepParam::Lag => {
                    if value < 0.0 || value.fract() != 0.0 {
                        return Err(Error::InvalidConfig(format!("lag must be a non-negative integer, got {value}")));
                    }
                    opts.lag = Some(value as usize);
                }
            }
            opts.algorithm = Some(Algorithm::Regularized);
            let (ck, _) = fit_checkpoint(&opts, &train_ep)?;
            let post = ck.decode(&test_ep)?;
            let report = metrics::evaluate(test_ep.require_states()?, &post, split, Estimator::Smoother)?;
            Ok(SweepPoint {
                index,
                value,
                q: ck.q.expect("discriminative checkpoints carry Q"),
                report,
            })
        })
        .collect();
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    let dims = points[0].report.axes.len();
    let mut header = vec!["value".to_string()];
    header.extend(Q_COLUMNS.iter().map(|s| s.to_string()));
    for n in io::state_header(dims) {
        header.extend([format!("mse_{n}"), format!("mae_{n}"), format!("cc_{n}"), format!("coverage_{n}")]);
    }
    let mut table = Matrix::zeros(points.len(), header.len());
    for (i, p) in points.iter().enumerate() {
        let row = table.row_mut(i);
        row[0] = p.value;
        row[1..10].copy_from_slice(&q_values(&p.q));
        for (d, ax) in p.report.axes.iter().enumerate() {
            row[10 + 4 * d..14 + 4 * d].copy_from_slice(&[ax.mse, ax.mae, ax.cc, ax.coverage]);
        }
        println!(
            "{:?} = {}: q_regularized {:.4} cc {:.4}",
            a.param,
            p.value,
            p.q.q_regularized,
            p.report.axes.iter().map(|x| x.cc).sum::<f64>() / dims as f64
        );
    }
    let csv = a.out.join("sweep.csv");
    io::write_csv(&csv, &header, &table)?;
    let json = a.out.join("sweep.json");
    io::write_json(&json, &points)?;
    manifest.add_output(&csv)?;
    manifest.add_output(&json)?;
    io::write_json(&a.out.join(MANIFEST_FILE), &manifest)
}
