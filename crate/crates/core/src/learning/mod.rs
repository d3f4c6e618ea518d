//! Training: the Q function, the regularized bound and the two EM-style
//! algorithms (greedy history growth and λ-regularized fixed history).

mod objective;
mod optimizer;

pub use objective::{
    axis_cross_entropy, compute_q, AxisCrossEntropy, EpisodeWork, ObjectiveValue, QBreakdown, StepTarget,
    TrainingSet,
};
pub use optimizer::{Optimizer, OptimizerKind, MAX_NAN_RETRIES};

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{EpisodeDataset, FeatureScaling, Matrix};
use crate::densities::StateGrid;
use crate::error::{Error, Result};
use crate::inference::Decoder;
use crate::prediction::{ModelKind, ModelSpec, PredictionModel};
use crate::transition::LinearGaussianTransition;

/// Where the posterior targets come from during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    /// States are observed: expectations use the true trajectory.
    Observed,
    /// States are latent: each E-step filters, smooths and samples.
    Latent,
}

/// Family of state dynamics fitted during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// Per-axis AR(1) with free `a`, `b`, `σ_x`.
    Ar1,
    /// Per-axis random walk with free `σ_x`.
    RandomWalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Greedy,
    Regularized,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Greedy => "greedy",
            Algorithm::Regularized => "regularized",
        })
    }
}

/// Hyper-parameters of both training algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub hidden: Vec<usize>,
    /// History length for the regularized algorithm.
    pub lag: usize,
    /// Largest history length the greedy search may try.
    pub max_lag: usize,
    pub lambda: f64,
    /// Step size; `None` picks the model's default ([`TrainConfig::lr`]).
    pub learning_rate: Option<f64>,
    pub optimizer: OptimizerKind,
    /// Cap on EM iterations.
    pub em_iterations: usize,
    /// Passes over the data per M-step.
    pub epochs: usize,
    /// Steps per minibatch (contiguous block); `None` takes one gradient
    /// step per epoch over all steps of all episodes.
    pub batch_steps: Option<usize>,
    /// Sampled trajectories per E-step.
    pub samples: usize,
    /// Relative improvement below which an iteration counts as stalled.
    pub tolerance: f64,
    /// Stalled iterations in a row that end the loop.
    pub patience: usize,
    pub supervision: Supervision,
    pub dynamics: Dynamics,
    /// With latent supervision and observed states available, first fit
    /// with observed supervision and start EM from that fit.
    pub warm_start: bool,
    /// Logged count of steps whose `KL + ℍ` is below this value.
    pub kl_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::D4,
            hidden: vec![64, 64],
            lag: 20,
            max_lag: 10,
            lambda: 0.0,
            learning_rate: None,
            optimizer: OptimizerKind::Adam,
            em_iterations: 50,
            epochs: 5,
            batch_steps: None,
            samples: 32,
            tolerance: 1e-3,
            patience: 3,
            supervision: Supervision::Observed,
            dynamics: Dynamics::Ar1,
            warm_start: true,
            kl_threshold: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.lr() > 0.0) || !self.lr().is_finite() {
            return bad(format!("learning rate must be > 0, got {}", self.lr()));
        }
        if self.batch_steps == Some(0) || self.epochs == 0 {
            return bad("batch_steps and epochs must be positive".into());
        }
        if self.supervision == Supervision::Latent && self.samples == 0 {
            return bad("latent supervision needs at least one sample".into());
        }
        if !(self.tolerance >= 0.0) || self.patience == 0 {
            return bad("tolerance must be >= 0 and patience positive".into());
        }
        if self.model == ModelKind::D4 && self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        Ok(())
    }

    /// Effective step size: 1e-3 for the network, 1e-2 for the linear
    /// predictor, whose full-batch fit is otherwise far from converged
    /// within the iteration cap.
    pub fn lr(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.model {
            ModelKind::D4 => 1e-3,
            ModelKind::Ddd => 1e-2,
        })
    }

    pub fn spec(&self, lag: usize) -> ModelSpec {
        ModelSpec {
            kind: self.model,
            lag,
            hidden: self.hidden.clone(),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub algorithm: Algorithm,
    pub model: ModelKind,
    pub supervision: Supervision,
    pub lag: usize,
    pub lambda: f64,
    pub iteration: usize,
    pub learning_rate: f64,
    pub wall_time_s: f64,
    #[serde(flatten)]
    pub q: QBreakdown,
}

/// Final Q of one history length tried by the greedy search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagPoint {
    pub lag: usize,
    pub q: QBreakdown,
}

/// A trained model with its transition and training history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PredictionModel,
    pub trans: LinearGaussianTransition,
    pub q: QBreakdown,
    /// Greedy only: Q at each history length tried.
    pub curve: Vec<LagPoint>,
    pub log: Vec<IterationRecord>,
}

fn check_episodes(episodes: &[EpisodeDataset], grid: &StateGrid, lag: usize) -> Result<()> {
    let first = episodes
        .first()
        .ok_or_else(|| Error::InsufficientData("no training episodes".into()))?;
    for ep in episodes {
        if ep.len() <= lag {
            return Err(Error::InsufficientData(format!(
                "episode of length {} is not longer than the history length {lag}",
                ep.len()
            )));
        }
        if ep.channels() != first.channels() {
            return Err(Error::DimensionMismatch {
                what: "episode channels",
                expected: first.channels(),
                got: ep.channels(),
            });
        }
        if let Some(d) = ep.state_dims() {
            if d != grid.dims() {
                return Err(Error::DimensionMismatch {
                    what: "state dims vs grid dims",
                    expected: grid.dims(),
                    got: d,
                });
            }
        }
    }
    Ok(())
}

pub(crate) fn all_states(episodes: &[EpisodeDataset]) -> Option<Vec<&Matrix>> {
    episodes.iter().map(|e| e.states.as_ref()).collect()
}

pub(crate) fn fit_transition(dynamics: Dynamics, seqs: &[&Matrix]) -> Result<LinearGaussianTransition> {
    match dynamics {
        Dynamics::Ar1 => LinearGaussianTransition::fit_mle_pooled(seqs),
        Dynamics::RandomWalk => LinearGaussianTransition::fit_random_walk_pooled(seqs),
    }
}

/// Fits the transition (from states) and builds a fresh model for `lag`.
pub fn initial_model(
    episodes: &[EpisodeDataset],
    grid: &Arc<StateGrid>,
    config: &TrainConfig,
    lag: usize,
    trans: Option<&LinearGaussianTransition>,
) -> Result<(PredictionModel, LinearGaussianTransition)> {
    check_episodes(episodes, grid, lag)?;
    let trans = match (trans, all_states(episodes)) {
        (Some(t), _) => t.clone(),
        (None, Some(states)) => fit_transition(config.dynamics, &states)?,
        (None, None) => {
            return Err(Error::InvalidConfig(
                "training without observed states needs an initial transition".into(),
            ))
        }
    };
    let scaling = FeatureScaling::fit(episodes)?;
    let seed = crate::seed::derive(config.seed, "model-init", lag as u64);
    let model = PredictionModel::new(&config.spec(lag), episodes[0].channels(), scaling, &trans.initial, seed)?;
    Ok((model, trans))
}

/// Builds the E-step targets for the current parameters.
pub fn e_step(
    episodes: &[EpisodeDataset],
    model: &PredictionModel,
    trans: &LinearGaussianTransition,
    grid: &Arc<StateGrid>,
    supervision: Supervision,
    samples: usize,
    seed: u64,
) -> Result<TrainingSet> {
    match supervision {
        Supervision::Observed => TrainingSet::observed(episodes, model, trans, grid),
        Supervision::Latent => {
            let dec = Decoder::new(model, trans, grid)?;
            let posts = episodes
                .iter()
                .enumerate()
                .map(|(e, ep)| dec.decode(ep, samples, crate::seed::derive(seed, "episode", e as u64)))
                .collect::<Result<Vec<_>>>()?;
            TrainingSet::from_posteriors(episodes, &posts, model, trans)
        }
    }
}

/// `epochs` passes of minibatch ascent on the objective.
pub fn m_step(
    set: &TrainingSet,
    model: &mut PredictionModel,
    opt: &mut Optimizer,
    lambda: f64,
    epochs: usize,
    batch_steps: Option<usize>,
    rng: &mut crate::seed::Rng,
) -> Result<()> {
    let Some(batch) = batch_steps else {
        for _ in 0..epochs {
            *model = grad_step_regularized(set, model, lambda, opt)?;
        }
        return Ok(());
    };
    let mut blocks = Vec::new();
    for (e, ep) in set.episodes.iter().enumerate() {
        let mut start = 0;
        while start < ep.len() {
            let end = (start + batch).min(ep.len());
            blocks.push((e, start..end));
            start = end;
        }
    }
    let mut params = model.params();
    let mut grad = vec![0.0; params.len()];
    for _ in 0..epochs {
        blocks.shuffle(rng);
        for (e, range) in &blocks {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let n = range.len() as f64;
            set.accumulate_gradient(model, lambda, *e, range.clone(), &mut grad);
            grad.iter_mut().for_each(|g| *g /= n);
            if opt.ascend(&mut params, &grad)? {
                model.set_params(&params)?;
            }
        }
    }
    Ok(())
}

struct FitContext<'a> {
    episodes: &'a [EpisodeDataset],
    grid: &'a Arc<StateGrid>,
    config: &'a TrainConfig,
    algorithm: Algorithm,
    started: Instant,
}

impl FitContext<'_> {
    /// EM at a fixed history length from `(model, trans)`; returns the
    /// iterate with the highest regularized Q.
    fn run(
        &self,
        mut model: PredictionModel,
        mut trans: LinearGaussianTransition,
        supervision: Supervision,
        lambda: f64,
        log: &mut Vec<IterationRecord>,
    ) -> Result<(PredictionModel, LinearGaussianTransition, QBreakdown)> {
        let cfg = self.config;
        let lag = model.lag();
        let mut opt = Optimizer::new(cfg.optimizer, cfg.lr(), model.num_params());
        let tag = format!("{}-{}-{:?}", self.algorithm, lag, supervision);
        let mut prev = f64::NEG_INFINITY;
        let mut stalled = 0;
        let mut it = 0;
        let mut best: Option<(PredictionModel, LinearGaussianTransition, QBreakdown)> = None;
        loop {
            let estep_seed = crate::seed::derive(cfg.seed, &format!("estep-{tag}"), it as u64);
            let set = e_step(self.episodes, &model, &trans, self.grid, supervision, cfg.samples, estep_seed)?;
            let q = set.q_breakdown(&model, &trans, lambda, cfg.kl_threshold);
            log.push(IterationRecord {
                algorithm: self.algorithm,
                model: cfg.model,
                supervision,
                lag,
                lambda,
                iteration: it,
                learning_rate: opt.learning_rate(),
                wall_time_s: self.started.elapsed().as_secs_f64(),
                q,
            });
            let value = q.q_regularized;
            if best.as_ref().is_none_or(|(_, _, b)| value > b.q_regularized) {
                best = Some((model.clone(), trans.clone(), q));
            }
            if it > 0 {
                if value - prev < cfg.tolerance * value.abs() {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
            }
            prev = value;
            if stalled >= cfg.patience || it >= cfg.em_iterations {
                return Ok(best.expect("first iteration is recorded"));
            }
            let mut rng = crate::seed::rng(cfg.seed, &format!("minibatch-{tag}"), it as u64);
            m_step(&set, &mut model, &mut opt, lambda, cfg.epochs, cfg.batch_steps, &mut rng)?;
            if supervision == Supervision::Latent {
                let seqs: Vec<&Matrix> = set.episodes.iter().flat_map(|e| e.trajectories.iter()).collect();
                trans = fit_transition(cfg.dynamics, &seqs)?;
            }
            it += 1;
        }
    }

    fn fit_lag(
        &self,
        lag: usize,
        lambda: f64,
        init_trans: Option<&LinearGaussianTransition>,
        log: &mut Vec<IterationRecord>,
    ) -> Result<(PredictionModel, LinearGaussianTransition, QBreakdown)> {
        let cfg = self.config;
        let (model, trans) = initial_model(self.episodes, self.grid, cfg, lag, init_trans)?;
        let has_states = all_states(self.episodes).is_some();
        match cfg.supervision {
            Supervision::Observed => {
                if !has_states {
                    return Err(Error::InvalidConfig("observed supervision needs ground-truth states".into()));
                }
                self.run(model, trans, Supervision::Observed, lambda, log)
            }
            Supervision::Latent if cfg.warm_start && has_states => {
                let (m, t, _) = self.run(model, trans, Supervision::Observed, lambda, log)?;
                self.run(m, t, Supervision::Latent, lambda, log)
            }
            Supervision::Latent => self.run(model, trans, Supervision::Latent, lambda, log),
        }
    }
}

/// Greedy history search: grow the history one lag at a time, fitting the
/// expected log-likelihood at each length, until the full Q (with the
/// KL and entropy terms) stops improving. Returns the best length's fit.
pub fn train_greedy(
    episodes: &[EpisodeDataset],
    grid: &Arc<StateGrid>,
    config: &TrainConfig,
    init_trans: Option<&LinearGaussianTransition>,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_episodes(episodes, grid, config.max_lag)?;
    let ctx = FitContext {
        episodes,
        grid,
        config,
        algorithm: Algorithm::Greedy,
        started: Instant::now(),
    };
    let mut log = Vec::new();
    let mut curve = Vec::new();
    let mut best: Option<(PredictionModel, LinearGaussianTransition, QBreakdown)> = None;
    for lag in 0..=config.max_lag {
        let (model, trans, q) = ctx.fit_lag(lag, 0.0, init_trans, &mut log)?;
        curve.push(LagPoint { lag, q });
        let better = best.as_ref().is_none_or(|(_, _, b)| q.greedy_score() > b.greedy_score());
        if !better {
            break;
        }
        best = Some((model, trans, q));
    }
    let (model, trans, q) = best.expect("at least one lag is fitted");
    Ok(TrainOutcome {
        model,
        trans,
        q,
        curve,
        log,
    })
}

/// Regularized optimization at the fixed history length `config.lag`.
pub fn train_regularized(
    episodes: &[EpisodeDataset],
    grid: &Arc<StateGrid>,
    config: &TrainConfig,
    init_trans: Option<&LinearGaussianTransition>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let ctx = FitContext {
        episodes,
        grid,
        config,
        algorithm: Algorithm::Regularized,
        started: Instant::now(),
    };
    let mut log = Vec::new();
    let (model, trans, q) = ctx.fit_lag(config.lag, config.lambda, init_trans, &mut log)?;
    Ok(TrainOutcome {
        model,
        trans,
        q,
        curve: Vec::new(),
        log,
    })
}

/// Dispatches on `algorithm`.
pub fn train(
    episodes: &[EpisodeDataset],
    grid: &Arc<StateGrid>,
    config: &TrainConfig,
    algorithm: Algorithm,
) -> Result<TrainOutcome> {
    match algorithm {
        Algorithm::Greedy => train_greedy(episodes, grid, config, None),
        Algorithm::Regularized => train_regularized(episodes, grid, config, None),
    }
}

/// One gradient step on the regularized bound using the given targets.
pub fn grad_step_regularized(
    set: &TrainingSet,
    model: &PredictionModel,
    lambda: f64,
    opt: &mut Optimizer,
) -> Result<PredictionModel> {
    let n = set.total_steps().max(1) as f64;
    let mut grad = set.gradient(model, lambda);
    grad.iter_mut().for_each(|g| *g /= n);
    let mut params = model.params();
    let mut out = model.clone();
    if opt.ascend(&mut params, &grad)? {
        out.set_params(&params)?;
    }
    Ok(out)
}
