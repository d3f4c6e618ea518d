//! Filter, smoother and backward trajectory sampler on the state grid.
//!
//! The filter update is
//!
//! ```text
//! filter_k ∝ [pred_k / hist_k] · onestep_k
//! pred_k    = discretized p(x_k | s_k, h_k)
//! hist_k    = CK(pred_{k-1})            (CK(p(x₀)) at the first step)
//! onestep_k = CK(filter_{k-1})          (CK(p(x₀)) at the first step)
//! ```
//!
//! where CK is one application of the state transition.

use std::sync::Arc;

use rand::Rng as _;

use crate::dataset::{EpisodeDataset, Matrix};
use crate::densities::{discretize_renormalized, GaussianParams, GridDensity, StateGrid, DENSITY_FLOOR};
use crate::error::{Error, Result};
use crate::prediction::{PredictionModel, YInput};
use crate::transition::{LinearGaussianTransition, Propagator};

/// Unnormalized mass below which an update is declared degenerate.
pub const DEGENERATE_MASS: f64 = 1e-250;

/// Denominator used in the filter ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HistoryMode {
    /// `CK(pred_{k-1})`, the history marginal of the prediction process.
    #[default]
    Propagated,
    /// A flat density: the filter becomes a classical Bayes filter with
    /// the prediction density as pseudo-likelihood.
    Flat,
}

/// All densities of one decoded episode.
#[derive(Debug, Clone)]
pub struct PosteriorSequence {
    grid: Arc<StateGrid>,
    /// Decode-time prediction-process parameters per step.
    pub predictions: Vec<GaussianParams>,
    pub filter: Vec<GridDensity>,
    pub onestep: Vec<GridDensity>,
    pub history_marginal: Vec<GridDensity>,
    /// Empty until [`run_smoother`] runs.
    pub smoother: Vec<GridDensity>,
    /// Sampled trajectories (each `K × dims`), empty until sampled.
    pub samples: Vec<Matrix>,
}

impl PosteriorSequence {
    /// An empty sequence to be filled step by step.
    pub(crate) fn with_capacity(grid: Arc<StateGrid>, k_len: usize) -> Self {
        Self {
            grid,
            predictions: Vec::with_capacity(k_len),
            filter: Vec::with_capacity(k_len),
            onestep: Vec::with_capacity(k_len),
            history_marginal: Vec::with_capacity(k_len),
            smoother: Vec::new(),
            samples: Vec::new(),
        }
    }

    #[inline]
    pub fn grid(&self) -> &Arc<StateGrid> {
        &self.grid
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.filter.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.filter.is_empty()
    }

    pub fn is_smoothed(&self) -> bool {
        self.smoother.len() == self.filter.len() && !self.filter.is_empty()
    }

    fn means(seq: &[GridDensity], dims: usize) -> Matrix {
        let mut m = Matrix::zeros(seq.len(), dims);
        for (k, d) in seq.iter().enumerate() {
            m.row_mut(k).copy_from_slice(&d.mean());
        }
        m
    }

    pub fn filter_means(&self) -> Matrix {
        Self::means(&self.filter, self.grid.dims())
    }

    pub fn smoother_means(&self) -> Matrix {
        Self::means(&self.smoother, self.grid.dims())
    }
}

/// One filter update's outputs.
#[derive(Debug, Clone)]
pub struct FilterStep {
    pub filter: GridDensity,
    pub onestep: GridDensity,
    pub history_marginal: GridDensity,
}

/// Filter/smoother machinery bound to a model, transition and grid.
pub struct Decoder<'a> {
    model: &'a PredictionModel,
    trans: &'a LinearGaussianTransition,
    propagator: Propagator,
    first_prior: GridDensity,
    mode: HistoryMode,
}

impl<'a> Decoder<'a> {
    pub fn new(model: &'a PredictionModel, trans: &'a LinearGaussianTransition, grid: &Arc<StateGrid>) -> Result<Self> {
        if model.state_dims() != grid.dims() {
            return Err(Error::DimensionMismatch {
                what: "model state dims vs grid dims",
                expected: grid.dims(),
                got: model.state_dims(),
            });
        }
        let propagator = trans.propagator(grid)?;
        let first_prior = propagator.apply(&trans.initial_density(grid)?)?;
        Ok(Self {
            model,
            trans,
            propagator,
            first_prior,
            mode: HistoryMode::default(),
        })
    }

    pub fn with_history_mode(mut self, mode: HistoryMode) -> Self {
        self.mode = mode;
        self
    }

    #[inline]
    pub fn grid(&self) -> &Arc<StateGrid> {
        self.propagator.grid()
    }

    #[inline]
    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    pub fn transition(&self) -> &LinearGaussianTransition {
        self.trans
    }

    /// `CK(p(x₀))`: the prior of the first state.
    pub fn first_prior(&self) -> &GridDensity {
        &self.first_prior
    }

    /// `p(x_k | h_k)` from the previous step's prediction density.
    pub fn history_marginal(&self, prev_prediction: Option<&GaussianParams>) -> Result<GridDensity> {
        match (self.mode, prev_prediction) {
            (HistoryMode::Flat, _) => Ok(GridDensity::uniform(self.grid().clone())),
            (HistoryMode::Propagated, None) => Ok(self.first_prior.clone()),
            (HistoryMode::Propagated, Some(p)) => self.propagator.apply(&discretize_renormalized(p, self.grid())),
        }
    }

    /// One filter update.
    pub fn filter_step(
        &self,
        prev_filter: Option<&GridDensity>,
        prev_prediction: Option<&GaussianParams>,
        prediction: &GaussianParams,
        step: usize,
    ) -> Result<FilterStep> {
        let onestep = match prev_filter {
            None => self.first_prior.clone(),
            Some(f) => self.propagator.apply(f)?,
        };
        let history_marginal = self.history_marginal(prev_prediction)?;
        let pred = discretize_renormalized(prediction, self.grid());
        let filter = combine(&pred, &history_marginal, &onestep, step)?;
        Ok(FilterStep {
            filter,
            onestep,
            history_marginal,
        })
    }

    /// Forward pass over an episode.
    pub fn run_filter(&self, ep: &EpisodeDataset) -> Result<PosteriorSequence> {
        if ep.is_empty() {
            return Err(Error::InsufficientData("empty episode".into()));
        }
        let features = self.model.episode_features(ep)?;
        let k_len = ep.len();
        let mut post = PosteriorSequence::with_capacity(self.grid().clone(), k_len);
        for (k, z) in features.iter().enumerate() {
            let pred = self.model.forward(z, YInput::Mean).gaussian();
            let out = self.filter_step(post.filter.last(), post.predictions.last(), &pred, k)?;
            post.predictions.push(pred);
            post.filter.push(out.filter);
            post.onestep.push(out.onestep);
            post.history_marginal.push(out.history_marginal);
        }
        Ok(post)
    }

    /// Filter, smoother and `m` sampled trajectories.
    pub fn decode(&self, ep: &EpisodeDataset, m: usize, seed: u64) -> Result<PosteriorSequence> {
        let mut post = self.run_filter(ep)?;
        smooth_with(&mut post, &self.propagator)?;
        if m > 0 {
            post.samples = sample_with(&post, &self.propagator, m, seed)?;
        }
        Ok(post)
    }
}

/// `normalize(pred / max(hist, floor) · onestep)`.
pub fn combine(pred: &GridDensity, hist: &GridDensity, onestep: &GridDensity, step: usize) -> Result<GridDensity> {
    pred.ensure_same_grid(hist)?;
    pred.ensure_same_grid(onestep)?;
    let values: Vec<f64> = pred
        .values()
        .iter()
        .zip(hist.values())
        .zip(onestep.values())
        .map(|((p, h), o)| p / h.max(DENSITY_FLOOR) * o)
        .collect();
    normalize_checked(pred.grid(), values, step)
}

pub(crate) fn normalize_checked(grid: &Arc<StateGrid>, mut values: Vec<f64>, step: usize) -> Result<GridDensity> {
    let mass = values.iter().sum::<f64>() * grid.cell_volume();
    if !(mass >= DEGENERATE_MASS) || !mass.is_finite() {
        return Err(Error::DegenerateDensity { step, mass });
    }
    let inv = 1.0 / mass;
    values.iter_mut().for_each(|v| *v *= inv);
    GridDensity::from_values(grid.clone(), values)
}

/// Filter pass from `p(x₀; ω₀)`.
pub fn run_filter(
    ep: &EpisodeDataset,
    model: &PredictionModel,
    trans: &LinearGaussianTransition,
    grid: &Arc<StateGrid>,
) -> Result<PosteriorSequence> {
    Decoder::new(model, trans, grid)?.run_filter(ep)
}

/// Backward smoothing pass; fills `post.smoother`.
pub fn run_smoother(post: &mut PosteriorSequence, trans: &LinearGaussianTransition) -> Result<()> {
    let prop = trans.propagator(post.grid())?;
    smooth_with(post, &prop)
}

pub(crate) fn smooth_with(post: &mut PosteriorSequence, prop: &Propagator) -> Result<()> {
    let k_len = post.len();
    if k_len == 0 {
        return Err(Error::InsufficientData("filter pass has not run".into()));
    }
    let mut smoother = vec![post.filter[k_len - 1].clone(); 1];
    for k in (0..k_len - 1).rev() {
        let next = smoother.last().expect("non-empty");
        let ratio: Vec<f64> = next
            .values()
            .iter()
            .zip(post.onestep[k + 1].values())
            .map(|(s, o)| if *s > 0.0 { s / o.max(DENSITY_FLOOR) } else { 0.0 })
            .collect();
        let back = prop.adjoint(&ratio);
        let values: Vec<f64> = post.filter[k].values().iter().zip(&back).map(|(f, b)| f * b).collect();
        smoother.push(normalize_checked(post.grid(), values, k)?);
    }
    smoother.reverse();
    post.smoother = smoother;
    Ok(())
}

/// Draws `m` trajectories from `p(x_{1:K} | s_{1:K})` by backward sampling.
///
/// Trajectory `i` uses its own stream derived from `(seed, i)`, so results
/// do not depend on `m` or on evaluation order.
pub fn sample_trajectories(
    post: &PosteriorSequence,
    trans: &LinearGaussianTransition,
    m: usize,
    seed: u64,
) -> Result<Vec<Matrix>> {
    let prop = trans.propagator(post.grid())?;
    sample_with(post, &prop, m, seed)
}

fn sample_with(post: &PosteriorSequence, prop: &Propagator, m: usize, seed: u64) -> Result<Vec<Matrix>> {
    if !post.is_smoothed() {
        return Err(Error::InsufficientData("smoother pass has not run".into()));
    }
    let k_len = post.len();
    let grid = post.grid();
    let dims = grid.dims();
    let mut out = Vec::with_capacity(m);
    let mut weights = vec![0.0; grid.len()];
    for i in 0..m {
        let mut rng = crate::seed::rng(seed, "trajectory", i as u64);
        let mut traj = Matrix::zeros(k_len, dims);
        let mut cell = draw(post.smoother[k_len - 1].values(), rng.random());
        traj.row_mut(k_len - 1).copy_from_slice(&grid.point(cell)[..dims]);
        for k in (0..k_len - 1).rev() {
            let row = prop.transition_row(cell);
            let f = post.filter[k].values();
            let mut total = 0.0;
            for ((w, r), fv) in weights.iter_mut().zip(&row).zip(f) {
                *w = r * fv;
                total += *w;
            }
            let u: f64 = rng.random();
            cell = if total > 0.0 { draw(&weights, u) } else { draw(f, u) };
            traj.row_mut(k).copy_from_slice(&grid.point(cell)[..dims]);
        }
        out.push(traj);
    }
    Ok(out)
}

/// Inverse-CDF draw of a cell index from unnormalized weights.
fn draw(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            acc += w;
            last = i;
            if acc > target {
                return i;
            }
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FeatureScaling;
    use crate::densities::{discretize, total_variation};
    use crate::prediction::{Head, LinearPredictor, ModelKind};

    fn passthrough(sigma: f64) -> PredictionModel {
        let head = LinearPredictor {
            weights: vec![1.0],
            bias: 0.0,
            log_sigma: sigma.ln(),
        };
        PredictionModel::from_head(ModelKind::Ddd, 0, 1, FeatureScaling::identity(1), Head::Linear(head)).unwrap()
    }

    fn grid() -> Arc<StateGrid> {
        Arc::new(StateGrid::default_line())
    }

    #[test]
    fn uninformative_prediction_coasts_on_dynamics() {
        let g = grid();
        let trans = LinearGaussianTransition::ar1(0.9, 0.0, 0.1).unwrap();
        let model = passthrough(0.2);
        let dec = Decoder::new(&model, &trans, &g).unwrap();
        let prev = discretize(&GaussianParams::scalar(0.4, 0.1).unwrap(), &g).unwrap();
        let hist = dec.history_marginal(None).unwrap();
        let ck = dec.propagator().apply(&prev).unwrap();
        let out = combine(&hist, &hist, &ck, 1).unwrap();
        assert!(total_variation(&out, &ck).unwrap() < 1e-12);
    }

    #[test]
    fn first_step_filter_is_prediction_density() {
        let g = grid();
        let trans = LinearGaussianTransition::ar1(0.9, 0.0, 0.1).unwrap();
        let model = passthrough(0.2);
        let ep = EpisodeDataset::new(Matrix::column(vec![0.3]), None).unwrap();
        let post = run_filter(&ep, &model, &trans, &g).unwrap();
        assert_eq!(post.len(), 1);
        let pred = discretize_renormalized(&GaussianParams::scalar(0.3, 0.2).unwrap(), &g);
        assert!(total_variation(&post.filter[0], &pred).unwrap() < 1e-12);
    }

    #[test]
    fn delta_prior_filter_mean_between_prior_and_prediction() {
        let g = grid();
        let trans = LinearGaussianTransition::random_walk(&[0.2], GaussianParams::scalar(0.0, 1.0).unwrap()).unwrap();
        let model = passthrough(0.3);
        let dec = Decoder::new(&model, &trans, &g).unwrap().with_history_mode(HistoryMode::Flat);
        let prior = GridDensity::delta(g.clone(), &[0.0]);
        let x0 = g.point(g.cell_of(&[0.0]))[0];
        let out = dec
            .filter_step(Some(&prior), None, &GaussianParams::scalar(1.0, 0.3).unwrap(), 1)
            .unwrap();
        let m = out.filter.mean()[0];
        assert!(m > x0 && m < 1.0);
        // product of N(x0, 0.2²) and N(1, 0.3²)
        let expect = (x0 / 0.04 + 1.0 / 0.09) / (1.0 / 0.04 + 1.0 / 0.09);
        assert!((m - expect).abs() < 1e-6);
    }

    #[test]
    fn constant_uninformative_input_reaches_stationarity() {
        let g = grid();
        let trans = LinearGaussianTransition::ar1(0.9, 0.0, 0.1).unwrap();
        // pred equals the history marginal when the model ignores s and
        // outputs the stationary density: ratio ≡ 1 after the first step
        let st = trans.initial.clone();
        let head = LinearPredictor::constant(1, st.mean[0], st.std[0]);
        let model = PredictionModel::from_head(ModelKind::Ddd, 0, 1, FeatureScaling::identity(1), Head::Linear(head)).unwrap();
        let ep = EpisodeDataset::new(Matrix::column(vec![2.0; 60]), None).unwrap();
        let post = run_filter(&ep, &model, &trans, &g).unwrap();
        let stationary = discretize(&st, &g).unwrap();
        assert!(total_variation(&post.filter[49], &stationary).unwrap() < 0.01);
    }

    #[test]
    fn smoother_ends_at_filter_and_sampling_is_deterministic() {
        let g = grid();
        let trans = LinearGaussianTransition::ar1(0.9, 0.0, 0.1).unwrap();
        let model = passthrough(0.15);
        let obs: Vec<f64> = (0..30).map(|k| (k as f64 * 0.3).sin() * 0.3).collect();
        let ep = EpisodeDataset::new(Matrix::column(obs), None).unwrap();
        let dec = Decoder::new(&model, &trans, &g).unwrap();
        let post = dec.decode(&ep, 3, 5).unwrap();
        let k = post.len() - 1;
        assert_eq!(post.smoother[k].values(), post.filter[k].values());
        for d in post.smoother.iter().chain(&post.filter) {
            assert!((d.mass() - 1.0).abs() < 1e-9);
        }
        let again = sample_trajectories(&post, &trans, 3, 5).unwrap();
        assert_eq!(post.samples, again);
        assert_ne!(post.samples[0], post.samples[1]);
    }

    #[test]
    fn wide_transition_backward_kernel_follows_filter() {
        let g = Arc::new(StateGrid::line(-2.0, 2.0, 40).unwrap());
        let trans = LinearGaussianTransition::random_walk(&[50.0], GaussianParams::scalar(0.0, 1.0).unwrap()).unwrap();
        let model = passthrough(0.3);
        let ep = EpisodeDataset::new(Matrix::column(vec![0.5, -0.5]), None).unwrap();
        let dec = Decoder::new(&model, &trans, &g).unwrap();
        let post = dec.decode(&ep, 4000, 1).unwrap();
        let mean0: f64 = post.samples.iter().map(|t| t.get(0, 0)).sum::<f64>() / 4000.0;
        let f = &post.filter[0];
        let se = f.std()[0] / (4000f64).sqrt();
        assert!((mean0 - f.mean()[0]).abs() < 4.0 * se);
    }

    #[test]
    fn rescaling_unnormalized_product_is_invisible() {
        let g = grid();
        let a = discretize(&GaussianParams::scalar(0.1, 0.3).unwrap(), &g).unwrap();
        let b = discretize(&GaussianParams::scalar(-0.2, 0.5).unwrap(), &g).unwrap();
        let c = discretize(&GaussianParams::scalar(0.0, 0.4).unwrap(), &g).unwrap();
        let scaled = GridDensity::from_values(g.clone(), b.values().iter().map(|v| v * 1e-30).collect()).unwrap();
        let x = combine(&a, &b, &c, 0).unwrap();
        let y = combine(&a, &scaled, &c, 0).unwrap();
        assert!(total_variation(&x, &y).unwrap() < 1e-12);
    }

    #[test]
    fn disjoint_supports_are_degenerate() {
        let g = grid();
        let a = discretize(&GaussianParams::scalar(-5.0, 0.05).unwrap(), &g).unwrap();
        let c = discretize(&GaussianParams::scalar(5.0, 0.05).unwrap(), &g).unwrap();
        let u = GridDensity::uniform(g.clone());
        assert!(matches!(combine(&a, &u, &c, 3), Err(Error::DegenerateDensity { step: 3, .. })));
    }
}
