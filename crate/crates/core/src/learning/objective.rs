//! The expected log-likelihood, the history-term penalty and their gradients.
//!
//! For each step `k` the posterior target `p_k` (smoother density, or a
//! point mass at the observed state) is compared with the history marginal
//! `q_k = CK(pred_{k-1})` through the cross-entropy
//! `CE_k = KL(p_k ‖ q_k) + ℍ(p_k) = −∫ p_k log q_k`. The regularized
//! objective is
//!
//! ```text
//! J(Ω) = Σ_k E[log p(x_k | s_k, h_k; Ω)] − λ Σ_k CE_k(Ω)²
//! ```
//!
//! Because the transition is separable and the prediction covariance is
//! diagonal, `q_k` factors over state axes and so does `CE_k`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{EpisodeDataset, Matrix};
use crate::densities::{axis_gaussian, entropy, Axis, GridDensity, StateGrid, DENSITY_FLOOR};
use crate::error::{Error, Result};
use crate::inference::PosteriorSequence;
use crate::prediction::{gaussian_log_grad, PredictionModel, YInput};
use crate::transition::{LinearGaussianTransition, Propagator};

/// Terms of the expected complete-data log-likelihood and its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QBreakdown {
    pub expected_log_initial: f64,
    pub expected_log_transition: f64,
    pub expected_log_prediction: f64,
    /// `Σ_k KL(p_k ‖ q_k)`.
    pub kl_sum: f64,
    /// `Σ_k ℍ(p_k)`.
    pub entropy_sum: f64,
    /// `Σ_k (KL_k + ℍ_k)²`.
    pub penalty_sum: f64,
    /// Expected terms plus `kl_sum`; the entropy is reported separately.
    pub q_greedy: f64,
    pub q_regularized: f64,
    /// Steps whose `KL_k + ℍ_k` fell below the diagnostic threshold.
    pub below_threshold: usize,
    pub steps: usize,
}

impl QBreakdown {
    /// Sum of the three expected log-likelihood terms.
    pub fn expected_terms(&self) -> f64 {
        self.expected_log_initial + self.expected_log_transition + self.expected_log_prediction
    }

    /// Score ranking history lengths in the greedy search: expected terms
    /// plus `Σ (KL_k + ℍ_k)`.
    pub fn greedy_score(&self) -> f64 {
        self.q_greedy + self.entropy_sum
    }

    fn finish(mut self, lambda: f64) -> Self {
        self.q_greedy = self.expected_terms() + self.kl_sum;
        self.q_regularized = self.expected_terms() - lambda * self.penalty_sum;
        self
    }
}

/// `(CE, ∂CE/∂μ, ∂CE/∂σ)` of one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisCrossEntropy {
    pub value: f64,
    pub dmu: f64,
    pub dsigma: f64,
}

/// `−∫ p log CK(N(μ, σ²))` along axis `d`, with its derivatives in μ and σ.
///
/// `p` is the target marginal on that axis (density values per cell).
pub fn axis_cross_entropy(
    p: &[f64],
    axis: &Axis,
    prop: &Propagator,
    d: usize,
    mu: f64,
    sigma: f64,
    with_grad: bool,
) -> AxisCrossEntropy {
    let w = axis.width();
    let dens = axis_gaussian(axis, mu, sigma);
    let q = prop.forward_axis(d, &dens);
    let mut value = 0.0;
    let mut r = vec![0.0; q.len()];
    for i in 0..q.len() {
        if p[i] > 0.0 {
            if q[i] > DENSITY_FLOOR {
                value -= p[i] * q[i].ln();
                r[i] = p[i] / q[i];
            } else {
                value -= p[i] * DENSITY_FLOOR.ln();
            }
        }
    }
    value *= w;
    if !with_grad {
        return AxisCrossEntropy {
            value,
            dmu: 0.0,
            dsigma: 0.0,
        };
    }
    // ∂CE/∂dens_j = −Δ (Pᵀ r)_j; dens_j ∝ exp(−(x_j−μ)²/2σ²) / Z
    let g = prop.adjoint_axis(d, &r);
    let s2 = sigma * sigma;
    let (mut tbar, mut vbar) = (0.0, 0.0);
    for (j, dj) in dens.iter().enumerate() {
        let e = axis.center(j) - mu;
        tbar += dj * e / s2;
        vbar += dj * e * e / (s2 * sigma);
    }
    tbar *= w;
    vbar *= w;
    let (mut dmu, mut dsigma) = (0.0, 0.0);
    for (j, dj) in dens.iter().enumerate() {
        if *dj == 0.0 || g[j] == 0.0 {
            continue;
        }
        let e = axis.center(j) - mu;
        let gj = -w * g[j] * dj;
        dmu += gj * (e / s2 - tbar);
        dsigma += gj * (e * e / (s2 * sigma) - vbar);
    }
    AxisCrossEntropy { value, dmu, dsigma }
}

/// Posterior summary needed at one step: per-axis marginals and entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTarget {
    pub marginals: Vec<Vec<f64>>,
    pub entropy: f64,
}

impl StepTarget {
    pub fn from_density(p: &GridDensity) -> Self {
        Self {
            marginals: (0..p.grid().dims()).map(|d| p.marginal(d)).collect(),
            entropy: entropy(p),
        }
    }

    /// Point mass in the cell holding `x`.
    pub fn point(grid: &StateGrid, x: &[f64]) -> Self {
        let marginals = grid
            .axes()
            .iter()
            .zip(x)
            .map(|(a, &v)| {
                let mut m = vec![0.0; a.cells];
                m[a.cell_of(v)] = 1.0 / a.width();
                m
            })
            .collect();
        Self {
            marginals,
            entropy: grid.cell_volume().ln(),
        }
    }
}

/// One episode prepared for a fixed model architecture.
#[derive(Debug, Clone)]
pub struct EpisodeWork {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<StepTarget>,
    /// Observed states (one trajectory) or posterior samples.
    pub trajectories: Vec<Matrix>,
}

impl EpisodeWork {
    #[inline]
    pub fn len(&self) -> usize {
        self.features.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Value of the objective split into its parts (sums over steps).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveValue {
    pub log_prediction: f64,
    pub penalty: f64,
    pub value: f64,
}

/// Targets, features and trajectories of a set of episodes on one grid.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    grid: Arc<StateGrid>,
    propagator: Propagator,
    first_prior: Vec<Vec<f64>>,
    pub episodes: Vec<EpisodeWork>,
}

impl TrainingSet {
    fn base(model: &PredictionModel, trans: &LinearGaussianTransition, grid: &Arc<StateGrid>) -> Result<(Propagator, Vec<Vec<f64>>)> {
        if model.state_dims() != grid.dims() {
            return Err(Error::DimensionMismatch {
                what: "model state dims vs grid dims",
                expected: grid.dims(),
                got: model.state_dims(),
            });
        }
        let prop = trans.propagator(grid)?;
        let first = prop.apply(&trans.initial_density(grid)?)?;
        let marg = (0..grid.dims()).map(|d| first.marginal(d)).collect();
        Ok((prop, marg))
    }

    /// Observed-state training: expectations collapse onto the states and
    /// each posterior target is a point mass.
    pub fn observed(
        episodes: &[EpisodeDataset],
        model: &PredictionModel,
        trans: &LinearGaussianTransition,
        grid: &Arc<StateGrid>,
    ) -> Result<Self> {
        let (propagator, first_prior) = Self::base(model, trans, grid)?;
        let mut work = Vec::with_capacity(episodes.len());
        for ep in episodes {
            let states = ep.require_states()?;
            if states.cols() != grid.dims() {
                return Err(Error::DimensionMismatch {
                    what: "state columns",
                    expected: grid.dims(),
                    got: states.cols(),
                });
            }
            work.push(EpisodeWork {
                features: model.episode_features(ep)?,
                targets: (0..ep.len()).map(|k| StepTarget::point(grid, states.row(k))).collect(),
                trajectories: vec![states.clone()],
            });
        }
        Ok(Self {
            grid: grid.clone(),
            propagator,
            first_prior,
            episodes: work,
        })
    }

    /// Latent-state training from smoothed posteriors with samples.
    pub fn from_posteriors(
        episodes: &[EpisodeDataset],
        posts: &[PosteriorSequence],
        model: &PredictionModel,
        trans: &LinearGaussianTransition,
    ) -> Result<Self> {
        let grid = posts
            .first()
            .map(|p| p.grid().clone())
            .ok_or_else(|| Error::InsufficientData("no posteriors".into()))?;
        if episodes.len() != posts.len() {
            return Err(Error::LengthMismatch(episodes.len(), posts.len()));
        }
        let (propagator, first_prior) = Self::base(model, trans, &grid)?;
        let mut work = Vec::with_capacity(episodes.len());
        for (ep, post) in episodes.iter().zip(posts) {
            if post.samples.is_empty() {
                return Err(Error::MissingSamples);
            }
            if !post.is_smoothed() || post.len() != ep.len() {
                return Err(Error::LengthMismatch(ep.len(), post.smoother.len()));
            }
            work.push(EpisodeWork {
                features: model.episode_features(ep)?,
                targets: post.smoother.iter().map(StepTarget::from_density).collect(),
                trajectories: post.samples.clone(),
            });
        }
        Ok(Self {
            grid,
            propagator,
            first_prior,
            episodes: work,
        })
    }

    #[inline]
    pub fn grid(&self) -> &Arc<StateGrid> {
        &self.grid
    }

    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(EpisodeWork::len).sum()
    }

    /// `CE_k` against a prediction at step k-1, with gradients if requested.
    fn step_ce(&self, target: &StepTarget, mean: &[f64], std: &[f64], with_grad: bool) -> (f64, Vec<f64>, Vec<f64>) {
        let dims = self.grid.dims();
        let mut ce = 0.0;
        let mut dmu = vec![0.0; dims];
        let mut dsig = vec![0.0; dims];
        for d in 0..dims {
            let a = axis_cross_entropy(
                &target.marginals[d],
                self.grid.axis(d),
                &self.propagator,
                d,
                mean[d],
                std[d],
                with_grad,
            );
            ce += a.value;
            dmu[d] = a.dmu;
            dsig[d] = a.dsigma;
        }
        (ce, dmu, dsig)
    }

    /// `CE` of the first step, whose history marginal is `CK(p(x₀))`.
    fn first_ce(&self, target: &StepTarget) -> f64 {
        (0..self.grid.dims())
            .map(|d| {
                let w = self.grid.axis(d).width();
                -target.marginals[d]
                    .iter()
                    .zip(&self.first_prior[d])
                    .filter(|(p, _)| **p > 0.0)
                    .map(|(p, q)| p * q.max(DENSITY_FLOOR).ln())
                    .sum::<f64>()
                    * w
            })
            .sum()
    }

    /// Per-step `KL_k + ℍ_k` for every episode.
    pub fn cross_entropies(&self, model: &PredictionModel) -> Vec<Vec<f64>> {
        self.episodes
            .iter()
            .map(|ep| {
                let mut out = Vec::with_capacity(ep.len());
                let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
                for (k, z) in ep.features.iter().enumerate() {
                    let ce = match &prev {
                        None => self.first_ce(&ep.targets[k]),
                        Some((m, s)) => self.step_ce(&ep.targets[k], m, s, false).0,
                    };
                    out.push(ce);
                    let pass = model.forward(z, YInput::Mean);
                    prev = Some((pass.mean, pass.std));
                }
                out
            })
            .collect()
    }

    /// `Σ_k mean_m log p(x_k^m | s_k, h_k; Ω)`.
    pub fn expected_log_prediction(&self, model: &PredictionModel) -> f64 {
        let mut total = 0.0;
        for ep in &self.episodes {
            let m = ep.trajectories.len() as f64;
            for (k, z) in ep.features.iter().enumerate() {
                if model.state_dims() == 1 {
                    let pass = model.forward(z, YInput::Mean);
                    total += ep
                        .trajectories
                        .iter()
                        .map(|t| crate::densities::log_normal_pdf(t.get(k, 0), pass.mean[0], pass.std[0]))
                        .sum::<f64>()
                        / m;
                } else {
                    total += ep
                        .trajectories
                        .iter()
                        .map(|t| model.log_density_features(z, t.row(k)))
                        .sum::<f64>()
                        / m;
                }
            }
        }
        total
    }

    /// `J(Ω)` (sums over steps and episodes).
    pub fn objective(&self, model: &PredictionModel, lambda: f64) -> ObjectiveValue {
        let log_prediction = self.expected_log_prediction(model);
        let penalty: f64 = self
            .cross_entropies(model)
            .iter()
            .flatten()
            .map(|c| c * c)
            .sum();
        ObjectiveValue {
            log_prediction,
            penalty,
            value: log_prediction - lambda * penalty,
        }
    }

    /// Adds `∇_Ω` of the objective restricted to steps `range` of episode
    /// `e` into `grad`. A step's output feeds both its own likelihood and
    /// the next step's history marginal.
    pub fn accumulate_gradient(
        &self,
        model: &PredictionModel,
        lambda: f64,
        e: usize,
        range: std::ops::Range<usize>,
        grad: &mut [f64],
    ) {
        let ep = &self.episodes[e];
        let dims = model.state_dims();
        let m = ep.trajectories.len() as f64;
        for k in range {
            let z = &ep.features[k];
            let pass = model.forward(z, YInput::Mean);
            let mut dmu = vec![0.0; dims];
            let mut dsig = vec![0.0; dims];
            if dims == 1 {
                for t in &ep.trajectories {
                    let (a, b) = gaussian_log_grad(t.get(k, 0), pass.mean[0], pass.std[0]);
                    dmu[0] += a / m;
                    dsig[0] += b / m;
                }
            } else {
                let mut tmp = vec![0.0; grad.len()];
                for t in &ep.trajectories {
                    let x = t.row(k);
                    let given = model.forward(z, model.y_input_for(x));
                    let mut gm = vec![0.0; dims];
                    let mut gs = vec![0.0; dims];
                    for d in 0..dims {
                        let (a, b) = gaussian_log_grad(x[d], given.mean[d], given.std[d]);
                        gm[d] = a / m;
                        gs[d] = b / m;
                    }
                    model.backward(&given, &gm, &gs, &mut tmp);
                }
                grad.iter_mut().zip(&tmp).for_each(|(g, t)| *g += t);
            }
            if lambda > 0.0 && k + 1 < ep.len() {
                let (ce, cm, cs) = self.step_ce(&ep.targets[k + 1], &pass.mean, &pass.std, true);
                for d in 0..dims {
                    dmu[d] -= 2.0 * lambda * ce * cm[d];
                    dsig[d] -= 2.0 * lambda * ce * cs[d];
                }
            }
            model.backward(&pass, &dmu, &dsig, grad);
        }
    }

    /// Full gradient of `J(Ω)`.
    pub fn gradient(&self, model: &PredictionModel, lambda: f64) -> Vec<f64> {
        let mut grad = vec![0.0; model.num_params()];
        for (e, ep) in self.episodes.iter().enumerate() {
            self.accumulate_gradient(model, lambda, e, 0..ep.len(), &mut grad);
        }
        grad
    }

    /// The full Q breakdown for `model` and `trans` under these targets.
    pub fn q_breakdown(
        &self,
        model: &PredictionModel,
        trans: &LinearGaussianTransition,
        lambda: f64,
        threshold: f64,
    ) -> QBreakdown {
        let mut q = QBreakdown::default();
        let first = trans.first_state_prior();
        for ep in &self.episodes {
            let m = ep.trajectories.len() as f64;
            for t in &ep.trajectories {
                q.expected_log_initial += first.log_pdf(t.row(0)) / m;
                for k in 1..t.rows() {
                    q.expected_log_transition += trans.log_density(t.row(k - 1), t.row(k)) / m;
                }
            }
            q.steps += ep.len();
        }
        q.expected_log_prediction = self.expected_log_prediction(model);
        for (ep, ces) in self.episodes.iter().zip(self.cross_entropies(model)) {
            for (t, ce) in ep.targets.iter().zip(ces) {
                q.entropy_sum += t.entropy;
                q.kl_sum += (ce - t.entropy).max(0.0);
                q.penalty_sum += ce * ce;
                if ce < threshold {
                    q.below_threshold += 1;
                }
            }
        }
        q.finish(lambda)
    }
}

/// Q for one episode, from a smoothed and sampled posterior or (when
/// `post` is `None`) from the episode's observed states.
pub fn compute_q(
    ep: &EpisodeDataset,
    model: &PredictionModel,
    trans: &LinearGaussianTransition,
    grid: &Arc<StateGrid>,
    post: Option<&PosteriorSequence>,
    lambda: f64,
) -> Result<QBreakdown> {
    let set = match post {
        Some(p) => TrainingSet::from_posteriors(std::slice::from_ref(ep), std::slice::from_ref(p), model, trans)?,
        None => TrainingSet::observed(std::slice::from_ref(ep), model, trans, grid)?,
    };
    Ok(set.q_breakdown(model, trans, lambda, 0.0))
}
