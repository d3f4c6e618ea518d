//! Generative state-space baseline.
//!
//! The observation model is fitted by maximum likelihood on observed
//! states and decoded with an ordinary grid Bayes filter:
//!
//! * `Gaussian`: `s_k ~ N(c + W x_k, Σ)` with a full residual covariance.
//! * `Poisson`: spike counts with a quadratic log-rate per cell,
//!   `log λ_i(x) = β_i · [1, x, x², (x₁x₂)]`, fitted by IRLS.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::EpisodeDataset;
use crate::densities::{GridDensity, StateGrid};
use crate::error::{Error, Result};
use crate::inference::{normalize_checked, smooth_with, PosteriorSequence};
use crate::learning::{all_states, fit_transition, Dynamics};
use crate::transition::LinearGaussianTransition;

const IRLS_ITERATIONS: usize = 100;
const IRLS_TOLERANCE: f64 = 1e-9;
/// Ridge added to the IRLS normal equations.
const IRLS_RIDGE: f64 = 1e-6;
/// Cap on the linear predictor so rates stay finite off the data range.
const MAX_LOG_RATE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmissionKind {
    Gaussian,
    Poisson,
}

/// `N(offset + weights · x, Σ)`; `precision = Σ⁻¹`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianEmission {
    /// Row-major `channels × dims`.
    pub weights: Vec<f64>,
    pub offset: Vec<f64>,
    /// Row-major `channels × channels`.
    pub precision: Vec<f64>,
    pub log_det_cov: f64,
}

/// Poisson counts with quadratic log-rate in standardized position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonEmission {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// Per cell, coefficients on [`quadratic_features`].
    pub coef: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Emission {
    Gaussian(GaussianEmission),
    Poisson(PoissonEmission),
}

/// Fitted baseline: emission model plus state transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ssm {
    pub emission: Emission,
    pub trans: LinearGaussianTransition,
}

/// `[1, z₁, …, z_d, z₁², …, z_d², z₁z₂ (2-D only)]`.
pub fn quadratic_features(z: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(1 + 2 * z.len() + 1);
    f.push(1.0);
    f.extend_from_slice(z);
    f.extend(z.iter().map(|v| v * v));
    if z.len() == 2 {
        f.push(z[0] * z[1]);
    }
    f
}

fn stacked(episodes: &[EpisodeDataset]) -> Result<Vec<(&[f64], &[f64])>> {
    let states = all_states(episodes).ok_or_else(|| Error::InvalidConfig("the state-space baseline needs observed states".into()))?;
    Ok(episodes
        .iter()
        .zip(states)
        .flat_map(|(ep, st)| (0..ep.len()).map(move |k| (ep.observations.row(k), st.row(k))))
        .collect())
}

impl GaussianEmission {
    pub fn fit(episodes: &[EpisodeDataset]) -> Result<Self> {
        let rows = stacked(episodes)?;
        let (n_ch, dims) = (rows[0].0.len(), rows[0].1.len());
        if rows.len() <= dims + 1 {
            return Err(Error::InsufficientData(format!("{} points cannot fit a linear emission", rows.len())));
        }
        let x = DMatrix::from_fn(rows.len(), dims + 1, |r, c| if c < dims { rows[r].1[c] } else { 1.0 });
        let s = DMatrix::from_fn(rows.len(), n_ch, |r, c| rows[r].0[c]);
        let xtx = x.transpose() * &x;
        let beta = xtx
            .cholesky()
            .ok_or_else(|| Error::DegenerateInput("states are collinear".into()))?
            .solve(&(x.transpose() * &s));
        let resid = &s - &x * &beta;
        let mut cov = resid.transpose() * &resid / rows.len() as f64;
        let jitter = 1e-9 * cov.trace() / n_ch as f64;
        for i in 0..n_ch {
            cov[(i, i)] += jitter.max(1e-12);
        }
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::DegenerateInput("residual covariance is not positive definite".into()))?;
        let log_det_cov = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(Self {
            weights: (0..n_ch).flat_map(|c| (0..dims).map(move |d| (c, d))).map(|(c, d)| beta[(d, c)]).collect(),
            offset: (0..n_ch).map(|c| beta[(dims, c)]).collect(),
            precision: (0..n_ch).flat_map(|i| (0..n_ch).map(move |j| (i, j))).map(|(i, j)| precision[(i, j)]).collect(),
            log_det_cov,
        })
    }

    fn channels(&self) -> usize {
        self.offset.len()
    }

    /// Log-likelihood of `s` at every grid cell.
    pub fn log_likelihood(&self, s: &[f64], grid: &StateGrid) -> Vec<f64> {
        let n = self.channels();
        let dims = grid.dims();
        let p = DMatrix::from_row_slice(n, n, &self.precision);
        let w = DMatrix::from_row_slice(n, dims, &self.weights);
        let r = DVector::from_iterator(n, s.iter().zip(&self.offset).map(|(a, b)| a - b));
        let pr = &p * &r;
        let u = w.transpose() * &pr;
        let a = w.transpose() * &p * &w;
        let constant = -0.5 * (r.dot(&pr) + self.log_det_cov + n as f64 * (2.0 * std::f64::consts::PI).ln());
        (0..grid.len())
            .map(|i| {
                let x = &grid.point(i)[..dims];
                let mut q = 0.0;
                for d in 0..dims {
                    q += x[d] * u[d];
                    for e in 0..dims {
                        q -= 0.5 * x[d] * a[(d, e)] * x[e];
                    }
                }
                constant + q
            })
            .collect()
    }
}

impl PoissonEmission {
    pub fn fit(episodes: &[EpisodeDataset]) -> Result<Self> {
        let rows = stacked(episodes)?;
        let dims = rows[0].1.len();
        let n = rows.len() as f64;
        let center: Vec<f64> = (0..dims).map(|d| rows.iter().map(|r| r.1[d]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..dims)
            .map(|d| {
                let v = rows.iter().map(|r| (r.1[d] - center[d]).powi(2)).sum::<f64>() / n;
                v.sqrt().max(1e-9)
            })
            .collect();
        let phi: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let z: Vec<f64> = (0..dims).map(|d| (r.1[d] - center[d]) / scale[d]).collect();
                quadratic_features(&z)
            })
            .collect();
        let p = phi[0].len();
        let design = DMatrix::from_fn(rows.len(), p, |r, c| phi[r][c]);
        let coef = (0..rows[0].0.len())
            .map(|cell| {
                let y: Vec<f64> = rows.iter().map(|r| r.0[cell]).collect();
                irls(&design, &y)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { center, scale, coef })
    }

    fn log_rates(&self, point: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = point.iter().zip(&self.center).zip(&self.scale).map(|((x, c), s)| (x - c) / s).collect();
        let f = quadratic_features(&z);
        self.coef
            .iter()
            .map(|b| b.iter().zip(&f).map(|(b, f)| b * f).sum::<f64>().min(MAX_LOG_RATE))
            .collect()
    }
}

/// Poisson regression with log link by iteratively reweighted least squares.
fn irls(design: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = design.shape();
    let mean = y.iter().sum::<f64>() / n as f64;
    let mut beta = DVector::zeros(p);
    beta[0] = mean.max(1e-3).ln();
    for _ in 0..IRLS_ITERATIONS {
        let eta = design * &beta;
        let mut xtwx = DMatrix::<f64>::identity(p, p) * IRLS_RIDGE;
        let mut xtwz = DVector::<f64>::zeros(p);
        for r in 0..n {
            let e = eta[r].min(MAX_LOG_RATE);
            let mu = e.exp().max(1e-10);
            let z = e + (y[r] - mu) / mu;
            let row = design.row(r);
            for i in 0..p {
                xtwz[i] += row[i] * mu * z;
                for j in 0..p {
                    xtwx[(i, j)] += row[i] * mu * row[j];
                }
            }
        }
        let next = xtwx
            .cholesky()
            .ok_or_else(|| Error::DegenerateInput("IRLS normal equations are singular".into()))?
            .solve(&xtwz);
        let step = (&next - &beta).amax();
        beta = next;
        if !beta.iter().all(|b| b.is_finite()) {
            return Err(Error::DegenerateInput("IRLS diverged".into()));
        }
        if step < IRLS_TOLERANCE {
            break;
        }
    }
    Ok(beta.iter().copied().collect())
}

/// Per-cell precomputation for Poisson decoding.
struct PoissonTable {
    /// `log_rate[cell][grid index]`.
    log_rate: Vec<Vec<f64>>,
    /// `Σ_i λ_i(x)` per grid index.
    total_rate: Vec<f64>,
}

impl PoissonTable {
    fn new(em: &PoissonEmission, grid: &StateGrid) -> Self {
        let dims = grid.dims();
        let per_point: Vec<Vec<f64>> = (0..grid.len()).map(|i| em.log_rates(&grid.point(i)[..dims])).collect();
        let cells = em.coef.len();
        let log_rate = (0..cells).map(|c| per_point.iter().map(|r| r[c]).collect()).collect();
        let total_rate = per_point.iter().map(|r| r.iter().map(|l| l.exp()).sum()).collect();
        Self { log_rate, total_rate }
    }

    fn log_likelihood(&self, counts: &[f64]) -> Vec<f64> {
        let mut ll: Vec<f64> = self.total_rate.iter().map(|t| -t).collect();
        let mut log_fact = 0.0;
        for (c, &y) in counts.iter().enumerate() {
            if y > 0.0 {
                log_fact += ln_factorial(y);
                ll.iter_mut().zip(&self.log_rate[c]).for_each(|(l, r)| *l += y * r);
            }
        }
        ll.iter_mut().for_each(|l| *l -= log_fact);
        ll
    }
}

fn ln_factorial(y: f64) -> f64 {
    statrs::function::gamma::ln_gamma(y + 1.0)
}

impl Ssm {
    /// Fits emission and transition on episodes with observed states.
    pub fn fit(episodes: &[EpisodeDataset], emission: EmissionKind, dynamics: Dynamics) -> Result<Self> {
        let states = all_states(episodes).ok_or_else(|| Error::InvalidConfig("the state-space baseline needs observed states".into()))?;
        let trans = fit_transition(dynamics, &states)?;
        let emission = match emission {
            EmissionKind::Gaussian => Emission::Gaussian(GaussianEmission::fit(episodes)?),
            EmissionKind::Poisson => Emission::Poisson(PoissonEmission::fit(episodes)?),
        };
        Ok(Self { emission, trans })
    }

    fn channels(&self) -> usize {
        match &self.emission {
            Emission::Gaussian(g) => g.channels(),
            Emission::Poisson(p) => p.coef.len(),
        }
    }

    /// Bayes filter and smoother with the fitted emission.
    pub fn decode(&self, ep: &EpisodeDataset, grid: &Arc<StateGrid>) -> Result<PosteriorSequence> {
        if ep.is_empty() {
            return Err(Error::InsufficientData("empty episode".into()));
        }
        if ep.channels() != self.channels() {
            return Err(Error::DimensionMismatch {
                what: "episode channels vs emission channels",
                expected: self.channels(),
                got: ep.channels(),
            });
        }
        if self.trans.dims() != grid.dims() {
            return Err(Error::DimensionMismatch {
                what: "transition dims vs grid dims",
                expected: grid.dims(),
                got: self.trans.dims(),
            });
        }
        let prop = self.trans.propagator(grid)?;
        let first = prop.apply(&self.trans.initial_density(grid)?)?;
        let table = match &self.emission {
            Emission::Poisson(p) => Some(PoissonTable::new(p, grid)),
            Emission::Gaussian(_) => None,
        };
        let mut post = PosteriorSequence::with_capacity(grid.clone(), ep.len());
        for k in 0..ep.len() {
            let s = ep.observations.row(k);
            let ll = match (&self.emission, &table) {
                (Emission::Gaussian(g), _) => g.log_likelihood(s, grid),
                (Emission::Poisson(_), Some(t)) => t.log_likelihood(s),
                (Emission::Poisson(_), None) => unreachable!("table is built for Poisson emissions"),
            };
            let onestep = match post.filter.last() {
                Some(prev) => prop.apply(prev)?,
                None => first.clone(),
            };
            post.filter.push(bayes_update(&onestep, &ll, k)?);
            post.onestep.push(onestep.clone());
            post.history_marginal.push(GridDensity::uniform(grid.clone()));
        }
        smooth_with(&mut post, &prop)?;
        Ok(post)
    }
}

/// `normalize(onestep · exp(ll))`, evaluated in log space.
fn bayes_update(onestep: &GridDensity, ll: &[f64], step: usize) -> Result<GridDensity> {
    let logs: Vec<f64> = onestep
        .values()
        .iter()
        .zip(ll)
        .map(|(o, l)| if *o > 0.0 { o.ln() + l } else { f64::NEG_INFINITY })
        .collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::DegenerateDensity { step, mass: 0.0 });
    }
    normalize_checked(onestep.grid(), logs.iter().map(|l| (l - peak).exp()).collect(), step)
}
