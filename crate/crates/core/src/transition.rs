//! Linear-Gaussian state dynamics `x_k = a·x_{k-1} + b + w_k` (per axis) and
//! their action on grid densities.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::Matrix;
use crate::densities::{discretize, discretize_renormalized, GaussianParams, GridDensity, StateGrid};
use crate::error::{Error, Result};

/// Lower bound on the transition noise std, in state units.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Default sanity bound on |a|.
pub const DEFAULT_MAX_ABS_A: f64 = 1.5;

/// Kernel entries below exp(-½·9²) of the column peak are dropped.
const BAND_SIGMAS: f64 = 9.0;

/// AR(1) coefficients for one state axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisDynamics {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

impl AxisDynamics {
    #[inline]
    pub fn mean_from(&self, prev: f64) -> f64 {
        self.a * prev + self.b
    }

    /// Stationary N(b/(1-a), σ²/(1-a²)), when |a| < 1.
    pub fn stationary(&self) -> Option<(f64, f64)> {
        (self.a.abs() < 1.0).then(|| {
            (
                self.b / (1.0 - self.a),
                self.sigma / (1.0 - self.a * self.a).sqrt(),
            )
        })
    }
}

/// State transition `p(x_k | x_{k-1}; ω)` plus the initial density `p(x_0; ω₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianTransition {
    pub axes: Vec<AxisDynamics>,
    pub initial: GaussianParams,
}

impl LinearGaussianTransition {
    pub fn new(axes: Vec<AxisDynamics>, initial: GaussianParams) -> Result<Self> {
        Self::with_bound(axes, initial, DEFAULT_MAX_ABS_A)
    }

    pub fn with_bound(axes: Vec<AxisDynamics>, initial: GaussianParams, max_abs_a: f64) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidConfig(format!(
                "transition must have 1 or 2 axes, got {}",
                axes.len()
            )));
        }
        if initial.dims() != axes.len() {
            return Err(Error::DimensionMismatch {
                what: "initial density dims",
                expected: axes.len(),
                got: initial.dims(),
            });
        }
        for ax in &axes {
            if !(ax.sigma > 0.0) || !ax.sigma.is_finite() {
                return Err(Error::InvalidConfig(format!("sigma_x must be positive, got {}", ax.sigma)));
            }
            if !(ax.a.abs() <= max_abs_a) || !ax.b.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "transition coefficient a = {} outside ±{max_abs_a}",
                    ax.a
                )));
            }
        }
        Ok(Self { axes, initial })
    }

    /// 1-D AR(1) starting from its stationary density.
    pub fn ar1(a: f64, b: f64, sigma: f64) -> Result<Self> {
        let ax = AxisDynamics { a, b, sigma };
        let (m, s) = ax.stationary().ok_or_else(|| {
            Error::InvalidConfig(format!("|a| = {} has no stationary density", a.abs()))
        })?;
        Self::new(vec![ax], GaussianParams::scalar(m, s)?)
    }

    /// Independent per-axis random walk (a = 1, b = 0).
    pub fn random_walk(sigmas: &[f64], initial: GaussianParams) -> Result<Self> {
        let axes = sigmas
            .iter()
            .map(|&sigma| AxisDynamics { a: 1.0, b: 0.0, sigma })
            .collect();
        Self::new(axes, initial)
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    /// Replaces the initial density by the stationary one (when it exists).
    pub fn with_stationary_initial(mut self) -> Self {
        let st: Option<Vec<(f64, f64)>> = self.axes.iter().map(AxisDynamics::stationary).collect();
        if let Some(st) = st {
            self.initial = GaussianParams {
                mean: st.iter().map(|p| p.0).collect(),
                std: st.iter().map(|p| p.1).collect(),
            };
        }
        self
    }

    /// `log p(x | x_prev)`.
    pub fn log_density(&self, prev: &[f64], x: &[f64]) -> f64 {
        self.axes
            .iter()
            .enumerate()
            .map(|(d, ax)| crate::densities::log_normal_pdf(x[d], ax.mean_from(prev[d]), ax.sigma))
            .sum()
    }

    /// Prior of the first observed state, `∫ p(x_1|x_0) p(x_0) dx_0`.
    pub fn first_state_prior(&self) -> GaussianParams {
        GaussianParams {
            mean: self
                .axes
                .iter()
                .zip(&self.initial.mean)
                .map(|(ax, m)| ax.mean_from(*m))
                .collect(),
            std: self
                .axes
                .iter()
                .zip(&self.initial.std)
                .map(|(ax, s)| (ax.a * ax.a * s * s + ax.sigma * ax.sigma).sqrt())
                .collect(),
        }
    }

    /// Discretized `p(x_0; ω₀)`.
    pub fn initial_density(&self, grid: &Arc<StateGrid>) -> Result<GridDensity> {
        self.check_grid(grid)?;
        Ok(discretize_renormalized(&self.initial, grid))
    }

    /// `p(· | x_prev)` discretized on `grid`.
    pub fn kernel_column(&self, prev: &[f64], grid: &Arc<StateGrid>) -> Result<GridDensity> {
        self.check_grid(grid)?;
        let params = GaussianParams {
            mean: self
                .axes
                .iter()
                .enumerate()
                .map(|(d, ax)| ax.mean_from(prev[d]))
                .collect(),
            std: self.axes.iter().map(|ax| ax.sigma).collect(),
        };
        discretize(&params, grid)
    }

    /// Precomputes the (banded, column-normalized) transition matrices.
    pub fn propagator(&self, grid: &Arc<StateGrid>) -> Result<Propagator> {
        self.check_grid(grid)?;
        Ok(Propagator {
            grid: grid.clone(),
            kernels: self
                .axes
                .iter()
                .zip(grid.axes())
                .map(|(ax, axis)| BandedKernel::build(ax, axis))
                .collect(),
        })
    }

    fn check_grid(&self, grid: &StateGrid) -> Result<()> {
        if grid.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                what: "grid dims vs transition dims",
                expected: self.dims(),
                got: grid.dims(),
            });
        }
        Ok(())
    }

    /// Least-squares AR(1) fit per axis on one state sequence.
    pub fn fit_mle(states: &Matrix) -> Result<Self> {
        Self::fit_mle_pooled(&[states])
    }

    /// Least-squares AR(1) fit pooling the transitions of several sequences.
    ///
    /// The initial density is the empirical mean/std of the states.
    pub fn fit_mle_pooled(sequences: &[&Matrix]) -> Result<Self> {
        let dims = check_sequences(sequences)?;
        let mut axes = Vec::with_capacity(dims);
        for d in 0..dims {
            let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for seq in sequences {
                for k in 1..seq.rows() {
                    let (x, y) = (seq.get(k - 1, d), seq.get(k, d));
                    n += 1.0;
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    sxy += x * y;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let vx = sxx / n - mx * mx;
            if !(vx > 1e-14 * (1.0 + mx * mx)) {
                return Err(Error::DegenerateInput(
                    "state sequence is constant; AR(1) coefficients are unidentifiable".into(),
                ));
            }
            let a = (sxy / n - mx * my) / vx;
            let b = my - a * mx;
            let mut rss = 0.0;
            for seq in sequences {
                for k in 1..seq.rows() {
                    let r = seq.get(k, d) - a * seq.get(k - 1, d) - b;
                    rss += r * r;
                }
            }
            let sigma = (rss / n).sqrt().max(SIGMA_FLOOR);
            axes.push(AxisDynamics { a, b, sigma });
        }
        let initial = empirical_initial(sequences, dims);
        Self::with_bound(axes, initial, f64::INFINITY)
    }

    /// Random-walk fit: a = 1, b = 0, σ per axis from increments.
    pub fn fit_random_walk_pooled(sequences: &[&Matrix]) -> Result<Self> {
        let dims = check_sequences(sequences)?;
        let sigmas: Vec<f64> = (0..dims)
            .map(|d| {
                let (mut n, mut ss) = (0.0, 0.0);
                for seq in sequences {
                    for k in 1..seq.rows() {
                        let r = seq.get(k, d) - seq.get(k - 1, d);
                        ss += r * r;
                        n += 1.0;
                    }
                }
                (ss / n).sqrt().max(SIGMA_FLOOR)
            })
            .collect();
        Self::random_walk(&sigmas, empirical_initial(sequences, dims))
    }
}

fn check_sequences(sequences: &[&Matrix]) -> Result<usize> {
    let dims = sequences
        .first()
        .map(|m| m.cols())
        .ok_or_else(|| Error::DegenerateInput("no state sequences".into()))?;
    let points: usize = sequences.iter().map(|s| s.rows()).sum();
    if points < 3 {
        return Err(Error::DegenerateInput(format!("need at least 3 states, got {points}")));
    }
    if sequences.iter().any(|s| s.cols() != dims) {
        return Err(Error::DegenerateInput("sequences disagree on state dims".into()));
    }
    Ok(dims)
}

fn empirical_initial(sequences: &[&Matrix], dims: usize) -> GaussianParams {
    let mut mean = vec![0.0; dims];
    let mut std = vec![0.0; dims];
    for d in 0..dims {
        let vals: Vec<f64> = sequences.iter().flat_map(|s| s.column_values(d)).collect();
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        mean[d] = m;
        std[d] = v.sqrt().max(SIGMA_FLOOR);
    }
    GaussianParams { mean, std }
}

/// Column-normalized transition matrix for one axis, stored as a band per
/// source cell: `P[i][j]` is the probability of moving from cell `j` to `i`.
#[derive(Debug, Clone)]
struct BandedKernel {
    starts: Vec<usize>,
    offsets: Vec<usize>,
    weights: Vec<f64>,
}

impl BandedKernel {
    fn build(dynamics: &AxisDynamics, axis: &crate::densities::Axis) -> Self {
        let n = axis.cells;
        let w = axis.width();
        let mut starts = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n + 1);
        let mut weights = Vec::new();
        offsets.push(0);
        for j in 0..n {
            let m = dynamics.mean_from(axis.center(j));
            let s = dynamics.sigma;
            let reach = BAND_SIGMAS * s;
            let lo_f = ((m - reach - axis.lower) / w - 0.5).ceil();
            let hi_f = ((m + reach - axis.lower) / w - 0.5).floor();
            let nearest = axis.cell_of(m);
            let (lo, hi) = if hi_f < 0.0 || lo_f > (n - 1) as f64 || hi_f < lo_f {
                (nearest, nearest)
            } else {
                (lo_f.max(0.0) as usize, (hi_f as usize).min(n - 1))
            };
            let base = weights.len();
            let mut total = 0.0;
            for i in lo..=hi {
                let z = (axis.center(i) - m) / s;
                let v = (-0.5 * z * z).exp();
                total += v;
                weights.push(v);
            }
            if total > 0.0 {
                weights[base..].iter_mut().for_each(|v| *v /= total);
            } else {
                weights.truncate(base);
                weights.push(1.0);
                starts.push(nearest);
                offsets.push(weights.len());
                continue;
            }
            starts.push(lo);
            offsets.push(weights.len());
        }
        Self {
            starts,
            offsets,
            weights,
        }
    }

    /// `out += P·input` (densities in, densities out).
    #[inline]
    fn forward_add(&self, input: &[f64], out: &mut [f64]) {
        for (j, &v) in input.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let band = &self.weights[self.offsets[j]..self.offsets[j + 1]];
            let start = self.starts[j];
            for (o, w) in out[start..start + band.len()].iter_mut().zip(band) {
                *o += w * v;
            }
        }
    }

    /// `out = Pᵀ·input`.
    #[inline]
    fn adjoint(&self, input: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let band = &self.weights[self.offsets[j]..self.offsets[j + 1]];
            let start = self.starts[j];
            *o = band
                .iter()
                .zip(&input[start..start + band.len()])
                .map(|(w, v)| w * v)
                .sum();
        }
    }

    /// Row `i` of `P` (transition probabilities into cell `i`) multiplied
    /// element-wise into `out`.
    fn row_into(&self, i: usize, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let start = self.starts[j];
            let len = self.offsets[j + 1] - self.offsets[j];
            *o = if i >= start && i < start + len {
                self.weights[self.offsets[j] + i - start]
            } else {
                0.0
            };
        }
    }
}

/// The transition applied to densities on a fixed grid (Chapman–Kolmogorov).
#[derive(Debug, Clone)]
pub struct Propagator {
    grid: Arc<StateGrid>,
    kernels: Vec<BandedKernel>,
}

impl Propagator {
    #[inline]
    pub fn grid(&self) -> &Arc<StateGrid> {
        &self.grid
    }

    /// `∫ p(x_k|x_{k-1}) prior(x_{k-1}) dx_{k-1}` on raw values.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        match self.kernels.len() {
            1 => {
                let mut out = vec![0.0; input.len()];
                self.kernels[0].forward_add(input, &mut out);
                out
            }
            _ => {
                let nx = self.grid.axis(0).cells;
                let ny = self.grid.axis(1).cells;
                let mut tmp = vec![0.0; input.len()];
                for iy in 0..ny {
                    self.kernels[0].forward_add(
                        &input[iy * nx..(iy + 1) * nx],
                        &mut tmp[iy * nx..(iy + 1) * nx],
                    );
                }
                let mut out = vec![0.0; input.len()];
                let ky = &self.kernels[1];
                for jy in 0..ny {
                    let band = &ky.weights[ky.offsets[jy]..ky.offsets[jy + 1]];
                    let src = &tmp[jy * nx..(jy + 1) * nx];
                    for (t, w) in band.iter().enumerate() {
                        let iy = ky.starts[jy] + t;
                        let dst = &mut out[iy * nx..(iy + 1) * nx];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += w * s);
                    }
                }
                out
            }
        }
    }

    /// Adjoint of [`Propagator::forward`]: `out_j = Σ_i P_ij input_i`.
    pub fn adjoint(&self, input: &[f64]) -> Vec<f64> {
        match self.kernels.len() {
            1 => {
                let mut out = vec![0.0; input.len()];
                self.kernels[0].adjoint(input, &mut out);
                out
            }
            _ => {
                let nx = self.grid.axis(0).cells;
                let ny = self.grid.axis(1).cells;
                let ky = &self.kernels[1];
                let mut tmp = vec![0.0; input.len()];
                for jy in 0..ny {
                    let band = &ky.weights[ky.offsets[jy]..ky.offsets[jy + 1]];
                    let dst = &mut tmp[jy * nx..(jy + 1) * nx];
                    for (t, w) in band.iter().enumerate() {
                        let iy = ky.starts[jy] + t;
                        let src = &input[iy * nx..(iy + 1) * nx];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += w * s);
                    }
                }
                let mut out = vec![0.0; input.len()];
                for iy in 0..ny {
                    self.kernels[0].adjoint(&tmp[iy * nx..(iy + 1) * nx], &mut out[iy * nx..(iy + 1) * nx]);
                }
                out
            }
        }
    }

    /// Adjoint along a single axis; `axis_input` has that axis' length.
    pub(crate) fn adjoint_axis(&self, d: usize, axis_input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; axis_input.len()];
        self.kernels[d].adjoint(axis_input, &mut out);
        out
    }

    /// Forward along a single axis.
    pub(crate) fn forward_axis(&self, d: usize, axis_input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; axis_input.len()];
        self.kernels[d].forward_add(axis_input, &mut out);
        out
    }

    /// Transition probabilities `P(x_next ∈ cell | x_prev = each cell)` as a
    /// vector over source cells.
    pub fn transition_row(&self, target: usize) -> Vec<f64> {
        let [tx, ty] = self.grid.unravel(target);
        let nx = self.grid.axis(0).cells;
        let mut rx = vec![0.0; nx];
        self.kernels[0].row_into(tx, &mut rx);
        match self.kernels.get(1) {
            None => rx,
            Some(ky) => {
                let ny = self.grid.axis(1).cells;
                let mut ry = vec![0.0; ny];
                ky.row_into(ty, &mut ry);
                crate::densities::outer(&self.grid, &[rx, ry])
            }
        }
    }

    /// One-step prediction of a grid density; output renormalized.
    pub fn apply(&self, prior: &GridDensity) -> Result<GridDensity> {
        if **prior.grid() != *self.grid {
            return Err(Error::GridMismatch);
        }
        let out = self.forward(prior.values());
        GridDensity::from_values(self.grid.clone(), out)
    }
}

/// One-step-ahead density of `prior` under `trans`.
pub fn chapman_kolmogorov(prior: &GridDensity, trans: &LinearGaussianTransition) -> Result<GridDensity> {
    trans.propagator(prior.grid())?.apply(prior)
}

/// `p(· | x_prev)` on `grid`.
pub fn transition_kernel_column(
    prev: &[f64],
    trans: &LinearGaussianTransition,
    grid: &Arc<StateGrid>,
) -> Result<GridDensity> {
    trans.kernel_column(prev, grid)
}
