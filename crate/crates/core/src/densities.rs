//! Discretized densities over 1-D and 2-D state grids.
//!
//! Every density the decoder touches (prediction process, history marginal,
//! filter, one-step prediction, smoother) is a [`GridDensity`]: non-negative
//! values at cell centers, in units of 1/state-volume, integrating to one
//! under midpoint quadrature.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to densities before any log or division.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Largest off-grid Gaussian mass tolerated by [`discretize`].
pub const MAX_OFF_GRID_MASS: f64 = 0.01;

const MIN_CELLS: usize = 8;

/// One grid axis: `cells` equal-width cells covering `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub cells: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, cells: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || upper <= lower {
            return Err(Error::InvalidGrid(format!(
                "axis bounds must satisfy lower < upper, got [{lower}, {upper}]"
            )));
        }
        if cells < MIN_CELLS {
            return Err(Error::InvalidGrid(format!(
                "axis needs at least {MIN_CELLS} cells, got {cells}"
            )));
        }
        Ok(Self {
            lower,
            upper,
            cells,
        })
    }

    #[inline]
    pub fn width(&self) -> f64 {
        (self.upper - self.lower) / self.cells as f64
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.lower + (i as f64 + 0.5) * self.width()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|i| self.center(i)).collect()
    }

    /// Index of the cell containing `x`, clamped to the axis.
    pub fn cell_of(&self, x: f64) -> usize {
        let raw = ((x - self.lower) / self.width()).floor();
        if raw.is_nan() || raw < 0.0 {
            0
        } else {
            (raw as usize).min(self.cells - 1)
        }
    }
}

/// A rectangular grid over a 1-D or 2-D state space.
///
/// Cells are stored with the first axis varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    axes: Vec<Axis>,
}

impl StateGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "grids are 1-D or 2-D, got {} axes",
                axes.len()
            )));
        }
        for a in &axes {
            Axis::new(a.lower, a.upper, a.cells)?;
        }
        Ok(Self { axes })
    }

    pub fn line(lower: f64, upper: f64, cells: usize) -> Result<Self> {
        Self::new(vec![Axis::new(lower, upper, cells)?])
    }

    pub fn plane(x: Axis, y: Axis) -> Result<Self> {
        Self::new(vec![x, y])
    }

    /// Default grid for the 1-D simulation: [-8, 8] with 400 cells.
    pub fn default_line() -> Self {
        Self::line(-8.0, 8.0, 400).expect("static grid is valid")
    }

    /// Bounding box of `states` padded by `pad` of the extent on each side.
    pub fn bounding(states: &crate::dataset::Matrix, pad: f64, cells: usize) -> Result<Self> {
        if states.rows() == 0 {
            return Err(Error::InsufficientData("no states to bound".into()));
        }
        let mut axes = Vec::with_capacity(states.cols());
        for d in 0..states.cols() {
            let (lo, hi) = (0..states.rows())
                .map(|k| states.get(k, d))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                });
            let extent = (hi - lo).max(1e-6);
            axes.push(Axis::new(lo - pad * extent, hi + pad * extent, cells)?);
        }
        Self::new(axes)
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    #[inline]
    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    #[inline]
    pub fn axis(&self, d: usize) -> &Axis {
        &self.axes[d]
    }

    /// Total number of cells.
    #[inline]
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.cells).product()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::width).product()
    }

    /// Per-axis indices of flat cell `i`.
    #[inline]
    pub fn unravel(&self, i: usize) -> [usize; 2] {
        let nx = self.axes[0].cells;
        [i % nx, i / nx]
    }

    /// Center of flat cell `i`; the second coordinate is zero on 1-D grids.
    pub fn point(&self, i: usize) -> [f64; 2] {
        let [ix, iy] = self.unravel(i);
        let x = self.axes[0].center(ix);
        let y = self.axes.get(1).map_or(0.0, |a| a.center(iy));
        [x, y]
    }

    /// Flat index of the cell containing `point` (clamped onto the grid).
    pub fn cell_of(&self, point: &[f64]) -> usize {
        let ix = self.axes[0].cell_of(point[0]);
        match self.axes.get(1) {
            Some(ay) => ix + self.axes[0].cells * ay.cell_of(point[1]),
            None => ix,
        }
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        self.axes
            .iter()
            .zip(point)
            .all(|(a, &v)| v >= a.lower && v <= a.upper)
    }
}

/// Diagonal Gaussian over the state (mean and per-dimension std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::DimensionMismatch {
                what: "gaussian std",
                expected: mean.len(),
                got: std.len(),
            });
        }
        if std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidDensity(format!(
                "std components must be positive and finite: {std:?}"
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn scalar(mean: f64, std: f64) -> Result<Self> {
        Self::new(vec![mean], vec![std])
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    /// Log density of a diagonal Gaussian at `x`.
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.std)
            .zip(x)
            .map(|((m, s), v)| log_normal_pdf(*v, *m, *s))
            .sum()
    }
}

#[inline]
pub fn log_normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// A normalized density over a [`StateGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    grid: Arc<StateGrid>,
    values: Vec<f64>,
}

impl GridDensity {
    /// Wraps `values` and normalizes them to unit mass.
    pub fn from_values(grid: Arc<StateGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                what: "density values",
                expected: grid.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidDensity(
                "values must be finite and non-negative".into(),
            ));
        }
        let mut d = Self { grid, values };
        let mass = d.mass();
        if !(mass > 0.0) {
            return Err(Error::InvalidDensity("zero total mass".into()));
        }
        d.scale(1.0 / mass);
        Ok(d)
    }

    /// Wraps values that are already normalized (mass checked in debug builds).
    pub(crate) fn from_normalized(grid: Arc<StateGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn uniform(grid: Arc<StateGrid>) -> Self {
        let v = 1.0 / (grid.len() as f64 * grid.cell_volume());
        let n = grid.len();
        Self {
            grid,
            values: vec![v; n],
        }
    }

    /// All mass in the cell containing `point`.
    pub fn delta(grid: Arc<StateGrid>, point: &[f64]) -> Self {
        let mut values = vec![0.0; grid.len()];
        values[grid.cell_of(point)] = 1.0 / grid.cell_volume();
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &Arc<StateGrid> {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    /// Marginal density along axis `d` (length = that axis' cell count).
    pub fn marginal(&self, d: usize) -> Vec<f64> {
        marginal_of(&self.grid, &self.values, d)
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.grid.dims())
            .map(|d| {
                let axis = self.grid.axis(d);
                let m = self.marginal(d);
                m.iter()
                    .enumerate()
                    .map(|(i, p)| p * axis.center(i))
                    .sum::<f64>()
                    * axis.width()
            })
            .collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        (0..self.grid.dims())
            .map(|d| {
                let axis = self.grid.axis(d);
                let m = self.marginal(d);
                m.iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let e = axis.center(i) - mean[d];
                        p * e * e
                    })
                    .sum::<f64>()
                    * axis.width()
            })
            .collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.variance().into_iter().map(f64::sqrt).collect()
    }

    /// Density value of the cell containing `point`.
    pub fn value_at(&self, point: &[f64]) -> f64 {
        self.values[self.grid.cell_of(point)]
    }

    /// Smallest set of cells holding at least `level` of the mass.
    pub fn hpd(&self, level: f64) -> HpdRegion {
        hpd_cells(&self.values, self.grid.cell_volume(), level)
    }

    pub(crate) fn ensure_same_grid(&self, other: &GridDensity) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

pub(crate) fn marginal_of(grid: &StateGrid, values: &[f64], d: usize) -> Vec<f64> {
    if grid.dims() == 1 {
        return values.to_vec();
    }
    let nx = grid.axis(0).cells;
    let ny = grid.axis(1).cells;
    match d {
        0 => {
            let wy = grid.axis(1).width();
            let mut out = vec![0.0; nx];
            for iy in 0..ny {
                let row = &values[iy * nx..(iy + 1) * nx];
                out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
            out.iter_mut().for_each(|o| *o *= wy);
            out
        }
        _ => {
            let wx = grid.axis(0).width();
            (0..ny)
                .map(|iy| values[iy * nx..(iy + 1) * nx].iter().sum::<f64>() * wx)
                .collect()
        }
    }
}

/// A highest-density cell set.
#[derive(Debug, Clone, PartialEq)]
pub struct HpdRegion {
    /// Flat indices of the member cells, densest first.
    pub cells: Vec<usize>,
    /// Lowest density value inside the set.
    pub threshold: f64,
    /// Mass actually captured.
    pub mass: f64,
    /// Total length (1-D) or area (2-D) of the set.
    pub volume: f64,
}

impl HpdRegion {
    pub fn contains(&self, cell: usize) -> bool {
        self.cells.contains(&cell)
    }
}

pub(crate) fn hpd_cells(values: &[f64], cell_volume: f64, level: f64) -> HpdRegion {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable sort keeps ties in index order so reports are reproducible
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let total: f64 = values.iter().sum::<f64>() * cell_volume;
    let mut mass = 0.0;
    let mut cells = Vec::new();
    for &i in &order {
        if mass >= level * total {
            break;
        }
        mass += values[i] * cell_volume;
        cells.push(i);
    }
    let threshold = cells.last().map_or(f64::INFINITY, |&i| values[i]);
    HpdRegion {
        volume: cells.len() as f64 * cell_volume,
        cells,
        threshold,
        mass,
    }
}

/// Mass of `N(mean, std²)` falling inside `[lower, upper]`.
fn interval_mass(mean: f64, std: f64, lower: f64, upper: f64) -> f64 {
    normal_cdf((upper - mean) / std) - normal_cdf((lower - mean) / std)
}

/// Normalized Gaussian values at the centers of one axis.
pub(crate) fn axis_gaussian(axis: &Axis, mean: f64, std: f64) -> Vec<f64> {
    let w = axis.width();
    let mut logs: Vec<f64> = (0..axis.cells)
        .map(|i| {
            let z = (axis.center(i) - mean) / std;
            -0.5 * z * z
        })
        .collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logs.iter_mut() {
        *l = (*l - peak).exp();
        total += *l;
    }
    let norm = 1.0 / (total * w);
    logs.iter_mut().for_each(|v| *v *= norm);
    logs
}

/// Outer product of per-axis densities in grid storage order.
pub(crate) fn outer(grid: &StateGrid, per_axis: &[Vec<f64>]) -> Vec<f64> {
    match grid.dims() {
        1 => per_axis[0].clone(),
        _ => {
            let (px, py) = (&per_axis[0], &per_axis[1]);
            let mut out = Vec::with_capacity(px.len() * py.len());
            for &vy in py {
                out.extend(px.iter().map(|&vx| vx * vy));
            }
            out
        }
    }
}

/// Gaussian pdf at cell centers, renormalized on the grid.
///
/// Fails with [`Error::Truncation`] when more than 1% of the continuous
/// mass lies off the grid.
pub fn discretize(params: &GaussianParams, grid: &Arc<StateGrid>) -> Result<GridDensity> {
    check_dims(params, grid)?;
    let on_grid: f64 = grid
        .axes()
        .iter()
        .zip(params.mean.iter().zip(&params.std))
        .map(|(a, (&m, &s))| interval_mass(m, s, a.lower, a.upper))
        .product();
    let off_grid = 1.0 - on_grid;
    if off_grid > MAX_OFF_GRID_MASS {
        return Err(Error::Truncation { off_grid });
    }
    Ok(discretize_renormalized(params, grid))
}

/// Like [`discretize`] but renormalizes whatever mass lands on the grid.
///
/// Used inside the filter, where a predictor extrapolating towards the grid
/// edge must not abort a decode.
pub fn discretize_renormalized(params: &GaussianParams, grid: &Arc<StateGrid>) -> GridDensity {
    let per_axis: Vec<Vec<f64>> = grid
        .axes()
        .iter()
        .zip(params.mean.iter().zip(&params.std))
        .map(|(a, (&m, &s))| axis_gaussian(a, m, s))
        .collect();
    GridDensity::from_normalized(grid.clone(), outer(grid, &per_axis))
}

fn check_dims(params: &GaussianParams, grid: &StateGrid) -> Result<()> {
    if params.dims() != grid.dims() {
        return Err(Error::DimensionMismatch {
            what: "gaussian dims vs grid dims",
            expected: grid.dims(),
            got: params.dims(),
        });
    }
    Ok(())
}

/// KL(p ‖ q) in nats, with `q` floored at [`DENSITY_FLOOR`].
pub fn kl_divergence(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    p.ensure_same_grid(q)?;
    let vol = p.grid.cell_volume();
    let kl: f64 = p
        .values
        .iter()
        .zip(&q.values)
        .filter(|(pv, _)| **pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv.ln() - qv.max(DENSITY_FLOOR).ln()))
        .sum();
    // p = q cell-wise gives exactly zero; tiny negatives come from rounding
    Ok((kl * vol).max(0.0))
}

/// Differential entropy −∫ p log p in nats (may be negative).
pub fn entropy(p: &GridDensity) -> f64 {
    let vol = p.grid.cell_volume();
    -p.values
        .iter()
        .filter(|v| **v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
        * vol
}

/// Cross-entropy −∫ p log q, i.e. KL(p ‖ q) + H(p).
pub fn cross_entropy(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    p.ensure_same_grid(q)?;
    let vol = p.grid.cell_volume();
    Ok(-p
        .values
        .iter()
        .zip(&q.values)
        .filter(|(pv, _)| **pv > 0.0)
        .map(|(&pv, &qv)| pv * qv.max(DENSITY_FLOOR).ln())
        .sum::<f64>()
        * vol)
}

/// Total-variation distance ½∫|p − q|.
pub fn total_variation(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    p.ensure_same_grid(q)?;
    let vol = p.grid.cell_volume();
    Ok(0.5
        * p.values
            .iter()
            .zip(&q.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
        * vol)
}
