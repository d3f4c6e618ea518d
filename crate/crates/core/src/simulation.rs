//! Synthetic datasets: the 20-channel nonlinear benchmark and a place-cell
//! population on a W-shaped track.
//!
//! All randomness comes from ChaCha20 streams (`rand_chacha` 0.9) seeded
//! through [`crate::seed::derive`], with `rand_distr` 0.5 normal and Poisson
//! samplers, so a `(spec, seed)` pair always yields the same bytes.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{EpisodeDataset, Matrix};
use crate::error::{Error, Result};

/// Lag weights of the benchmark's first channel: `x_k + 0.8x_{k-1} + …`.
pub const DECLINING_WEIGHTS: [f64; 5] = [1.0, 0.8, 0.6, 0.4, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Tanh,
    Cosine,
    Sine,
    Cubic,
}

impl Nonlinearity {
    pub const ALL: [Nonlinearity; 4] = [Self::Tanh, Self::Cosine, Self::Sine, Self::Cubic];

    #[inline]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Self::Tanh => u.tanh(),
            Self::Cosine => u.cos(),
            Self::Sine => u.sin(),
            Self::Cubic => u * u * u,
        }
    }
}

/// `s_{k,i} = g(Σ_j w_j x_{k-j})` for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub nonlinearity: Nonlinearity,
    /// `weights[j]` multiplies `x_{k-j}`; the channel's lag is `len - 1`.
    pub weights: Vec<f64>,
}

impl ChannelSpec {
    pub fn lag(&self) -> usize {
        self.weights.len().saturating_sub(1)
    }
}

/// Declining weights `1, 0.8, 0.6, …` for lags `0..=lag` (floored at 0.2).
pub fn declining_weights(lag: usize) -> Vec<f64> {
    (0..=lag)
        .map(|j| DECLINING_WEIGHTS.get(j).copied().unwrap_or(0.2))
        .collect()
}

/// Parameters of the nonlinear benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    pub steps: usize,
    pub channels: usize,
    pub a: f64,
    pub b: f64,
    pub sigma_x: f64,
    pub x0: f64,
    pub max_lag: usize,
    /// Diagonal of the observation noise covariance (0 gives noiseless data).
    pub noise_variance: f64,
    /// Off-diagonal decay: `Σ_ij = noise_variance · ρ^|i−j|`.
    pub noise_correlation: f64,
    /// Explicit channel definitions; drawn from the seed when absent.
    pub channel_specs: Option<Vec<ChannelSpec>>,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            steps: 1000,
            channels: 20,
            a: 0.9,
            b: 0.0,
            sigma_x: 0.1,
            x0: 0.0,
            max_lag: 4,
            noise_variance: 0.04,
            noise_correlation: 0.7,
            channel_specs: None,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SpecInvalid(m));
        if self.steps == 0 || self.channels == 0 {
            return bad("steps and channels must be positive".into());
        }
        if !(self.sigma_x >= 0.0) || !self.a.is_finite() || !self.b.is_finite() || !self.x0.is_finite() {
            return bad("state parameters must be finite with sigma_x >= 0".into());
        }
        if !(self.noise_variance >= 0.0) || !(self.noise_correlation.abs() < 1.0) {
            return bad("noise variance must be >= 0 and |correlation| < 1".into());
        }
        if let Some(ch) = &self.channel_specs {
            if ch.len() != self.channels {
                return bad(format!("{} channel specs for {} channels", ch.len(), self.channels));
            }
            if let Some(c) = ch.iter().find(|c| c.weights.is_empty() || c.lag() > self.max_lag) {
                return bad(format!("channel lag {} outside 0..={}", c.lag(), self.max_lag));
            }
        }
        Ok(())
    }

    /// Channel definitions: channel 1 is `tanh` with the declining weights;
    /// the rest draw a nonlinearity and a lag uniformly.
    pub fn resolve_channels(&self, seed: u64) -> Vec<ChannelSpec> {
        if let Some(ch) = &self.channel_specs {
            return ch.clone();
        }
        let mut rng = crate::seed::rng(seed, "sim-channels", 0);
        (0..self.channels)
            .map(|i| {
                if i == 0 {
                    ChannelSpec {
                        nonlinearity: Nonlinearity::Tanh,
                        weights: declining_weights(self.max_lag.min(4)),
                    }
                } else {
                    let nl = Nonlinearity::ALL[rng.random_range(0..4)];
                    let lag = rng.random_range(0..=self.max_lag);
                    ChannelSpec {
                        nonlinearity: nl,
                        weights: declining_weights(lag),
                    }
                }
            })
            .collect()
    }

    /// `Σ_s` as a dense matrix.
    pub fn noise_covariance(&self) -> DMatrix<f64> {
        let n = self.channels;
        DMatrix::from_fn(n, n, |i, j| {
            self.noise_variance * self.noise_correlation.powi((i as i32 - j as i32).abs())
        })
    }
}

/// A generated benchmark episode with the channel definitions used.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub episode: EpisodeDataset,
    pub channels: Vec<ChannelSpec>,
}

/// AR(1) trajectory of `steps` states after `x0`.
pub fn ar1_states(a: f64, b: f64, sigma: f64, x0: f64, steps: usize, seed: u64) -> Matrix {
    let mut rng = crate::seed::rng(seed, "sim-states", 0);
    let mut x = x0;
    let v = (0..steps)
        .map(|_| {
            let w: f64 = StandardNormal.sample(&mut rng);
            x = a * x + b + sigma * w;
            x
        })
        .collect();
    Matrix::column(v)
}

/// The 20-channel nonlinear benchmark.
pub fn generate_sim(spec: &SimSpec, seed: u64) -> Result<SimDataset> {
    spec.validate()?;
    let channels = spec.resolve_channels(seed);
    let burn = spec.max_lag;
    // burn-in states give every lag of the first observation a value
    let path = ar1_states(spec.a, spec.b, spec.sigma_x, spec.x0, spec.steps + burn, seed);
    let x = path.as_slice();
    let n = spec.channels;
    let chol = if spec.noise_variance > 0.0 {
        Some(
            spec.noise_covariance()
                .cholesky()
                .ok_or_else(|| Error::SpecInvalid("noise covariance is not positive definite".into()))?
                .l(),
        )
    } else {
        None
    };
    let mut rng = crate::seed::rng(seed, "sim-noise", 0);
    let mut obs = Matrix::zeros(spec.steps, n);
    for k in 0..spec.steps {
        let t = k + burn;
        let row = obs.row_mut(k);
        for (c, ch) in channels.iter().enumerate() {
            let u: f64 = ch.weights.iter().enumerate().map(|(j, w)| w * x[t - j]).sum();
            row[c] = ch.nonlinearity.apply(u);
        }
        if let Some(l) = &chol {
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let e = l * z;
            row.iter_mut().zip(e.iter()).for_each(|(r, v)| *r += v);
        }
    }
    let states = Matrix::column(x[burn..].to_vec());
    Ok(SimDataset {
        episode: EpisodeDataset::new(obs, Some(states))?,
        channels,
    })
}

/// A point of the W-track graph.
pub const TRACK_NODES: [[f64; 2]; 6] = [[0.0, 1.0], [0.0, 0.0], [0.5, 1.0], [0.5, 0.0], [1.0, 1.0], [1.0, 0.0]];

/// Track segments as node-index pairs: three 1 m arms joined by a 1 m base.
pub const TRACK_EDGES: [[usize; 2]; 5] = [[0, 1], [1, 3], [3, 2], [3, 5], [5, 4]];

/// A 2-D Gaussian place field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceField {
    pub center: [f64; 2],
    pub width: f64,
    pub peak_rate: f64,
}

impl PlaceField {
    /// Firing rate (Hz) at `p`.
    #[inline]
    pub fn rate(&self, p: &[f64]) -> f64 {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        self.peak_rate * (-(dx * dx + dy * dy) / (2.0 * self.width * self.width)).exp()
    }
}

/// Parameters of the place-cell generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlaceCellSpec {
    pub cells: usize,
    pub duration_s: f64,
    pub bin_s: f64,
    pub field_width: f64,
    pub min_peak_rate: f64,
    pub max_peak_rate: f64,
    pub corridor_width: f64,
    /// Mean running speed (m/s).
    pub speed: f64,
    /// Explicit fields; drawn from the seed when absent.
    pub fields: Option<Vec<PlaceField>>,
}

impl Default for PlaceCellSpec {
    fn default() -> Self {
        Self {
            cells: 62,
            duration_s: 330.0,
            bin_s: 0.25,
            field_width: 0.08,
            min_peak_rate: 5.0,
            max_peak_rate: 20.0,
            corridor_width: 0.1,
            speed: 0.3,
            fields: None,
        }
    }
}

impl PlaceCellSpec {
    pub fn steps(&self) -> usize {
        (self.duration_s / self.bin_s).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::SpecInvalid(m.into()));
        if self.cells == 0 || !(self.duration_s > 0.0) || !(self.bin_s > 0.0) || self.steps() == 0 {
            return bad("cells, duration and bin width must be positive");
        }
        if !(self.field_width > 0.0) || !(self.min_peak_rate > 0.0) || !(self.max_peak_rate >= self.min_peak_rate) {
            return bad("field width and peak rates must be positive");
        }
        if !(self.corridor_width >= 0.0) || !(self.speed > 0.0) {
            return bad("corridor width must be >= 0 and speed > 0");
        }
        if let Some(f) = &self.fields {
            if f.len() != self.cells {
                return bad("one field per cell is required");
            }
            let inside = |p: &[f64; 2]| (-0.1..=1.1).contains(&p[0]) && (-0.1..=1.1).contains(&p[1]);
            if f.iter().any(|c| !(c.peak_rate > 0.0) || !(c.width > 0.0) || !inside(&c.center)) {
                return bad("fields need positive rate and width and a center inside the arena");
            }
        }
        Ok(())
    }

    /// Fields centred at uniform points along the track.
    pub fn resolve_fields(&self, seed: u64) -> Vec<PlaceField> {
        if let Some(f) = &self.fields {
            return f.clone();
        }
        let mut rng = crate::seed::rng(seed, "place-fields", 0);
        let total: f64 = TRACK_EDGES.iter().map(|e| edge_length(*e)).sum();
        (0..self.cells)
            .map(|_| {
                let mut s = rng.random_range(0.0..total);
                let mut center = [0.0; 2];
                for e in TRACK_EDGES {
                    let len = edge_length(e);
                    if s <= len {
                        center = lerp(e, s / len);
                        break;
                    }
                    s -= len;
                }
                PlaceField {
                    center,
                    width: self.field_width,
                    peak_rate: rng.random_range(self.min_peak_rate..=self.max_peak_rate),
                }
            })
            .collect()
    }
}

fn edge_length(e: [usize; 2]) -> f64 {
    let (a, b) = (TRACK_NODES[e[0]], TRACK_NODES[e[1]]);
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

fn lerp(e: [usize; 2], t: f64) -> [f64; 2] {
    let (a, b) = (TRACK_NODES[e[0]], TRACK_NODES[e[1]]);
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// A generated place-cell session.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceCellDataset {
    pub episode: EpisodeDataset,
    pub fields: Vec<PlaceField>,
}

/// Trajectory on the W-track: running speed follows a mean-reverting
/// process, direction reverses at arm ends and picks a random branch at
/// the three-way junction; a lateral offset wanders inside the corridor.
pub fn track_trajectory(spec: &PlaceCellSpec, seed: u64) -> Matrix {
    let mut rng = crate::seed::rng(seed, "track", 0);
    let substeps = 5;
    let dt = spec.bin_s / substeps as f64;
    let half = spec.corridor_width / 2.0;
    let (mut edge, mut t, mut dir) = (0usize, 0.5, 1.0f64);
    let mut speed = spec.speed;
    let mut lateral = 0.0;
    let mut out = Matrix::zeros(spec.steps(), 2);
    for k in 0..spec.steps() {
        for _ in 0..substeps {
            let z: f64 = StandardNormal.sample(&mut rng);
            speed += 1.0 * (spec.speed - speed) * dt + 0.5 * spec.speed * dt.sqrt() * z;
            speed = speed.clamp(0.05 * spec.speed, 3.0 * spec.speed);
            let zl: f64 = StandardNormal.sample(&mut rng);
            lateral += -2.0 * lateral * dt + 0.5 * half * dt.sqrt() * zl;
            lateral = lateral.clamp(-half, half);
            let len = edge_length(TRACK_EDGES[edge]);
            t += dir * speed * dt / len;
            if !(0.0..=1.0).contains(&t) {
                let node = if t > 1.0 { TRACK_EDGES[edge][1] } else { TRACK_EDGES[edge][0] };
                let others: Vec<usize> = (0..TRACK_EDGES.len())
                    .filter(|&e| e != edge && TRACK_EDGES[e].contains(&node))
                    .collect();
                if others.is_empty() {
                    dir = -dir;
                    t = t.clamp(0.0, 1.0);
                } else {
                    edge = others[rng.random_range(0..others.len())];
                    let start = TRACK_EDGES[edge][0] == node;
                    t = if start { 0.0 } else { 1.0 };
                    dir = if start { 1.0 } else { -1.0 };
                }
            }
        }
        let [px, py] = lerp(TRACK_EDGES[edge], t);
        let e = TRACK_EDGES[edge];
        let (a, b) = (TRACK_NODES[e[0]], TRACK_NODES[e[1]]);
        let len = edge_length(e);
        let normal = [-(b[1] - a[1]) / len, (b[0] - a[0]) / len];
        out.row_mut(k).copy_from_slice(&[px + lateral * normal[0], py + lateral * normal[1]]);
    }
    out
}

/// Place-cell spike counts along a W-track trajectory.
pub fn generate_place_cells(spec: &PlaceCellSpec, seed: u64) -> Result<PlaceCellDataset> {
    spec.validate()?;
    let fields = spec.resolve_fields(seed);
    let states = track_trajectory(spec, seed);
    let mut rng = crate::seed::rng(seed, "spikes", 0);
    let mut obs = Matrix::zeros(states.rows(), spec.cells);
    for k in 0..states.rows() {
        let p = states.row(k).to_vec();
        for (c, f) in fields.iter().enumerate() {
            let lam = f.rate(&p) * spec.bin_s;
            obs.row_mut(k)[c] = if lam > 0.0 {
                Poisson::new(lam)
                    .map_err(|e| Error::SpecInvalid(format!("poisson rate {lam}: {e}")))?
                    .sample(&mut rng)
            } else {
                0.0
            };
        }
    }
    Ok(PlaceCellDataset {
        episode: EpisodeDataset::new(obs, Some(states))?,
        fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_first_channel_is_lagged_tanh() {
        let spec = SimSpec {
            noise_variance: 0.0,
            ..SimSpec::default()
        };
        let d = generate_sim(&spec, 7).unwrap();
        let path = ar1_states(0.9, 0.0, 0.1, 0.0, spec.steps + 4, 7);
        let x = path.as_slice();
        for k in 0..spec.steps {
            let t = k + 4;
            let u = x[t] + 0.8 * x[t - 1] + 0.6 * x[t - 2] + 0.4 * x[t - 3] + 0.2 * x[t - 4];
            assert!((d.episode.observations.get(k, 0) - u.tanh()).abs() < 1e-9);
        }
        assert_eq!(d.episode.states.as_ref().unwrap().get(0, 0), x[4]);
    }

    #[test]
    fn zero_noise_zero_state_gives_constant_channels() {
        let spec = SimSpec {
            noise_variance: 0.0,
            sigma_x: 0.0,
            ..SimSpec::default()
        };
        let d = generate_sim(&spec, 1).unwrap();
        assert!(d.episode.states.unwrap().as_slice().iter().all(|v| *v == 0.0));
        for (c, ch) in d.channels.iter().enumerate() {
            let g0 = ch.nonlinearity.apply(0.0);
            assert!(d.episode.observations.column_values(c).iter().all(|v| *v == g0));
        }
    }

    #[test]
    fn state_autocorrelation_matches_a() {
        let d = generate_sim(&SimSpec::default(), 3).unwrap();
        let x = d.episode.states.unwrap().column_values(0);
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let num: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
        let den: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        assert!((num / den - 0.9).abs() < 0.05, "{}", num / den);
    }

    #[test]
    fn channel_lags_are_within_bound_and_reproducible() {
        let spec = SimSpec::default();
        let a = generate_sim(&spec, 11).unwrap();
        let b = generate_sim(&spec, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.channels.iter().all(|c| c.lag() <= 4));
        assert_eq!(a.channels[0].weights, DECLINING_WEIGHTS.to_vec());
        assert_ne!(generate_sim(&spec, 12).unwrap().episode, a.episode);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = SimSpec {
            noise_correlation: 1.0,
            ..SimSpec::default()
        };
        assert!(matches!(generate_sim(&bad, 0), Err(Error::SpecInvalid(_))));
        let bad = PlaceCellSpec {
            cells: 0,
            ..PlaceCellSpec::default()
        };
        assert!(matches!(generate_place_cells(&bad, 0), Err(Error::SpecInvalid(_))));
    }

    #[test]
    fn trajectory_stays_in_corridor() {
        let spec = PlaceCellSpec::default();
        let tr = track_trajectory(&spec, 5);
        assert_eq!(tr.rows(), 1320);
        for k in 0..tr.rows() {
            let p = tr.row(k);
            let d = TRACK_EDGES
                .iter()
                .map(|&e| {
                    let (a, b) = (TRACK_NODES[e[0]], TRACK_NODES[e[1]]);
                    let (vx, vy) = (b[0] - a[0], b[1] - a[1]);
                    let t = (((p[0] - a[0]) * vx + (p[1] - a[1]) * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
                    ((p[0] - a[0] - t * vx).powi(2) + (p[1] - a[1] - t * vy).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 0.05 + 1e-12, "step {k}: {d}");
        }
        // every arm gets visited
        for x in [0.0, 0.5, 1.0] {
            assert!((0..tr.rows()).any(|k| (tr.get(k, 0) - x).abs() < 0.06 && tr.get(k, 1) > 0.8));
        }
    }

    #[test]
    fn localized_field_fires_only_nearby() {
        let spec = PlaceCellSpec {
            cells: 1,
            fields: Some(vec![PlaceField {
                center: [0.5, 0.5],
                width: 0.01,
                peak_rate: 20.0,
            }]),
            ..PlaceCellSpec::default()
        };
        let d = generate_place_cells(&spec, 2).unwrap();
        let st = d.episode.states.as_ref().unwrap();
        let mut fired = 0;
        for k in 0..st.rows() {
            if d.episode.observations.get(k, 0) > 0.0 {
                fired += 1;
                let r = ((st.get(k, 0) - 0.5).powi(2) + (st.get(k, 1) - 0.5).powi(2)).sqrt();
                assert!(r < 3.0 * 0.01, "spike at distance {r}");
            }
        }
        assert!(fired > 0);
    }

    #[test]
    fn spike_totals_concentrate() {
        let spec = PlaceCellSpec::default();
        let d = generate_place_cells(&spec, 9).unwrap();
        let st = d.episode.states.as_ref().unwrap();
        let expected: f64 = (0..st.rows())
            .map(|k| d.fields.iter().map(|f| f.rate(st.row(k)) * spec.bin_s).sum::<f64>())
            .sum();
        let observed: f64 = d.episode.observations.as_slice().iter().sum();
        assert!((observed - expected).abs() < 3.0 * expected.sqrt(), "{observed} vs {expected}");
        assert_eq!(generate_place_cells(&spec, 9).unwrap(), d);
    }
}
