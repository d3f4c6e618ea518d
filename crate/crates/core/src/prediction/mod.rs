//! The discriminative prediction process `p(x_k | s_k, h_k; Ω)`.
//!
//! A [`PredictionModel`] turns the current observation and its history
//! window into a diagonal Gaussian over the state. It owns one Gaussian
//! head per state axis:
//!
//! * 1-D states use a single head on the features `z = [s_k, h_k]`.
//! * 2-D states factor as `p(x | s, h, y) · p(y | s, h)`: the y head sees
//!   `z`, the x head sees `z` plus the (standardized) y coordinate. During
//!   training y is the observed or sampled coordinate; at decode time it
//!   is the y head's mean.
//!
//! Heads are either linear ([`LinearPredictor`], the DDD model) or
//! feed-forward networks ([`MlpPredictor`], the D4 model). Gradients are
//! analytic.

mod linear;
mod mlp;

pub use linear::LinearPredictor;
pub use mlp::{MlpPredictor, SIGMA_HEAD_FLOOR};

use serde::{Deserialize, Serialize};

use crate::dataset::{EpisodeDataset, FeatureScaling, HistoryWindow};
use crate::densities::{log_normal_pdf, GaussianParams};
use crate::error::{Error, Result};

/// Which family of prediction process to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Linear-Gaussian prediction process with constant noise.
    Ddd,
    /// Neural network with input-dependent mean and std.
    D4,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Ddd => "ddd",
            ModelKind::D4 => "d4",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddd" => Ok(ModelKind::Ddd),
            "d4" => Ok(ModelKind::D4),
            other => Err(Error::InvalidConfig(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Architecture choices for a new model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub lag: usize,
    pub hidden: Vec<usize>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, lag: usize) -> Self {
        Self {
            kind,
            lag,
            hidden: vec![64, 64],
        }
    }
}

/// One Gaussian head over one state coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Head {
    Linear(LinearPredictor),
    Mlp(MlpPredictor),
}

/// Intermediate values of one head evaluation, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct HeadPass {
    pub mean: f64,
    pub std: f64,
    hidden: Vec<Vec<f64>>,
    input: Vec<f64>,
    raw_std: f64,
}

impl Head {
    fn inputs(&self) -> usize {
        match self {
            Head::Linear(h) => h.inputs(),
            Head::Mlp(h) => h.inputs(),
        }
    }

    fn num_params(&self) -> usize {
        match self {
            Head::Linear(h) => h.num_params(),
            Head::Mlp(h) => h.num_params(),
        }
    }

    fn params_into(&self, out: &mut Vec<f64>) {
        match self {
            Head::Linear(h) => h.params_into(out),
            Head::Mlp(h) => out.extend_from_slice(&h.params),
        }
    }

    fn set_params(&mut self, p: &[f64]) {
        match self {
            Head::Linear(h) => h.set_params(p),
            Head::Mlp(h) => h.params.copy_from_slice(p),
        }
    }

    fn forward(&self, z: &[f64]) -> HeadPass {
        match self {
            Head::Linear(h) => h.forward(z),
            Head::Mlp(h) => h.forward(z),
        }
    }

    fn backward(&self, pass: &HeadPass, dmu: f64, dsigma: f64, grad: &mut [f64], dinput: Option<&mut [f64]>) {
        match self {
            Head::Linear(h) => h.backward(pass, dmu, dsigma, grad, dinput),
            Head::Mlp(h) => h.backward(pass, dmu, dsigma, grad, dinput),
        }
    }
}

/// How the x head of a planar model receives y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YInput {
    /// The y head's own mean (decode time).
    Mean,
    /// A known y coordinate (training with observed or sampled states).
    Given(f64),
}

/// Result of [`PredictionModel::forward`].
#[derive(Debug, Clone)]
pub struct ModelPass {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    heads: Vec<HeadPass>,
    y_from_mean: bool,
}

impl ModelPass {
    pub fn gaussian(&self) -> GaussianParams {
        GaussianParams {
            mean: self.mean.clone(),
            std: self.std.clone(),
        }
    }
}

/// `∂ log N(x; μ, σ²)/∂μ` and `∂/∂σ`.
#[inline]
pub fn gaussian_log_grad(x: f64, mu: f64, sigma: f64) -> (f64, f64) {
    let e = x - mu;
    let s2 = sigma * sigma;
    (e / s2, e * e / (s2 * sigma) - 1.0 / sigma)
}

/// Discriminative prediction process with its feature pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionModel {
    kind: ModelKind,
    lag: usize,
    channels: usize,
    scaling: FeatureScaling,
    heads: Vec<Head>,
    /// Standardization `(shift, scale)` of y when fed to the x head.
    y_feature: Option<(f64, f64)>,
}

impl PredictionModel {
    /// New model whose initial output is centred on `target` (usually the
    /// initial-state density ω₀).
    pub fn new(
        spec: &ModelSpec,
        channels: usize,
        scaling: FeatureScaling,
        target: &GaussianParams,
        seed: u64,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidConfig("model needs at least one channel".into()));
        }
        if scaling.mean.len() != channels {
            return Err(Error::DimensionMismatch {
                what: "feature scaling channels",
                expected: channels,
                got: scaling.mean.len(),
            });
        }
        let dims = target.dims();
        if !(1..=2).contains(&dims) {
            return Err(Error::InvalidConfig(format!("state dims must be 1 or 2, got {dims}")));
        }
        let n_in = channels * (1 + spec.lag);
        let mut rng = crate::seed::rng(seed, "model-init", 0);
        let make = |inputs: usize, d: usize, rng: &mut crate::seed::Rng| match spec.kind {
            ModelKind::Ddd => Head::Linear(LinearPredictor::constant(inputs, target.mean[d], target.std[d])),
            ModelKind::D4 => Head::Mlp(MlpPredictor::new(inputs, &spec.hidden, target.mean[d], target.std[d], rng)),
        };
        let (heads, y_feature) = if dims == 1 {
            (vec![make(n_in, 0, &mut rng)], None)
        } else {
            let hx = make(n_in + 1, 0, &mut rng);
            let hy = make(n_in, 1, &mut rng);
            (vec![hx, hy], Some((target.mean[1], target.std[1])))
        };
        Ok(Self {
            kind: spec.kind,
            lag: spec.lag,
            channels,
            scaling,
            heads,
            y_feature,
        })
    }

    /// Wraps explicit heads; `heads.len()` must be 1 (2-D models go
    /// through [`PredictionModel::new`]).
    pub fn from_head(kind: ModelKind, lag: usize, channels: usize, scaling: FeatureScaling, head: Head) -> Result<Self> {
        let n_in = channels * (1 + lag);
        if head.inputs() != n_in {
            return Err(Error::DimensionMismatch {
                what: "head inputs",
                expected: n_in,
                got: head.inputs(),
            });
        }
        Ok(Self {
            kind,
            lag,
            channels,
            scaling,
            heads: vec![head],
            y_feature: None,
        })
    }

    #[inline]
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    #[inline]
    pub fn lag(&self) -> usize {
        self.lag
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn state_dims(&self) -> usize {
        self.heads.len()
    }

    pub fn scaling(&self) -> &FeatureScaling {
        &self.scaling
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    /// Length of the feature vector `z`.
    #[inline]
    pub fn feature_len(&self) -> usize {
        self.channels * (1 + self.lag)
    }

    pub fn num_params(&self) -> usize {
        self.heads.iter().map(Head::num_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.heads.iter().for_each(|h| h.params_into(&mut out));
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.num_params(),
                got: p.len(),
            });
        }
        let mut off = 0;
        for h in &mut self.heads {
            let n = h.num_params();
            h.set_params(&p[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn head_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.heads.len());
        let mut off = 0;
        for h in &self.heads {
            offs.push(off);
            off += h.num_params();
        }
        offs
    }

    /// Standardized features `[s_k, s_{k-1}, …, s_{k-l}]`; padded lags are 0.
    pub fn features(&self, s: &[f64], h: &HistoryWindow) -> Result<Vec<f64>> {
        if s.len() != self.channels {
            return Err(Error::DimensionMismatch {
                what: "observation channels",
                expected: self.channels,
                got: s.len(),
            });
        }
        if h.lag != self.lag || h.channels != self.channels {
            return Err(Error::DimensionMismatch {
                what: "history lag",
                expected: self.lag,
                got: h.lag,
            });
        }
        let n = self.channels;
        let mut z = vec![0.0; self.feature_len()];
        self.scaling.apply_into(s, &mut z[..n]);
        for j in 1..=self.lag {
            if let Some(v) = h.lagged(j) {
                self.scaling.apply_into(v, &mut z[j * n..(j + 1) * n]);
            }
        }
        Ok(z)
    }

    /// Features for zero-based step `k` of `ep` (channels assumed to match).
    pub fn features_at(&self, ep: &EpisodeDataset, k: usize) -> Vec<f64> {
        let n = self.channels;
        let mut z = vec![0.0; self.feature_len()];
        for j in 0..=self.lag.min(k) {
            self.scaling
                .apply_into(ep.observations.row(k - j), &mut z[j * n..(j + 1) * n]);
        }
        z
    }

    /// Feature rows for every step of an episode.
    pub fn episode_features(&self, ep: &EpisodeDataset) -> Result<Vec<Vec<f64>>> {
        if ep.channels() != self.channels {
            return Err(Error::DimensionMismatch {
                what: "observation channels",
                expected: self.channels,
                got: ep.channels(),
            });
        }
        Ok((0..ep.len()).map(|k| self.features_at(ep, k)).collect())
    }

    /// Evaluates every head on features `z`.
    pub fn forward(&self, z: &[f64], y: YInput) -> ModelPass {
        match self.y_feature {
            None => {
                let p = self.heads[0].forward(z);
                ModelPass {
                    mean: vec![p.mean],
                    std: vec![p.std],
                    heads: vec![p],
                    y_from_mean: false,
                }
            }
            Some((shift, scale)) => {
                let py = self.heads[1].forward(z);
                let (yv, from_mean) = match y {
                    YInput::Mean => (py.mean, true),
                    YInput::Given(v) => (v, false),
                };
                let mut zx = Vec::with_capacity(z.len() + 1);
                zx.extend_from_slice(z);
                zx.push((yv - shift) / scale);
                let px = self.heads[0].forward(&zx);
                ModelPass {
                    mean: vec![px.mean, py.mean],
                    std: vec![px.std, py.std],
                    heads: vec![px, py],
                    y_from_mean: from_mean,
                }
            }
        }
    }

    /// Accumulates `Σ_d (dμ_d ∂μ_d/∂Ω + dσ_d ∂σ_d/∂Ω)` into `grad`.
    pub fn backward(&self, pass: &ModelPass, dmu: &[f64], dsigma: &[f64], grad: &mut [f64]) {
        let offs = self.head_offsets();
        match self.y_feature {
            None => {
                let n = self.heads[0].num_params();
                self.heads[0].backward(&pass.heads[0], dmu[0], dsigma[0], &mut grad[..n], None);
            }
            Some((_, scale)) => {
                let (ox, oy) = (offs[0], offs[1]);
                let nx = self.heads[0].num_params();
                let ny = self.heads[1].num_params();
                let mut dmu_y = dmu[1];
                if pass.y_from_mean {
                    let mut dz = vec![0.0; self.heads[0].inputs()];
                    self.heads[0].backward(&pass.heads[0], dmu[0], dsigma[0], &mut grad[ox..ox + nx], Some(&mut dz));
                    dmu_y += dz[dz.len() - 1] / scale;
                } else {
                    self.heads[0].backward(&pass.heads[0], dmu[0], dsigma[0], &mut grad[ox..ox + nx], None);
                }
                self.heads[1].backward(&pass.heads[1], dmu_y, dsigma[1], &mut grad[oy..oy + ny], None);
            }
        }
    }

    /// `μ_Ω(s_k, h_k)`, `σ_Ω(s_k, h_k)` as used for decoding.
    pub fn predict(&self, s: &[f64], h: &HistoryWindow) -> Result<GaussianParams> {
        let z = self.features(s, h)?;
        Ok(self.forward(&z, YInput::Mean).gaussian())
    }

    /// Training-time input mode for state `x`.
    #[inline]
    pub fn y_input_for(&self, x: &[f64]) -> YInput {
        if self.y_feature.is_some() {
            YInput::Given(x[1])
        } else {
            YInput::Mean
        }
    }

    /// `log p(x | z; Ω)` under the training factorization.
    pub fn log_density_features(&self, z: &[f64], x: &[f64]) -> f64 {
        let pass = self.forward(z, self.y_input_for(x));
        (0..pass.mean.len())
            .map(|d| log_normal_pdf(x[d], pass.mean[d], pass.std[d]))
            .sum()
    }

    /// Accumulates `∇_Ω log p(x | z; Ω)` into `grad`; returns the log density.
    pub fn log_density_grad_features(&self, z: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
        let pass = self.forward(z, self.y_input_for(x));
        let dims = pass.mean.len();
        let mut dmu = vec![0.0; dims];
        let mut dsig = vec![0.0; dims];
        let mut lp = 0.0;
        for d in 0..dims {
            lp += log_normal_pdf(x[d], pass.mean[d], pass.std[d]);
            let (a, b) = gaussian_log_grad(x[d], pass.mean[d], pass.std[d]);
            dmu[d] = a;
            dsig[d] = b;
        }
        self.backward(&pass, &dmu, &dsig, grad);
        lp
    }

    /// `log p(x | s_k, h_k; Ω)` and its gradient with respect to every parameter.
    pub fn log_density_grad(&self, s: &[f64], h: &HistoryWindow, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.state_dims() {
            return Err(Error::DimensionMismatch {
                what: "state dims",
                expected: self.state_dims(),
                got: x.len(),
            });
        }
        let z = self.features(s, h)?;
        let mut grad = vec![0.0; self.num_params()];
        let lp = self.log_density_grad_features(&z, x, &mut grad);
        Ok((lp, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Matrix;

    fn window(lag: usize, n: usize, fill: f64) -> HistoryWindow {
        HistoryWindow {
            lag,
            channels: n,
            values: vec![fill; lag * n],
            valid: vec![true; lag],
        }
    }

    fn fd_check(model: &PredictionModel, s: &[f64], h: &HistoryWindow, x: &[f64]) {
        let (_, grad) = model.log_density_grad(s, h, x).unwrap();
        let p0 = model.params();
        let mut m = model.clone();
        let eps = 1e-5;
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += eps;
            m.set_params(&p).unwrap();
            let up = m.log_density_grad(s, h, x).unwrap().0;
            p[i] -= 2.0 * eps;
            m.set_params(&p).unwrap();
            let dn = m.log_density_grad(s, h, x).unwrap().0;
            let fd = (up - dn) / (2.0 * eps);
            let err = (fd - grad[i]).abs() / (fd.abs().max(grad[i].abs()).max(1e-6));
            assert!(err < 1e-4, "param {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn linear_passthrough() {
        let mut head = LinearPredictor::constant(3, 0.0, 0.2);
        head.weights[0] = 1.0;
        head.bias = 0.0;
        let m = PredictionModel::from_head(ModelKind::Ddd, 0, 3, FeatureScaling::identity(3), Head::Linear(head))
            .unwrap();
        let g = m.predict(&[0.7, 0.1, -0.3], &HistoryWindow::empty(3)).unwrap();
        assert!((g.mean[0] - 0.7).abs() < 1e-15);
        assert!((g.std[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn linear_gradient_is_closed_form() {
        let head = LinearPredictor {
            weights: vec![0.4, -0.2, 0.1, 0.3],
            bias: 0.05,
            log_sigma: 0.3f64.ln(),
        };
        let m = PredictionModel::from_head(ModelKind::Ddd, 1, 2, FeatureScaling::identity(2), Head::Linear(head))
            .unwrap();
        let s = [0.5, -1.0];
        let h = window(1, 2, 0.2);
        let x = [0.9];
        let (_, g) = m.log_density_grad(&s, &h, &x).unwrap();
        let mu = 0.4 * 0.5 + 0.2 * 1.0 + 0.1 * 0.2 + 0.3 * 0.2 + 0.05;
        let r = (x[0] - mu) / 0.09;
        assert!((g[0] - r * s[0]).abs() < 1e-14);
        assert!((g[1] - r * s[1]).abs() < 1e-14);
        fd_check(&m, &s, &h, &x);
    }

    #[test]
    fn zero_mlp_outputs_ln2() {
        let head = MlpPredictor::zeros(2, &[4, 4]);
        let m = PredictionModel::from_head(ModelKind::D4, 0, 2, FeatureScaling::identity(2), Head::Mlp(head)).unwrap();
        let g = m.predict(&[1.0, -2.0], &HistoryWindow::empty(2)).unwrap();
        assert_eq!(g.mean[0], 0.0);
        assert!((g.std[0] - std::f64::consts::LN_2).abs() < 1e-15);
        let (lp, grad) = m.log_density_grad(&[1.0, -2.0], &HistoryWindow::empty(2), &[0.0]).unwrap();
        let s2 = std::f64::consts::LN_2.powi(2);
        assert!((lp + 0.5 * (2.0 * std::f64::consts::PI * s2).ln()).abs() < 1e-12);
        // output-mean bias is the second-to-last parameter
        assert_eq!(grad[grad.len() - 2], 0.0);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let scaling = FeatureScaling {
            mean: vec![0.1, -0.2],
            scale: vec![0.5, 2.0],
        };
        let spec = ModelSpec {
            kind: ModelKind::D4,
            lag: 2,
            hidden: vec![5, 3],
        };
        let m = PredictionModel::new(&spec, 2, scaling, &GaussianParams::scalar(0.1, 0.3).unwrap(), 4).unwrap();
        fd_check(&m, &[0.3, 0.8], &window(2, 2, -0.4), &[0.25]);
    }

    #[test]
    fn planar_gradient_matches_finite_differences() {
        for kind in [ModelKind::Ddd, ModelKind::D4] {
            let spec = ModelSpec {
                kind,
                lag: 1,
                hidden: vec![4],
            };
            let target = GaussianParams::new(vec![0.5, 0.4], vec![0.3, 0.2]).unwrap();
            let mut m = PredictionModel::new(&spec, 3, FeatureScaling::identity(3), &target, 9).unwrap();
            let p: Vec<f64> = m.params().iter().enumerate().map(|(i, v)| v + 0.01 * ((i % 7) as f64 - 3.0)).collect();
            m.set_params(&p).unwrap();
            fd_check(&m, &[1.0, 0.0, 2.0], &window(1, 3, 1.0), &[0.6, 0.35]);
        }
    }

    #[test]
    fn planar_decode_backward_reaches_y_head() {
        let spec = ModelSpec {
            kind: ModelKind::D4,
            lag: 0,
            hidden: vec![3],
        };
        let target = GaussianParams::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let m = PredictionModel::new(&spec, 2, FeatureScaling::identity(2), &target, 1).unwrap();
        let z = [0.4, -0.7];
        // d μx / dΩ through the y input, checked by finite differences
        let pass = m.forward(&z, YInput::Mean);
        let mut grad = vec![0.0; m.num_params()];
        m.backward(&pass, &[1.0, 0.0], &[0.0, 0.0], &mut grad);
        let p0 = m.params();
        let mut mm = m.clone();
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += 1e-6;
            mm.set_params(&p).unwrap();
            let up = mm.forward(&z, YInput::Mean).mean[0];
            p[i] -= 2e-6;
            mm.set_params(&p).unwrap();
            let dn = mm.forward(&z, YInput::Mean).mean[0];
            let fd = (up - dn) / 2e-6;
            assert!((fd - grad[i]).abs() < 1e-7 + 1e-5 * fd.abs(), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn zero_lag_ignores_history_and_rejects_wrong_lag() {
        let spec = ModelSpec {
            kind: ModelKind::D4,
            lag: 0,
            hidden: vec![4],
        };
        let m = PredictionModel::new(&spec, 2, FeatureScaling::identity(2), &GaussianParams::scalar(0.0, 1.0).unwrap(), 2)
            .unwrap();
        let obs = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let ep = EpisodeDataset::new(obs, None).unwrap();
        let a = m.predict(&[5.0, 6.0], &ep.history(2, 0)).unwrap();
        let b = m.predict(&[5.0, 6.0], &HistoryWindow::empty(2)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            m.predict(&[5.0, 6.0], &ep.history(2, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn features_at_matches_history_window() {
        let spec = ModelSpec::new(ModelKind::Ddd, 2);
        let sc = FeatureScaling {
            mean: vec![1.0],
            scale: vec![2.0],
        };
        let m = PredictionModel::new(&spec, 1, sc, &GaussianParams::scalar(0.0, 1.0).unwrap(), 0).unwrap();
        let ep = EpisodeDataset::new(Matrix::column(vec![1.0, 3.0, 5.0, 7.0]), None).unwrap();
        for k in 0..4 {
            let a = m.features_at(&ep, k);
            let b = m.features(ep.observations.row(k), &ep.history(k, 2)).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(m.features_at(&ep, 1), vec![1.0, 0.0, 0.0]);
    }
}
