//! Shared fixtures: a linear-Gaussian problem and its Kalman/RTS oracle.
#![allow(dead_code)]

use d4::dataset::{EpisodeDataset, FeatureScaling, Matrix};
use d4::prediction::{Head, LinearPredictor, ModelKind, PredictionModel};
use d4::transition::LinearGaussianTransition;
use rand::Rng;
use rand_distr::StandardNormal;

/// `N(s_k, σ_s²)` as a prediction process: with a flat history marginal
/// the grid filter is the Bayes filter for `s_k = x_k + v_k`.
pub fn passthrough(sigma: f64) -> PredictionModel {
    let head = LinearPredictor {
        weights: vec![1.0],
        bias: 0.0,
        log_sigma: sigma.ln(),
    };
    PredictionModel::from_head(ModelKind::Ddd, 0, 1, FeatureScaling::identity(1), Head::Linear(head)).unwrap()
}

/// AR(1) states observed through additive Gaussian noise.
pub fn linear_episode(a: f64, sigma_x: f64, sigma_s: f64, steps: usize, seed: u64) -> EpisodeDataset {
    let states = d4::simulation::ar1_states(a, 0.0, sigma_x, 0.0, steps, seed);
    let mut rng = d4::seed::rng(seed, "obs-noise", 0);
    let obs: Vec<f64> = (0..steps)
        .map(|k| {
            let e: f64 = rng.sample(StandardNormal);
            states.get(k, 0) + sigma_s * e
        })
        .collect();
    EpisodeDataset::new(Matrix::column(obs), Some(states)).unwrap()
}

pub struct Gaussians {
    pub filter_mean: Vec<f64>,
    pub filter_var: Vec<f64>,
    pub smoother_mean: Vec<f64>,
    pub smoother_var: Vec<f64>,
}

/// Kalman filter and RTS smoother for `x_k = a x_{k-1} + b + w`,
/// `y_k = x_k + v`, with the first state predicted from `trans.initial`.
pub fn kalman_rts(y: &[f64], trans: &LinearGaussianTransition, sigma_s: f64) -> Gaussians {
    let ax = trans.axes[0];
    let (a, b, q) = (ax.a, ax.b, ax.sigma * ax.sigma);
    let r = sigma_s * sigma_s;
    let n = y.len();
    let (mut pm, mut pv) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut fm, mut fv) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut m, mut v) = (trans.initial.mean[0], trans.initial.std[0].powi(2));
    for &obs in y {
        let (mp, vp) = (a * m + b, a * a * v + q);
        let gain = vp / (vp + r);
        m = mp + gain * (obs - mp);
        v = (1.0 - gain) * vp;
        pm.push(mp);
        pv.push(vp);
        fm.push(m);
        fv.push(v);
    }
    let (mut sm, mut sv) = (fm.clone(), fv.clone());
    for k in (0..n - 1).rev() {
        let c = fv[k] * a / pv[k + 1];
        sm[k] = fm[k] + c * (sm[k + 1] - pm[k + 1]);
        sv[k] = fv[k] + c * c * (sv[k + 1] - pv[k + 1]);
    }
    Gaussians {
        filter_mean: fm,
        filter_var: fv,
        smoother_mean: sm,
        smoother_var: sv,
    }
}
