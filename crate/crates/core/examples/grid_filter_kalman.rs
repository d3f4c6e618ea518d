//! On a linear-Gaussian problem the grid filter with a flat history
//! marginal is the Kalman filter; this prints both side by side.

use std::sync::Arc;

use d4::dataset::{EpisodeDataset, FeatureScaling, Matrix};
use d4::densities::StateGrid;
use d4::inference::{Decoder, HistoryMode};
use d4::prediction::{Head, LinearPredictor, ModelKind, PredictionModel};
use d4::transition::LinearGaussianTransition;
use rand::Rng;
use rand_distr::StandardNormal;

fn main() -> d4::Result<()> {
    let (a, sigma_x, sigma_s) = (0.9, 0.1, 0.2);
    let states = d4::simulation::ar1_states(a, 0.0, sigma_x, 0.0, 200, 1);
    let mut rng = d4::seed::rng(1, "noise", 0);
    let obs: Vec<f64> = (0..200)
        .map(|k| {
            let e: f64 = rng.sample(StandardNormal);
            states.get(k, 0) + sigma_s * e
        })
        .collect();
    let ep = EpisodeDataset::new(Matrix::column(obs.clone()), Some(states))?;

    // p(x | s) = N(s, σ_s²)
    let head = LinearPredictor {
        weights: vec![1.0],
        bias: 0.0,
        log_sigma: sigma_s.ln(),
    };
    let model = PredictionModel::from_head(ModelKind::Ddd, 0, 1, FeatureScaling::identity(1), Head::Linear(head))?;
    let trans = LinearGaussianTransition::ar1(a, 0.0, sigma_x)?;
    let grid = Arc::new(StateGrid::line(-8.0, 8.0, 400)?);
    let post = Decoder::new(&model, &trans, &grid)?
        .with_history_mode(HistoryMode::Flat)
        .decode(&ep, 0, 0)?;

    let (mut m, mut v) = (trans.initial.mean[0], trans.initial.std[0].powi(2));
    let mut worst: f64 = 0.0;
    for (k, y) in obs.iter().enumerate() {
        let (mp, vp) = (a * m, a * a * v + sigma_x * sigma_x);
        let gain = vp / (vp + sigma_s * sigma_s);
        m = mp + gain * (y - mp);
        v = (1.0 - gain) * vp;
        let grid_mean = post.filter[k].mean()[0];
        worst = worst.max((grid_mean - m).abs() / v.sqrt());
        if k % 40 == 0 {
            println!("k={k:3} kalman {m:+.5} grid {grid_mean:+.5} std {:.5} / {:.5}", v.sqrt(), post.filter[k].std()[0]);
        }
    }
    println!("max |grid - kalman| / kalman std = {worst:.2e}");
    Ok(())
}
