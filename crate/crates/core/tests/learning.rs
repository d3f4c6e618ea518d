//! Training-loop behaviour on small simulated problems.

use std::sync::Arc;

use d4::dataset::{EpisodeDataset, FeatureScaling};
use d4::densities::StateGrid;
use d4::learning::{
    grad_step_regularized, initial_model, train, Algorithm, Optimizer, OptimizerKind, Supervision, TrainConfig,
    TrainingSet,
};
use d4::prediction::{Head, LinearPredictor, ModelKind, PredictionModel};
use d4::simulation::{generate_sim, SimSpec};
use d4::transition::LinearGaussianTransition;

fn sim(steps: usize, max_lag: usize, seed: u64) -> EpisodeDataset {
    let spec = SimSpec {
        steps,
        max_lag,
        ..Default::default()
    };
    generate_sim(&spec, seed).unwrap().episode
}

#[test]
fn memoryless_generator_selects_short_history() {
    let ep = sim(500, 0, 4);
    let grid = Arc::new(StateGrid::default_line());
    let cfg = TrainConfig {
        max_lag: 4,
        seed: 4,
        ..Default::default()
    };
    let out = train(&[ep], &grid, &cfg, Algorithm::Greedy).unwrap();
    let lags: Vec<usize> = out.curve.iter().map(|p| p.lag).collect();
    assert!(out.model.lag() <= 1, "selected {} from {lags:?}", out.model.lag());
    assert_eq!(out.q, out.curve[out.model.lag()].q);
}

#[test]
fn single_step_ascends_the_bound() {
    let ep = sim(200, 4, 7);
    let grid = Arc::new(StateGrid::default_line());
    let mut ups = 0;
    for seed in 0..20 {
        let cfg = TrainConfig {
            seed,
            lag: 2,
            ..Default::default()
        };
        let (model, trans) = initial_model(std::slice::from_ref(&ep), &grid, &cfg, 2, None).unwrap();
        let set = TrainingSet::observed(std::slice::from_ref(&ep), &model, &trans, &grid).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-3, model.num_params());
        let next = grad_step_regularized(&set, &model, 0.5, &mut opt).unwrap();
        let before = set.q_breakdown(&model, &trans, 0.5, 0.0).q_regularized;
        let after = set.q_breakdown(&next, &trans, 0.5, 0.0).q_regularized;
        ups += usize::from(after > before);
    }
    assert!(ups >= 18, "{ups}/20 steps increased the bound");
}

#[test]
fn least_squares_fit_is_a_fixed_point() {
    let a = 0.9;
    let states = d4::simulation::ar1_states(a, 0.0, 0.1, 0.0, 400, 2);
    let obs: Vec<f64> = (0..400).map(|k| 2.0 * states.get(k, 0) + 0.3 + 0.05 * ((k * 7919 % 101) as f64 / 101.0 - 0.5)).collect();
    let ep = EpisodeDataset::new(d4::dataset::Matrix::column(obs.clone()), Some(states.clone())).unwrap();
    // ordinary least squares of x on s
    let n = obs.len() as f64;
    let xs = states.column_values(0);
    let (ms, mx) = (obs.iter().sum::<f64>() / n, xs.iter().sum::<f64>() / n);
    let cov: f64 = obs.iter().zip(&xs).map(|(s, x)| (s - ms) * (x - mx)).sum::<f64>();
    let var: f64 = obs.iter().map(|s| (s - ms).powi(2)).sum::<f64>();
    let w = cov / var;
    let b = mx - w * ms;
    let rss: f64 = obs.iter().zip(&xs).map(|(s, x)| (x - w * s - b).powi(2)).sum::<f64>();
    let head = LinearPredictor {
        weights: vec![w],
        bias: b,
        log_sigma: (rss / n).sqrt().ln(),
    };
    let model =
        PredictionModel::from_head(ModelKind::Ddd, 0, 1, FeatureScaling::identity(1), Head::Linear(head)).unwrap();
    let trans = LinearGaussianTransition::ar1(a, 0.0, 0.1).unwrap();
    let grid = Arc::new(StateGrid::default_line());
    let set = TrainingSet::observed(std::slice::from_ref(&ep), &model, &trans, &grid).unwrap();
    let mut opt = Optimizer::new(OptimizerKind::Sgd, 1e-3, model.num_params());
    let next = grad_step_regularized(&set, &model, 0.0, &mut opt).unwrap();
    let p0 = model.params();
    let step: f64 = p0.iter().zip(next.params()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = p0.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(step < 1e-3 * norm, "step {step} vs norm {norm}");
}

#[test]
fn latent_em_rarely_decreases() {
    let ep = sim(300, 4, 9);
    let grid = Arc::new(StateGrid::default_line());
    let cfg = TrainConfig {
        model: ModelKind::Ddd,
        lag: 2,
        supervision: Supervision::Latent,
        em_iterations: 15,
        samples: 16,
        seed: 9,
        ..Default::default()
    };
    let out = train(&[ep], &grid, &cfg, Algorithm::Regularized).unwrap();
    let trace: Vec<f64> = out
        .log
        .iter()
        .filter(|r| r.supervision == Supervision::Latent)
        .map(|r| r.q.q_regularized)
        .collect();
    assert!(trace.len() >= 3);
    let drops = trace.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(
        (drops as f64) < 0.2 * (trace.len() - 1) as f64,
        "{drops} drops in {trace:?}"
    );
    let best = trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.q.q_regularized, best);
}

#[test]
fn training_is_reproducible() {
    let ep = sim(150, 4, 3);
    let grid = Arc::new(StateGrid::default_line());
    let cfg = TrainConfig {
        max_lag: 2,
        em_iterations: 3,
        supervision: Supervision::Latent,
        samples: 4,
        seed: 3,
        ..Default::default()
    };
    let a = train(std::slice::from_ref(&ep), &grid, &cfg, Algorithm::Greedy).unwrap();
    let b = train(&[ep], &grid, &cfg, Algorithm::Greedy).unwrap();
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.q, b.q);
}

#[test]
fn invalid_configs_are_rejected() {
    let ep = sim(50, 4, 1);
    let grid = Arc::new(StateGrid::default_line());
    let bad = [
        TrainConfig {
            lambda: -1.0,
            ..Default::default()
        },
        TrainConfig {
            batch_steps: Some(0),
            ..Default::default()
        },
        TrainConfig {
            max_lag: 60,
            ..Default::default()
        },
    ];
    for cfg in bad {
        assert!(train(std::slice::from_ref(&ep), &grid, &cfg, Algorithm::Greedy).is_err());
    }
}
