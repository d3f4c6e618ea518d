//! Property tests for densities, propagation, HPD sets, metrics, the
//! filter and the training objective.

mod common;

use std::sync::Arc;

use d4::dataset::{EpisodeDataset, FeatureScaling, Matrix};
use d4::densities::{discretize_renormalized, kl_divergence, GaussianParams, GridDensity, StateGrid};
use d4::inference::{Decoder, HistoryMode};
use d4::learning::{compute_q, TrainingSet};
use d4::metrics::{evaluate_densities, Estimator};
use d4::prediction::{ModelKind, ModelSpec, PredictionModel};
use d4::transition::LinearGaussianTransition;
use proptest::prelude::*;

fn coarse() -> Arc<StateGrid> {
    Arc::new(StateGrid::line(-3.0, 3.0, 100).unwrap())
}

fn gaussian(grid: &Arc<StateGrid>, m: f64, s: f64) -> GridDensity {
    discretize_renormalized(&GaussianParams::scalar(m, s).unwrap(), grid)
}

fn random_density(grid: &Arc<StateGrid>, raw: &[f64]) -> GridDensity {
    GridDensity::from_values(grid.clone(), raw.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_nonnegative(m1 in -2.0..2.0f64, s1 in 0.05..1.0f64, m2 in -2.0..2.0f64, s2 in 0.05..1.0f64) {
        let g = coarse();
        let kl = kl_divergence(&gaussian(&g, m1, s1), &gaussian(&g, m2, s2)).unwrap();
        prop_assert!(kl >= 0.0);
    }

    #[test]
    fn arbitrary_kl_is_nonnegative(raw in prop::collection::vec(0.01..1.0f64, 40), other in prop::collection::vec(0.01..1.0f64, 40)) {
        let g = Arc::new(StateGrid::line(0.0, 1.0, 40).unwrap());
        prop_assert!(kl_divergence(&random_density(&g, &raw), &random_density(&g, &other)).unwrap() >= -1e-12);
    }

    #[test]
    fn propagation_conserves_interior_mass(a in -0.95..0.95f64, sigma in 0.05..0.4f64, m in -1.0..1.0f64, s in 0.05..0.5f64) {
        let g = Arc::new(StateGrid::default_line());
        let trans = LinearGaussianTransition::ar1(a, 0.0, sigma).unwrap();
        let out = trans.propagator(&g).unwrap().apply(&gaussian(&g, m, s)).unwrap();
        prop_assert!((out.mass() - 1.0).abs() < 1e-9, "mass {}", out.mass());
        prop_assert!(out.values().iter().all(|v| *v >= 0.0));
        let mean = out.mean()[0];
        prop_assert!((mean - a * m).abs() < 1e-3);
    }

    #[test]
    fn planar_propagation_conserves_mass(sx in 0.05..0.3f64, sy in 0.05..0.3f64, mx in -0.5..0.5f64, my in -0.5..0.5f64) {
        let g = Arc::new(StateGrid::line(-2.0, 2.0, 30).unwrap());
        let grid = Arc::new(StateGrid::plane(*g.axis(0), *g.axis(0)).unwrap());
        let trans = LinearGaussianTransition::random_walk(&[sx, sy], GaussianParams::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()).unwrap();
        let p = discretize_renormalized(&GaussianParams::new(vec![mx, my], vec![0.3, 0.3]).unwrap(), &grid);
        let out = trans.propagator(&grid).unwrap().apply(&p).unwrap();
        prop_assert!((out.mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hpd_is_minimal(raw in prop::collection::vec(0.0..1.0f64, 50), level in 0.5..0.99f64) {
        prop_assume!(raw.iter().sum::<f64>() > 1e-3);
        let g = Arc::new(StateGrid::line(0.0, 1.0, 50).unwrap());
        let d = random_density(&g, &raw);
        let h = d.hpd(level);
        let w = g.cell_volume();
        prop_assert!(h.mass >= level - 1e-12);
        // dropping the least dense member falls below the level
        let weakest = d.values()[*h.cells.last().unwrap()];
        prop_assert!(h.mass - weakest * w < level + 1e-12);
        // every excluded cell is no denser than every included one
        for (i, v) in d.values().iter().enumerate() {
            if !h.contains(i) {
                prop_assert!(*v <= h.threshold);
            }
        }
        prop_assert!((h.volume - h.cells.len() as f64 * w).abs() < 1e-12);
    }

    #[test]
    fn mse_dominates_squared_mae(truth in prop::collection::vec(-2.0..2.0f64, 3..30), offsets in prop::collection::vec(-1.0..1.0f64, 30)) {
        let g = Arc::new(StateGrid::line(-4.0, 4.0, 200).unwrap());
        let dens: Vec<GridDensity> = truth.iter().zip(&offsets).map(|(t, o)| gaussian(&g, t + o, 0.2)).collect();
        let r = evaluate_densities(&Matrix::column(truth.clone()), &dens, "p", Estimator::Smoother).unwrap();
        prop_assert!(r.axes[0].mse >= r.axes[0].mae.powi(2) - 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.axes[0].coverage));
    }

    /// The grid filter's variance settles at the steady-state Riccati value.
    #[test]
    fn filter_variance_converges(a in 0.5..0.95f64, sigma_x in 0.08..0.2f64, sigma_s in 0.1..0.3f64) {
        let trans = LinearGaussianTransition::ar1(a, 0.0, sigma_x).unwrap();
        let ep = common::linear_episode(a, sigma_x, sigma_s, 60, 1);
        let g = Arc::new(StateGrid::line(-4.0, 4.0, 400).unwrap());
        let model = common::passthrough(sigma_s);
        let post = Decoder::new(&model, &trans, &g).unwrap().with_history_mode(HistoryMode::Flat).run_filter(&ep).unwrap();
        let (q, r) = (sigma_x * sigma_x, sigma_s * sigma_s);
        let mut p = q;
        for _ in 0..1000 {
            let pred = a * a * p + q;
            p = pred * r / (pred + r);
        }
        let last = post.filter.last().unwrap().variance()[0];
        prop_assert!((last - p).abs() / p < 0.01, "grid {last} vs riccati {p}");
    }

    /// The latent path with the true trajectory as its only sample gives
    /// the same expectation terms as observed supervision.
    #[test]
    fn observed_and_sampled_paths_agree(seed in 0u64..1000, sigma in 0.1..0.4f64) {
        let g = coarse();
        let trans = LinearGaussianTransition::ar1(0.8, 0.0, 0.15).unwrap();
        let ep = common::linear_episode(0.8, 0.15, sigma, 20, seed);
        let model = common::passthrough(sigma);
        let mut post = Decoder::new(&model, &trans, &g).unwrap().decode(&ep, 1, seed).unwrap();
        post.samples = vec![ep.states.clone().unwrap()];
        let latent = compute_q(&ep, &model, &trans, &g, Some(&post), 0.5).unwrap();
        let observed = compute_q(&ep, &model, &trans, &g, None, 0.5).unwrap();
        prop_assert_eq!(latent.expected_log_initial, observed.expected_log_initial);
        prop_assert_eq!(latent.expected_log_transition, observed.expected_log_transition);
        prop_assert_eq!(latent.expected_log_prediction, observed.expected_log_prediction);
        prop_assert!(latent.kl_sum >= 0.0 && observed.kl_sum >= 0.0);
        prop_assert!(observed.q_greedy >= observed.expected_terms());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Analytic gradient of the penalized objective against central
    /// differences, for small random models on a coarse grid.
    #[test]
    fn penalized_gradient_matches_finite_differences(
        d4 in any::<bool>(),
        lag in 0usize..3,
        channels in 1usize..3,
        lambda in 0.0..2.0f64,
        seed in 0u64..10_000,
    ) {
        let g = coarse();
        let spec = ModelSpec { kind: if d4 { ModelKind::D4 } else { ModelKind::Ddd }, lag, hidden: vec![3, 3] };
        let model = PredictionModel::new(&spec, channels, FeatureScaling::identity(channels), &GaussianParams::scalar(0.1, 0.4).unwrap(), seed).unwrap();
        let steps = 6;
        let obs: Vec<f64> = (0..steps * channels).map(|i| ((i as f64 + seed as f64) * 0.77).sin()).collect();
        let states: Vec<f64> = (0..steps).map(|k| ((k as f64 + seed as f64) * 0.31).cos() * 0.5).collect();
        let ep = EpisodeDataset::new(Matrix::new(channels, obs).unwrap(), Some(Matrix::column(states))).unwrap();
        let trans = LinearGaussianTransition::ar1(0.8, 0.0, 0.2).unwrap();
        let post = Decoder::new(&model, &trans, &g).unwrap().decode(&ep, 2, seed).unwrap();
        let set = TrainingSet::from_posteriors(std::slice::from_ref(&ep), std::slice::from_ref(&post), &model, &trans).unwrap();
        let grad = set.gradient(&model, lambda);
        let p0 = model.params();
        let mut m = model.clone();
        let eps = 1e-5;
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += eps;
            m.set_params(&p).unwrap();
            let up = set.objective(&m, lambda).value;
            p[i] -= 2.0 * eps;
            m.set_params(&p).unwrap();
            let dn = set.objective(&m, lambda).value;
            let fd = (up - dn) / (2.0 * eps);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            prop_assert!(err < 1e-3, "param {}: analytic {} vs fd {}", i, grad[i], fd);
        }
    }
}
