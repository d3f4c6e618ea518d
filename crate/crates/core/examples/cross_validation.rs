//! Two-fold contiguous cross-validation of the linear and neural decoders.

use std::sync::Arc;

use d4::densities::StateGrid;
use d4::learning::{Algorithm, TrainConfig};
use d4::metrics::{cross_validate, fold_splits, Estimator};
use d4::prediction::ModelKind;
use d4::simulation::{generate_sim, SimSpec};

fn main() -> d4::Result<()> {
    let spec = SimSpec {
        steps: 600,
        ..Default::default()
    };
    let ep = generate_sim(&spec, 2)?.episode;
    let splits = fold_splits(&ep, 2)?;
    let grid = Arc::new(StateGrid::default_line());
    for model in [ModelKind::Ddd, ModelKind::D4] {
        let cfg = TrainConfig {
            model,
            max_lag: 3,
            em_iterations: 10,
            seed: 2,
            ..Default::default()
        };
        let folds = cross_validate(&splits, &grid, &cfg, Algorithm::Greedy, Estimator::Smoother)?;
        for (i, f) in folds.iter().enumerate() {
            let (tr, te) = (f.train[0].axes[0], f.test.axes[0]);
            println!(
                "{model} fold {i} lag {}: train cc {:.4} mse {:.5} | test cc {:.4} mse {:.5} coverage {:.3}",
                f.outcome.model.lag(),
                tr.cc,
                tr.mse,
                te.cc,
                te.mse,
                te.coverage
            );
        }
    }
    Ok(())
}
