//! Regularized EM with a 20-step history and observed states, then
//! decoding held-out data.

use std::sync::Arc;

use d4::densities::StateGrid;
use d4::learning::{train, Algorithm, TrainConfig};
use d4::metrics::{decode_and_evaluate, holdout_split, Estimator};
use d4::prediction::ModelKind;
use d4::simulation::{generate_sim, SimSpec};

fn main() -> d4::Result<()> {
    let ep = generate_sim(&SimSpec::default(), 3)?.episode;
    let split = holdout_split(&ep, 0.5)?;
    let grid = Arc::new(StateGrid::default_line());
    let cfg = TrainConfig {
        model: ModelKind::D4,
        lag: 20,
        lambda: 0.5,
        em_iterations: 20,
        seed: 3,
        ..Default::default()
    };
    let out = train(&split.train, &grid, &cfg, Algorithm::Regularized)?;
    for r in out.log.iter().step_by(4) {
        println!(
            "{:?} iteration {:2}: q_regularized {:9.2} penalty {:9.2}",
            r.supervision, r.iteration, r.q.q_regularized, r.q.penalty_sum
        );
    }
    let t = &out.trans.axes[0];
    println!("transition a {:.3} b {:+.3} sigma {:.3}", t.a, t.b, t.sigma);
    let report = decode_and_evaluate(&out, &split.test, &grid, "test", Estimator::Smoother)?;
    let ax = report.axes[0];
    println!("test: mse {:.5} cc {:.4} 95% coverage {:.3}", ax.mse, ax.cc, ax.coverage);
    Ok(())
}
