//! Penalty-weight sweep: the bound falls as λ grows while validation CC
//! picks the weight.

use std::sync::Arc;

use d4::densities::StateGrid;
use d4::learning::TrainConfig;
use d4::metrics::select_lambda;
use d4::prediction::ModelKind;
use d4::simulation::{generate_sim, SimSpec};

fn main() -> d4::Result<()> {
    let spec = SimSpec {
        steps: 500,
        ..Default::default()
    };
    let ep = generate_sim(&spec, 1)?.episode;
    let grid = Arc::new(StateGrid::default_line());
    let cfg = TrainConfig {
        model: ModelKind::Ddd,
        lag: 10,
        em_iterations: 20,
        seed: 1,
        ..Default::default()
    };
    let (best, scores) = select_lambda(&[ep], &grid, &cfg, &[0.0, 0.25, 0.5, 1.0, 2.0], 0.2)?;
    for s in &scores {
        println!("λ {:4.2}: q_regularized {:9.2} validation cc {:.4}", s.lambda, s.q_regularized, s.cc);
    }
    println!("selected λ = {best}");
    Ok(())
}
