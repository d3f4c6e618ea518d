//! Forward filtering, backward smoothing and trajectory sampling: sample
//! averages track the smoother means.

use std::sync::Arc;

use d4::densities::StateGrid;
use d4::inference::Decoder;
use d4::learning::{train, Algorithm, TrainConfig};
use d4::simulation::{generate_sim, SimSpec};

fn main() -> d4::Result<()> {
    let spec = SimSpec {
        steps: 100,
        ..Default::default()
    };
    let ep = generate_sim(&spec, 2)?.episode;
    let grid = Arc::new(StateGrid::default_line());
    let cfg = TrainConfig {
        model: d4::prediction::ModelKind::Ddd,
        lag: 1,
        em_iterations: 20,
        ..Default::default()
    };
    let fit = train(std::slice::from_ref(&ep), &grid, &cfg, Algorithm::Regularized)?;
    let post = Decoder::new(&fit.model, &fit.trans, &grid)?.decode(&ep, 500, 7)?;
    let truth = ep.require_states()?;

    for k in (0..ep.len()).step_by(20) {
        let avg = post.samples.iter().map(|t| t.get(k, 0)).sum::<f64>() / post.samples.len() as f64;
        println!(
            "k={k:3} true {:+.4} filter {:+.4} smoother {:+.4} ± {:.4} sample mean {avg:+.4}",
            truth.get(k, 0),
            post.filter[k].mean()[0],
            post.smoother[k].mean()[0],
            post.smoother[k].std()[0],
        );
    }
    Ok(())
}
