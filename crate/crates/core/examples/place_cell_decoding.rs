//! Decoding 2-D position from simulated place-cell spikes with a
//! discriminative decoder and a Poisson state-space model.

use d4::cli::{fit_checkpoint, ModelArg, TrainOptions};
use d4::metrics::{evaluate, holdout_split, Estimator};
use d4::simulation::{generate_place_cells, PlaceCellSpec};

fn main() -> d4::Result<()> {
    let data = generate_place_cells(&PlaceCellSpec::default(), 1)?;
    let split = holdout_split(&data.episode, 0.8)?;
    println!(
        "{} cells, {} train bins, {} test bins",
        data.fields.len(),
        split.train[0].len(),
        split.test.len()
    );
    for model in [ModelArg::Ssm, ModelArg::Ddd, ModelArg::D4] {
        let opts = TrainOptions {
            model: Some(model),
            lag: Some(2),
            algorithm: Some(d4::learning::Algorithm::Regularized),
            em_iterations: Some(15),
            seed: Some(1),
            ..Default::default()
        };
        let (ck, _) = fit_checkpoint(&opts, &split.train[0])?;
        let post = ck.decode(&split.test)?;
        let r = evaluate(split.test.require_states()?, &post, "test", Estimator::Smoother)?;
        println!(
            "{:8} mse x {:.5} y {:.5} | cc x {:.4} y {:.4} | joint 95% coverage {:.3}",
            ck.label(),
            r.axes[0].mse,
            r.axes[1].mse,
            r.axes[0].cc,
            r.axes[1].cc,
            r.coverage
        );
    }
    Ok(())
}
