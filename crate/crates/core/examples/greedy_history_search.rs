//! Greedy history search: grows the history one lag at a time and keeps
//! the length with the highest Q.

use std::sync::Arc;

use d4::densities::StateGrid;
use d4::learning::{train, Algorithm, TrainConfig};
use d4::simulation::{generate_sim, SimSpec};

fn main() -> d4::Result<()> {
    let spec = SimSpec {
        steps: 500,
        ..Default::default()
    };
    let ep = generate_sim(&spec, 1)?.episode;
    let grid = Arc::new(StateGrid::default_line());
    let cfg = TrainConfig {
        max_lag: 6,
        em_iterations: 15,
        seed: 1,
        ..Default::default()
    };
    let out = train(&[ep], &grid, &cfg, Algorithm::Greedy)?;
    println!("lag  q_greedy   E[log pred]  KL sum");
    for p in &out.curve {
        println!("{:3}  {:9.2}  {:11.2}  {:8.2}", p.lag, p.q.q_greedy, p.q.expected_log_prediction, p.q.kl_sum);
    }
    println!("selected lag {} after {} EM iterations", out.model.lag(), out.log.len());
    Ok(())
}
