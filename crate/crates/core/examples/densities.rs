//! Grid densities: discretization, moments, KL, entropy and HPD sets
//! compared with their closed forms.

use std::sync::Arc;

use d4::densities::{discretize, entropy, kl_divergence, GaussianParams, StateGrid};

fn main() -> d4::Result<()> {
    let grid = Arc::new(StateGrid::default_line());
    let p = discretize(&GaussianParams::scalar(0.3, 0.5)?, &grid)?;
    let q = discretize(&GaussianParams::scalar(-0.2, 0.8)?, &grid)?;

    println!("mean {:.6} std {:.6}", p.mean()[0], p.std()[0]);
    let kl = (0.8f64 / 0.5).ln() + (0.25 + 0.25) / (2.0 * 0.64) - 0.5;
    println!("KL(p||q) grid {:.6} closed form {kl:.6}", kl_divergence(&p, &q)?);
    let h = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 0.25).ln();
    println!("H(p)     grid {:.6} closed form {h:.6}", entropy(&p));

    let hpd = p.hpd(0.95);
    println!(
        "95% HPD: {} cells, length {:.4} (2 x 1.96 x 0.5 = {:.4}), mass {:.4}",
        hpd.cells.len(),
        hpd.volume,
        2.0 * 1.96 * 0.5,
        hpd.mass
    );
    Ok(())
}
