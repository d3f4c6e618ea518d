use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Halvings tolerated in a row before giving up on a non-finite gradient.
pub const MAX_NAN_RETRIES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// First-order ascent with a NaN guard.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    bad_streak: usize,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        Self {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            bad_streak: 0,
        }
    }

    #[inline]
    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Moves `params` uphill along `grad`. A non-finite gradient skips the
    /// step and halves the learning rate; returns whether a step was taken.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) -> Result<bool> {
        if grad.iter().any(|g| !g.is_finite()) {
            self.lr *= 0.5;
            self.bad_streak += 1;
            if self.bad_streak > MAX_NAN_RETRIES {
                return Err(Error::NonFiniteGradient {
                    retries: self.bad_streak - 1,
                });
            }
            return Ok(false);
        }
        self.bad_streak = 0;
        match self.kind {
            OptimizerKind::Sgd => {
                params.iter_mut().zip(grad).for_each(|(p, g)| *p += self.lr * g);
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.t += 1;
                let c1 = 1.0 - B1.powi(self.t);
                let c2 = 1.0 - B2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
                    self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
                    params[i] += self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
                }
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascends_a_concave_quadratic() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let mut p = vec![3.0, -2.0];
            let mut opt = Optimizer::new(kind, 0.05, 2);
            for _ in 0..2000 {
                let g: Vec<f64> = p.iter().map(|x| -2.0 * (x - 1.0)).collect();
                opt.ascend(&mut p, &g).unwrap();
            }
            assert!(p.iter().all(|x| (x - 1.0).abs() < 1e-3), "{kind:?}: {p:?}");
        }
    }

    #[test]
    fn nan_gradient_halves_rate_then_fails() {
        let mut p = vec![1.0];
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-3, 1);
        assert!(!opt.ascend(&mut p, &[f64::NAN]).unwrap());
        assert_eq!(opt.learning_rate(), 5e-4);
        assert_eq!(p, vec![1.0]);
        let err = (0..MAX_NAN_RETRIES + 1).find_map(|_| opt.ascend(&mut p, &[f64::INFINITY]).err());
        assert!(matches!(err, Some(Error::NonFiniteGradient { .. })));
    }
}
