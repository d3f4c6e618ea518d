use serde::{Deserialize, Serialize};

use super::HeadPass;

/// Linear-Gaussian prediction head: `N(w·z + bias, σ_s²)`.
///
/// `z` is the model's feature vector: the current observation, then the
/// stacked history (and the y feature for the x head of a planar model).
/// Parameters are flattened as `[w…, bias, ln σ_s]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub log_sigma: f64,
}

impl LinearPredictor {
    /// Zero weights, `bias = mean`, `σ_s = std`.
    pub fn constant(inputs: usize, mean: f64, std: f64) -> Self {
        Self {
            weights: vec![0.0; inputs],
            bias: mean,
            log_sigma: std.ln(),
        }
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    pub(super) fn inputs(&self) -> usize {
        self.weights.len()
    }

    pub(super) fn num_params(&self) -> usize {
        self.weights.len() + 2
    }

    pub(super) fn params_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.push(self.bias);
        out.push(self.log_sigma);
    }

    pub(super) fn set_params(&mut self, p: &[f64]) {
        let n = self.weights.len();
        self.weights.copy_from_slice(&p[..n]);
        self.bias = p[n];
        self.log_sigma = p[n + 1];
    }

    pub(super) fn forward(&self, z: &[f64]) -> HeadPass {
        let mu = self.bias + self.weights.iter().zip(z).map(|(w, v)| w * v).sum::<f64>();
        HeadPass {
            mean: mu,
            std: self.sigma(),
            hidden: Vec::new(),
            input: z.to_vec(),
            raw_std: 0.0,
        }
    }

    pub(super) fn backward(
        &self,
        pass: &HeadPass,
        dmu: f64,
        dsigma: f64,
        grad: &mut [f64],
        dinput: Option<&mut [f64]>,
    ) {
        let n = self.weights.len();
        for (g, v) in grad[..n].iter_mut().zip(&pass.input) {
            *g += dmu * v;
        }
        grad[n] += dmu;
        grad[n + 1] += dsigma * pass.std;
        if let Some(di) = dinput {
            for (d, w) in di.iter_mut().zip(&self.weights) {
                *d += dmu * w;
            }
        }
    }
}
