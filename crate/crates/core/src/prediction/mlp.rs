use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::HeadPass;

/// Lower bound on the softplus output of the σ head.
pub const SIGMA_HEAD_FLOOR: f64 = 1e-3;

/// Feed-forward network with a heteroscedastic Gaussian head.
///
/// Hidden layers use tanh. The two linear outputs `(o₀, o₁)` map to
/// `μ = shift + scale·o₀` and `σ = scale·max(softplus(o₁), 1e-3)`, where
/// `shift`/`scale` put the outputs in state units. Parameters are
/// flattened layer by layer as `W (row-major, out × in), b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpPredictor {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
    pub out_shift: f64,
    pub out_scale: f64,
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl MlpPredictor {
    /// Glorot-uniform weights, zero biases except the σ output, which starts
    /// at `softplus⁻¹(1)` so the initial σ equals `out_scale`.
    pub fn new(inputs: usize, hidden: &[usize], out_shift: f64, out_scale: f64, rng: &mut crate::seed::Rng) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(inputs);
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-r..r)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        let n = params.len();
        params[n - 1] = (std::f64::consts::E - 1.0).ln();
        Self {
            sizes,
            params,
            out_shift,
            out_scale,
        }
    }

    /// All weights and biases zero.
    pub fn zeros(inputs: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(2);
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self {
            sizes,
            params: vec![0.0; n],
            out_shift: 0.0,
            out_scale: 1.0,
        }
    }

    pub(super) fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub(super) fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Offsets of `(W, b)` for layer `l` (0-based).
    fn layer(&self, l: usize) -> (usize, usize, usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        (off, off + fan_in * fan_out, fan_in, fan_out)
    }

    pub(super) fn forward(&self, z: &[f64]) -> HeadPass {
        let layers = self.sizes.len() - 1;
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(layers - 1);
        let mut out = [0.0; 2];
        for l in 0..layers {
            let (w_off, b_off, fan_in, fan_out) = self.layer(l);
            let a: &[f64] = if l == 0 { z } else { &hidden[l - 1] };
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let row = &self.params[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                let s: f64 = self.params[b_off + o] + row.iter().zip(a).map(|(w, v)| w * v).sum::<f64>();
                next.push(s);
            }
            if l + 1 < layers {
                next.iter_mut().for_each(|v| *v = v.tanh());
                hidden.push(next);
            } else {
                out = [next[0], next[1]];
            }
        }
        let sp = softplus(out[1]);
        HeadPass {
            mean: self.out_shift + self.out_scale * out[0],
            std: self.out_scale * sp.max(SIGMA_HEAD_FLOOR),
            hidden,
            input: z.to_vec(),
            raw_std: out[1],
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
        let layers = self.sizes.len() - 1;
        let o1 = pass.raw_std;
        let dsp = if softplus(o1) > SIGMA_HEAD_FLOOR {
            sigmoid(o1)
        } else {
            0.0
        };
        let mut delta = vec![self.out_scale * dmu, self.out_scale * dsigma * dsp];
        let mut dinput = dinput;
        for l in (0..layers).rev() {
            let (w_off, b_off, fan_in, fan_out) = self.layer(l);
            let a: &[f64] = if l == 0 { &pass.input } else { &pass.hidden[l - 1] };
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[b_off + o] += d;
                let g = &mut grad[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                g.iter_mut().zip(a).for_each(|(g, v)| *g += d * v);
            }
            if l == 0 && dinput.is_none() {
                break;
            }
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &self.params[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
            }
            if l == 0 {
                if let Some(di) = dinput.as_deref_mut() {
                    di.iter_mut().zip(&prev).for_each(|(d, p)| *d += p);
                }
            } else {
                prev.iter_mut()
                    .zip(a)
                    .for_each(|(p, h)| *p *= 1.0 - h * h);
                delta = prev;
            }
        }
    }
}
