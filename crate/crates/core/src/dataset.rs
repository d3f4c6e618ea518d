//! Episodes of observations (and optionally ground-truth states) plus the
//! lag assembly that turns them into history windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix; rows are time steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 || !data.len().is_multiple_of(cols) {
            return Err(Error::DimensionMismatch {
                what: "matrix data length (multiple of cols)",
                expected: cols,
                got: data.len(),
            });
        }
        Ok(Self { cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    what: "row length",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(cols, data)
    }

    /// Single-column matrix.
    pub fn column(values: Vec<f64>) -> Self {
        Self {
            cols: 1,
            data: values,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Values of column `c`.
    pub fn column_values(&self, c: usize) -> Vec<f64> {
        (0..self.rows()).map(|r| self.get(r, c)).collect()
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }
}

/// One observed time series `s_{1:K}` with optional states `x_{1:K}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDataset {
    pub observations: Matrix,
    pub states: Option<Matrix>,
}

impl EpisodeDataset {
    pub fn new(observations: Matrix, states: Option<Matrix>) -> Result<Self> {
        if let Some(s) = &states {
            if s.rows() != observations.rows() {
                return Err(Error::LengthMismatch(observations.rows(), s.rows()));
            }
        }
        Ok(Self {
            observations,
            states,
        })
    }

    /// Number of time steps K.
    #[inline]
    pub fn len(&self) -> usize {
        self.observations.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.observations.cols()
    }

    pub fn state_dims(&self) -> Option<usize> {
        self.states.as_ref().map(Matrix::cols)
    }

    pub fn require_states(&self) -> Result<&Matrix> {
        self.states
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("dataset carries no ground-truth states".into()))
    }

    /// Time steps `[start, end)` as a new episode.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InsufficientData(format!(
                "invalid range {start}..{end} for an episode of length {}",
                self.len()
            )));
        }
        Ok(Self {
            observations: self.observations.slice_rows(start, end),
            states: self.states.as_ref().map(|s| s.slice_rows(start, end)),
        })
    }

    /// History window `h_k = [s_{k-1}, …, s_{k-lag}]` for zero-based step `k`.
    pub fn history(&self, k: usize, lag: usize) -> HistoryWindow {
        let n = self.channels();
        let mut values = vec![0.0; lag * n];
        let mut valid = vec![false; lag];
        for j in 1..=lag {
            if k >= j {
                values[(j - 1) * n..j * n].copy_from_slice(self.observations.row(k - j));
                valid[j - 1] = true;
            }
        }
        HistoryWindow {
            lag,
            channels: n,
            values,
            valid,
        }
    }
}

/// Stacked lagged observations with a validity mask per lag.
///
/// Lags reaching before the start of the episode are zero-padded.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    pub lag: usize,
    pub channels: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl HistoryWindow {
    pub fn empty(channels: usize) -> Self {
        Self {
            lag: 0,
            channels,
            values: Vec::new(),
            valid: Vec::new(),
        }
    }

    /// Observation `s_{k-j}` (1-based lag `j`), or `None` when padded.
    pub fn lagged(&self, j: usize) -> Option<&[f64]> {
        (j >= 1 && j <= self.lag && self.valid[j - 1])
            .then(|| &self.values[(j - 1) * self.channels..j * self.channels])
    }
}

/// Per-channel standardization applied to observations before they enter a
/// prediction model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureScaling {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            scale: vec![1.0; channels],
        }
    }

    /// Channel means and standard deviations pooled over `episodes`.
    pub fn fit(episodes: &[EpisodeDataset]) -> Result<Self> {
        let n = episodes
            .first()
            .map(EpisodeDataset::channels)
            .ok_or_else(|| Error::InsufficientData("no episodes".into()))?;
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut count = 0usize;
        for ep in episodes {
            for k in 0..ep.len() {
                for (c, &v) in ep.observations.row(k).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
                count += 1;
            }
        }
        if count < 2 {
            return Err(Error::InsufficientData("need at least two time steps".into()));
        }
        let cnt = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / cnt).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / cnt - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    #[inline]
    pub fn apply_into(&self, s: &[f64], out: &mut [f64]) {
        for (((o, v), m), sc) in out.iter_mut().zip(s).zip(&self.mean).zip(&self.scale) {
            *o = (v - m) / sc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> EpisodeDataset {
        let obs = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]).unwrap();
        EpisodeDataset::new(obs, Some(Matrix::column(vec![0.1, 0.2, 0.3, 0.4]))).unwrap()
    }

    #[test]
    fn history_is_zero_padded_with_mask() {
        let ep = toy();
        let h = ep.history(1, 3);
        assert_eq!(h.values.len(), 6);
        assert_eq!(h.valid, vec![true, false, false]);
        assert_eq!(h.lagged(1), Some(&[1.0, 2.0][..]));
        assert_eq!(h.lagged(2), None);
        assert_eq!(&h.values[2..], &[0.0; 4]);

        let h = ep.history(3, 2);
        assert_eq!(h.values, vec![5.0, 6.0, 3.0, 4.0]);
        assert!(h.valid.iter().all(|v| *v));
    }

    #[test]
    fn mask_false_only_for_early_steps() {
        let ep = toy();
        for k in 0..ep.len() {
            let h = ep.history(k, 3);
            for j in 1..=3 {
                assert_eq!(h.valid[j - 1], k >= j);
            }
        }
    }

    #[test]
    fn slicing_keeps_states_aligned() {
        let ep = toy();
        let s = ep.slice(1, 3).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.observations.row(0), &[3.0, 4.0]);
        assert_eq!(s.states.unwrap().column_values(0), vec![0.2, 0.3]);
        assert!(ep.slice(3, 3).is_err());
    }

    #[test]
    fn mismatched_state_length_is_rejected() {
        let obs = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(EpisodeDataset::new(obs, Some(Matrix::column(vec![0.0]))).is_err());
    }

    #[test]
    fn scaling_standardizes_channels() {
        let sc = FeatureScaling::fit(&[toy()]).unwrap();
        assert!((sc.mean[0] - 4.0).abs() < 1e-12);
        let mut out = [0.0; 2];
        sc.apply_into(&[4.0, 5.0], &mut out);
        assert!(out[0].abs() < 1e-12 && out[1].abs() < 1e-12);
    }
}
