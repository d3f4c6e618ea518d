//! Decoding accuracy: MSE, MAE, Pearson correlation and 95% HPD regions,
//! plus contiguous time-block splits for cross-validation.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{EpisodeDataset, Matrix};
use crate::densities::{hpd_cells, GridDensity, StateGrid};
use crate::error::{Error, Result};
use crate::inference::{Decoder, PosteriorSequence};
use crate::learning::{train, Algorithm, TrainConfig, TrainOutcome};

/// Posterior mass of the reported credible regions.
pub const HPD_LEVEL: f64 = 0.95;

/// Which posterior supplies point estimates and HPD regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Smoother,
    Filter,
}

/// Accuracy along one state axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisReport {
    pub mse: f64,
    pub mae: f64,
    /// Pearson correlation; 0 when either series is constant.
    pub cc: f64,
    pub cc_defined: bool,
    /// Mean length of the marginal HPD set.
    pub hpd_width: f64,
    /// Fraction of steps whose true value lies in the marginal HPD set.
    pub coverage: f64,
}

/// Accuracy of one decoded sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub split: String,
    pub estimator: Estimator,
    pub steps: usize,
    pub axes: Vec<AxisReport>,
    /// Mean size (length or area) of the joint HPD set.
    pub hpd_volume: f64,
    /// Fraction of steps whose true state lies in the joint HPD set.
    pub coverage: f64,
}

/// Pearson correlation, or `(0, false)` when a series has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> (f64, bool) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        (0.0, false)
    } else {
        ((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0), true)
    }
}

/// Accuracy of the posterior `densities` against `truth` (rows = steps).
pub fn evaluate_densities(truth: &Matrix, densities: &[GridDensity], split: &str, estimator: Estimator) -> Result<DecodeReport> {
    if truth.rows() != densities.len() {
        return Err(Error::LengthMismatch(truth.rows(), densities.len()));
    }
    if densities.is_empty() {
        return Err(Error::InsufficientData("nothing to evaluate".into()));
    }
    let grid: Arc<StateGrid> = densities[0].grid().clone();
    if truth.cols() != grid.dims() {
        return Err(Error::DimensionMismatch {
            what: "truth columns vs grid dims",
            expected: grid.dims(),
            got: truth.cols(),
        });
    }
    let dims = grid.dims();
    let k_len = densities.len();
    let mut est = vec![Vec::with_capacity(k_len); dims];
    let mut width = vec![0.0; dims];
    let mut covered = vec![0usize; dims];
    let (mut volume, mut joint_covered) = (0.0, 0usize);
    for (k, d) in densities.iter().enumerate() {
        let x = truth.row(k);
        let mean = d.mean();
        for a in 0..dims {
            est[a].push(mean[a]);
            let axis = grid.axis(a);
            let region = hpd_cells(&d.marginal(a), axis.width(), HPD_LEVEL);
            width[a] += region.volume;
            if grid.contains(x) && region.contains(axis.cell_of(x[a])) {
                covered[a] += 1;
            }
        }
        let joint = d.hpd(HPD_LEVEL);
        volume += joint.volume;
        if grid.contains(x) && joint.contains(grid.cell_of(x)) {
            joint_covered += 1;
        }
    }
    let n = k_len as f64;
    let axes = (0..dims)
        .map(|a| {
            let t = truth.column_values(a);
            let (mut se, mut ae) = (0.0, 0.0);
            for (e, v) in est[a].iter().zip(&t) {
                se += (e - v) * (e - v);
                ae += (e - v).abs();
            }
            let (cc, cc_defined) = pearson(&est[a], &t);
            AxisReport {
                mse: se / n,
                mae: ae / n,
                cc,
                cc_defined,
                hpd_width: width[a] / n,
                coverage: covered[a] as f64 / n,
            }
        })
        .collect();
    Ok(DecodeReport {
        split: split.to_string(),
        estimator,
        steps: k_len,
        axes,
        hpd_volume: volume / n,
        coverage: joint_covered as f64 / n,
    })
}

/// Accuracy of a decoded episode.
pub fn evaluate(truth: &Matrix, post: &PosteriorSequence, split: &str, estimator: Estimator) -> Result<DecodeReport> {
    let dens = match estimator {
        Estimator::Smoother if post.is_smoothed() => &post.smoother,
        Estimator::Smoother => return Err(Error::InsufficientData("smoother pass has not run".into())),
        Estimator::Filter => &post.filter,
    };
    evaluate_densities(truth, dens, split, estimator)
}

/// `folds` contiguous blocks covering `0..len` (the last absorbs the remainder).
pub fn contiguous_folds(len: usize, folds: usize) -> Result<Vec<Range<usize>>> {
    if folds < 2 {
        return Err(Error::InsufficientData(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    if len < folds {
        return Err(Error::InsufficientData(format!("{len} steps cannot form {folds} folds")));
    }
    let size = len / folds;
    Ok((0..folds)
        .map(|f| f * size..if f + 1 == folds { len } else { (f + 1) * size })
        .collect())
}

/// Leading `train_fraction` for training, the rest for testing.
pub fn holdout(len: usize, train_fraction: f64) -> Result<(Range<usize>, Range<usize>)> {
    let cut = (len as f64 * train_fraction).round() as usize;
    if !(0.0..1.0).contains(&train_fraction) || cut == 0 || cut >= len {
        return Err(Error::InsufficientData(format!(
            "cannot split {len} steps at fraction {train_fraction}"
        )));
    }
    Ok((0..cut, cut..len))
}

/// Train/test split of an episode into contiguous episodes.
#[derive(Debug, Clone)]
pub struct Split {
    pub name: String,
    pub train: Vec<EpisodeDataset>,
    pub test: EpisodeDataset,
}

/// One split per fold: the fold is the test block, the remaining blocks
/// (kept as separate episodes) are the training set.
pub fn fold_splits(ep: &EpisodeDataset, folds: usize) -> Result<Vec<Split>> {
    let blocks = contiguous_folds(ep.len(), folds)?;
    blocks
        .iter()
        .enumerate()
        .map(|(f, test)| {
            let train = blocks
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .map(|(_, r)| ep.slice(r.start, r.end))
                .collect::<Result<Vec<_>>>()?;
            Ok(Split {
                name: format!("fold{f}"),
                train,
                test: ep.slice(test.start, test.end)?,
            })
        })
        .collect()
}

/// Single leading-train / trailing-test split.
pub fn holdout_split(ep: &EpisodeDataset, train_fraction: f64) -> Result<Split> {
    let (tr, te) = holdout(ep.len(), train_fraction)?;
    Ok(Split {
        name: "holdout".into(),
        train: vec![ep.slice(tr.start, tr.end)?],
        test: ep.slice(te.start, te.end)?,
    })
}

/// Decodes `ep` (filter + smoother) and scores it against its states.
pub fn decode_and_evaluate(
    outcome: &TrainOutcome,
    ep: &EpisodeDataset,
    grid: &Arc<StateGrid>,
    split: &str,
    estimator: Estimator,
) -> Result<DecodeReport> {
    let truth = ep.require_states()?;
    let post = Decoder::new(&outcome.model, &outcome.trans, grid)?.decode(ep, 0, 0)?;
    evaluate(truth, &post, split, estimator)
}

/// Train and test reports of one fold.
#[derive(Debug, Clone)]
pub struct FoldResult {
    pub outcome: TrainOutcome,
    pub train: Vec<DecodeReport>,
    pub test: DecodeReport,
}

/// Trains on each split's training blocks and reports both sides.
pub fn cross_validate(
    splits: &[Split],
    grid: &Arc<StateGrid>,
    config: &TrainConfig,
    algorithm: Algorithm,
    estimator: Estimator,
) -> Result<Vec<FoldResult>> {
    splits
        .iter()
        .map(|s| {
            let outcome = train(&s.train, grid, config, algorithm)?;
            let train = s
                .train
                .iter()
                .enumerate()
                .map(|(i, ep)| decode_and_evaluate(&outcome, ep, grid, &format!("{}-train{i}", s.name), estimator))
                .collect::<Result<Vec<_>>>()?;
            let test = decode_and_evaluate(&outcome, &s.test, grid, &format!("{}-test", s.name), estimator)?;
            Ok(FoldResult { outcome, train, test })
        })
        .collect()
}

/// Validation score of one candidate λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda: f64,
    /// Validation CC averaged over state dimensions.
    pub cc: f64,
    pub q_regularized: f64,
}

/// Picks λ using the training data only: each episode is split into a
/// leading `1 - validation_fraction` part used for fitting and a trailing
/// validation block, and the λ with the highest mean smoother CC on the
/// validation blocks wins (ties go to the smaller λ).
pub fn select_lambda(
    episodes: &[EpisodeDataset],
    grid: &Arc<StateGrid>,
    config: &TrainConfig,
    lambdas: &[f64],
    validation_fraction: f64,
) -> Result<(f64, Vec<LambdaScore>)> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("no λ candidates".into()));
    }
    let splits = episodes
        .iter()
        .map(|ep| holdout_split(ep, 1.0 - validation_fraction))
        .collect::<Result<Vec<_>>>()?;
    let fit: Vec<EpisodeDataset> = splits.iter().flat_map(|s| s.train.iter().cloned()).collect();
    let mut scores = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let cfg = TrainConfig { lambda, ..config.clone() };
        let outcome = train(&fit, grid, &cfg, Algorithm::Regularized)?;
        let mut cc = 0.0;
        let mut n = 0.0;
        for s in &splits {
            let r = decode_and_evaluate(&outcome, &s.test, grid, "validation", Estimator::Smoother)?;
            cc += r.axes.iter().map(|a| a.cc).sum::<f64>();
            n += r.axes.len() as f64;
        }
        scores.push(LambdaScore {
            lambda,
            cc: cc / n,
            q_regularized: outcome.q.q_regularized,
        });
    }
    let best = scores
        .iter()
        .fold(None::<LambdaScore>, |best, s| match best {
            Some(b) if b.cc >= s.cc => Some(b),
            _ => Some(*s),
        })
        .expect("at least one candidate");
    Ok((best.lambda, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{discretize_renormalized, GaussianParams};

    fn line() -> Arc<StateGrid> {
        Arc::new(StateGrid::line(-4.0, 4.0, 400).unwrap())
    }

    #[test]
    fn perfect_decode() {
        let g = line();
        let truth: Vec<f64> = (0..50).map(|k| (k as f64 * 0.2).sin()).collect();
        let dens: Vec<GridDensity> = truth.iter().map(|x| GridDensity::delta(g.clone(), &[*x])).collect();
        let centers: Vec<f64> = truth.iter().map(|x| g.point(g.cell_of(&[*x]))[0]).collect();
        let r = evaluate_densities(&Matrix::column(centers), &dens, "train", Estimator::Smoother).unwrap();
        assert!(r.axes[0].mse < 1e-24 && r.axes[0].mae < 1e-12);
        assert!((r.axes[0].cc - 1.0).abs() < 1e-12);
        assert_eq!(r.axes[0].coverage, 1.0);
        assert_eq!(r.coverage, 1.0);
    }

    #[test]
    fn gaussian_posterior_hpd_width_and_coverage() {
        let g = line();
        let sigma = 0.3;
        let mut rng = crate::seed::rng(1, "test", 0);
        use rand_distr::{Distribution, StandardNormal};
        let n = 4000;
        let mut truth = Vec::with_capacity(n);
        let mut dens = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = StandardNormal.sample(&mut rng);
            let x = 0.5 * u;
            let e: f64 = StandardNormal.sample(&mut rng);
            let m = x + sigma * e;
            truth.push(x);
            dens.push(discretize_renormalized(&GaussianParams::scalar(m, sigma).unwrap(), &g));
        }
        let r = evaluate_densities(&Matrix::column(truth), &dens, "test", Estimator::Smoother).unwrap();
        assert!((r.axes[0].hpd_width - 3.92 * sigma).abs() <= g.axis(0).width() + 1e-9, "{}", r.axes[0].hpd_width);
        assert!((r.axes[0].coverage - 0.95).abs() < 0.015, "{}", r.axes[0].coverage);
        assert!(r.axes[0].mse >= r.axes[0].mae.powi(2));
    }

    #[test]
    fn constant_estimate_flags_undefined_cc() {
        let (cc, ok) = pearson(&[1.0, 1.0, 1.0], &[0.1, 0.5, 0.2]);
        assert_eq!((cc, ok), (0.0, false));
    }

    #[test]
    fn splits_are_contiguous() {
        assert_eq!(contiguous_folds(1000, 2).unwrap(), vec![0..500, 500..1000]);
        assert_eq!(holdout(1000, 0.8).unwrap(), (0..800, 800..1000));
        assert!(matches!(contiguous_folds(1000, 1), Err(Error::InsufficientData(_))));
        let ep = EpisodeDataset::new(Matrix::column((0..10).map(f64::from).collect()), None).unwrap();
        let s = fold_splits(&ep, 2).unwrap();
        assert_eq!(s[1].train[0].observations.column_values(0), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s[1].test.observations.get(0, 0), 5.0);
    }
}
