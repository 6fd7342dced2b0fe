//! Hypothesis tests, ranking metrics and the binned-MNL context analysis.

mod binned;
mod wilcoxon;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::checked_gamma_ur;

use crate::data::ChoiceDataset;
use crate::error::{Error, Result};
use crate::models::{choice_probabilities, Params};

pub use binned::{binned_mnl, BinRecord, BinnedConfig, BinnedFit, Binning, WlsWeights};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonMethod, WilcoxonResult};

/// Upper tail `P(X > x)` of a chi-square variable with `dof` degrees of freedom.
pub fn chi2_sf(x: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidArgument(
            "chi-square degrees of freedom must be positive".into(),
        ));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "chi-square statistic must be nonnegative, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x == f64::INFINITY {
        return Ok(0.0);
    }
    checked_gamma_ur(dof as f64 / 2.0, x / 2.0)
        .map(|q| q.clamp(0.0, 1.0))
        .map_err(|e| Error::InvalidArgument(format!("incomplete gamma: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Likelihood-ratio test of a nested model. Negative statistics (an
/// under-trained larger model) are reported unchanged with `p = 1`.
pub fn likelihood_ratio_test(nll_null: f64, nll_full: f64, dof: usize) -> Result<LrtResult> {
    if !nll_null.is_finite() || !nll_full.is_finite() {
        return Err(Error::NonFinite("likelihood-ratio inputs".into()));
    }
    let statistic = 2.0 * (nll_null - nll_full);
    Ok(LrtResult {
        statistic,
        dof,
        p_value: chi2_sf(statistic.max(0.0), dof)?,
    })
}

/// Position of `chosen` when items are sorted by descending probability,
/// scaled to [0, 1]. Tied items share the mean of the positions they occupy.
pub fn relative_rank(probs: &[f64], chosen: usize) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::InvalidArgument("relative rank needs at least two items".into()));
    }
    let target = *probs.get(chosen).ok_or(Error::ChosenOutOfRange {
        chosen,
        size: probs.len(),
    })?;
    let above = probs.iter().filter(|&&p| p > target).count();
    let tied = probs.iter().filter(|&&p| p == target).count();
    let position = above as f64 + (tied - 1) as f64 / 2.0;
    Ok(position / (probs.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeRanks {
    pub mean: f64,
    pub ranks: Vec<f64>,
}

pub fn mean_relative_rank(params: &Params, dataset: &ChoiceDataset) -> Result<RelativeRanks> {
    let ranks = dataset
        .observations()
        .iter()
        .map(|obs| relative_rank(&choice_probabilities(params, obs.choice_set())?, obs.chosen()))
        .collect::<Result<Vec<_>>>()?;
    let mean = ranks.iter().sum::<f64>() / ranks.len() as f64;
    Ok(RelativeRanks { mean, ranks })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Standard error of the slope from the weighted residual variance;
    /// `None` with fewer than three points.
    pub slope_se: Option<f64>,
}

/// Weighted least-squares line through `(xs, ys)`.
pub fn weighted_least_squares(xs: &[f64], ys: &[f64], weights: &[f64]) -> Result<WlsFit> {
    let n = xs.len();
    if ys.len() != n || weights.len() != n {
        return Err(Error::dims(
            "weighted least squares inputs",
            n,
            ys.len().min(weights.len()),
        ));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidArgument("weights must be positive".into()));
    }
    let total: f64 = weights.iter().sum();
    let mean = |v: &[f64]| v.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() / total;
    let (xbar, ybar) = (mean(xs), mean(ys));
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for ((x, y), w) in xs.iter().zip(ys).zip(weights) {
        sxx += w * (x - xbar) * (x - xbar);
        sxy += w * (x - xbar) * (y - ybar);
        syy += w * (y - ybar) * (y - ybar);
    }
    if n < 2 || sxx <= 0.0 || xs.iter().all(|x| *x == xs[0]) {
        return Err(Error::InvalidArgument(
            "weighted least squares needs at least two distinct x values".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .zip(weights)
        .map(|((x, y), w)| w * (y - slope * x - intercept).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let slope_se = (n > 2).then(|| (ss_res / (n - 2) as f64 / sxx).sqrt());
    Ok(WlsFit {
        slope,
        intercept,
        r_squared,
        slope_se,
    })
}
