use serde::{Deserialize, Serialize};

use super::chi2_sf;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    #[serde(rename = "T")]
    pub t: f64,
    pub n_effective: usize,
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

const EXACT_LIMIT: usize = 20;

/// Average ranks (1-based) of `values`, with ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test. Zero differences are discarded.
/// Below 20 nonzero differences the null distribution of the positive rank
/// sum is computed exactly (ties included, on doubled ranks); otherwise the
/// normal approximation with tie and continuity corrections is used.
pub fn wilcoxon_signed_rank(differences: &[f64]) -> Result<WilcoxonResult> {
    if differences.is_empty() {
        return Err(Error::Empty("difference list"));
    }
    if differences.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("Wilcoxon differences".into()));
    }
    let nonzero: Vec<f64> = differences.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            t: 0.0,
            n_effective: 0,
            p_value: 1.0,
            method: WilcoxonMethod::Exact,
        });
    }
    let magnitudes: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let t = w_plus.min(total - w_plus);

    if n < EXACT_LIMIT {
        // Doubled ranks are integers even with ties.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let max_sum: usize = doubled.iter().sum();
        let mut counts = vec![0.0f64; max_sum + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=max_sum).rev() {
                counts[s] += counts[s - r];
            }
        }
        let limit = (2.0 * t).round() as usize;
        let below: f64 = counts[..=limit].iter().sum();
        let p = 2.0 * below / 2f64.powi(n as i32);
        return Ok(WilcoxonResult {
            t,
            n_effective: n,
            p_value: p.min(1.0),
            method: WilcoxonMethod::Exact,
        });
    }

    let mut tie_term = 0.0;
    let mut sorted = magnitudes.clone();
    sorted.sort_by(f64::total_cmp);
    for group in sorted.chunk_by(|a, b| a == b) {
        let g = group.len() as f64;
        tie_term += g * g * g - g;
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let excess = (mean - t - 0.5).max(0.0);
    let p = if var > 0.0 {
        chi2_sf(excess * excess / var, 1)?
    } else {
        1.0
    };
    Ok(WilcoxonResult {
        t,
        n_effective: n,
        p_value: p.min(1.0),
        method: WilcoxonMethod::NormalApprox,
    })
}
