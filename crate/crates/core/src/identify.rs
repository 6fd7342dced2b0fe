//! Identifiability diagnostics for the LCL.
//!
//! An LCL is identifiable from a dataset exactly when the rows
//! `[x_C; 1] ⊗ (x_i − x_C)`, one per item of every distinct choice set, span
//! all `d² + d` dimensions. A necessary condition is that the distinct
//! choice-set means contain `d + 1` affinely independent vectors.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ChoiceDataset, ChoiceSet};
use crate::error::{Error, Result};

/// Default cap on the number of context rows fed to the rank computation.
pub const MAX_ROWS: usize = 1_000_000;

const QR_CHUNK: usize = 4096;

/// `[x_C; 1] ⊗ (x_i − x_C)`: block `b < d` is `x_C[b] · (x_i − x_C)` and the
/// final block is `x_i − x_C`.
pub fn context_row(mean: &[f64], item: &[f64]) -> Result<Vec<f64>> {
    let d = mean.len();
    if item.len() != d {
        return Err(Error::dims("item feature vector", d, item.len()));
    }
    let diff: Vec<f64> = item.iter().zip(mean).map(|(x, m)| x - m).collect();
    let mut row = Vec::with_capacity(d * d + d);
    for &m in mean.iter().chain(std::iter::once(&1.0)) {
        row.extend(diff.iter().map(|v| m * v));
    }
    Ok(row)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankInfo {
    pub rank: usize,
    pub tolerance: f64,
    pub singular_values: Vec<f64>,
}

/// Rank of a matrix given as rows of equal length: the number of singular
/// values above `max(m, n) · ε · σ_max`.
///
/// Rows are folded into an `n × n` triangular factor by repeated QR of
/// `[R; chunk]`, which leaves the singular values unchanged while keeping
/// memory proportional to the chunk size.
pub fn numerical_rank<'a>(rows: impl IntoIterator<Item = &'a [f64]>, n_cols: usize) -> RankInfo {
    let mut r: Option<DMatrix<f64>> = None;
    let mut m = 0usize;
    let mut chunk: Vec<f64> = Vec::with_capacity(QR_CHUNK * n_cols);
    let fold = |r: &mut Option<DMatrix<f64>>, chunk: &mut Vec<f64>| {
        if chunk.is_empty() {
            return;
        }
        let new_rows = chunk.len() / n_cols;
        let block = DMatrix::from_row_slice(new_rows, n_cols, chunk);
        chunk.clear();
        let stacked = match r.take() {
            Some(prev) => {
                let mut s = DMatrix::zeros(prev.nrows() + new_rows, n_cols);
                s.rows_mut(0, prev.nrows()).copy_from(&prev);
                s.rows_mut(prev.nrows(), new_rows).copy_from(&block);
                s
            }
            None => block,
        };
        *r = Some(if stacked.nrows() > n_cols {
            stacked.qr().r()
        } else {
            stacked
        });
    };
    for row in rows {
        debug_assert_eq!(row.len(), n_cols);
        chunk.extend_from_slice(row);
        m += 1;
        if chunk.len() >= QR_CHUNK * n_cols {
            fold(&mut r, &mut chunk);
        }
    }
    fold(&mut r, &mut chunk);
    let singular_values: Vec<f64> = match r {
        Some(r) if n_cols > 0 => {
            let mut s: Vec<f64> = r.singular_values().iter().copied().collect();
            s.sort_by(|a, b| b.total_cmp(a));
            s
        }
        _ => Vec::new(),
    };
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let tolerance = m.max(n_cols) as f64 * f64::EPSILON * sigma_max;
    let rank = singular_values.iter().filter(|&&s| s > tolerance).count();
    RankInfo {
        rank,
        tolerance,
        singular_values,
    }
}

/// Size of the largest affinely independent subset of `vectors`, computed as
/// the rank of the lifted vectors `[x; 1]`.
pub fn affinely_independent_count(vectors: &[Vec<f64>]) -> Result<usize> {
    let first = vectors.first().ok_or(Error::Empty("vector list"))?;
    let d = first.len();
    let mut lifted = Vec::with_capacity(vectors.len());
    for v in vectors {
        if v.len() != d {
            return Err(Error::dims("mean vector length", d, v.len()));
        }
        let mut row = v.clone();
        row.push(1.0);
        lifted.push(row);
    }
    Ok(numerical_rank(lifted.iter().map(Vec::as_slice), d + 1).rank)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyOptions {
    /// Treat feature values equal after rounding to this grid as identical
    /// when deduplicating choice sets. `None` compares bit patterns.
    pub dedup_tolerance: Option<f64>,
    pub max_rows: usize,
    pub seed: u64,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self {
            dedup_tolerance: None,
            max_rows: MAX_ROWS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub span: String,
    pub affine: String,
    pub identifiable: bool,
    pub necessary_ok: bool,
    pub d: usize,
    pub span_dim: usize,
    pub required: usize,
    pub affine_count: usize,
    pub affine_required: usize,
    pub rank_tolerance: f64,
    pub unique_choice_sets: usize,
    pub rows: usize,
    pub rows_used: usize,
}

fn set_key(set: &ChoiceSet, tolerance: Option<f64>) -> Vec<Vec<i64>> {
    let mut items: Vec<Vec<i64>> = set
        .items()
        .map(|x| {
            x.iter()
                .map(|&v| match tolerance {
                    Some(t) => (v / t).round() as i64,
                    None => v.to_bits() as i64,
                })
                .collect()
        })
        .collect();
    items.sort_unstable();
    items
}

/// Runs both identifiability checks on the distinct choice sets of `dataset`.
pub fn lcl_identifiable(dataset: &ChoiceDataset, options: &IdentifyOptions) -> Result<IdentifiabilityReport> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if options.dedup_tolerance.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidArgument(
            "deduplication tolerance must be positive".into(),
        ));
    }
    let d = dataset.dim();
    let n_cols = d * d + d;
    let mut seen = BTreeSet::new();
    let mut unique: Vec<&ChoiceSet> = Vec::new();
    for obs in dataset.observations() {
        if seen.insert(set_key(obs.choice_set(), options.dedup_tolerance)) {
            unique.push(obs.choice_set());
        }
    }
    // Order-independent processing: sort the distinct sets by their key.
    unique.sort_by_cached_key(|s| set_key(s, None));

    let total_rows: usize = unique.iter().map(|s| s.len()).sum();
    let cap = options.max_rows.max(1);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(total_rows.min(cap));
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut index = 0usize;
    for set in &unique {
        for item in set.items() {
            let row = context_row(set.mean(), item)?;
            if rows.len() < cap {
                rows.push(row);
            } else {
                let j = rng.random_range(0..=index);
                if j < cap {
                    rows[j] = row;
                }
            }
            index += 1;
        }
    }
    if total_rows > cap {
        log::warn!(
            "identifiability rank computed on {cap} of {total_rows} sampled rows; a deficient verdict may be pessimistic"
        );
    }
    let info = numerical_rank(rows.iter().map(Vec::as_slice), n_cols);

    let means: Vec<Vec<f64>> = unique.iter().map(|s| s.mean().to_vec()).collect();
    let affine_count = affinely_independent_count(&means)?;
    let span_dim = info.rank;
    let identifiable = span_dim == n_cols;
    let necessary_ok = affine_count == d + 1;
    debug_assert!(!identifiable || necessary_ok);
    Ok(IdentifiabilityReport {
        span: format!("{span_dim}/{n_cols}"),
        affine: format!("{affine_count}/{}", d + 1),
        identifiable,
        necessary_ok,
        d,
        span_dim,
        required: n_cols,
        affine_count,
        affine_required: d + 1,
        rank_tolerance: info.tolerance,
        unique_choice_sets: unique.len(),
        rows: total_rows,
        rows_used: rows.len(),
    })
}
