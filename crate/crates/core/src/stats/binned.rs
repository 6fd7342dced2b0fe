use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{weighted_least_squares, WlsFit};
use crate::data::ChoiceDataset;
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::optimize::{fit_mle, thread_limit, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    EqualWidth,
    Quantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WlsWeights {
    Count,
    SqrtCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedConfig {
    pub n_bins: usize,
    pub min_count: usize,
    pub binning: Binning,
    pub weights: WlsWeights,
    pub train: TrainConfig,
    pub threads: Option<usize>,
}

impl Default for BinnedConfig {
    fn default() -> Self {
        Self {
            n_bins: 100,
            min_count: 50,
            binning: Binning::EqualWidth,
            weights: WlsWeights::Count,
            train: TrainConfig::default(),
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRecord {
    pub bin: usize,
    pub center: f64,
    pub coefficient: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedFit {
    pub context_feature: usize,
    pub target_feature: usize,
    pub bins: Vec<BinRecord>,
    /// Bins that were non-empty but below the minimum count.
    pub skipped_bins: usize,
    pub wls: WlsFit,
}

impl BinnedFit {
    pub fn usable_observations(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,coefficient,count\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{}\n", b.center, b.coefficient, b.count));
        }
        out
    }
}

/// Bin index and bin center for each value.
fn assign_bins(values: &[f64], n_bins: usize, binning: Binning) -> (Vec<usize>, Vec<f64>) {
    match binning {
        Binning::EqualWidth => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let width = (hi - lo) / n_bins as f64;
            let index = values
                .iter()
                .map(|v| {
                    if width > 0.0 {
                        (((v - lo) / width) as usize).min(n_bins - 1)
                    } else {
                        0
                    }
                })
                .collect();
            let centers = (0..n_bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
            (index, centers)
        }
        Binning::Quantile => {
            let n = values.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            let mut index = vec![0; n];
            let mut sums = vec![0.0; n_bins];
            let mut counts = vec![0usize; n_bins];
            for (rank, &i) in order.iter().enumerate() {
                let b = rank * n_bins / n;
                index[i] = b;
                sums[b] += values[i];
                counts[b] += 1;
            }
            let centers = sums
                .iter()
                .zip(&counts)
                .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
                .collect();
            (index, centers)
        }
    }
}

/// Splits observations into bins by their choice-set mean of feature
/// `context_feature`, fits an MNL in every bin with at least `min_count`
/// observations, and regresses the fitted coefficient of `target_feature`
/// on the bin center.
pub fn binned_mnl(
    dataset: &ChoiceDataset,
    context_feature: usize,
    target_feature: usize,
    config: &BinnedConfig,
) -> Result<BinnedFit> {
    let d = dataset.dim();
    for index in [context_feature, target_feature] {
        if index >= d {
            return Err(Error::IndexOutOfRange { index, dim: d });
        }
    }
    if config.n_bins < 2 {
        return Err(Error::InvalidArgument("binned analysis needs at least two bins".into()));
    }
    let values: Vec<f64> = dataset
        .observations()
        .iter()
        .map(|o| o.choice_set().mean()[context_feature])
        .collect();
    let (index, centers) = assign_bins(&values, config.n_bins, config.binning);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); config.n_bins];
    for (obs, &b) in index.iter().enumerate() {
        members[b].push(obs);
    }
    let usable: Vec<usize> = (0..config.n_bins)
        .filter(|&b| members[b].len() >= config.min_count.max(1))
        .collect();
    let skipped_bins = members.iter().filter(|m| !m.is_empty()).count() - usable.len();
    if usable.is_empty() {
        return Err(Error::NoUsableBins {
            min_count: config.min_count,
        });
    }

    let results: Mutex<Vec<Option<Result<f64>>>> = Mutex::new((0..usable.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = config.threads.unwrap_or_else(thread_limit).clamp(1, usable.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let slot = next.fetch_add(1, Ordering::Relaxed);
                let Some(&b) = usable.get(slot) else { break };
                let coefficient = dataset.subset(&members[b]).and_then(|subset| {
                    let fit = fit_mle(ModelKind::Mnl, &subset, &config.train, None, None)?;
                    Ok(fit.params.flatten()[target_feature])
                });
                results.lock().expect("bin worker panicked")[slot] = Some(coefficient);
            });
        }
    });
    let coefficients = results
        .into_inner()
        .expect("bin worker panicked")
        .into_iter()
        .map(|r| r.expect("every bin is fitted"))
        .collect::<Result<Vec<f64>>>()?;

    let bins: Vec<BinRecord> = usable
        .iter()
        .zip(coefficients)
        .map(|(&b, coefficient)| BinRecord {
            bin: b,
            center: centers[b],
            coefficient,
            count: members[b].len(),
        })
        .collect();
    let xs: Vec<f64> = bins.iter().map(|b| b.center).collect();
    let ys: Vec<f64> = bins.iter().map(|b| b.coefficient).collect();
    let ws: Vec<f64> = bins
        .iter()
        .map(|b| match config.weights {
            WlsWeights::Count => b.count as f64,
            WlsWeights::SqrtCount => (b.count as f64).sqrt(),
        })
        .collect();
    let wls = weighted_least_squares(&xs, &ys, &ws)?;
    Ok(BinnedFit {
        context_feature,
        target_feature,
        bins,
        skipped_bins,
        wls,
    })
}
