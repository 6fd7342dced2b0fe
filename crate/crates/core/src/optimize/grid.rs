use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{fit_mle_with_validation, thread_limit, FitResult, TrainConfig};
use crate::data::ChoiceDataset;
use crate::error::{Error, Result};
use crate::models::{ModelKind, Params};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchSpec {
    pub learning_rates: Vec<f64>,
    pub weight_decays: Vec<f64>,
    /// Number of final epochs whose worst validation NLL scores a run.
    pub window: usize,
    /// Worker cap; `None` defers to [`thread_limit`].
    pub threads: Option<usize>,
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.0005, 0.001, 0.005, 0.01, 0.05, 0.1],
            weight_decays: vec![0.0, 0.0001, 0.0005, 0.001, 0.005, 0.01],
            window: 5,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Largest validation NLL over the final `window` epochs.
    pub score: Option<f64>,
    pub final_train_nll: Option<f64>,
    pub final_val_nll: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub params: Params,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub fit: FitResult,
    pub table: Vec<GridCell>,
}

/// Worst validation NLL among the last `window` epochs.
pub(crate) fn window_score(fit: &FitResult, window: usize) -> Option<f64> {
    let start = fit.log.len().saturating_sub(window.max(1));
    fit.log[start..]
        .iter()
        .filter_map(|r| r.val_nll)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
}

fn render_table(table: &[GridCell]) -> String {
    table
        .iter()
        .map(|c| {
            format!(
                "lr={} wd={}: {}",
                c.learning_rate,
                c.weight_decay,
                c.error.as_deref().unwrap_or("ok")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Trains one model per (learning rate, weight decay) pair and keeps the
/// run whose worst validation NLL over the final epochs is smallest. Ties
/// are broken by the smaller learning rate, then the smaller weight decay,
/// so the outcome does not depend on evaluation order.
pub fn grid_search(
    kind: ModelKind,
    train: &ChoiceDataset,
    validation: &ChoiceDataset,
    spec: &GridSearchSpec,
    base: &TrainConfig,
    components: Option<usize>,
) -> Result<GridSearchResult> {
    if spec.learning_rates.is_empty() || spec.weight_decays.is_empty() {
        return Err(Error::Empty("hyperparameter grid"));
    }
    let cells: Vec<(f64, f64)> = spec
        .learning_rates
        .iter()
        .flat_map(|&lr| spec.weight_decays.iter().map(move |&wd| (lr, wd)))
        .collect();
    let results: Mutex<Vec<Option<Result<FitResult>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = spec.threads.unwrap_or_else(thread_limit).clamp(1, cells.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(lr, wd)) = cells.get(i) else { break };
                let config = TrainConfig {
                    learning_rate: lr,
                    weight_decay: wd,
                    ..base.clone()
                };
                let fit = fit_mle_with_validation(kind, train, Some(validation), &config, None, components);
                results.lock().expect("grid worker panicked")[i] = Some(fit);
            });
        }
    });

    let results = results.into_inner().expect("grid worker panicked");
    let mut table = Vec::with_capacity(cells.len());
    let mut best: Option<(f64, f64, f64, FitResult)> = None;
    for (&(lr, wd), outcome) in cells.iter().zip(results) {
        let outcome = outcome.expect("every grid cell is evaluated");
        match outcome {
            Ok(fit) => {
                let score = window_score(&fit, spec.window);
                table.push(GridCell {
                    learning_rate: lr,
                    weight_decay: wd,
                    score,
                    final_train_nll: Some(fit.final_nll()),
                    final_val_nll: fit.log.last().and_then(|r| r.val_nll),
                    error: None,
                });
                let Some(score) = score else { continue };
                let better = match &best {
                    None => true,
                    Some((s, blr, bwd, _)) => {
                        (score, lr, wd).partial_cmp(&(*s, *blr, *bwd)) == Some(std::cmp::Ordering::Less)
                    }
                };
                if better {
                    best = Some((score, lr, wd, fit));
                }
            }
            Err(e) => table.push(GridCell {
                learning_rate: lr,
                weight_decay: wd,
                score: None,
                final_train_nll: None,
                final_val_nll: None,
                error: Some(e.to_string()),
            }),
        }
    }
    match best {
        Some((_, learning_rate, weight_decay, fit)) => Ok(GridSearchResult {
            params: fit.params.clone(),
            learning_rate,
            weight_decay,
            fit,
            table,
        }),
        None => Err(Error::AllRunsDiverged {
            table: render_table(&table),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::{EpochRecord, StopReason};

    fn fake_fit(vals: &[f64]) -> FitResult {
        FitResult {
            params: Params::mnl(vec![0.0]),
            initial_nll: 1.0,
            log: vals
                .iter()
                .enumerate()
                .map(|(i, &v)| EpochRecord {
                    epoch: i + 1,
                    train_nll: v,
                    val_nll: Some(v),
                    elapsed_s: 0.0,
                })
                .collect(),
            stop_reason: StopReason::EpochsExhausted,
        }
    }

    #[test]
    fn score_is_worst_of_window() {
        let fit = fake_fit(&[100.0, 9.0, 10.0, 8.0, 7.0, 9.5, 6.0]);
        assert_eq!(window_score(&fit, 5), Some(10.0));
        assert_eq!(window_score(&fit, 1), Some(6.0));
        let short = fake_fit(&[4.0, 3.0]);
        assert_eq!(window_score(&short, 5), Some(4.0));
    }

    #[test]
    fn selection_prefers_lower_worst_case() {
        // Run A: worst of last five is 10; run B: 12.
        let a = fake_fit(&[10.0, 9.0, 9.0, 9.0, 9.0]);
        let b = fake_fit(&[12.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(window_score(&a, 5).unwrap() < window_score(&b, 5).unwrap());
    }
}
