//! Minibatch AMSGrad training, hyperparameter grid search, L1
//! regularization paths and single-entry constrained LCL fits.

mod adam;
mod grid;
mod path;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ChoiceDataset;
use crate::error::{Error, Result};
use crate::models::{nll_and_gradient_flat, ModelKind, Params, Workspace};

pub use adam::{adam_step, soft_threshold, AdamConfig, AdamState, L1Prox};
pub use grid::{grid_search, GridCell, GridSearchResult, GridSearchSpec};
pub use path::{l1_path, PathPoint, RegPathConfig};

/// Settings for one training run. The loss is the mean NLL of a minibatch,
/// so `weight_decay` and `l1_lambda` act on the per-observation scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub wall_clock_limit_seconds: Option<f64>,
    pub seed: u64,
    pub l1_lambda: f64,
    pub amsgrad: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            weight_decay: 0.001,
            batch_size: 128,
            epochs: 500,
            wall_clock_limit_seconds: Some(3600.0),
            seed: 0,
            l1_lambda: 0.0,
            amsgrad: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be nonnegative, got {}", self.weight_decay));
        }
        if !(self.l1_lambda >= 0.0 && self.l1_lambda.is_finite()) {
            return bad(format!("L1 strength must be nonnegative, got {}", self.l1_lambda));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epoch count must be at least 1".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            amsgrad: self.amsgrad,
            ..AdamConfig::new(self.learning_rate, self.weight_decay)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: Option<f64>,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochsExhausted,
    WallClock,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: Params,
    pub initial_nll: f64,
    pub log: Vec<EpochRecord>,
    pub stop_reason: StopReason,
}

impl FitResult {
    /// Full-data training NLL after the last epoch.
    pub fn final_nll(&self) -> f64 {
        self.log.last().map_or(self.initial_nll, |r| r.train_nll)
    }
}

/// Writes a training log as JSON lines.
pub fn write_training_log(mut w: impl Write, log: &[EpochRecord]) -> Result<()> {
    for record in log {
        serde_json::to_writer(&mut w, record)?;
        writeln!(w).map_err(|e| Error::io("<training log>", e))?;
    }
    Ok(())
}

/// Worker count for parallel grid cells: `CHOICECTX_THREADS` if set to a
/// positive integer, otherwise the available hardware parallelism.
pub fn thread_limit() -> usize {
    std::env::var("CHOICECTX_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// What a training run may change.
#[derive(Debug, Clone, Default)]
pub struct Constraints {
    /// Per flat index, whether the coordinate is optimized. `None` frees all.
    pub free: Option<Vec<bool>>,
}

/// Minibatch AMSGrad from `init`. Records the full-data training NLL (and
/// validation NLL when given) after every epoch.
pub fn train(
    init: Params,
    train: &ChoiceDataset,
    validation: Option<&ChoiceDataset>,
    config: &TrainConfig,
    constraints: &Constraints,
) -> Result<FitResult> {
    config.validate()?;
    if init.dim() != train.dim() {
        return Err(Error::dims("model feature dimension", train.dim(), init.dim()));
    }
    if let Some(v) = validation {
        if v.dim() != train.dim() {
            return Err(Error::dims("validation feature dimension", train.dim(), v.dim()));
        }
    }
    init.check_finite()?;
    if let Some(free) = &constraints.free {
        if free.len() != init.n_free() {
            return Err(Error::dims("free-parameter mask", init.n_free(), free.len()));
        }
    }

    let start = Instant::now();
    let obs = train.observations();
    let mut ws = Workspace::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init;
    let mut flat = params.flatten();
    let mut grad = vec![0.0; flat.len()];
    let mut state = AdamState::new(flat.len());
    let adam = config.adam();
    let l1_indices: Vec<usize> = params.context_indices().collect();
    let l1 = (config.l1_lambda > 0.0).then_some(L1Prox {
        lambda: config.l1_lambda,
        indices: &l1_indices,
    });

    let full_nll = |p: &Params, ws: &mut Workspace, data: &ChoiceDataset| {
        nll_and_gradient_flat(p, data.observations(), None, 1.0, ws)
    };
    let initial_nll = full_nll(&params, &mut ws, train);
    if !initial_nll.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            reason: "initial NLL is not finite".into(),
        });
    }

    let mut order: Vec<usize> = (0..obs.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut stop_reason = StopReason::EpochsExhausted;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            nll_and_gradient_flat(&params, batch.iter().map(|&i| &obs[i]), Some(&mut grad), scale, &mut ws);
            adam_step(&mut state, &mut flat, &grad, &adam, constraints.free.as_deref(), l1).map_err(|e| {
                Error::Diverged {
                    epoch,
                    reason: e.to_string(),
                }
            })?;
            params.set_flat(&flat)?;
        }
        let train_nll = full_nll(&params, &mut ws, train);
        if !train_nll.is_finite() || (initial_nll > 0.0 && train_nll > 10.0 * initial_nll) {
            return Err(Error::Diverged {
                epoch,
                reason: format!("training NLL {train_nll} (initial {initial_nll})"),
            });
        }
        let val_nll = validation.map(|v| full_nll(&params, &mut ws, v));
        let elapsed_s = start.elapsed().as_secs_f64();
        log.push(EpochRecord {
            epoch,
            train_nll,
            val_nll,
            elapsed_s,
        });
        if config.wall_clock_limit_seconds.is_some_and(|limit| elapsed_s >= limit) && epoch < config.epochs {
            stop_reason = StopReason::WallClock;
            break;
        }
    }
    Ok(FitResult {
        params,
        initial_nll,
        log,
        stop_reason,
    })
}

/// Maximum-likelihood fit of `kind`. Without `init`, MNL and LCL start at
/// zero and mixtures at a seeded uniform draw (see [`Params::initial`]).
/// `components` sets the mixed logit class count (DLCL always uses `d`).
pub fn fit_mle(
    kind: ModelKind,
    train_data: &ChoiceDataset,
    config: &TrainConfig,
    init: Option<Params>,
    components: Option<usize>,
) -> Result<FitResult> {
    fit_mle_with_validation(kind, train_data, None, config, init, components)
}

pub fn fit_mle_with_validation(
    kind: ModelKind,
    train_data: &ChoiceDataset,
    validation: Option<&ChoiceDataset>,
    config: &TrainConfig,
    init: Option<Params>,
    components: Option<usize>,
) -> Result<FitResult> {
    let d = train_data.dim();
    let init = match init {
        Some(p) if p.kind() != kind => {
            return Err(Error::InvalidArgument(format!(
                "initial parameters are {} but {kind} was requested",
                p.kind()
            )))
        }
        Some(p) => p,
        None => {
            let m = components.unwrap_or(d);
            if m == 0 {
                return Err(Error::InvalidArgument("component count must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
            Params::initial(kind, d, m, &mut rng)
        }
    };
    train(init, train_data, validation, config, &Constraints::default())
}

#[derive(Debug, Clone)]
pub struct ConstrainedFit {
    pub entry: (usize, usize),
    pub theta: Vec<f64>,
    pub value: f64,
    pub nll: f64,
    pub fit: FitResult,
}

/// LCL fit in which only `A[p][q]` (and `theta`) may be nonzero.
pub fn fit_constrained_lcl(
    train_data: &ChoiceDataset,
    entry: (usize, usize),
    config: &TrainConfig,
    init_theta: Option<&[f64]>,
) -> Result<ConstrainedFit> {
    let d = train_data.dim();
    let (p, q) = entry;
    for index in [p, q] {
        if index >= d {
            return Err(Error::IndexOutOfRange { index, dim: d });
        }
    }
    let mut init = Params::zeros(ModelKind::Lcl, d, 1);
    if let Some(theta) = init_theta {
        if theta.len() != d {
            return Err(Error::dims("initial theta", d, theta.len()));
        }
        let mut flat = init.flatten();
        flat[..d].copy_from_slice(theta);
        init.set_flat(&flat)?;
    }
    let slot = init.context_index(p, q).expect("LCL has a context matrix");
    let mut free = vec![false; init.n_free()];
    free[..d].iter_mut().for_each(|f| *f = true);
    free[slot] = true;
    let fit = train(init, train_data, None, config, &Constraints { free: Some(free) })?;
    let flat = fit.params.flatten();
    Ok(ConstrainedFit {
        entry,
        theta: flat[..d].to_vec(),
        value: flat[slot],
        nll: fit.final_nll(),
        fit,
    })
}
