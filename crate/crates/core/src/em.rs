//! Expectation-maximization for the DLCL.
//!
//! Each outer iteration computes responsibilities in the log domain, sets the
//! mixture weights to their column means, and then raises the expected
//! complete-data log-likelihood `Q(A, B)` with a short full-batch Adam run.
//! The M-step keeps the best `Q` iterate it visits (the starting point
//! included), so `Q` never decreases and the observed-data NLL is
//! non-increasing across outer iterations.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ChoiceDataset, Observation};
use crate::error::{Error, Result};
use crate::models::{dlcl_component_log_prob, nll_and_gradient_flat, DlclParams, ModelKind, Params, Workspace};
use crate::optimize::{adam_step, AdamConfig, AdamState};

/// Components whose weight falls below this are no longer updated.
pub const FROZEN_WEIGHT: f64 = 1e-12;

/// Posterior component probabilities, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub r: DMatrix<f64>,
}

impl Responsibilities {
    /// Column means: the weight update of the M-step.
    pub fn column_means(&self) -> Vec<f64> {
        let n = self.r.nrows() as f64;
        self.r.column_iter().map(|c| c.sum() / n).collect()
    }
}

fn check_obs(params: &DlclParams, obs: &Observation) -> Result<()> {
    let d = params.a.nrows();
    if obs.choice_set().dim() != d {
        return Err(Error::dims("observation feature dimension", d, obs.choice_set().dim()));
    }
    Ok(())
}

/// Probability of the observed choice under each DLCL component separately.
pub fn component_probabilities(params: &DlclParams, obs: &Observation) -> Result<Vec<f64>> {
    check_obs(params, obs)?;
    let mut ws = Workspace::new();
    Ok((0..params.a.ncols())
        .map(|k| dlcl_component_log_prob(params, k, obs, &mut ws, None).exp())
        .collect())
}

/// `r[h][k] = pi_k p_hk / sum_g pi_g p_hg`, normalized with log-sum-exp.
pub fn compute_responsibilities(params: &DlclParams, dataset: &ChoiceDataset) -> Result<Responsibilities> {
    let k_total = params.a.ncols();
    let log_pis: Vec<f64> = params.pis().iter().map(|p| p.ln()).collect();
    let mut ws = Workspace::new();
    let mut r = DMatrix::zeros(dataset.len(), k_total);
    let mut row = vec![0.0; k_total];
    for (h, obs) in dataset.observations().iter().enumerate() {
        check_obs(params, obs)?;
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = log_pis[k] + dlcl_component_log_prob(params, k, obs, &mut ws, None);
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::NonFinite(format!("responsibilities of observation {h}")));
        }
        let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + total.ln();
        for (k, v) in row.iter().enumerate() {
            r[(h, k)] = (v - log_norm).exp();
        }
    }
    Ok(Responsibilities { r })
}

/// Expected complete-data log-likelihood (weights excluded) with its
/// gradient with respect to `A` and `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct QValue {
    pub value: f64,
    pub grad_a: DMatrix<f64>,
    pub grad_b: DMatrix<f64>,
}

/// Accumulates `Q` and `scale * d(-Q)` over the flat `[vec(A), vec(B)]`
/// layout; components with `active[k] == false` get no gradient.
fn q_and_descent_gradient(
    params: &DlclParams,
    resp: &Responsibilities,
    dataset: &ChoiceDataset,
    active: &[bool],
    grad: &mut [f64],
    scale: f64,
    ws: &mut Workspace,
) -> f64 {
    let d = params.a.nrows();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut gphi = vec![0.0; d];
    let mut q = 0.0;
    for (h, obs) in dataset.observations().iter().enumerate() {
        let mean = obs.choice_set().mean();
        for k in 0..d {
            let w = resp.r[(h, k)];
            if w == 0.0 {
                continue;
            }
            let lp = dlcl_component_log_prob(params, k, obs, ws, active[k].then_some(gphi.as_mut_slice()));
            q += w * lp;
            if active[k] {
                let ga = &mut grad[k * d..(k + 1) * d];
                for (g, v) in ga.iter_mut().zip(&gphi) {
                    *g += scale * w * mean[k] * v;
                }
                let gb = &mut grad[d * d + k * d..d * d + (k + 1) * d];
                for (g, v) in gb.iter_mut().zip(&gphi) {
                    *g += scale * w * v;
                }
            }
        }
    }
    q
}

fn check_resp(params: &DlclParams, resp: &Responsibilities, dataset: &ChoiceDataset) -> Result<()> {
    let d = params.a.nrows();
    if dataset.dim() != d {
        return Err(Error::dims("dataset feature dimension", d, dataset.dim()));
    }
    if resp.r.shape() != (dataset.len(), d) {
        return Err(Error::dims("responsibility rows", dataset.len(), resp.r.nrows()));
    }
    Ok(())
}

pub fn q_function(params: &DlclParams, resp: &Responsibilities, dataset: &ChoiceDataset) -> Result<QValue> {
    check_resp(params, resp, dataset)?;
    let d = params.a.nrows();
    let mut grad = vec![0.0; 2 * d * d];
    let value = q_and_descent_gradient(
        params,
        resp,
        dataset,
        &vec![true; d],
        &mut grad,
        -1.0,
        &mut Workspace::new(),
    );
    Ok(QValue {
        value,
        grad_a: DMatrix::from_column_slice(d, d, &grad[..d * d]),
        grad_b: DMatrix::from_column_slice(d, d, &grad[d * d..]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub inner_iterations: usize,
    pub inner_learning_rate: f64,
    pub max_iterations: usize,
    pub grad_tolerance: f64,
    pub wall_clock_limit_seconds: Option<f64>,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            inner_iterations: 50,
            inner_learning_rate: 0.005,
            max_iterations: 500,
            grad_tolerance: 1e-6,
            wall_clock_limit_seconds: Some(3600.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmRecord {
    pub t: usize,
    pub nll: f64,
    pub grad_norm: f64,
    pub pi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmStop {
    Converged,
    MaxIterations,
    WallClock,
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: DlclParams,
    pub trace: Vec<EmRecord>,
    pub stop_reason: EmStop,
}

impl EmFit {
    pub fn final_nll(&self) -> f64 {
        self.trace.last().expect("trace holds the initial state").nll
    }
}

pub fn write_em_trace(mut w: impl Write, trace: &[EmRecord]) -> Result<()> {
    for record in trace {
        serde_json::to_writer(&mut w, record)?;
        writeln!(w).map_err(|e| Error::io("<EM trace>", e))?;
    }
    Ok(())
}

fn nll_and_grad_norm(params: &DlclParams, dataset: &ChoiceDataset, ws: &mut Workspace) -> (f64, f64) {
    let wrapped = Params::Dlcl(params.clone());
    let mut grad = vec![0.0; wrapped.n_free()];
    let nll = nll_and_gradient_flat(&wrapped, dataset.observations(), Some(&mut grad), 1.0, ws);
    (nll, grad.iter().map(|g| g * g).sum::<f64>().sqrt())
}

/// Raises `Q` with full-batch Adam and returns the best iterate visited.
fn m_step(
    params: &DlclParams,
    resp: &Responsibilities,
    dataset: &ChoiceDataset,
    config: &EmConfig,
    ws: &mut Workspace,
) -> Result<DlclParams> {
    let d = params.a.nrows();
    let active: Vec<bool> = params.pis().iter().map(|&p| p >= FROZEN_WEIGHT).collect();
    let free: Vec<bool> = (0..2 * d * d).map(|i| active[(i % (d * d)) / d]).collect();
    let scale = 1.0 / dataset.len() as f64;
    let adam = AdamConfig::new(config.inner_learning_rate, 0.0);
    let mut state = AdamState::new(2 * d * d);
    let mut flat: Vec<f64> = params.a.iter().chain(params.b.iter()).copied().collect();
    let mut grad = vec![0.0; flat.len()];
    let mut current = params.clone();
    let mut best = (f64::NEG_INFINITY, params.clone());
    for step in 0..=config.inner_iterations {
        let q = q_and_descent_gradient(&current, resp, dataset, &active, &mut grad, scale, ws);
        if q.is_finite() && q > best.0 {
            best = (q, current.clone());
        }
        if step == config.inner_iterations {
            break;
        }
        adam_step(&mut state, &mut flat, &grad, &adam, Some(&free), None)?;
        current.a.copy_from_slice(&flat[..d * d]);
        current.b.copy_from_slice(&flat[d * d..]);
    }
    Ok(best.1)
}

/// Fits a DLCL by EM. Without `init`, `A` and `B` are drawn uniformly from
/// [-0.1, 0.1] with the configured seed and the weights start uniform.
pub fn em_fit(train: &ChoiceDataset, config: &EmConfig, init: Option<DlclParams>) -> Result<EmFit> {
    let d = train.dim();
    if config.inner_learning_rate <= 0.0 || config.max_iterations == 0 {
        return Err(Error::InvalidArgument(
            "EM needs a positive inner learning rate and at least one iteration".into(),
        ));
    }
    let mut params = match init {
        Some(p) if p.a.nrows() != d => return Err(Error::dims("initial DLCL dimension", d, p.a.nrows())),
        Some(p) => p,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            match Params::initial(ModelKind::Dlcl, d, d, &mut rng) {
                Params::Dlcl(p) => p,
                _ => unreachable!(),
            }
        }
    };
    Params::Dlcl(params.clone()).check_finite()?;

    let start = Instant::now();
    let mut ws = Workspace::new();
    let (mut nll, mut grad_norm) = nll_and_grad_norm(&params, train, &mut ws);
    let mut trace = vec![EmRecord {
        t: 0,
        nll,
        grad_norm,
        pi: params.pis(),
    }];
    let mut stop_reason = EmStop::MaxIterations;
    for t in 1..=config.max_iterations {
        if grad_norm < config.grad_tolerance {
            stop_reason = EmStop::Converged;
            break;
        }
        if config
            .wall_clock_limit_seconds
            .is_some_and(|l| start.elapsed().as_secs_f64() >= l)
        {
            stop_reason = EmStop::WallClock;
            break;
        }
        let resp = compute_responsibilities(&params, train)?;
        let pis = resp.column_means();
        params.logits = DVector::from_iterator(d, pis.iter().map(|p| p.max(f64::MIN_POSITIVE).ln()));
        params = m_step(&params, &resp, train, config, &mut ws)?;
        let (new_nll, new_norm) = nll_and_grad_norm(&params, train, &mut ws);
        if !new_nll.is_finite() {
            return Err(Error::Diverged {
                epoch: t,
                reason: "EM produced a non-finite NLL".into(),
            });
        }
        nll = new_nll;
        grad_norm = new_norm;
        trace.push(EmRecord {
            t,
            nll,
            grad_norm,
            pi: params.pis(),
        });
    }
    if stop_reason == EmStop::MaxIterations && grad_norm < config.grad_tolerance {
        stop_reason = EmStop::Converged;
    }
    Ok(EmFit {
        params,
        trace,
        stop_reason,
    })
}
