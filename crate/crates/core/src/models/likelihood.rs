//! Choice probabilities, log-likelihoods and analytic gradients.
//!
//! All softmaxes subtract the maximum utility, and mixture likelihoods are
//! combined with log-sum-exp over `log pi_k + log p_k`, so utilities in the
//! hundreds neither overflow nor lose the minority components.

use nalgebra::{DMatrix, DVector};

use super::{DlclParams, LclParams, MixedLogitParams, MnlParams, Params};
use crate::data::{ChoiceDataset, ChoiceSet, Observation};
use crate::error::{Error, Result};

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| l - lse).collect()
}

/// Reusable buffers for per-observation evaluation.
#[derive(Debug, Default)]
pub struct Workspace {
    phi: Vec<f64>,
    util: Vec<f64>,
    gphi: Vec<f64>,
    comp_logp: Vec<f64>,
    comp_gphi: Vec<f64>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Fills `util` with the log-softmax of `phi . x_j` over the set.
fn log_softmax_utilities(phi: &[f64], set: &ChoiceSet, util: &mut Vec<f64>) {
    util.clear();
    util.extend(set.items().map(|x| dot(phi, x)));
    let lse = log_sum_exp(util);
    util.iter_mut().for_each(|u| *u -= lse);
}

/// Log-probability of `chosen` under preference vector `phi`; if `gphi` is
/// given it receives the gradient of `-log p` with respect to `phi`,
/// `sum_j p_j x_j - x_chosen`.
fn logit_term(phi: &[f64], set: &ChoiceSet, chosen: usize, util: &mut Vec<f64>, gphi: Option<&mut [f64]>) -> f64 {
    log_softmax_utilities(phi, set, util);
    if let Some(g) = gphi {
        g.iter_mut().for_each(|v| *v = 0.0);
        for (x, lp) in set.items().zip(util.iter()) {
            let p = lp.exp();
            for (gk, xk) in g.iter_mut().zip(x) {
                *gk += p * xk;
            }
        }
        for (gk, xk) in g.iter_mut().zip(set.item(chosen)) {
            *gk -= xk;
        }
    }
    util[chosen]
}

fn lcl_phi(p: &LclParams, mean: &[f64], phi: &mut Vec<f64>) {
    let d = p.theta.len();
    phi.clear();
    phi.extend_from_slice(p.theta.as_slice());
    for (q, &m) in mean.iter().enumerate().take(d) {
        if m != 0.0 {
            let col = p.a.column(q);
            for (ph, a) in phi.iter_mut().zip(col.iter()) {
                *ph += a * m;
            }
        }
    }
}

fn dlcl_phi(p: &DlclParams, k: usize, mean: &[f64], phi: &mut Vec<f64>) {
    phi.clear();
    let m = mean[k];
    phi.extend(p.b.column(k).iter().zip(p.a.column(k).iter()).map(|(b, a)| b + a * m));
}

/// `-log P(chosen)` for one observation, accumulating `scale * gradient` into
/// `grad` (flat layout) when given. `log_pis` are the log mixture weights.
fn observation_nll(
    params: &Params,
    log_pis: &[f64],
    obs: &Observation,
    ws: &mut Workspace,
    grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let set = obs.choice_set();
    let chosen = obs.chosen();
    let d = set.dim();
    let want_grad = grad.is_some();
    ws.gphi.resize(d, 0.0);
    match params {
        Params::Mnl(p) => {
            let lp = logit_term(
                p.theta.as_slice(),
                set,
                chosen,
                &mut ws.util,
                want_grad.then_some(ws.gphi.as_mut_slice()),
            );
            if let Some((g, s)) = grad {
                for (gi, v) in g.iter_mut().zip(&ws.gphi) {
                    *gi += s * v;
                }
            }
            -lp
        }
        Params::Lcl(p) => {
            lcl_phi(p, set.mean(), &mut ws.phi);
            let lp = logit_term(
                &ws.phi,
                set,
                chosen,
                &mut ws.util,
                want_grad.then_some(ws.gphi.as_mut_slice()),
            );
            if let Some((g, s)) = grad {
                let mean = set.mean();
                let (gt, ga) = g.split_at_mut(d);
                for (gi, v) in gt.iter_mut().zip(&ws.gphi) {
                    *gi += s * v;
                }
                for q in 0..d {
                    let m = s * mean[q];
                    if m != 0.0 {
                        for (gi, v) in ga[q * d..(q + 1) * d].iter_mut().zip(&ws.gphi) {
                            *gi += m * v;
                        }
                    }
                }
            }
            -lp
        }
        Params::MixedLogit(_) | Params::Dlcl(_) => mixture_nll(params, log_pis, obs, ws, grad),
    }
}

fn mixture_nll(
    params: &Params,
    log_pis: &[f64],
    obs: &Observation,
    ws: &mut Workspace,
    grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let set = obs.choice_set();
    let chosen = obs.chosen();
    let d = set.dim();
    let k_total = log_pis.len();
    let want_grad = grad.is_some();
    ws.comp_logp.clear();
    ws.comp_gphi.resize(k_total * d, 0.0);
    for (k, log_pi) in log_pis.iter().enumerate() {
        match params {
            Params::MixedLogit(p) => {
                ws.phi.clear();
                ws.phi.extend(p.thetas.column(k).iter());
            }
            Params::Dlcl(p) => dlcl_phi(p, k, set.mean(), &mut ws.phi),
            _ => unreachable!("mixture_nll called on a single-logit model"),
        }
        let gslot = &mut ws.comp_gphi[k * d..(k + 1) * d];
        let lp = logit_term(&ws.phi, set, chosen, &mut ws.util, want_grad.then_some(gslot));
        ws.comp_logp.push(lp + log_pi);
    }
    let log_p = log_sum_exp(&ws.comp_logp);
    if let Some((g, s)) = grad {
        let n = g.len();
        let logit_base = n - k_total;
        for k in 0..k_total {
            // Posterior weight of component k for this observation.
            let w = (ws.comp_logp[k] - log_p).exp();
            let gk = &ws.comp_gphi[k * d..(k + 1) * d];
            match params {
                Params::MixedLogit(_) => {
                    for (gi, v) in g[k * d..(k + 1) * d].iter_mut().zip(gk) {
                        *gi += s * w * v;
                    }
                }
                Params::Dlcl(_) => {
                    let m = set.mean()[k];
                    for (gi, v) in g[k * d..(k + 1) * d].iter_mut().zip(gk) {
                        *gi += s * w * m * v;
                    }
                    let off = d * d + k * d;
                    for (gi, v) in g[off..off + d].iter_mut().zip(gk) {
                        *gi += s * w * v;
                    }
                }
                _ => unreachable!(),
            }
            g[logit_base + k] -= s * (w - log_pis[k].exp());
        }
    }
    -log_p
}

/// Log-probability of the chosen item under DLCL component `k` alone. When
/// `gphi` is given it receives the gradient of `-log p` with respect to the
/// component's context-adjusted preference vector.
pub(crate) fn dlcl_component_log_prob(
    params: &DlclParams,
    k: usize,
    obs: &Observation,
    ws: &mut Workspace,
    gphi: Option<&mut [f64]>,
) -> f64 {
    let set = obs.choice_set();
    dlcl_phi(params, k, set.mean(), &mut ws.phi);
    logit_term(&ws.phi, set, obs.chosen(), &mut ws.util, gphi)
}

fn log_weights(params: &Params) -> Vec<f64> {
    match params {
        Params::MixedLogit(p) => log_softmax(p.logits.as_slice()),
        Params::Dlcl(p) => log_softmax(p.logits.as_slice()),
        _ => vec![0.0],
    }
}

fn check_dims(params: &Params, d: usize) -> Result<()> {
    if params.dim() != d {
        return Err(Error::dims("model feature dimension", d, params.dim()));
    }
    Ok(())
}

/// Sum of `-log P(chosen)` over the given observations, with the gradient
/// (flat layout, scaled by `scale`) accumulated into `grad` when provided.
/// `grad` is overwritten, not added to.
pub fn nll_and_gradient_flat<'a>(
    params: &Params,
    observations: impl IntoIterator<Item = &'a Observation>,
    mut grad: Option<&mut [f64]>,
    scale: f64,
    ws: &mut Workspace,
) -> f64 {
    let log_pis = log_weights(params);
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut total = 0.0;
    for obs in observations {
        total += observation_nll(params, &log_pis, obs, ws, grad.as_deref_mut().map(|g| (g, scale)));
    }
    total
}

/// Negative log-likelihood of a dataset.
pub fn negative_log_likelihood(params: &Params, dataset: &ChoiceDataset) -> Result<f64> {
    check_dims(params, dataset.dim())?;
    params.check_finite()?;
    let nll = nll_and_gradient_flat(params, dataset.observations(), None, 1.0, &mut Workspace::new());
    if !nll.is_finite() {
        return Err(Error::NonFinite("negative log-likelihood".into()));
    }
    Ok(nll)
}

/// Gradient of the dataset NLL with respect to every free parameter, in the
/// same structure as `params` (mixture weights: gradient w.r.t. the logits).
pub fn nll_gradient(params: &Params, dataset: &ChoiceDataset) -> Result<Params> {
    check_dims(params, dataset.dim())?;
    params.check_finite()?;
    let mut g = vec![0.0; params.n_free()];
    nll_and_gradient_flat(params, dataset.observations(), Some(&mut g), 1.0, &mut Workspace::new());
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i}")));
    }
    params.with_flat(&g)
}

/// `theta + A x_C`.
pub fn context_adjusted_preferences(theta: &DVector<f64>, a: &DMatrix<f64>, mean: &[f64]) -> Result<DVector<f64>> {
    let d = theta.len();
    if a.shape() != (d, d) {
        return Err(Error::dims("context matrix rows/cols", d, a.nrows().max(a.ncols())));
    }
    if mean.len() != d {
        return Err(Error::dims("mean feature vector", d, mean.len()));
    }
    Ok(theta + a * DVector::from_column_slice(mean))
}

/// Per-item log-probabilities over a choice set.
fn log_probabilities(params: &Params, set: &ChoiceSet) -> Result<Vec<f64>> {
    check_dims(params, set.dim())?;
    params.check_finite()?;
    let mut util = Vec::with_capacity(set.len());
    let mut phi = Vec::with_capacity(set.dim());
    let out = match params {
        Params::Mnl(p) => {
            log_softmax_utilities(p.theta.as_slice(), set, &mut util);
            util
        }
        Params::Lcl(p) => {
            lcl_phi(p, set.mean(), &mut phi);
            log_softmax_utilities(&phi, set, &mut util);
            util
        }
        Params::MixedLogit(_) | Params::Dlcl(_) => {
            let log_pis = log_weights(params);
            let mut per_item = vec![Vec::with_capacity(log_pis.len()); set.len()];
            for (k, lpi) in log_pis.iter().enumerate() {
                match params {
                    Params::MixedLogit(p) => {
                        phi.clear();
                        phi.extend(p.thetas.column(k).iter());
                    }
                    Params::Dlcl(p) => dlcl_phi(p, k, set.mean(), &mut phi),
                    _ => unreachable!(),
                }
                log_softmax_utilities(&phi, set, &mut util);
                for (acc, lp) in per_item.iter_mut().zip(&util) {
                    acc.push(lp + lpi);
                }
            }
            per_item.iter().map(|v| log_sum_exp(v)).collect()
        }
    };
    if out.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("utility".into()));
    }
    Ok(out)
}

fn softmax_utilities(phi: &[f64], set: &ChoiceSet) -> Vec<f64> {
    let util: Vec<f64> = set.items().map(|x| dot(phi, x)).collect();
    super::softmax(&util)
}

/// Choice probabilities of every item in the set.
pub fn choice_probabilities(params: &Params, set: &ChoiceSet) -> Result<Vec<f64>> {
    check_dims(params, set.dim())?;
    params.check_finite()?;
    let mut phi = Vec::with_capacity(set.dim());
    let probs = match params {
        Params::Mnl(p) => softmax_utilities(p.theta.as_slice(), set),
        Params::Lcl(p) => {
            lcl_phi(p, set.mean(), &mut phi);
            softmax_utilities(&phi, set)
        }
        Params::MixedLogit(_) | Params::Dlcl(_) => {
            let pis = params.weights();
            let mut out = vec![0.0; set.len()];
            for (k, pi) in pis.iter().enumerate() {
                match params {
                    Params::MixedLogit(p) => {
                        phi.clear();
                        phi.extend(p.thetas.column(k).iter());
                    }
                    Params::Dlcl(p) => dlcl_phi(p, k, set.mean(), &mut phi),
                    _ => unreachable!(),
                }
                for (o, pk) in out.iter_mut().zip(softmax_utilities(&phi, set)) {
                    *o += pi * pk;
                }
            }
            out
        }
    };
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("utility".into()));
    }
    Ok(probs)
}

pub fn mnl_probabilities(params: &MnlParams, set: &ChoiceSet) -> Result<Vec<f64>> {
    choice_probabilities(&Params::Mnl(params.clone()), set)
}

pub fn lcl_probabilities(params: &LclParams, set: &ChoiceSet) -> Result<Vec<f64>> {
    choice_probabilities(&Params::Lcl(params.clone()), set)
}

pub fn mixed_logit_probabilities(params: &MixedLogitParams, set: &ChoiceSet) -> Result<Vec<f64>> {
    choice_probabilities(&Params::MixedLogit(params.clone()), set)
}

pub fn dlcl_probabilities(params: &DlclParams, set: &ChoiceSet) -> Result<Vec<f64>> {
    choice_probabilities(&Params::Dlcl(params.clone()), set)
}

/// Log probability ratios `beta_i = log(P(i) / geometric mean of P(j))`.
pub fn log_probability_ratios(params: &Params, set: &ChoiceSet) -> Result<Vec<f64>> {
    let logp = log_probabilities(params, set)?;
    if logp.contains(&f64::NEG_INFINITY) {
        return Err(Error::InvalidArgument("zero choice probability".into()));
    }
    let mean = logp.iter().sum::<f64>() / logp.len() as f64;
    Ok(logp.into_iter().map(|l| l - mean).collect())
}
