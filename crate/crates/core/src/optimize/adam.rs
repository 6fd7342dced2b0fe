use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters for one AMSGrad/Adam update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub amsgrad: bool,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            amsgrad: true,
        }
    }
}

/// Moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub max_second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            step_count: 0,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            max_second_moment: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }
}

/// L1 penalty applied by a proximal step after the gradient update.
#[derive(Debug, Clone, Copy)]
pub struct L1Prox<'a> {
    pub lambda: f64,
    pub indices: &'a [usize],
}

/// `sign(x) * max(|x| - lambda, 0)`.
pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// One Adam step with coupled weight decay. Coordinates with `free[i] ==
/// false` are left untouched together with their moments.
///
/// With `l1`, each listed coordinate is then soft-thresholded at
/// `lambda` times its own effective step size, so a coordinate at zero
/// stays at zero exactly when its bias-corrected first moment is at most
/// `lambda` in magnitude.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grad: &[f64],
    config: &AdamConfig,
    free: Option<&[bool]>,
    l1: Option<L1Prox<'_>>,
) -> Result<()> {
    if params.len() != state.len() || grad.len() != state.len() {
        return Err(Error::dims(
            "Adam parameter vector",
            state.len(),
            params.len().max(grad.len()),
        ));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i}")));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2_sqrt = (1.0 - config.beta2.powi(t)).sqrt();
    let step_size = config.learning_rate / bias1;

    let mut effective_step = |i: usize, params: &mut [f64]| -> f64 {
        let g = grad[i] + config.weight_decay * params[i];
        let m = &mut state.first_moment[i];
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        let v = &mut state.second_moment[i];
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let denom_v = if config.amsgrad {
            let vmax = &mut state.max_second_moment[i];
            *vmax = vmax.max(*v);
            *vmax
        } else {
            *v
        };
        let denom = denom_v.sqrt() / bias2_sqrt + config.epsilon;
        params[i] -= step_size * state.first_moment[i] / denom;
        config.learning_rate / denom
    };

    match l1 {
        None => {
            for i in 0..params.len() {
                if free.is_none_or(|f| f[i]) {
                    effective_step(i, params);
                }
            }
        }
        Some(prox) => {
            let mut penalized = vec![false; params.len()];
            for &i in prox.indices {
                penalized[i] = true;
            }
            for i in 0..params.len() {
                if free.is_none_or(|f| f[i]) {
                    let eta = effective_step(i, params);
                    if penalized[i] && prox.lambda > 0.0 {
                        params[i] = soft_threshold(params[i], eta * prox.lambda);
                    }
                }
            }
        }
    }
    Ok(())
}
