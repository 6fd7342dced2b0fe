use serde::{Deserialize, Serialize};

use super::{fit_mle, train, Constraints, TrainConfig};
use crate::data::ChoiceDataset;
use crate::error::{Error, Result};
use crate::models::{matrix_to_rows, ModelKind, Params};
use crate::stats::likelihood_ratio_test;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegPathConfig {
    /// Strictly increasing, nonnegative L1 strengths.
    pub lambdas: Vec<f64>,
    pub base: TrainConfig,
    /// Significance level of the LCL-vs-MNL likelihood-ratio test.
    pub alpha: f64,
}

impl RegPathConfig {
    pub fn new(lambdas: Vec<f64>, base: TrainConfig) -> Self {
        Self {
            lambdas,
            base,
            alpha: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub theta: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    /// Number of nonzero entries of `A`.
    pub nnz: usize,
    /// Unpenalized full-data NLL.
    pub nll: f64,
    pub lrt_statistic: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Path {
    pub mnl_nll: f64,
    pub mnl_theta: Vec<f64>,
    pub points: Vec<PathPoint>,
}

/// Fits an LCL per L1 strength, warm-starting each from the previous
/// solution, and tests each against a separately fitted MNL with `d²`
/// degrees of freedom.
pub fn l1_path(train_data: &ChoiceDataset, config: &RegPathConfig) -> Result<L1Path> {
    let lambdas = &config.lambdas;
    if lambdas.is_empty() {
        return Err(Error::Empty("lambda list"));
    }
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) || lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!(
            "lambdas must be nonnegative and strictly increasing: {lambdas:?}"
        )));
    }
    let d = train_data.dim();
    let mnl = fit_mle(
        ModelKind::Mnl,
        train_data,
        &TrainConfig {
            l1_lambda: 0.0,
            ..config.base.clone()
        },
        None,
        None,
    )?;
    let mnl_nll = mnl.final_nll();

    let mut current = Params::zeros(ModelKind::Lcl, d, 1);
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let run = TrainConfig {
            l1_lambda: lambda,
            ..config.base.clone()
        };
        let fit = train(current, train_data, None, &run, &Constraints::default())?;
        let Params::Lcl(lcl) = &fit.params else {
            unreachable!("LCL training returns LCL parameters")
        };
        let nll = fit.final_nll();
        let lrt = likelihood_ratio_test(mnl_nll, nll, d * d)?;
        points.push(PathPoint {
            lambda,
            theta: lcl.theta.as_slice().to_vec(),
            a: matrix_to_rows(&lcl.a),
            nnz: lcl.a.iter().filter(|v| **v != 0.0).count(),
            nll,
            lrt_statistic: lrt.statistic,
            p_value: lrt.p_value,
            significant: lrt.p_value < config.alpha,
        });
        current = fit.params;
    }
    Ok(L1Path {
        mnl_nll,
        mnl_theta: mnl.params.flatten(),
        points,
    })
}
