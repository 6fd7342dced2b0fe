use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{matrix_from_rows, matrix_to_rows, DlclParams, LclParams, MixedLogitParams, MnlParams, ModelKind, Params};
use crate::data::Standardizer;
use crate::error::{Error, Result};

/// JSON form of a fitted model. Matrices are stored as lists of rows; the
/// mixed logit stores one preference vector per entry of `thetas`.
///
/// Mixture weights are written both as probabilities (`pi`) and as the
/// underlying logits so that a reload reproduces the parameters bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thetas: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardizer: Option<Standardizer>,
}

fn required<T>(field: Option<T>, name: &str, kind: ModelKind) -> Result<T> {
    field.ok_or_else(|| Error::InvalidArgument(format!("{kind} model file is missing `{name}`")))
}

impl ModelFile {
    pub fn from_params(params: &Params, standardizer: Option<Standardizer>) -> Self {
        let mut file = ModelFile {
            kind: params.kind(),
            d: params.dim(),
            theta: None,
            a: None,
            b: None,
            thetas: None,
            pi: None,
            pi_logits: None,
            standardizer,
        };
        match params {
            Params::Mnl(p) => file.theta = Some(p.theta.as_slice().to_vec()),
            Params::Lcl(p) => {
                file.theta = Some(p.theta.as_slice().to_vec());
                file.a = Some(matrix_to_rows(&p.a));
            }
            Params::MixedLogit(p) => {
                file.thetas = Some(p.thetas.column_iter().map(|c| c.iter().copied().collect()).collect());
                file.pi = Some(p.pis());
                file.pi_logits = Some(p.logits.as_slice().to_vec());
            }
            Params::Dlcl(p) => {
                file.a = Some(matrix_to_rows(&p.a));
                file.b = Some(matrix_to_rows(&p.b));
                file.pi = Some(p.pis());
                file.pi_logits = Some(p.logits.as_slice().to_vec());
            }
        }
        file
    }

    pub fn to_params(&self) -> Result<Params> {
        let d = self.d;
        let kind = self.kind;
        let theta = |t: &Option<Vec<f64>>| -> Result<DVector<f64>> {
            let t = required(t.clone(), "theta", kind)?;
            if t.len() != d {
                return Err(Error::dims("theta length", d, t.len()));
            }
            Ok(DVector::from_vec(t))
        };
        let logits = |m: usize| -> Result<DVector<f64>> {
            if let Some(l) = &self.pi_logits {
                if l.len() != m {
                    return Err(Error::dims("mixture logits", m, l.len()));
                }
                return Ok(DVector::from_column_slice(l));
            }
            let pi = required(self.pi.clone(), "pi", kind)?;
            if pi.len() != m {
                return Err(Error::dims("mixture weights", m, pi.len()));
            }
            super::logits_from_weights(&pi)
        };
        let params = match kind {
            ModelKind::Mnl => Params::Mnl(MnlParams {
                theta: theta(&self.theta)?,
            }),
            ModelKind::Lcl => Params::Lcl(LclParams {
                theta: theta(&self.theta)?,
                a: matrix_from_rows(&required(self.a.clone(), "A", kind)?, d)?,
            }),
            ModelKind::MixedLogit => {
                let cols = required(self.thetas.clone(), "thetas", kind)?;
                if cols.is_empty() {
                    return Err(Error::Empty("mixed logit component list"));
                }
                if let Some(bad) = cols.iter().find(|c| c.len() != d) {
                    return Err(Error::dims("mixed logit component length", d, bad.len()));
                }
                let thetas = DMatrix::from_fn(d, cols.len(), |p, k| cols[k][p]);
                Params::MixedLogit(MixedLogitParams {
                    logits: logits(cols.len())?,
                    thetas,
                })
            }
            ModelKind::Dlcl => Params::Dlcl(DlclParams {
                a: matrix_from_rows(&required(self.a.clone(), "A", kind)?, d)?,
                b: matrix_from_rows(&required(self.b.clone(), "B", kind)?, d)?,
                logits: logits(d)?,
            }),
        };
        params.check_finite()?;
        if let Some(s) = &self.standardizer {
            if s.dim() != d {
                return Err(Error::dims("standardizer dimension", d, s.dim()));
            }
        }
        Ok(params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
