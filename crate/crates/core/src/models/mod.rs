//! Choice models: MNL, the linear context logit (LCL), discrete mixed logit,
//! and the decomposed linear context logit (DLCL).
//!
//! Matrix conventions: `a[(p, q)]` is the effect of the choice-set mean of
//! feature `q` on the preference coefficient of feature `p`. Mixture weights
//! are stored as unconstrained logits and materialized with a softmax.
//!
//! Every parameter set also has a flat layout used by the optimizers. Matrices
//! are flattened column-major (the `vec` convention), which is also nalgebra's
//! storage order:
//!
//! | kind        | layout                                  |
//! |-------------|-----------------------------------------|
//! | MNL         | `theta`                                 |
//! | LCL         | `theta`, `vec(A)`                       |
//! | mixed logit | `vec(thetas)` (one column per class), logits |
//! | DLCL        | `vec(A)`, `vec(B)`, logits              |

mod file;
mod likelihood;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use file::ModelFile;
pub(crate) use likelihood::dlcl_component_log_prob;
pub use likelihood::{
    choice_probabilities, context_adjusted_preferences, dlcl_probabilities, lcl_probabilities, log_probability_ratios,
    mixed_logit_probabilities, mnl_probabilities, negative_log_likelihood, nll_and_gradient_flat, nll_gradient,
    Workspace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mnl,
    Lcl,
    #[serde(alias = "mixed")]
    MixedLogit,
    Dlcl,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Mnl, ModelKind::Lcl, ModelKind::MixedLogit, ModelKind::Dlcl];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mnl => "mnl",
            ModelKind::Lcl => "lcl",
            ModelKind::MixedLogit => "mixed_logit",
            ModelKind::Dlcl => "dlcl",
        }
    }

    pub fn is_mixture(self) -> bool {
        matches!(self, ModelKind::MixedLogit | ModelKind::Dlcl)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnl" => Ok(ModelKind::Mnl),
            "lcl" => Ok(ModelKind::Lcl),
            "mixed" | "mixed_logit" => Ok(ModelKind::MixedLogit),
            "dlcl" => Ok(ModelKind::Dlcl),
            other => Err(Error::InvalidArgument(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MnlParams {
    pub theta: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LclParams {
    pub theta: DVector<f64>,
    pub a: DMatrix<f64>,
}

/// `thetas` holds one preference vector per column (`d × M`).
#[derive(Debug, Clone, PartialEq)]
pub struct MixedLogitParams {
    pub thetas: DMatrix<f64>,
    pub logits: DVector<f64>,
}

/// Column `k` of `b` is the base preference vector of component `k`, and
/// column `k` of `a` its slope in the `k`-th mean feature.
#[derive(Debug, Clone, PartialEq)]
pub struct DlclParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub logits: DVector<f64>,
}

fn logits_from_weights(pis: &[f64]) -> Result<DVector<f64>> {
    if pis.is_empty() {
        return Err(Error::Empty("mixture weights"));
    }
    if pis.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mixture weights must be nonnegative: {pis:?}"
        )));
    }
    let total: f64 = pis.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
    }
    Ok(DVector::from_iterator(
        pis.len(),
        pis.iter().map(|p| p.max(f64::MIN_POSITIVE).ln()),
    ))
}

/// Softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl MixedLogitParams {
    pub fn from_weights(thetas: DMatrix<f64>, pis: &[f64]) -> Result<Self> {
        if thetas.ncols() != pis.len() {
            return Err(Error::dims("mixture weights", thetas.ncols(), pis.len()));
        }
        Ok(Self {
            thetas,
            logits: logits_from_weights(pis)?,
        })
    }

    pub fn pis(&self) -> Vec<f64> {
        softmax(self.logits.as_slice())
    }
}

impl DlclParams {
    pub fn from_weights(a: DMatrix<f64>, b: DMatrix<f64>, pis: &[f64]) -> Result<Self> {
        let d = a.nrows();
        if a.shape() != (d, d) || b.shape() != (d, d) {
            return Err(Error::InvalidArgument("DLCL A and B must both be d × d".into()));
        }
        if pis.len() != d {
            return Err(Error::dims("mixture weights", d, pis.len()));
        }
        Ok(Self {
            a,
            b,
            logits: logits_from_weights(pis)?,
        })
    }

    pub fn pis(&self) -> Vec<f64> {
        softmax(self.logits.as_slice())
    }
}

/// Parameters of any supported model.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Mnl(MnlParams),
    Lcl(LclParams),
    MixedLogit(MixedLogitParams),
    Dlcl(DlclParams),
}

impl Params {
    pub fn mnl(theta: Vec<f64>) -> Self {
        Params::Mnl(MnlParams {
            theta: DVector::from_vec(theta),
        })
    }

    /// LCL from a preference vector and a row-major `d × d` matrix.
    pub fn lcl(theta: Vec<f64>, a_rows: &[Vec<f64>]) -> Result<Self> {
        let d = theta.len();
        let a = matrix_from_rows(a_rows, d)?;
        Ok(Params::Lcl(LclParams {
            theta: DVector::from_vec(theta),
            a,
        }))
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Params::Mnl(_) => ModelKind::Mnl,
            Params::Lcl(_) => ModelKind::Lcl,
            Params::MixedLogit(_) => ModelKind::MixedLogit,
            Params::Dlcl(_) => ModelKind::Dlcl,
        }
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        match self {
            Params::Mnl(p) => p.theta.len(),
            Params::Lcl(p) => p.theta.len(),
            Params::MixedLogit(p) => p.thetas.nrows(),
            Params::Dlcl(p) => p.a.nrows(),
        }
    }

    /// Number of mixture components (1 for MNL and LCL).
    pub fn components(&self) -> usize {
        match self {
            Params::Mnl(_) | Params::Lcl(_) => 1,
            Params::MixedLogit(p) => p.thetas.ncols(),
            Params::Dlcl(p) => p.a.ncols(),
        }
    }

    /// All-zero parameters (uniform mixture weights).
    pub fn zeros(kind: ModelKind, d: usize, components: usize) -> Self {
        match kind {
            ModelKind::Mnl => Params::Mnl(MnlParams {
                theta: DVector::zeros(d),
            }),
            ModelKind::Lcl => Params::Lcl(LclParams {
                theta: DVector::zeros(d),
                a: DMatrix::zeros(d, d),
            }),
            ModelKind::MixedLogit => Params::MixedLogit(MixedLogitParams {
                thetas: DMatrix::zeros(d, components),
                logits: DVector::zeros(components),
            }),
            ModelKind::Dlcl => Params::Dlcl(DlclParams {
                a: DMatrix::zeros(d, d),
                b: DMatrix::zeros(d, d),
                logits: DVector::zeros(d),
            }),
        }
    }

    /// Default starting point for estimation: zeros for MNL and LCL; for the
    /// mixtures, component parameters i.i.d. uniform on [-0.1, 0.1] and
    /// uniform weights.
    pub fn initial<R: Rng + ?Sized>(kind: ModelKind, d: usize, components: usize, rng: &mut R) -> Self {
        let mut params = Self::zeros(kind, d, components);
        let mut draw = |m: &mut DMatrix<f64>| {
            for v in m.iter_mut() {
                *v = rng.random_range(-0.1..=0.1);
            }
        };
        match &mut params {
            Params::MixedLogit(p) => draw(&mut p.thetas),
            Params::Dlcl(p) => {
                draw(&mut p.a);
                draw(&mut p.b);
            }
            _ => {}
        }
        params
    }

    pub fn n_free(&self) -> usize {
        let d = self.dim();
        match self {
            Params::Mnl(_) => d,
            Params::Lcl(_) => d * d + d,
            Params::MixedLogit(p) => d * p.thetas.ncols() + p.logits.len(),
            Params::Dlcl(_) => 2 * d * d + d,
        }
    }

    /// Number of identified parameters (mixture weights lose one degree of
    /// freedom to the simplex constraint).
    pub fn parameter_count(&self) -> usize {
        match self {
            Params::MixedLogit(p) => self.n_free() - 1.min(p.logits.len()),
            Params::Dlcl(_) => self.n_free() - 1,
            _ => self.n_free(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_free());
        match self {
            Params::Mnl(p) => out.extend_from_slice(p.theta.as_slice()),
            Params::Lcl(p) => {
                out.extend_from_slice(p.theta.as_slice());
                out.extend_from_slice(p.a.as_slice());
            }
            Params::MixedLogit(p) => {
                out.extend_from_slice(p.thetas.as_slice());
                out.extend_from_slice(p.logits.as_slice());
            }
            Params::Dlcl(p) => {
                out.extend_from_slice(p.a.as_slice());
                out.extend_from_slice(p.b.as_slice());
                out.extend_from_slice(p.logits.as_slice());
            }
        }
        out
    }

    /// Overwrites every parameter from a flat vector in this model's layout.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_free() {
            return Err(Error::dims("flat parameter vector", self.n_free(), flat.len()));
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        match self {
            Params::Mnl(p) => take(p.theta.as_mut_slice()),
            Params::Lcl(p) => {
                take(p.theta.as_mut_slice());
                take(p.a.as_mut_slice());
            }
            Params::MixedLogit(p) => {
                take(p.thetas.as_mut_slice());
                take(p.logits.as_mut_slice());
            }
            Params::Dlcl(p) => {
                take(p.a.as_mut_slice());
                take(p.b.as_mut_slice());
                take(p.logits.as_mut_slice());
            }
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.set_flat(flat)?;
        Ok(out)
    }

    /// Flat indices of the context-effect matrix `A` (empty for MNL and mixed logit).
    pub fn context_indices(&self) -> std::ops::Range<usize> {
        let d = self.dim();
        match self {
            Params::Lcl(_) => d..d + d * d,
            Params::Dlcl(_) => 0..d * d,
            _ => 0..0,
        }
    }

    /// Flat index of `A[(p, q)]` for LCL and DLCL.
    pub fn context_index(&self, p: usize, q: usize) -> Option<usize> {
        let d = self.dim();
        if p >= d || q >= d {
            return None;
        }
        match self {
            Params::Lcl(_) => Some(d + q * d + p),
            Params::Dlcl(_) => Some(q * d + p),
            _ => None,
        }
    }

    /// Flat indices belonging to mixture component `k`, excluding its weight logit.
    pub fn component_indices(&self, k: usize) -> Vec<usize> {
        let d = self.dim();
        match self {
            Params::MixedLogit(_) => (k * d..(k + 1) * d).collect(),
            Params::Dlcl(_) => (k * d..(k + 1) * d).chain(d * d + k * d..d * d + (k + 1) * d).collect(),
            _ => (0..self.n_free()).collect(),
        }
    }

    /// Flat indices of the mixture-weight logits.
    pub fn logit_indices(&self) -> std::ops::Range<usize> {
        let n = self.n_free();
        match self {
            Params::MixedLogit(p) => n - p.logits.len()..n,
            Params::Dlcl(p) => n - p.logits.len()..n,
            _ => n..n,
        }
    }

    /// Mixture weights (`[1.0]` for single-logit models).
    pub fn weights(&self) -> Vec<f64> {
        match self {
            Params::MixedLogit(p) => p.pis(),
            Params::Dlcl(p) => p.pis(),
            _ => vec![1.0],
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.flatten().iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!("{} parameter at flat index {i}", self.kind()))),
            None => Ok(()),
        }
    }

    /// The context matrix `A`, if this model has one.
    pub fn context_matrix(&self) -> Option<&DMatrix<f64>> {
        match self {
            Params::Lcl(p) => Some(&p.a),
            Params::Dlcl(p) => Some(&p.a),
            _ => None,
        }
    }
}

/// Builds a `d × d` matrix from row-major nested vectors.
pub fn matrix_from_rows(rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if rows.len() != d {
        return Err(Error::dims("matrix rows", d, rows.len()));
    }
    for row in rows {
        if row.len() != d {
            return Err(Error::dims("matrix row length", d, row.len()));
        }
    }
    Ok(DMatrix::from_fn(d, d, |p, q| rows[p][q]))
}

/// Row-major nested vectors of a matrix.
pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|p| m.row(p).iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flatten_round_trip_and_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in ModelKind::ALL {
            let p = Params::initial(kind, 3, 3, &mut rng);
            let flat: Vec<f64> = (0..p.n_free()).map(|i| i as f64).collect();
            let q = p.with_flat(&flat).unwrap();
            assert_eq!(q.flatten(), flat);
        }
        let lcl = Params::lcl(vec![0.0; 2], &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let flat = lcl.flatten();
        assert_eq!(flat[lcl.context_index(0, 1).unwrap()], 2.0);
        assert_eq!(flat[lcl.context_index(1, 0).unwrap()], 3.0);
    }

    #[test]
    fn weights_validation() {
        let thetas = DMatrix::zeros(2, 2);
        assert!(MixedLogitParams::from_weights(thetas.clone(), &[0.5, 0.6]).is_err());
        assert!(MixedLogitParams::from_weights(thetas.clone(), &[-0.5, 1.5]).is_err());
        let p = MixedLogitParams::from_weights(thetas, &[0.3, 0.7]).unwrap();
        let pis = p.pis();
        assert!((pis[0] - 0.3).abs() < 1e-15 && (pis[1] - 0.7).abs() < 1e-15);
        let p = MixedLogitParams::from_weights(DMatrix::zeros(2, 2), &[1.0, 0.0]).unwrap();
        assert!((p.pis().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parameter_counts() {
        let d = 6;
        let mnl = Params::zeros(ModelKind::Mnl, d, 1);
        let lcl = Params::zeros(ModelKind::Lcl, d, 1);
        let mixed = Params::zeros(ModelKind::MixedLogit, d, d);
        let dlcl = Params::zeros(ModelKind::Dlcl, d, d);
        assert_eq!(lcl.parameter_count() - mnl.parameter_count(), d * d);
        assert_eq!(dlcl.parameter_count() - mixed.parameter_count(), d * d);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("mixed".parse::<ModelKind>().unwrap(), ModelKind::MixedLogit);
        assert_eq!("dlcl".parse::<ModelKind>().unwrap(), ModelKind::Dlcl);
        assert!("probit".parse::<ModelKind>().is_err());
    }
}
