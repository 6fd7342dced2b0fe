#![allow(dead_code)]

use choicectx::data::{ChoiceDataset, ChoiceSet, Observation};
use choicectx::models::{negative_log_likelihood, nll_gradient, ModelKind, Params};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Parameters of `kind` with every free coordinate uniform in `[-scale, scale]`.
pub fn random_params<R: Rng>(kind: ModelKind, d: usize, components: usize, scale: f64, rng: &mut R) -> Params {
    let mut p = Params::zeros(kind, d, components);
    let flat: Vec<f64> = (0..p.n_free()).map(|_| rng.random_range(-scale..=scale)).collect();
    p.set_flat(&flat).unwrap();
    p
}

pub fn random_set<R: Rng>(size: usize, d: usize, rng: &mut R) -> ChoiceSet {
    let flat: Vec<f64> = (0..size * d).map(|_| StandardNormal.sample(rng)).collect();
    ChoiceSet::from_flat(flat, d).unwrap()
}

/// `n` observations over random sets with sizes in `2..=max_size` and
/// uniformly random choices.
pub fn random_dataset<R: Rng>(n: usize, max_size: usize, d: usize, rng: &mut R) -> ChoiceDataset {
    let obs = (0..n)
        .map(|_| {
            let size = rng.random_range(2..=max_size);
            let chosen = rng.random_range(0..size);
            Observation::new(random_set(size, d, rng), chosen).unwrap()
        })
        .collect();
    ChoiceDataset::new(obs, None).unwrap()
}

pub const KINDS: [ModelKind; 4] = [ModelKind::Mnl, ModelKind::Lcl, ModelKind::MixedLogit, ModelKind::Dlcl];

/// Central finite-difference gradient of the dataset NLL with step `h`.
pub fn finite_difference_gradient(params: &Params, data: &ChoiceDataset, h: f64) -> Vec<f64> {
    let flat = params.flatten();
    (0..flat.len())
        .map(|i| {
            let mut plus = flat.clone();
            let mut minus = flat.clone();
            plus[i] += h;
            minus[i] -= h;
            let f_plus = negative_log_likelihood(&params.with_flat(&plus).unwrap(), data).unwrap();
            let f_minus = negative_log_likelihood(&params.with_flat(&minus).unwrap(), data).unwrap();
            (f_plus - f_minus) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, or the absolute difference when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Worst relative gradient error over `instances` random problems of `kind`
/// with `d ≤ 5` and `|C| ≤ 6`.
pub fn worst_gradient_error<R: Rng>(kind: ModelKind, instances: usize, rng: &mut R) -> f64 {
    (0..instances)
        .map(|_| {
            let d = rng.random_range(1..=5);
            let components = rng.random_range(1..=3);
            let params = random_params(kind, d, components, 1.0, rng);
            let data = random_dataset(5, 6, d, rng);
            let analytic = nll_gradient(&params, &data).unwrap().flatten();
            relative_error(&analytic, &finite_difference_gradient(&params, &data, 1e-5))
        })
        .fold(0.0, f64::max)
}
