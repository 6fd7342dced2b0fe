//! Seeded simulation of choice data from a known model.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{ChoiceDataset, ChoiceSet, Observation};
use crate::error::{Error, Result};
use crate::models::{choice_probabilities, Params};

/// `n` choice sets of `set_size` items with i.i.d. standard normal features.
pub fn standard_normal_sets<R: Rng + ?Sized>(
    n: usize,
    set_size: usize,
    d: usize,
    rng: &mut R,
) -> Result<Vec<ChoiceSet>> {
    (0..n)
        .map(|_| {
            let flat: Vec<f64> = (0..set_size * d).map(|_| StandardNormal.sample(rng)).collect();
            ChoiceSet::from_flat(flat, d)
        })
        .collect()
}

/// Draws the chosen item of every set from the model's choice probabilities.
pub fn simulate_choices<R: Rng + ?Sized>(params: &Params, sets: Vec<ChoiceSet>, rng: &mut R) -> Result<ChoiceDataset> {
    let observations = sets
        .into_iter()
        .map(|set| {
            let probs = choice_probabilities(params, &set)?;
            let chosen = WeightedIndex::new(&probs)
                .map_err(|e| Error::InvalidArgument(format!("choice probabilities: {e}")))?
                .sample(rng);
            Observation::new(set, chosen)
        })
        .collect::<Result<Vec<_>>>()?;
    ChoiceDataset::new(observations, None)
}

/// `n` observations over standard normal sets of `set_size` items.
pub fn simulate_dataset<R: Rng + ?Sized>(
    params: &Params,
    n: usize,
    set_size: usize,
    rng: &mut R,
) -> Result<ChoiceDataset> {
    let sets = standard_normal_sets(n, set_size, params.dim(), rng)?;
    simulate_choices(params, sets, rng)
}
