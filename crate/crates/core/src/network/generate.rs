use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::extract::{closure_observation, feature_names, record};
use super::graph::{GraphState, N_FEATURES};
use super::{ClosureRecord, TemporalEdge};
use crate::data::{ChoiceDataset, Observation};
use crate::error::{Error, Result};
use crate::models::{choice_probabilities, Params};

/// Preference vector shared by both synthetic generators.
pub const SYNTHETIC_THETA: [f64; N_FEATURES] = [2.0, 1.0, 3.0, 1.0, 3.0, 5.0];

/// Context effects of the synthetic LCL generator as rows: entry `[p][q]`
/// is the effect of mean feature `q` on the coefficient of feature `p`.
pub fn synthetic_context_matrix() -> Vec<Vec<f64>> {
    vec![
        vec![0.0, 0.0, 0.0, 0.0, 0.0, 100.0],
        vec![0.0, 0.0, 5.0, 0.0, 0.0, 0.0],
        vec![0.0, -5.0, 0.0, 0.0, 0.0, 0.0],
        vec![-5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        vec![0.0; N_FEATURES],
        vec![0.0, 0.0, 5.0, 0.0, 0.0, 0.0],
    ]
}

pub fn synthetic_mnl_params() -> Params {
    Params::mnl(SYNTHETIC_THETA.to_vec())
}

pub fn synthetic_lcl_params() -> Params {
    Params::lcl(SYNTHETIC_THETA.to_vec(), &synthetic_context_matrix()).expect("6x6 context matrix")
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n_nodes: usize,
    pub closure_prob: f64,
    pub target_closures: usize,
    /// Mean of the Poisson-distributed gap between consecutive edges.
    pub poisson_rate: f64,
    pub model: Params,
    pub seed: u64,
    /// Step budget; `None` allows `20 · target_closures / closure_prob + 1000`.
    pub max_steps: Option<usize>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_nodes: 1000,
            closure_prob: 0.1,
            target_closures: 50_000,
            poisson_rate: 5.0,
            model: synthetic_mnl_params(),
            seed: 0,
            max_steps: None,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 3 {
            return Err(Error::InvalidArgument(
                "a synthetic network needs at least 3 nodes".into(),
            ));
        }
        if !(self.closure_prob > 0.0 && self.closure_prob < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "closure probability must lie in (0, 1), got {}",
                self.closure_prob
            )));
        }
        if !(self.poisson_rate > 0.0 && self.poisson_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Poisson rate must be positive, got {}",
                self.poisson_rate
            )));
        }
        if self.model.dim() != N_FEATURES {
            return Err(Error::dims("generator model dimension", N_FEATURES, self.model.dim()));
        }
        self.model.check_finite()
    }

    fn step_budget(&self) -> usize {
        self.max_steps
            .unwrap_or_else(|| (20.0 * self.target_closures as f64 / self.closure_prob) as usize + 1000)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticNetwork {
    pub edges: Vec<TemporalEdge>,
    /// Ground-truth choices with at least two candidates, in time order.
    pub observations: Vec<Observation>,
    pub records: Vec<ClosureRecord>,
    /// All closures made, including those with a single candidate.
    pub closures: usize,
    pub steps: usize,
    /// True when the step budget ran out before `target_closures` closures.
    pub truncated: bool,
}

impl SyntheticNetwork {
    pub fn dataset(&self) -> Result<ChoiceDataset> {
        ChoiceDataset::new(self.observations.clone(), Some(feature_names()))
    }
}

/// Grows a network from `n_nodes` isolated nodes labelled `"0"` to
/// `"n-1"`. Each step either adds a uniformly random edge or, with
/// probability `closure_prob`, lets a random node `u` close a triangle
/// through a random out-neighbor `v`, choosing among `v`'s eligible
/// out-neighbors with the generator model. If `u` has no triangle to close a
/// random edge is added instead.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticNetwork> {
    config.validate()?;
    let n = config.n_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gaps = Poisson::new(config.poisson_rate).map_err(|e| Error::InvalidArgument(format!("Poisson rate: {e}")))?;
    let mut graph = GraphState::new();
    for i in 0..n {
        graph.intern(&i.to_string());
    }
    let budget = config.step_budget();
    let mut net = SyntheticNetwork {
        edges: Vec::new(),
        observations: Vec::new(),
        records: Vec::new(),
        closures: 0,
        steps: 0,
        truncated: false,
    };
    let mut t: i64 = 0;
    while net.closures < config.target_closures {
        if net.steps >= budget {
            net.truncated = true;
            log::warn!(
                "synthetic generator stopped after {budget} steps with {} of {} closures",
                net.closures,
                config.target_closures
            );
            break;
        }
        net.steps += 1;
        t += gaps.sample(&mut rng) as i64;
        let u = rng.random_range(0..n);
        let closure = if rng.random::<f64>() < config.closure_prob {
            let eligible: Vec<usize> = graph
                .out_neighbors(u)
                .iter()
                .copied()
                .filter(|&v| graph.has_closure_candidate(u, v))
                .collect();
            if eligible.is_empty() {
                None
            } else {
                Some(eligible[rng.random_range(0..eligible.len())])
            }
        } else {
            None
        };
        let w = match closure {
            Some(v) => {
                let (candidates, set) = closure_observation(&graph, u, v, t)?;
                let chosen = if candidates.len() == 1 {
                    0
                } else {
                    let probs = choice_probabilities(&config.model, &set)?;
                    WeightedIndex::new(&probs)
                        .map_err(|e| Error::NonFinite(format!("generator choice probabilities: {e}")))?
                        .sample(&mut rng)
                };
                let w = candidates[chosen];
                net.closures += 1;
                if candidates.len() >= 2 {
                    net.records.push(record(&graph, u, v, w, &candidates, t));
                    net.observations.push(Observation::new(set, chosen)?);
                }
                w
            }
            None => {
                let w = rng.random_range(0..n - 1);
                if w >= u {
                    w + 1
                } else {
                    w
                }
            }
        };
        graph.observe(u, w, t);
        net.edges.push(TemporalEdge::new(graph.label(u), graph.label(w), t));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_nodes: 30,
            target_closures: 200,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_edges() {
        let a = generate_synthetic(&small(3)).unwrap();
        let b = generate_synthetic(&small(3)).unwrap();
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.records, b.records);
        let c = generate_synthetic(&small(4)).unwrap();
        assert_ne!(a.edges, c.edges);
    }

    #[test]
    fn reaches_the_closure_target() {
        let net = generate_synthetic(&small(1)).unwrap();
        assert_eq!(net.closures, 200);
        assert!(!net.truncated);
        assert!(net.observations.len() <= net.closures);
        assert!(net.edges.windows(2).all(|p| p[0].timestamp <= p[1].timestamp));
        assert!(net.edges.iter().all(|e| e.src != e.dst));
        for (r, o) in net.records.iter().zip(&net.observations) {
            assert_eq!(r.candidates[o.chosen()], r.w);
            assert!(r.candidates.len() >= 2);
        }
    }

    #[test]
    fn vanishing_closure_probability() {
        let net = generate_synthetic(&SyntheticConfig {
            closure_prob: 1e-9,
            max_steps: Some(100),
            ..small(0)
        })
        .unwrap();
        assert_eq!(net.closures, 0);
        assert_eq!(net.edges.len(), 100);
        assert!(net.truncated);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SyntheticConfig {
                closure_prob: 0.0,
                ..small(0)
            },
            SyntheticConfig {
                closure_prob: 1.0,
                ..small(0)
            },
            SyntheticConfig {
                poisson_rate: 0.0,
                ..small(0)
            },
            SyntheticConfig { n_nodes: 2, ..small(0) },
            SyntheticConfig {
                model: Params::mnl(vec![1.0]),
                ..small(0)
            },
        ] {
            assert!(generate_synthetic(&cfg).is_err());
        }
    }

    #[test]
    fn lcl_parameters_layout() {
        let p = synthetic_lcl_params();
        let a = p.context_matrix().unwrap();
        assert_eq!(a[(0, 5)], 100.0);
        assert_eq!(a[(3, 0)], -5.0);
        assert_eq!(a[(2, 1)], -5.0);
    }
}
