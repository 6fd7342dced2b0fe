use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{GraphState, FEATURE_NAMES};
use super::TemporalEdge;
use crate::data::{ChoiceDataset, ChoiceSet, Observation};
use crate::error::{Error, Result};

/// One triadic closure turned into a choice: `u` picked `w` out of
/// `candidates` via the intermediary `v`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosureRecord {
    pub u: String,
    pub v: String,
    pub w: String,
    pub candidates: Vec<String>,
    pub t: i64,
}

#[derive(Debug, Clone)]
pub struct ClosureExtraction {
    /// One observation per entry of `records`, in stream order.
    pub observations: Vec<Observation>,
    pub records: Vec<ClosureRecord>,
    /// Closures whose candidate set had fewer than two nodes.
    pub skipped: usize,
    pub graph: GraphState,
}

impl ClosureExtraction {
    pub fn dataset(&self) -> Result<ChoiceDataset> {
        ChoiceDataset::new(self.observations.clone(), Some(feature_names()))
    }
}

pub(crate) fn feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Candidate set and chosen index for `u` closing through `v` onto `w`,
/// using the features of the current (pre-edge) state.
pub(crate) fn closure_observation(graph: &GraphState, u: usize, v: usize, now: i64) -> Result<(Vec<usize>, ChoiceSet)> {
    let candidates = graph.closure_candidates(u, v);
    let mut flat = Vec::with_capacity(candidates.len() * FEATURE_NAMES.len());
    for &c in &candidates {
        flat.extend_from_slice(&graph.node_features(u, c, now)?);
    }
    let set = ChoiceSet::from_flat(flat, FEATURE_NAMES.len())?;
    Ok((candidates, set))
}

pub(crate) fn record(graph: &GraphState, u: usize, v: usize, w: usize, candidates: &[usize], t: i64) -> ClosureRecord {
    ClosureRecord {
        u: graph.label(u).to_owned(),
        v: graph.label(v).to_owned(),
        w: graph.label(w).to_owned(),
        candidates: candidates.iter().map(|&c| graph.label(c).to_owned()).collect(),
        t,
    }
}

/// Replays a time-sorted edge stream and emits one choice per new edge that
/// closes a directed wedge. When several intermediaries close the same edge,
/// one is drawn uniformly with a generator seeded by `seed`.
pub fn extract_closures(edges: &[TemporalEdge], seed: u64) -> Result<ClosureExtraction> {
    if edges.windows(2).any(|p| p[1].timestamp < p[0].timestamp) {
        return Err(Error::InvalidArgument("edges must be sorted by timestamp".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = GraphState::new();
    let mut observations = Vec::new();
    let mut records = Vec::new();
    let mut skipped = 0;
    for edge in edges {
        if edge.src == edge.dst {
            continue;
        }
        let u = graph.intern(&edge.src);
        let w = graph.intern(&edge.dst);
        if !graph.has_edge(u, w) {
            let intermediaries: Vec<usize> = graph
                .out_neighbors(u)
                .iter()
                .copied()
                .filter(|&v| graph.has_edge(v, w))
                .collect();
            if !intermediaries.is_empty() {
                let v = intermediaries[rng.random_range(0..intermediaries.len())];
                let (candidates, set) = closure_observation(&graph, u, v, edge.timestamp)?;
                if candidates.len() < 2 {
                    skipped += 1;
                } else {
                    let chosen = candidates
                        .iter()
                        .position(|&c| c == w)
                        .expect("the closing node is a candidate of every intermediary");
                    records.push(record(&graph, u, v, w, &candidates, edge.timestamp));
                    observations.push(Observation::new(set, chosen)?);
                }
            }
        }
        graph.observe(u, w, edge.timestamp);
    }
    Ok(ClosureExtraction {
        observations,
        records,
        skipped,
        graph,
    })
}

pub fn write_closure_log_to(mut w: impl Write, records: &[ClosureRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("closure log", e))?;
    }
    Ok(())
}

/// Writes one JSON object per line.
pub fn write_closure_log(path: impl AsRef<Path>, records: &[ClosureRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_closure_log_to(&mut w, records)?;
    w.flush().map_err(|e| Error::io(path, e))
}
