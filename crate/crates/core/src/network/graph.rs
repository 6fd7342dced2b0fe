use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

/// Number of node features used for closure choices.
pub const N_FEATURES: usize = 6;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "log_in_degree",
    "log_shared_neighbors",
    "log1p_reciprocal_weight",
    "send_recency",
    "receive_recency",
    "reciprocal_recency",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PairStats {
    weight: u64,
    last: i64,
}

#[derive(Debug, Clone, Default)]
struct NodeState {
    out: BTreeSet<usize>,
    inn: BTreeSet<usize>,
    /// In- or out-neighbors.
    any: BTreeSet<usize>,
    last_send: Option<i64>,
    last_recv: Option<i64>,
}

/// Evolving directed graph with edge weights and recency timestamps.
/// Node labels are interned in order of first appearance.
#[derive(Debug, Clone, Default)]
pub struct GraphState {
    ids: HashMap<String, usize>,
    labels: Vec<String>,
    nodes: Vec<NodeState>,
    pairs: HashMap<(usize, usize), PairStats>,
}

/// `1 / ln(2 + elapsed)`, or 0 when the event never happened.
pub fn recency(now: i64, event: Option<i64>) -> f64 {
    match event {
        Some(t) => 1.0 / (2.0 + (now - t) as f64).ln(),
        None => 0.0,
    }
}

fn log_count(c: usize) -> f64 {
    // Zero counts never occur for closure candidates; they map to 0 like an
    // absent event.
    if c == 0 {
        0.0
    } else {
        (c as f64).ln()
    }
}

impl GraphState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `label`, adding an isolated node if it is new.
    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&i) = self.ids.get(label) {
            return i;
        }
        let i = self.labels.len();
        self.ids.insert(label.to_owned(), i);
        self.labels.push(label.to_owned());
        self.nodes.push(NodeState::default());
        i
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn out_neighbors(&self, u: usize) -> &BTreeSet<usize> {
        &self.nodes[u].out
    }

    pub fn has_edge(&self, u: usize, w: usize) -> bool {
        self.nodes[u].out.contains(&w)
    }

    /// Number of times `u -> w` has been observed.
    pub fn weight(&self, u: usize, w: usize) -> u64 {
        self.pairs.get(&(u, w)).map_or(0, |p| p.weight)
    }

    pub fn in_degree(&self, w: usize) -> usize {
        self.nodes[w].inn.len()
    }

    pub fn shared_neighbors(&self, u: usize, w: usize) -> usize {
        let (mut a, mut b) = (self.nodes[u].any.iter().peekable(), self.nodes[w].any.iter().peekable());
        let mut count = 0;
        while let (Some(x), Some(y)) = (a.peek(), b.peek()) {
            match x.cmp(y) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    count += 1;
                    a.next();
                    b.next();
                }
            }
        }
        count
    }

    /// Records the directed event `u -> w` at time `t`.
    pub fn observe(&mut self, u: usize, w: usize, t: i64) {
        debug_assert_ne!(u, w);
        let pair = self.pairs.entry((u, w)).or_insert(PairStats { weight: 0, last: t });
        pair.weight += 1;
        pair.last = t;
        let src = &mut self.nodes[u];
        src.out.insert(w);
        src.any.insert(w);
        src.last_send = Some(t);
        let dst = &mut self.nodes[w];
        dst.inn.insert(u);
        dst.any.insert(u);
        dst.last_recv = Some(t);
    }

    /// Features of candidate `w` for chooser `u` at time `now`.
    pub fn node_features(&self, u: usize, w: usize, now: i64) -> Result<[f64; N_FEATURES]> {
        for node in [u, w] {
            if node >= self.nodes.len() {
                return Err(Error::UnknownNode(node.to_string()));
            }
        }
        let reciprocal = self.pairs.get(&(w, u));
        let node = &self.nodes[w];
        Ok([
            log_count(self.in_degree(w)),
            log_count(self.shared_neighbors(u, w)),
            (reciprocal.map_or(0, |p| p.weight) as f64).ln_1p(),
            recency(now, node.last_send),
            recency(now, node.last_recv),
            recency(now, reciprocal.map(|p| p.last)),
        ])
    }

    /// Label-based form of [`GraphState::node_features`].
    pub fn node_features_by_label(&self, u: &str, w: &str, now: i64) -> Result<[f64; N_FEATURES]> {
        let u_id = self.id(u).ok_or_else(|| Error::UnknownNode(u.to_owned()))?;
        let w_id = self.id(w).ok_or_else(|| Error::UnknownNode(w.to_owned()))?;
        self.node_features(u_id, w_id, now)
    }

    /// Out-neighbors of `v` that `u` could newly connect to.
    pub fn closure_candidates(&self, u: usize, v: usize) -> Vec<usize> {
        let own = &self.nodes[u].out;
        self.nodes[v]
            .out
            .iter()
            .copied()
            .filter(|w| *w != u && !own.contains(w))
            .collect()
    }

    pub(crate) fn has_closure_candidate(&self, u: usize, v: usize) -> bool {
        let own = &self.nodes[u].out;
        self.nodes[v].out.iter().any(|w| *w != u && !own.contains(w))
    }
}
