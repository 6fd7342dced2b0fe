//! Temporal networks as a source of choice data.
//!
//! Each time a new directed edge `u -> w` closes a wedge `u -> v -> w`, the
//! chooser `u` is treated as having picked `w` from the out-neighbors of `v`
//! it was not yet connected to. Candidates are described by six node
//! features computed just before the edge appears.

mod extract;
mod generate;
mod graph;

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use extract::{extract_closures, write_closure_log, ClosureExtraction, ClosureRecord};
pub use generate::{
    generate_synthetic, synthetic_context_matrix, synthetic_lcl_params, synthetic_mnl_params, SyntheticConfig,
    SyntheticNetwork, SYNTHETIC_THETA,
};
pub use graph::{recency, GraphState, FEATURE_NAMES, N_FEATURES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalEdge {
    pub src: String,
    pub dst: String,
    pub timestamp: i64,
}

impl TemporalEdge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, timestamp: i64) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            timestamp,
        }
    }
}

/// Time-sorted edges plus the number of self-loops that were dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeList {
    pub edges: Vec<TemporalEdge>,
    pub self_loops: usize,
}

pub fn ingest_edges(path: impl AsRef<Path>) -> Result<EdgeList> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_edges(BufReader::new(file))
}

/// Parses `src dst timestamp` lines separated by tabs or spaces. Blank lines
/// and lines starting with `#` are ignored. The result is stably sorted by
/// timestamp, so ties keep their file order.
pub fn read_edges(reader: impl BufRead) -> Result<EdgeList> {
    let mut edges = Vec::new();
    let mut self_loops = 0;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let [src, dst, ts] = fields[..] else {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 fields (src, dst, timestamp), found {}", fields.len()),
            });
        };
        let timestamp: i64 = ts.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("timestamp {ts:?} is not an integer"),
        })?;
        if src == dst {
            self_loops += 1;
            continue;
        }
        edges.push(TemporalEdge::new(src, dst, timestamp));
    }
    if self_loops > 0 {
        log::warn!("dropped {self_loops} self-loop edge(s)");
    }
    edges.sort_by_key(|e| e.timestamp);
    Ok(EdgeList { edges, self_loops })
}

pub fn write_edges_to(mut w: impl Write, edges: &[TemporalEdge]) -> std::io::Result<()> {
    for e in edges {
        writeln!(w, "{}\t{}\t{}", e.src, e.dst, e.timestamp)?;
    }
    Ok(())
}

pub fn write_edges(path: impl AsRef<Path>, edges: &[TemporalEdge]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_edges_to(&mut w, edges)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorts_and_drops_self_loops() {
        let text = "a\tb\t5\nb c 3\n\n# comment\na a 5\nc\ta\t3\n";
        let list = read_edges(text.as_bytes()).unwrap();
        assert_eq!(list.self_loops, 1);
        assert_eq!(
            list.edges,
            vec![
                TemporalEdge::new("b", "c", 3),
                TemporalEdge::new("c", "a", 3),
                TemporalEdge::new("a", "b", 5)
            ]
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match read_edges("a b 1\na b\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match read_edges("a b x\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn write_then_read() {
        let edges = vec![TemporalEdge::new("0", "1", 0), TemporalEdge::new("1", "2", 7)];
        let mut buf = Vec::new();
        write_edges_to(&mut buf, &edges).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "0\t1\t0\n1\t2\t7\n");
        assert_eq!(read_edges(buf.as_slice()).unwrap().edges, edges);
    }
}
