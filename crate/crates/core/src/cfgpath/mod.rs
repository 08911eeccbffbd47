//! Statement-level control-flow graphs and execution-path extraction.
//!
//! One node per statement (a physical statement, so `a; b;` on one line is two
//! nodes). Conditions of `if`/`while`/`for`/`do` emit true/false edges, `switch`
//! is lowered to a chain of case tests, and `goto` is an unconditional edge.
//! After construction every DFS back edge from the entry is re-labelled
//! `LoopBack`; unrolling bounds count those edges.

mod build;
mod export;
mod parse;
mod paths;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use build::build_cfg;
pub use export::{path_records, to_dot, PathRecord};
pub use paths::{check_path, enumerate_paths, extract_paths, select_paths, PathSet, PathViolation, Selection};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Seq,
    True,
    False,
    LoopBack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    /// First and last source line of the statement.
    pub line_span: (usize, usize),
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlFlowGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub entry: NodeId,
    pub exits: Vec<NodeId>,
    /// Non-fatal notes, e.g. dropped unreachable statements.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ControlFlowGraph {
    pub fn successors(&self, n: NodeId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == n)
    }

    pub fn edge(&self, from: NodeId, to: NodeId) -> Option<&Edge> {
        self.edges.iter().find(|e| e.from == from && e.to == to)
    }

    pub fn is_exit(&self, n: NodeId) -> bool {
        self.exits.contains(&n)
    }

    /// Sorted (from, to, kind) triples; equal for isomorphic graphs built from the same token structure.
    pub fn edge_multiset(&self) -> Vec<(NodeId, NodeId, EdgeKind)> {
        let mut v: Vec<_> = self.edges.iter().map(|e| (e.from, e.to, e.kind)).collect();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    #[default]
    CoverageGreedy,
    LongestFirst,
    Lexicographic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathConfig {
    /// Paths kept per sample.
    pub max_paths: usize,
    /// Times each loop-back edge may be taken on one path.
    pub unroll_bound: usize,
    pub max_path_nodes: usize,
    pub selection_policy: SelectionPolicy,
    /// Upper bound on enumerated paths before truncation.
    pub enumeration_limit: usize,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            max_paths: 3,
            unroll_bound: 1,
            max_path_nodes: 128,
            selection_policy: SelectionPolicy::CoverageGreedy,
            enumeration_limit: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExecutionPath {
    pub node_sequence: Vec<NodeId>,
    pub rendered_text: String,
}

impl ExecutionPath {
    pub fn from_nodes(cfg: &ControlFlowGraph, node_sequence: Vec<NodeId>) -> Self {
        let rendered_text = node_sequence.iter().map(|&n| cfg.nodes[n].text.as_str()).collect::<Vec<_>>().join(" ");
        ExecutionPath { node_sequence, rendered_text }
    }
}
