use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{ControlFlowGraph, EdgeKind, ExecutionPath, NodeId};

/// One line of the path corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathRecord {
    pub sample_id: String,
    pub path_index: usize,
    pub node_sequence: Vec<NodeId>,
    pub rendered_text: String,
}

pub fn path_records(sample_id: &str, paths: &[ExecutionPath]) -> Vec<PathRecord> {
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| PathRecord {
            sample_id: sample_id.to_string(),
            path_index: i,
            node_sequence: p.node_sequence.clone(),
            rendered_text: p.rendered_text.clone(),
        })
        .collect()
}

/// Graphviz DOT rendering for inspection.
pub fn to_dot(cfg: &ControlFlowGraph, name: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "digraph \"{}\" {{", escape(name));
    let _ = writeln!(s, "  node [shape=box, fontname=monospace];");
    for n in &cfg.nodes {
        let shape = if n.id == cfg.entry || cfg.is_exit(n.id) { ", peripheries=2" } else { "" };
        let (a, b) = n.line_span;
        let lines = if a == b { format!("L{a}") } else { format!("L{a}-{b}") };
        let _ = writeln!(s, "  n{} [label=\"{}: {}\"{}];", n.id, lines, escape(&n.text), shape);
    }
    for e in &cfg.edges {
        let attr = match e.kind {
            EdgeKind::Seq => "",
            EdgeKind::True => " [label=\"T\"]",
            EdgeKind::False => " [label=\"F\"]",
            EdgeKind::LoopBack => " [style=dashed]",
        };
        let _ = writeln!(s, "  n{} -> n{}{};", e.from, e.to, attr);
    }
    s.push_str("}\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('\\', "\\\\").replace('"', "\\\"")
}

#[cfg(test)]
mod tests {
    use super::super::{build_cfg, enumerate_paths, PathConfig};
    use super::*;

    #[test]
    fn dot_lists_every_node_and_edge() {
        let cfg = build_cfg("int f(int n){ while (n) n--; return \"x\"[0]; }").unwrap();
        let dot = to_dot(&cfg, "f");
        assert!(dot.starts_with("digraph \"f\" {"));
        assert_eq!(dot.matches(" -> ").count(), cfg.edges.len());
        assert!(dot.contains("style=dashed"));
        assert!(dot.contains("\\\"x\\\""));
    }

    #[test]
    fn records_roundtrip_json() {
        let cfg = build_cfg("int f(int a){ if (a) a = 1; return a; }").unwrap();
        let ps = enumerate_paths(&cfg, &PathConfig::default());
        let recs = path_records("s1", &ps.paths);
        assert_eq!(recs.len(), 2);
        let line = serde_json::to_string(&recs[1]).unwrap();
        let back: PathRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, recs[1]);
        assert_eq!(back.path_index, 1);
    }
}
