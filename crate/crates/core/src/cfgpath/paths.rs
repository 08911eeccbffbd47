use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{build_cfg, ControlFlowGraph, EdgeKind, ExecutionPath, NodeId, ParseError, PathConfig, SelectionPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<ExecutionPath>,
    /// Set when the node cap or the enumeration limit cut the search short.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub paths: Vec<ExecutionPath>,
    /// Set when fewer than `max_paths` distinct paths existed and the last one was repeated.
    pub padded: bool,
}

/// All entry-to-exit paths in lexicographic node-id order.
pub fn enumerate_paths(cfg: &ControlFlowGraph, config: &PathConfig) -> PathSet {
    let mut succ: Vec<Vec<(NodeId, bool)>> = vec![Vec::new(); cfg.nodes.len()];
    for e in &cfg.edges {
        succ[e.from].push((e.to, e.kind == EdgeKind::LoopBack));
    }
    for s in &mut succ {
        s.sort();
    }

    let mut out = Vec::new();
    let mut truncated = false;
    let mut back_uses: HashMap<(NodeId, NodeId), usize> = HashMap::new();
    let mut path = vec![cfg.entry];
    // explicit stack of successor cursors, one per node on `path`
    let mut cursor = vec![0usize];
    while let Some(&v) = path.last() {
        let depth = path.len() - 1;
        if cursor[depth] == 0 && cfg.is_exit(v) {
            out.push(path.clone());
            if out.len() >= config.enumeration_limit {
                truncated = true;
                break;
            }
        }
        let next = succ[v].get(cursor[depth]).copied();
        cursor[depth] += 1;
        match next {
            Some((w, back)) => {
                if back && back_uses.get(&(v, w)).copied().unwrap_or(0) >= config.unroll_bound {
                    continue;
                }
                if path.len() >= config.max_path_nodes {
                    truncated = true;
                    continue;
                }
                if back {
                    *back_uses.entry((v, w)).or_default() += 1;
                }
                path.push(w);
                cursor.push(0);
            }
            None => {
                path.pop();
                cursor.pop();
                if let Some(&u) = path.last() {
                    let k = (u, v);
                    if let Some(c) = back_uses.get_mut(&k) {
                        if cfg.edge(u, v).is_some_and(|e| e.kind == EdgeKind::LoopBack) {
                            *c -= 1;
                        }
                    }
                }
            }
        }
    }

    if out.is_empty() {
        // the cap removed every path; keep the shortest one so the sample still has input
        truncated = true;
        out.push(shortest_path(cfg, config.max_path_nodes));
    }
    PathSet { paths: out.into_iter().map(|p| ExecutionPath::from_nodes(cfg, p)).collect(), truncated }
}

/// BFS shortest entry-to-exit path, cut to `cap` nodes.
fn shortest_path(cfg: &ControlFlowGraph, cap: usize) -> Vec<NodeId> {
    let mut prev = vec![usize::MAX; cfg.nodes.len()];
    let mut seen = vec![false; cfg.nodes.len()];
    let mut q = VecDeque::from([cfg.entry]);
    seen[cfg.entry] = true;
    let mut end = cfg.entry;
    while let Some(v) = q.pop_front() {
        if cfg.is_exit(v) {
            end = v;
            break;
        }
        let mut next: Vec<NodeId> = cfg.successors(v).map(|e| e.to).collect();
        next.sort();
        for w in next {
            if !seen[w] {
                seen[w] = true;
                prev[w] = v;
                q.push_back(w);
            }
        }
    }
    let mut p = vec![end];
    while prev[*p.last().expect("nonempty")] != usize::MAX {
        p.push(prev[*p.last().expect("nonempty")]);
    }
    p.reverse();
    p.truncate(cap.max(1));
    p
}

/// Pick `max_paths` paths by the configured policy, padding by repetition.
///
/// Kept paths come back in their input order.
pub fn select_paths(paths: &[ExecutionPath], config: &PathConfig) -> Selection {
    assert!(!paths.is_empty(), "select_paths needs at least one path");
    let n = config.max_paths.max(1);
    let mut chosen: Vec<usize> = if paths.len() <= n {
        (0..paths.len()).collect()
    } else {
        match config.selection_policy {
            SelectionPolicy::Lexicographic => {
                let mut idx: Vec<usize> = (0..paths.len()).collect();
                idx.sort_by(|&a, &b| paths[a].node_sequence.cmp(&paths[b].node_sequence));
                idx.truncate(n);
                idx
            }
            SelectionPolicy::LongestFirst => {
                let mut idx: Vec<usize> = (0..paths.len()).collect();
                idx.sort_by(|&a, &b| {
                    paths[b]
                        .node_sequence
                        .len()
                        .cmp(&paths[a].node_sequence.len())
                        .then_with(|| paths[a].node_sequence.cmp(&paths[b].node_sequence))
                });
                idx.truncate(n);
                idx
            }
            SelectionPolicy::CoverageGreedy => coverage_greedy(paths, n),
        }
    };
    chosen.sort();
    let mut out: Vec<ExecutionPath> = chosen.into_iter().map(|i| paths[i].clone()).collect();
    let padded = out.len() < n;
    while out.len() < n {
        out.push(out.last().expect("nonempty").clone());
    }
    Selection { paths: out, padded }
}

fn coverage_greedy(paths: &[ExecutionPath], n: usize) -> Vec<usize> {
    let mut covered: BTreeSet<NodeId> = BTreeSet::new();
    let mut taken = vec![false; paths.len()];
    let mut chosen = Vec::with_capacity(n);
    for _ in 0..n {
        let best = (0..paths.len())
            .filter(|&i| !taken[i])
            .map(|i| {
                let gain = paths[i].node_sequence.iter().collect::<BTreeSet<_>>().into_iter().filter(|v| !covered.contains(v)).count();
                (i, gain)
            })
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| paths[b.0].node_sequence.cmp(&paths[a.0].node_sequence)));
        let Some((i, _)) = best else { break };
        taken[i] = true;
        covered.extend(paths[i].node_sequence.iter().copied());
        chosen.push(i);
    }
    chosen
}

/// Build, enumerate and select in one step.
pub fn extract_paths(source: &str, config: &PathConfig) -> Result<(ControlFlowGraph, PathSet, Selection), ParseError> {
    let cfg = build_cfg(source)?;
    let all = enumerate_paths(&cfg, config);
    let sel = select_paths(&all.paths, config);
    Ok((cfg, all, sel))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathViolation {
    #[error("path is empty")]
    Empty,
    #[error("path starts at {0}, not the entry")]
    BadStart(NodeId),
    #[error("path ends at {0}, which is not an exit")]
    BadEnd(NodeId),
    #[error("no edge {0} -> {1}")]
    MissingEdge(NodeId, NodeId),
    #[error("loop-back edge {0} -> {1} taken {2} times")]
    Unroll(NodeId, NodeId, usize),
    #[error("rendered text does not match node texts")]
    Text,
}

/// Validate a path against its graph, independently of how it was produced.
pub fn check_path(cfg: &ControlFlowGraph, path: &ExecutionPath, unroll_bound: usize) -> Result<(), PathViolation> {
    let seq = &path.node_sequence;
    let (&first, &last) = seq.first().zip(seq.last()).ok_or(PathViolation::Empty)?;
    if first != cfg.entry {
        return Err(PathViolation::BadStart(first));
    }
    if !cfg.is_exit(last) {
        return Err(PathViolation::BadEnd(last));
    }
    let mut uses: HashMap<(NodeId, NodeId), usize> = HashMap::new();
    for w in seq.windows(2) {
        let e = cfg.edge(w[0], w[1]).ok_or(PathViolation::MissingEdge(w[0], w[1]))?;
        if e.kind == EdgeKind::LoopBack {
            let c = uses.entry((w[0], w[1])).or_default();
            *c += 1;
            if *c > unroll_bound {
                return Err(PathViolation::Unroll(w[0], w[1], *c));
            }
        }
    }
    if ExecutionPath::from_nodes(cfg, seq.clone()).rendered_text != path.rendered_text {
        return Err(PathViolation::Text);
    }
    Ok(())
}
