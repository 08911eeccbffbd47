use std::collections::{BTreeMap, HashMap};

use crate::lexer::{self, Token};

use super::parse::{parse_function, Stmt, SwitchItem, TokRange};
use super::{ControlFlowGraph, Edge, EdgeKind, Node, NodeId, ParseError};

/// An edge waiting for its target.
type Pending = (NodeId, EdgeKind);

struct Jumps {
    breaks: Vec<Pending>,
    /// `None` for a switch: `continue` passes through to the enclosing loop.
    continues: Option<Vec<Pending>>,
}

struct Builder<'a> {
    t: &'a [Token],
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    labels: HashMap<String, NodeId>,
    open_labels: Vec<String>,
    gotos: Vec<(NodeId, String, usize)>,
    jumps: Vec<Jumps>,
}

/// Parse one C function definition into its statement-level CFG.
pub fn build_cfg(source: &str) -> Result<ControlFlowGraph, ParseError> {
    let tokens = lexer::code_tokens(source).map_err(|e| ParseError { line: e.line(), message: e.to_string() })?;
    let body = parse_function(&tokens)?;

    let mut b = Builder {
        t: &tokens,
        nodes: Vec::new(),
        edges: Vec::new(),
        labels: HashMap::new(),
        open_labels: Vec::new(),
        gotos: Vec::new(),
        jumps: Vec::new(),
    };
    let mut pending = Vec::new();
    for s in &body.stmts {
        pending = b.stmt(s, pending)?;
    }

    if b.nodes.is_empty() {
        let line = tokens.last().map_or(1, |t| t.line);
        return Ok(ControlFlowGraph {
            nodes: vec![Node { id: 0, line_span: (line, line), text: "{ }".into() }],
            edges: Vec::new(),
            entry: 0,
            exits: vec![0],
            warnings: Vec::new(),
        });
    }

    // a synthetic end node is needed when control can fall off the end from a
    // branch, or a label sits at the very end of the body
    let needs_end = !b.open_labels.is_empty()
        || pending.iter().any(|&(n, k)| k != EdgeKind::Seq || b.edges.iter().any(|e| e.from == n));
    if needs_end {
        let line = tokens.last().map_or(1, |t| t.line);
        let end = b.push_node((line, line), "}".into(), std::mem::take(&mut pending));
        debug_assert!(b.labels.values().all(|&n| n <= end));
    }
    for (from, label, line) in std::mem::take(&mut b.gotos) {
        let to = *b.labels.get(&label).ok_or(ParseError { line, message: format!("goto to undefined label {label:?}") })?;
        b.add_edge(from, to, EdgeKind::Seq);
    }
    finish(b.nodes, b.edges)
}

impl<'a> Builder<'a> {
    fn render(&self, (s, e): TokRange) -> (String, (usize, usize)) {
        let text = self.t[s..e].iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
        (text, (self.t[s].line, self.t[e - 1].line))
    }

    fn add_edge(&mut self, from: NodeId, to: NodeId, kind: EdgeKind) {
        // parallel edges collapse to the first one added
        if !self.edges.iter().any(|e| e.from == from && e.to == to) {
            self.edges.push(Edge { from, to, kind });
        }
    }

    fn push_node(&mut self, line_span: (usize, usize), text: String, incoming: Vec<Pending>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { id, line_span, text });
        for (from, kind) in incoming {
            self.add_edge(from, id, kind);
        }
        for l in self.open_labels.drain(..) {
            self.labels.insert(l, id);
        }
        id
    }

    fn node(&mut self, range: TokRange, incoming: Vec<Pending>) -> NodeId {
        let (text, span) = self.render(range);
        self.push_node(span, text, incoming)
    }

    fn stmt(&mut self, s: &Stmt, incoming: Vec<Pending>) -> Result<Vec<Pending>, ParseError> {
        Ok(match s {
            Stmt::Empty => incoming,
            Stmt::Simple(r) => vec![(self.node(*r, incoming), EdgeKind::Seq)],
            Stmt::Return(r) => {
                self.node(*r, incoming);
                Vec::new()
            }
            Stmt::Break(r) => {
                let n = self.node(*r, incoming);
                let line = self.t[r.0].line;
                let j = self.jumps.last_mut().ok_or(ParseError { line, message: "'break' outside loop or switch".into() })?;
                j.breaks.push((n, EdgeKind::Seq));
                Vec::new()
            }
            Stmt::Continue(r) => {
                let n = self.node(*r, incoming);
                let line = self.t[r.0].line;
                let j = self
                    .jumps
                    .iter_mut()
                    .rev()
                    .find_map(|j| j.continues.as_mut())
                    .ok_or(ParseError { line, message: "'continue' outside loop".into() })?;
                j.push((n, EdgeKind::Seq));
                Vec::new()
            }
            Stmt::Goto { range, label } => {
                let n = self.node(*range, incoming);
                self.gotos.push((n, label.clone(), self.t[range.0].line));
                Vec::new()
            }
            Stmt::Block(stmts) => {
                let mut p = incoming;
                for s in stmts {
                    p = self.stmt(s, p)?;
                }
                p
            }
            Stmt::Labeled { label, stmt } => {
                self.open_labels.push(label.clone());
                self.stmt(stmt, incoming)?
            }
            Stmt::If { cond, then, els } => {
                let c = self.node(*cond, incoming);
                let mut out = self.stmt(then, vec![(c, EdgeKind::True)])?;
                match els {
                    Some(e) => out.extend(self.stmt(e, vec![(c, EdgeKind::False)])?),
                    None => out.push((c, EdgeKind::False)),
                }
                out
            }
            Stmt::While { cond, body } => {
                let c = self.node(*cond, incoming);
                self.jumps.push(Jumps { breaks: Vec::new(), continues: Some(Vec::new()) });
                let body_out = self.stmt(body, vec![(c, EdgeKind::True)])?;
                let j = self.jumps.pop().expect("pushed above");
                for (from, kind) in body_out.into_iter().chain(j.continues.unwrap_or_default()) {
                    self.add_edge(from, c, kind);
                }
                let mut out = vec![(c, EdgeKind::False)];
                out.extend(j.breaks);
                out
            }
            Stmt::DoWhile { body, cond } => {
                let body_start = self.nodes.len();
                self.jumps.push(Jumps { breaks: Vec::new(), continues: Some(Vec::new()) });
                let body_out = self.stmt(body, incoming.clone())?;
                let j = self.jumps.pop().expect("pushed above");
                let mut into_cond = body_out;
                into_cond.extend(j.continues.unwrap_or_default());
                let body_empty = self.nodes.len() == body_start;
                let c = self.node(*cond, if body_empty { incoming } else { into_cond });
                let target = if body_empty { c } else { body_start };
                self.add_edge(c, target, EdgeKind::True);
                let mut out = vec![(c, EdgeKind::False)];
                out.extend(j.breaks);
                out
            }
            Stmt::For { init, cond, step, body } => {
                let into_cond = match init {
                    Some(r) => vec![(self.node(*r, incoming), EdgeKind::Seq)],
                    None => incoming,
                };
                let c = self.node(*cond, into_cond);
                self.jumps.push(Jumps { breaks: Vec::new(), continues: Some(Vec::new()) });
                let body_out = self.stmt(body, vec![(c, EdgeKind::True)])?;
                let j = self.jumps.pop().expect("pushed above");
                let mut tail: Vec<Pending> = body_out;
                tail.extend(j.continues.unwrap_or_default());
                match step {
                    Some(r) => {
                        let s = self.node(*r, tail);
                        self.add_edge(s, c, EdgeKind::Seq);
                    }
                    None => {
                        for (from, kind) in tail {
                            self.add_edge(from, c, kind);
                        }
                    }
                }
                let mut out = vec![(c, EdgeKind::False)];
                out.extend(j.breaks);
                out
            }
            Stmt::Switch { head, items } => self.switch(*head, items, incoming)?,
        })
    }

    fn switch(
        &mut self,
        head: TokRange,
        items: &[SwitchItem],
        incoming: Vec<Pending>,
    ) -> Result<Vec<Pending>, ParseError> {
        let h = self.node(head, incoming);
        // one test node per case label, chained on the false edge
        let mut tests: BTreeMap<usize, NodeId> = BTreeMap::new();
        let mut prev: Pending = (h, EdgeKind::Seq);
        for (i, item) in items.iter().enumerate() {
            if let SwitchItem::Case(r) = item {
                let t = self.node(*r, vec![prev]);
                tests.insert(i, t);
                prev = (t, EdgeKind::False);
            }
        }
        let no_match = prev;
        let has_default = items.iter().any(|i| matches!(i, SwitchItem::Default));

        self.jumps.push(Jumps { breaks: Vec::new(), continues: None });
        let mut fall: Vec<Pending> = Vec::new();
        for (i, item) in items.iter().enumerate() {
            match item {
                SwitchItem::Case(_) => fall.push((tests[&i], EdgeKind::True)),
                SwitchItem::Default => fall.push(no_match),
                SwitchItem::Stmt(s) => fall = self.stmt(s, fall)?,
            }
        }
        let j = self.jumps.pop().expect("pushed above");
        let mut out = fall;
        out.extend(j.breaks);
        if !has_default {
            out.push(no_match);
        }
        Ok(out)
    }
}

/// Drop unreachable nodes, renumber, mark back edges and collect exits.
fn finish(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<ControlFlowGraph, ParseError> {
    let n = nodes.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, e) in edges.iter().enumerate() {
        adj[e.from].push(i);
    }
    for a in &mut adj {
        a.sort_by_key(|&i| edges[i].to);
    }

    let mut reachable = vec![false; n];
    let mut stack = vec![0];
    reachable[0] = true;
    while let Some(v) = stack.pop() {
        for &ei in &adj[v] {
            let w = edges[ei].to;
            if !reachable[w] {
                reachable[w] = true;
                stack.push(w);
            }
        }
    }
    let mut warnings = Vec::new();
    let mut remap = vec![usize::MAX; n];
    let mut kept = Vec::new();
    for (old, node) in nodes.into_iter().enumerate() {
        if reachable[old] {
            remap[old] = kept.len();
            kept.push(Node { id: kept.len(), ..node });
        } else {
            warnings.push(format!("dropped unreachable statement at line {}: {}", node.line_span.0, node.text));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    // iterative DFS from the entry; an edge into a node on the stack is a back edge
    let mut kinds: Vec<EdgeKind> = edges.iter().map(|e| e.kind).collect();
    let mut state = vec![0u8; n]; // 0 new, 1 on stack, 2 done
    let mut dfs: Vec<(usize, usize)> = vec![(0, 0)];
    state[0] = 1;
    while let Some(&mut (v, ref mut next)) = dfs.last_mut() {
        if *next < adj[v].len() {
            let ei = adj[v][*next];
            *next += 1;
            let w = edges[ei].to;
            match state[w] {
                0 => {
                    state[w] = 1;
                    dfs.push((w, 0));
                }
                1 => kinds[ei] = EdgeKind::LoopBack,
                _ => {}
            }
        } else {
            state[v] = 2;
            dfs.pop();
        }
    }

    let mut out_edges: Vec<Edge> = edges
        .iter()
        .zip(kinds)
        .filter(|(e, _)| reachable[e.from])
        .map(|(e, kind)| Edge { from: remap[e.from], to: remap[e.to], kind })
        .collect();
    out_edges.sort_by_key(|e| (e.from, e.to));
    let exits: Vec<NodeId> = (0..kept.len()).filter(|&v| !out_edges.iter().any(|e| e.from == v)).collect();
    if exits.is_empty() {
        let line = kept.last().map_or(1, |n| n.line_span.1);
        return Err(ParseError { line, message: "function has no exit (unconditional infinite loop)".into() });
    }
    Ok(ControlFlowGraph { nodes: kept, edges: out_edges, entry: 0, exits, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds_from(cfg: &ControlFlowGraph, n: NodeId) -> Vec<EdgeKind> {
        cfg.successors(n).map(|e| e.kind).collect()
    }

    #[test]
    fn straight_line() {
        let cfg = build_cfg("int f(){int x=1; x++; return x;}").unwrap();
        assert_eq!(cfg.nodes.len(), 3);
        assert_eq!(cfg.edges.len(), 2);
        assert!(cfg.edges.iter().all(|e| e.kind == EdgeKind::Seq));
        assert_eq!(cfg.exits, [2]);
        assert_eq!(cfg.nodes[0].text, "int x = 1 ;");
    }

    #[test]
    fn if_else_diamond() {
        let cfg = build_cfg("int f(int a){\n if (a)\n  a = 1;\n else\n  a = 2;\n return a;\n}").unwrap();
        assert_eq!(cfg.nodes.len(), 4);
        assert_eq!(kinds_from(&cfg, 0), [EdgeKind::True, EdgeKind::False]);
        assert_eq!(cfg.nodes[0].line_span, (2, 2));
        assert_eq!(cfg.edge_multiset().len(), 4);
    }

    #[test]
    fn trailing_if_gets_end_node() {
        let cfg = build_cfg("void f(int a){ if (a) g(); }").unwrap();
        assert_eq!(cfg.nodes.len(), 3);
        assert_eq!(cfg.nodes[2].text, "}");
        assert_eq!(cfg.exits, [2]);
    }

    #[test]
    fn while_loop_back_edge() {
        let cfg = build_cfg("int f(int n){ while (n > 0) n--; return n; }").unwrap();
        assert_eq!(cfg.edge(1, 0).unwrap().kind, EdgeKind::LoopBack);
        assert_eq!(cfg.edge(0, 1).unwrap().kind, EdgeKind::True);
        assert_eq!(cfg.edge(0, 2).unwrap().kind, EdgeKind::False);
    }

    #[test]
    fn for_loop_with_step_and_continue() {
        let cfg = build_cfg("int f(int n){ int s = 0; for (int i = 0; i < n; i++) { if (i == 3) continue; s += i; } return s; }").unwrap();
        let texts: Vec<_> = cfg.nodes.iter().map(|n| n.text.as_str()).collect();
        assert_eq!(texts, ["int s = 0 ;", "int i = 0 ;", "i < n", "if ( i == 3 )", "continue ;", "s += i ;", "i ++", "return s ;"]);
        assert_eq!(cfg.edge(6, 2).unwrap().kind, EdgeKind::LoopBack);
        assert!(cfg.edge(4, 6).is_some());
    }

    #[test]
    fn do_while() {
        let cfg = build_cfg("int f(int n){ do { n--; } while (n); return n; }").unwrap();
        assert_eq!(cfg.nodes.len(), 3);
        assert_eq!(cfg.edge(1, 0).unwrap().kind, EdgeKind::LoopBack);
        assert_eq!(cfg.edge(1, 2).unwrap().kind, EdgeKind::False);
    }

    #[test]
    fn switch_lowered_to_tests() {
        let src = "int f(int c){ switch (c) { case 1: c = 10; break; case 2: case 3: c = 20; default: c = 0; } return c; }";
        let cfg = build_cfg(src).unwrap();
        let texts: Vec<_> = cfg.nodes.iter().map(|n| n.text.as_str()).collect();
        assert_eq!(
            texts,
            ["switch ( c )", "case 1 :", "case 2 :", "case 3 :", "c = 10 ;", "break ;", "c = 20 ;", "c = 0 ;", "return c ;"]
        );
        assert_eq!(cfg.edge(2, 6).unwrap().kind, EdgeKind::True);
        assert_eq!(cfg.edge(3, 6).unwrap().kind, EdgeKind::True);
        assert_eq!(cfg.edge(3, 7).unwrap().kind, EdgeKind::False);
        assert!(cfg.edge(6, 7).is_some(), "fallthrough into default");
        assert!(cfg.edge(5, 8).is_some());
    }

    #[test]
    fn goto_and_unreachable() {
        let src = "int f(int a){ if (a) goto out; a = 1; return a; a = 2; out: return 0; }";
        let cfg = build_cfg(src).unwrap();
        assert_eq!(cfg.warnings.len(), 1);
        assert!(cfg.nodes.iter().all(|n| n.text != "a = 2 ;"));
        let out = cfg.nodes.iter().position(|n| n.text == "return 0 ;").unwrap();
        assert!(cfg.edge(1, out).is_some());
    }

    #[test]
    fn backward_goto_is_loop_back() {
        let cfg = build_cfg("int f(int a){ again: a--; if (a) goto again; return a; }").unwrap();
        assert_eq!(cfg.edge(2, 0).unwrap().kind, EdgeKind::LoopBack);
    }

    #[test]
    fn empty_body_single_node() {
        let cfg = build_cfg("void f(void) { }").unwrap();
        assert_eq!(cfg.nodes.len(), 1);
        assert_eq!(cfg.entry, 0);
        assert_eq!(cfg.exits, [0]);
    }

    #[test]
    fn parse_errors_carry_line() {
        let e = build_cfg("int f(){\n int x = 1;\n x = (2;\n}").unwrap_err();
        assert_eq!(e.line, 3);
        assert_eq!(build_cfg("int f(){\n else x;\n}").unwrap_err().line, 2);
        assert_eq!(build_cfg("int f(){\n int a;\n break;\n}").unwrap_err().line, 3);
        assert!(build_cfg("int x;").is_err());
        assert!(build_cfg("int f(){ goto nowhere; }").is_err());
    }

    #[test]
    fn infinite_goto_loop_has_no_exit() {
        assert!(build_cfg("void f(){ l: g(); goto l; }").is_err());
    }

    #[test]
    fn labels_at_end_of_body() {
        let cfg = build_cfg("int f(int a){ if (a) goto done; g(); done: ; }").unwrap();
        assert_eq!(cfg.nodes.last().unwrap().text, "}");
        assert_eq!(cfg.exits.len(), 1);
    }
}
