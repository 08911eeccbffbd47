//! Identifier substitution: rename user-defined functions and variables to
//! `FUN<k>` / `VAR<k>` symbols.
//!
//! A name is user-defined when the sample itself declares it: the function's
//! own name, its parameters, and its locals. Library calls, globals, macros,
//! type names, struct members, literals and comments are left alone. Symbols
//! are numbered per sample in first-occurrence order; a symbol that would
//! collide with a surviving identifier is skipped.

use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CodeSample, Corpus};
use crate::lexer::{self, LexError, Token, TokenKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransformError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error("no function definition header found")]
    NoFunction,
    #[error("unbalanced {0}")]
    Unbalanced(&'static str),
    #[error("mapped source does not lex: {0}")]
    Inverse(String),
}

/// Original → symbolic name, in numbering order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifierMap {
    pub function_names: IndexMap<String, String>,
    pub variable_names: IndexMap<String, String>,
}

impl IdentifierMap {
    pub fn is_empty(&self) -> bool {
        self.function_names.is_empty() && self.variable_names.is_empty()
    }

    pub fn symbol(&self, original: &str) -> Option<&str> {
        self.function_names.get(original).or_else(|| self.variable_names.get(original)).map(String::as_str)
    }

    fn inverse(&self) -> IndexMap<&str, &str> {
        self.function_names
            .iter()
            .chain(&self.variable_names)
            .map(|(o, s)| (s.as_str(), o.as_str()))
            .collect()
    }

    /// Undo the renaming on transformed source text.
    pub fn restore(&self, transformed: &str) -> Result<String, TransformError> {
        let tokens = lexer::lex(transformed).map_err(|e| TransformError::Inverse(e.to_string()))?;
        let inverse = self.inverse();
        Ok(splice(transformed, &tokens, |i, t| {
            if t.kind == TokenKind::Ident && !is_member(&tokens, i) {
                inverse.get(t.text.as_str()).copied()
            } else {
                None
            }
        }))
    }
}

/// Sidecar record written next to a transformed corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMapping {
    pub sample_id: String,
    pub untransformed: bool,
    #[serde(flatten)]
    pub map: IdentifierMap,
}

/// Rename the user-defined identifiers of a sample. Unparseable sources come
/// back verbatim with `untransformed` set.
pub fn anonymize_identifiers(sample: &CodeSample) -> (CodeSample, IdentifierMap) {
    match anonymize_source(&sample.source) {
        Ok((source, map)) => {
            let mut out = sample.clone();
            out.token_count = lexer::token_count(&source);
            out.source = source;
            out.untransformed = false;
            (out, map)
        }
        Err(e) => {
            log::warn!("sample {}: identifier substitution skipped: {e}", sample.id);
            let mut out = sample.clone();
            out.untransformed = true;
            (out, IdentifierMap::default())
        }
    }
}

/// Apply identifier substitution to every sample; ids, labels, pairs and dates are kept.
pub fn build_identifier_setting(corpus: &Corpus) -> (Corpus, Vec<SampleMapping>) {
    let mut maps = Vec::with_capacity(corpus.len());
    let out = corpus
        .map_samples(|s| {
            let (t, map) = anonymize_identifiers(s);
            maps.push(SampleMapping { sample_id: s.id.clone(), untransformed: t.untransformed, map });
            t
        })
        .expect("renaming keeps ids and pair links");
    let mut out = out;
    out.provenance = format!("{}; identifier substitution", corpus.provenance);
    (out, maps)
}

/// Source-level transform. Returns the new text and the mapping.
pub fn anonymize_source(source: &str) -> Result<(String, IdentifierMap), TransformError> {
    let tokens = lexer::lex(source)?;
    let code: Vec<usize> = (0..tokens.len()).filter(|&i| tokens[i].is_code()).collect();
    let ct: Vec<&Token> = code.iter().map(|&i| &tokens[i]).collect();

    let header = find_header(&ct)?;
    let mut variables: HashSet<String> = HashSet::new();
    for seg in split_top_level(&ct, header.params_open + 1, header.params_close) {
        if let Some(name) = param_name(&ct, seg) {
            variables.insert(name);
        }
    }
    collect_locals(&ct, header.body_open, header.body_close, &mut variables);
    let function = ct[header.name].text.clone();
    variables.remove(&function);

    // occurrences that are renamed vs. identifiers that survive
    let renamed = |pos: usize| -> bool {
        let t = ct[pos];
        t.kind == TokenKind::Ident && !is_member_ref(&ct, pos) && (t.text == function || variables.contains(&t.text))
    };
    let surviving: HashSet<&str> = (0..ct.len())
        .filter(|&p| ct[p].kind == TokenKind::Ident && !renamed(p))
        .map(|p| ct[p].text.as_str())
        .collect();

    let mut map = IdentifierMap::default();
    let (mut next_fun, mut next_var) = (1usize, 1usize);
    let fresh = |prefix: &str, next: &mut usize| loop {
        let cand = format!("{prefix}{next}");
        *next += 1;
        if !surviving.contains(cand.as_str()) {
            break cand;
        }
    };
    for p in 0..ct.len() {
        if !renamed(p) {
            continue;
        }
        let name = &ct[p].text;
        if *name == function {
            if !map.function_names.contains_key(name) {
                let sym = fresh("FUN", &mut next_fun);
                map.function_names.insert(name.clone(), sym);
            }
        } else if !map.variable_names.contains_key(name) {
            let sym = fresh("VAR", &mut next_var);
            map.variable_names.insert(name.clone(), sym);
        }
    }

    let rename_at: HashSet<usize> = (0..ct.len()).filter(|&p| renamed(p)).map(|p| code[p]).collect();
    let out = splice(source, &tokens, |i, t| if rename_at.contains(&i) { map.symbol(&t.text) } else { None });
    Ok((out, map))
}

fn splice<'a, F>(source: &str, tokens: &[Token], mut replacement: F) -> String
where
    F: FnMut(usize, &Token) -> Option<&'a str>,
{
    let mut out = String::with_capacity(source.len());
    let mut last = 0;
    for (i, t) in tokens.iter().enumerate() {
        if let Some(r) = replacement(i, t) {
            out.push_str(&source[last..t.span.start]);
            out.push_str(r);
            last = t.span.end;
        }
    }
    out.push_str(&source[last..]);
    out
}

fn is_member(tokens: &[Token], i: usize) -> bool {
    tokens[..i].iter().rev().find(|t| t.is_code()).is_some_and(|p| p.is_punct(".") || p.is_punct("->"))
}

fn is_member_ref(ct: &[&Token], p: usize) -> bool {
    p > 0 && (ct[p - 1].is_punct(".") || ct[p - 1].is_punct("->"))
}

struct Header {
    name: usize,
    params_open: usize,
    params_close: usize,
    body_open: usize,
    body_close: usize,
}

fn matching(ct: &[&Token], open: usize, o: &str, c: &str) -> Option<usize> {
    let mut depth = 0usize;
    for (i, t) in ct.iter().enumerate().skip(open) {
        if t.is_punct(o) {
            depth += 1;
        } else if t.is_punct(c) {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

fn find_header(ct: &[&Token]) -> Result<Header, TransformError> {
    let mut depth = 0i32;
    let mut body_open = None;
    for (i, t) in ct.iter().enumerate() {
        if t.is_punct("(") {
            depth += 1;
        } else if t.is_punct(")") {
            depth -= 1;
        } else if t.is_punct("{") && depth == 0 {
            body_open = Some(i);
            break;
        }
    }
    let body_open = body_open.ok_or(TransformError::NoFunction)?;
    let body_close = matching(ct, body_open, "{", "}").ok_or(TransformError::Unbalanced("braces"))?;
    let params_open = (0..body_open).find(|&i| ct[i].is_punct("(")).ok_or(TransformError::NoFunction)?;
    let params_close = matching(ct, params_open, "(", ")").ok_or(TransformError::Unbalanced("parentheses"))?;
    if params_close >= body_open || params_open == 0 || ct[params_open - 1].kind != TokenKind::Ident {
        return Err(TransformError::NoFunction);
    }
    Ok(Header { name: params_open - 1, params_open, params_close, body_open, body_close })
}

/// Comma-separated ranges inside `[start, end)` at nesting depth zero.
fn split_top_level(ct: &[&Token], start: usize, end: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut seg = start;
    for i in start..end {
        let t = ct[i];
        if t.is_punct("(") || t.is_punct("[") || t.is_punct("{") {
            depth += 1;
        } else if t.is_punct(")") || t.is_punct("]") || t.is_punct("}") {
            depth -= 1;
        } else if t.is_punct(",") && depth == 0 {
            out.push((seg, i));
            seg = i + 1;
        }
    }
    if seg < end {
        out.push((seg, end));
    }
    out
}

const QUALIFIERS: &[&str] = &["const", "volatile", "restrict", "register", "static", "extern", "inline", "auto", "_Atomic", "_Thread_local"];

fn is_qualifier(t: &Token) -> bool {
    t.kind == TokenKind::Keyword && QUALIFIERS.contains(&t.text.as_str())
}

fn param_name(ct: &[&Token], (start, end): (usize, usize)) -> Option<String> {
    // function pointer: ( * name )
    for i in start..end.saturating_sub(2) {
        if ct[i].is_punct("(") && ct[i + 1].is_punct("*") && ct[i + 2].kind == TokenKind::Ident {
            return Some(ct[i + 2].text.clone());
        }
    }
    let mut depth = 0i32;
    let mut last = None;
    for i in start..end {
        let t = ct[i];
        if t.is_punct("[") || t.is_punct("(") {
            depth += 1;
        } else if t.is_punct("]") || t.is_punct(")") {
            depth -= 1;
        } else if depth == 0 && t.kind == TokenKind::Ident {
            last = Some(i);
        }
    }
    let i = last?;
    if i > start && ["struct", "union", "enum"].iter().any(|k| ct[i - 1].is_keyword(k)) {
        return None;
    }
    // something type-like must precede the name
    let has_type = (start..i).any(|j| {
        let t = ct[j];
        (t.kind == TokenKind::Keyword && !is_qualifier(t)) || t.kind == TokenKind::Ident
    });
    has_type.then(|| ct[i].text.clone())
}

fn collect_locals(ct: &[&Token], body_open: usize, body_close: usize, out: &mut HashSet<String>) {
    let mut i = body_open + 1;
    while i < body_close {
        let t = ct[i];
        let prev = ct[i - 1];
        let at_start = prev.is_punct("{")
            || prev.is_punct(";")
            || prev.is_punct("}")
            || (prev.is_punct("(") && i >= 2 && ct[i - 2].is_keyword("for"));
        if at_start && (t.kind == TokenKind::Keyword || t.kind == TokenKind::Ident) {
            if let Some(names) = parse_declaration(ct, i, body_close) {
                out.extend(names);
            }
        }
        i += 1;
    }
}

/// Try to read a declaration starting at `start`; returns the declared names.
fn parse_declaration(ct: &[&Token], start: usize, end: usize) -> Option<Vec<String>> {
    let mut i = start;
    let mut has_base = false;
    let mut has_typedef_name = false;
    while i < end {
        let t = ct[i];
        if t.kind == TokenKind::Keyword && ["struct", "union", "enum"].contains(&t.text.as_str()) {
            has_base = true;
            i += 1;
            if i < end && ct[i].kind == TokenKind::Ident {
                i += 1;
            }
            if i < end && ct[i].is_punct("{") {
                i = matching(ct, i, "{", "}")? + 1;
            }
        } else if t.kind == TokenKind::Keyword && lexer::is_type_keyword(&t.text) {
            if !is_qualifier(t) {
                has_base = true;
            }
            i += 1;
        } else if t.kind == TokenKind::Ident && !has_base && !has_typedef_name {
            // typedef name only when a declarator name follows
            let mut j = i + 1;
            while j < end && (ct[j].is_punct("*") || is_qualifier(ct[j])) {
                j += 1;
            }
            let declarator_follows = j < end && ct[j].kind == TokenKind::Ident
                || (j + 2 < end && ct[j].is_punct("(") && ct[j + 1].is_punct("*") && ct[j + 2].kind == TokenKind::Ident);
            if !declarator_follows {
                return None;
            }
            has_typedef_name = true;
            i += 1;
        } else {
            break;
        }
    }
    if !(has_base || has_typedef_name) {
        return None;
    }

    let mut names = Vec::new();
    loop {
        while i < end && (ct[i].is_punct("*") || is_qualifier(ct[i])) {
            i += 1;
        }
        if i >= end {
            return None;
        }
        if ct[i].is_punct("(") && i + 2 < end && ct[i + 1].is_punct("*") && ct[i + 2].kind == TokenKind::Ident {
            names.push(ct[i + 2].text.clone());
            i = matching(ct, i, "(", ")")? + 1;
        } else if ct[i].kind == TokenKind::Ident {
            names.push(ct[i].text.clone());
            i += 1;
        } else {
            return if names.is_empty() { None } else { Some(names) };
        }
        // array and parameter suffixes
        while i < end && (ct[i].is_punct("[") || ct[i].is_punct("(")) {
            i = if ct[i].is_punct("[") { matching(ct, i, "[", "]")? } else { matching(ct, i, "(", ")")? } + 1;
        }
        if i < end && ct[i].is_punct("=") {
            let mut depth = 0i32;
            i += 1;
            while i < end {
                let t = ct[i];
                if t.is_punct("(") || t.is_punct("[") || t.is_punct("{") {
                    depth += 1;
                } else if t.is_punct(")") || t.is_punct("]") || t.is_punct("}") {
                    if depth == 0 {
                        break;
                    }
                    depth -= 1;
                } else if depth == 0 && (t.is_punct(",") || t.is_punct(";")) {
                    break;
                }
                i += 1;
            }
        }
        if i < end && ct[i].is_punct(",") {
            i += 1;
            continue;
        }
        if i < end && (ct[i].is_punct(";") || ct[i].is_punct(")")) {
            return Some(names);
        }
        return None;
    }
}
