//! Statement-level parser for a single C function body.

use crate::lexer::{Token, TokenKind};

use super::ParseError;

/// Half-open range of code-token indices.
pub(crate) type TokRange = (usize, usize);

#[derive(Debug, Clone)]
pub(crate) enum Stmt {
    Simple(TokRange),
    Return(TokRange),
    Break(TokRange),
    Continue(TokRange),
    Goto { range: TokRange, label: String },
    Block(Vec<Stmt>),
    If { cond: TokRange, then: Box<Stmt>, els: Option<Box<Stmt>> },
    While { cond: TokRange, body: Box<Stmt> },
    DoWhile { body: Box<Stmt>, cond: TokRange },
    For { init: Option<TokRange>, cond: TokRange, step: Option<TokRange>, body: Box<Stmt> },
    Switch { head: TokRange, items: Vec<SwitchItem> },
    Labeled { label: String, stmt: Box<Stmt> },
    Empty,
}

#[derive(Debug, Clone)]
pub(crate) enum SwitchItem {
    Case(TokRange),
    Default,
    Stmt(Stmt),
}

pub(crate) struct FunctionBody {
    pub stmts: Vec<Stmt>,
}

pub(crate) struct Parser<'a> {
    t: &'a [Token],
    pos: usize,
    end: usize,
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, message: message.into() }
}

/// Locate the body braces and parse the statements inside.
pub(crate) fn parse_function(t: &[Token]) -> Result<FunctionBody, ParseError> {
    let last_line = t.last().map_or(1, |x| x.line);
    let mut depth = 0i32;
    let mut open = None;
    for (i, tok) in t.iter().enumerate() {
        if tok.is_punct("(") {
            depth += 1;
        } else if tok.is_punct(")") {
            depth -= 1;
        } else if tok.is_punct("{") && depth == 0 {
            open = Some(i);
            break;
        } else if tok.is_punct(";") && depth == 0 {
            return Err(err(tok.line, "expected a function definition, found a declaration"));
        }
    }
    let open = open.ok_or_else(|| err(last_line, "no function body"))?;
    if open == 0 || !t[..open].iter().any(|x| x.is_punct("(")) {
        return Err(err(t[open].line, "missing function header"));
    }
    let close = matching(t, open, t.len()).ok_or_else(|| err(t[open].line, "unbalanced braces in function body"))?;
    if let Some(extra) = t.get(close + 1) {
        if !(extra.is_punct(";") && close + 2 == t.len()) {
            return Err(err(extra.line, format!("unexpected {:?} after function body", extra.text)));
        }
    }
    let mut p = Parser { t, pos: open + 1, end: close };
    let mut stmts = Vec::new();
    while p.pos < p.end {
        stmts.push(p.statement()?);
    }
    Ok(FunctionBody { stmts })
}

/// Index of the bracket closing the one at `open`.
fn matching(t: &[Token], open: usize, limit: usize) -> Option<usize> {
    let (o, c) = match t[open].text.as_str() {
        "(" => ("(", ")"),
        "[" => ("[", "]"),
        "{" => ("{", "}"),
        _ => return None,
    };
    let mut depth = 0usize;
    for (i, tok) in t.iter().enumerate().take(limit).skip(open) {
        if tok.is_punct(o) {
            depth += 1;
        } else if tok.is_punct(c) {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

impl<'a> Parser<'a> {
    fn line(&self) -> usize {
        self.t.get(self.pos.min(self.end)).or(self.t.last()).map_or(1, |t| t.line)
    }

    fn peek(&self) -> Option<&'a Token> {
        (self.pos < self.end).then(|| &self.t[self.pos])
    }

    fn peek_at(&self, k: usize) -> Option<&'a Token> {
        (self.pos + k < self.end).then(|| &self.t[self.pos + k])
    }

    fn expect_punct(&mut self, p: &str) -> Result<usize, ParseError> {
        match self.peek() {
            Some(tok) if tok.is_punct(p) => {
                self.pos += 1;
                Ok(self.pos - 1)
            }
            Some(tok) => Err(err(tok.line, format!("expected {p:?}, found {:?}", tok.text))),
            None => Err(err(self.line(), format!("expected {p:?} before end of body"))),
        }
    }

    /// `( ... )` group starting at the current position; returns index of `)`.
    fn paren_group(&mut self) -> Result<usize, ParseError> {
        let open = self.expect_punct("(")?;
        let close = matching(self.t, open, self.end).ok_or_else(|| err(self.t[open].line, "unbalanced parentheses"))?;
        self.pos = close + 1;
        Ok(close)
    }

    /// Scan to the `;` ending a simple statement; returns its index.
    fn to_semicolon(&mut self) -> Result<usize, ParseError> {
        let start_line = self.line();
        let mut depth = 0i32;
        while self.pos < self.end {
            let tok = &self.t[self.pos];
            if tok.is_punct("(") || tok.is_punct("[") || tok.is_punct("{") {
                depth += 1;
            } else if tok.is_punct(")") || tok.is_punct("]") || tok.is_punct("}") {
                depth -= 1;
                if depth < 0 {
                    return Err(err(tok.line, format!("unexpected {:?}, missing ';'", tok.text)));
                }
            } else if tok.is_punct(";") && depth == 0 {
                self.pos += 1;
                return Ok(self.pos - 1);
            }
            self.pos += 1;
        }
        Err(err(start_line, "statement not terminated by ';'"))
    }

    pub(crate) fn statement(&mut self) -> Result<Stmt, ParseError> {
        let tok = self.peek().ok_or_else(|| err(self.line(), "expected statement"))?;
        let start = self.pos;
        if tok.kind == TokenKind::Punct {
            match tok.text.as_str() {
                ";" => {
                    self.pos += 1;
                    return Ok(Stmt::Empty);
                }
                "{" => return self.block(),
                "}" => return Err(err(tok.line, "unexpected '}'")),
                _ => {}
            }
        }
        if tok.kind == TokenKind::Keyword {
            match tok.text.as_str() {
                "if" => {
                    self.pos += 1;
                    let close = self.paren_group()?;
                    let then = Box::new(self.statement()?);
                    let els = if self.peek().is_some_and(|t| t.is_keyword("else")) {
                        self.pos += 1;
                        Some(Box::new(self.statement()?))
                    } else {
                        None
                    };
                    return Ok(Stmt::If { cond: (start, close + 1), then, els });
                }
                "else" => return Err(err(tok.line, "'else' without 'if'")),
                "while" => {
                    self.pos += 1;
                    let close = self.paren_group()?;
                    let body = Box::new(self.statement()?);
                    return Ok(Stmt::While { cond: (start, close + 1), body });
                }
                "do" => {
                    self.pos += 1;
                    let body = Box::new(self.statement()?);
                    let w = self.pos;
                    match self.peek() {
                        Some(t) if t.is_keyword("while") => self.pos += 1,
                        _ => return Err(err(self.line(), "expected 'while' after do body")),
                    }
                    let close = self.paren_group()?;
                    self.expect_punct(";")?;
                    return Ok(Stmt::DoWhile { body, cond: (w, close + 1) });
                }
                "for" => return self.for_loop(),
                "switch" => return self.switch(),
                "return" => {
                    let semi = self.to_semicolon()?;
                    return Ok(Stmt::Return((start, semi + 1)));
                }
                "break" => {
                    self.pos += 1;
                    let semi = self.expect_punct(";")?;
                    return Ok(Stmt::Break((start, semi + 1)));
                }
                "continue" => {
                    self.pos += 1;
                    let semi = self.expect_punct(";")?;
                    return Ok(Stmt::Continue((start, semi + 1)));
                }
                "goto" => {
                    self.pos += 1;
                    let label = match self.peek() {
                        Some(t) if t.kind == TokenKind::Ident => t.text.clone(),
                        _ => return Err(err(self.line(), "expected label after goto")),
                    };
                    self.pos += 1;
                    let semi = self.expect_punct(";")?;
                    return Ok(Stmt::Goto { range: (start, semi + 1), label });
                }
                "case" | "default" => return Err(err(tok.line, format!("'{}' outside switch", tok.text))),
                _ => {}
            }
        }
        if tok.kind == TokenKind::Ident && self.peek_at(1).is_some_and(|t| t.is_punct(":")) {
            let label = tok.text.clone();
            self.pos += 2;
            // a label directly before the closing brace labels an empty statement
            let stmt = if self.peek().is_none_or(|t| t.is_punct("}")) { Stmt::Empty } else { self.statement()? };
            return Ok(Stmt::Labeled { label, stmt: Box::new(stmt) });
        }
        let semi = self.to_semicolon()?;
        Ok(Stmt::Simple((start, semi + 1)))
    }

    fn block(&mut self) -> Result<Stmt, ParseError> {
        let open = self.expect_punct("{")?;
        let close = matching(self.t, open, self.end).ok_or_else(|| err(self.t[open].line, "unbalanced braces"))?;
        let outer_end = self.end;
        self.end = close;
        let mut stmts = Vec::new();
        while self.pos < self.end {
            stmts.push(self.statement()?);
        }
        self.end = outer_end;
        self.pos = close + 1;
        Ok(Stmt::Block(stmts))
    }

    fn for_loop(&mut self) -> Result<Stmt, ParseError> {
        let start = self.pos;
        self.pos += 1;
        let open = self.pos;
        let close = self.paren_group()?;
        let mut semis = Vec::new();
        let mut depth = 0i32;
        for i in open + 1..close {
            let tok = &self.t[i];
            if tok.is_punct("(") || tok.is_punct("[") || tok.is_punct("{") {
                depth += 1;
            } else if tok.is_punct(")") || tok.is_punct("]") || tok.is_punct("}") {
                depth -= 1;
            } else if tok.is_punct(";") && depth == 0 {
                semis.push(i);
            }
        }
        if semis.len() != 2 {
            return Err(err(self.t[start].line, "malformed for header"));
        }
        let nonempty = |a: usize, b: usize| (a < b).then_some((a, b));
        let init = nonempty(open + 1, semis[0] + 1).filter(|(a, b)| b - a > 1);
        let step = nonempty(semis[1] + 1, close);
        let cond = if semis[1] > semis[0] + 1 { (semis[0] + 1, semis[1]) } else { (start, close + 1) };
        let body = Box::new(self.statement()?);
        Ok(Stmt::For { init, cond, step, body })
    }

    fn switch(&mut self) -> Result<Stmt, ParseError> {
        let start = self.pos;
        self.pos += 1;
        let close = self.paren_group()?;
        let open = self.expect_punct("{")?;
        let body_close =
            matching(self.t, open, self.end).ok_or_else(|| err(self.t[open].line, "unbalanced braces in switch"))?;
        let outer_end = self.end;
        self.end = body_close;
        let mut items = Vec::new();
        while self.pos < self.end {
            let tok = &self.t[self.pos];
            if tok.is_keyword("case") {
                let s = self.pos;
                let mut depth = 0i32;
                let mut colon = None;
                for i in s + 1..self.end {
                    let x = &self.t[i];
                    if x.is_punct("(") || x.is_punct("?") {
                        depth += 1;
                    } else if x.is_punct(")") {
                        depth -= 1;
                    } else if x.is_punct(":") {
                        if depth == 0 {
                            colon = Some(i);
                            break;
                        }
                        depth -= 1;
                    }
                }
                let colon = colon.ok_or_else(|| err(tok.line, "case label without ':'"))?;
                items.push(SwitchItem::Case((s, colon + 1)));
                self.pos = colon + 1;
            } else if tok.is_keyword("default") {
                self.pos += 1;
                self.expect_punct(":")?;
                items.push(SwitchItem::Default);
            } else {
                items.push(SwitchItem::Stmt(self.statement()?));
            }
        }
        self.end = outer_end;
        self.pos = body_close + 1;
        Ok(Stmt::Switch { head: (start, close + 1), items })
    }
}
