//! Canonical C lexer.
//!
//! Whitespace-and-punctuation lexing of C source. Tokens keep their byte span
//! so later passes (identifier substitution, statement rendering) can splice
//! the original text without disturbing layout or comments.

use std::ops::Range;

use thiserror::Error;

/// Identifier of the canonical tokenizer, stored alongside token counts.
pub const TOKENIZER_ID: &str = "c-lex-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Ident,
    Keyword,
    Number,
    Str,
    Char,
    Punct,
    Comment,
    /// A whole preprocessor line, including continuations.
    Directive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub span: Range<usize>,
    /// 1-based line of the first byte.
    pub line: usize,
}

impl Token {
    /// Tokens that carry program meaning (not comments or directives).
    pub fn is_code(&self) -> bool {
        !matches!(self.kind, TokenKind::Comment | TokenKind::Directive)
    }

    pub fn is_punct(&self, p: &str) -> bool {
        self.kind == TokenKind::Punct && self.text == p
    }

    pub fn is_keyword(&self, k: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text == k
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexError {
    #[error("line {line}: unterminated {what}")]
    Unterminated { line: usize, what: &'static str },
    #[error("line {line}: unexpected character {ch:?}")]
    UnexpectedChar { line: usize, ch: char },
}

impl LexError {
    pub fn line(&self) -> usize {
        match self {
            LexError::Unterminated { line, .. } | LexError::UnexpectedChar { line, .. } => *line,
        }
    }
}

pub const KEYWORDS: &[&str] = &[
    "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else",
    "enum", "extern", "float", "for", "goto", "if", "inline", "int", "long", "register",
    "restrict", "return", "short", "signed", "sizeof", "static", "struct", "switch", "typedef",
    "union", "unsigned", "void", "volatile", "while", "_Bool", "_Complex", "_Imaginary",
    "_Alignas", "_Alignof", "_Atomic", "_Noreturn", "_Static_assert", "_Thread_local",
];

/// Keywords that can begin or continue a declaration's type.
pub const TYPE_KEYWORDS: &[&str] = &[
    "auto", "char", "const", "double", "enum", "extern", "float", "inline", "int", "long",
    "register", "restrict", "short", "signed", "static", "struct", "union", "unsigned", "void",
    "volatile", "_Bool", "_Complex", "_Atomic", "_Thread_local",
];

// Longest first so that maximal munch works by prefix test.
const PUNCTUATORS: &[&str] = &[
    "<<=", ">>=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "*=",
    "/=", "%=", "+=", "-=", "&=", "^=", "|=", "##", "[", "]", "(", ")", "{", "}", ".", "&", "*",
    "+", "-", "~", "!", "/", "%", "<", ">", "^", "|", "?", ":", ";", "=", ",", "#",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

pub fn is_type_keyword(s: &str) -> bool {
    TYPE_KEYWORDS.contains(&s)
}

/// Lex `source` into tokens, comments and directives included.
pub fn lex(source: &str) -> Result<Vec<Token>, LexError> {
    let bytes = source.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut line = 1;
    // true while only whitespace has been seen on the current line
    let mut line_start = true;

    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            line += 1;
            line_start = true;
            i += 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let start_line = line;

        let kind = if c == b'#' && line_start {
            // directive runs to end of line, honouring backslash continuations
            while i < bytes.len() && bytes[i] != b'\n' {
                if bytes[i] == b'\\' && i + 1 < bytes.len() && bytes[i + 1] == b'\n' {
                    line += 1;
                    i += 2;
                    continue;
                }
                i += 1;
            }
            TokenKind::Directive
        } else if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            TokenKind::Comment
        } else if c == b'/' && bytes.get(i + 1) == Some(&b'*') {
            i += 2;
            loop {
                if i + 1 >= bytes.len() {
                    return Err(LexError::Unterminated { line: start_line, what: "comment" });
                }
                if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                    i += 2;
                    break;
                }
                if bytes[i] == b'\n' {
                    line += 1;
                }
                i += 1;
            }
            TokenKind::Comment
        } else if c == b'"' || c == b'\'' {
            let quote = c;
            i += 1;
            loop {
                match bytes.get(i) {
                    None | Some(b'\n') => {
                        let what = if quote == b'"' { "string literal" } else { "character literal" };
                        return Err(LexError::Unterminated { line: start_line, what });
                    }
                    Some(b'\\') => i += 2,
                    Some(&b) if b == quote => {
                        i += 1;
                        break;
                    }
                    Some(_) => i += 1,
                }
            }
            if quote == b'"' {
                TokenKind::Str
            } else {
                TokenKind::Char
            }
        } else if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            // wide / unicode string prefixes: L"..", u8"..", etc.
            if i < bytes.len() && (bytes[i] == b'"' || bytes[i] == b'\'') {
                let prefix = &source[start..i];
                if matches!(prefix, "L" | "u" | "U" | "u8") {
                    let quote = bytes[i];
                    i += 1;
                    loop {
                        match bytes.get(i) {
                            None | Some(b'\n') => {
                                return Err(LexError::Unterminated {
                                    line: start_line,
                                    what: "string literal",
                                })
                            }
                            Some(b'\\') => i += 2,
                            Some(&b) if b == quote => {
                                i += 1;
                                break;
                            }
                            Some(_) => i += 1,
                        }
                    }
                    let kind = if quote == b'"' { TokenKind::Str } else { TokenKind::Char };
                    push(&mut tokens, source, kind, start, i, start_line);
                    line_start = false;
                    continue;
                }
            }
            if is_keyword(&source[start..i]) {
                TokenKind::Keyword
            } else {
                TokenKind::Ident
            }
        } else if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            // pp-number: digits, letters, '.', and exponent signs
            i += 1;
            while i < bytes.len() {
                let b = bytes[i];
                if b.is_ascii_alphanumeric() || b == b'.' || b == b'_' {
                    i += 1;
                } else if (b == b'+' || b == b'-') && matches!(bytes[i - 1], b'e' | b'E' | b'p' | b'P') {
                    i += 1;
                } else {
                    break;
                }
            }
            TokenKind::Number
        } else if let Some(p) = PUNCTUATORS.iter().find(|p| source[i..].starts_with(**p)) {
            i += p.len();
            TokenKind::Punct
        } else {
            let ch = source[i..].chars().next().unwrap_or('\u{fffd}');
            return Err(LexError::UnexpectedChar { line, ch });
        };

        push(&mut tokens, source, kind, start, i, start_line);
        if kind != TokenKind::Comment {
            line_start = false;
        }
    }
    Ok(tokens)
}

fn push(tokens: &mut Vec<Token>, source: &str, kind: TokenKind, start: usize, end: usize, line: usize) {
    tokens.push(Token { kind, text: source[start..end].to_string(), span: start..end, line });
}

/// Lex and drop comments and directives.
pub fn code_tokens(source: &str) -> Result<Vec<Token>, LexError> {
    Ok(lex(source)?.into_iter().filter(Token::is_code).collect())
}

/// Canonical token count used for length filtering.
pub fn token_count(source: &str) -> usize {
    match code_tokens(source) {
        Ok(t) => t.len(),
        // unlexable text still needs a length; fall back to whitespace words
        Err(_) => source.split_whitespace().count(),
    }
}
