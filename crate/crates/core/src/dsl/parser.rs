//! Lexer, parser and type checker for rule expressions.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! or      := and ("OR" and)*
//! and     := cmp ("AND" cmp)*
//! cmp     := sum (("<" | "<=" | "=" | "!=" | ">" | ">=") sum)*
//! sum     := product (("+" | "-") product | "+" "..." "+" product)*
//! product := unary (("*" | "/") unary)*
//! unary   := "NOT" unary | "-" unary | primary
//! primary := number | namespace "." attribute | "(" or ")"
//! ```
//!
//! `NOT` binds to the following primary, so a negated comparison needs
//! parentheses: `NOT (a > b)`. `×` and `÷` are accepted for `*` and `/`.
//! In a sum, `A1 + ... + A4` stands for every attribute of the numbered
//! series between the two ends.

use serde::Serialize;

use super::ast::{ArithOp, AttrRef, BoolExpr, CmpOp, NumExpr, Span};
use super::catalog::{Namespace, RuleClass, SchemaCatalog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum DiagnosticKind {
    Lexical,
    Syntax,
    UnbalancedParentheses,
    UnknownNamespace,
    UnknownAttribute,
    IllegalNamespace,
    Type,
    Ellipsis,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
    pub line: usize,
    pub column: usize,
    pub start: usize,
    pub end: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub suggestions: Vec<String>,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)?;
        if !self.suggestions.is_empty() {
            write!(f, " (did you mean {}?)", self.suggestions.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}", .diagnostics.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct ParseError {
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Dot,
    Ellipsis,
    LParen,
    RParen,
    And,
    Or,
    Not,
    Cmp(CmpOp),
    Arith(ArithOp),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Span,
}

struct Source<'a> {
    text: &'a str,
    line_starts: Vec<usize>,
}

impl<'a> Source<'a> {
    fn new(text: &'a str) -> Self {
        let mut line_starts = vec![0];
        line_starts.extend(text.match_indices('\n').map(|(i, _)| i + 1));
        Source { text, line_starts }
    }

    fn span(&self, start: usize, end: usize) -> Span {
        let line = self.line_starts.partition_point(|&s| s <= start);
        let line_start = self.line_starts[line - 1];
        let column = self.text[line_start..start].chars().count() + 1;
        Span { start, end, line, column }
    }

    fn diag(&self, kind: DiagnosticKind, span: Span, message: impl Into<String>) -> Diagnostic {
        Diagnostic {
            kind,
            message: message.into(),
            line: span.line,
            column: span.column,
            start: span.start,
            end: span.end,
            suggestions: Vec::new(),
        }
    }
}

fn lex(src: &Source) -> Result<Vec<Token>, Diagnostic> {
    let text = src.text;
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let mut end = start + c.len_utf8();
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            chars.next();
            while let Some(&(i, d)) = chars.peek() {
                if d.is_ascii_alphanumeric() || d == '_' {
                    chars.next();
                    end = i + 1;
                } else {
                    break;
                }
            }
            match &text[start..end] {
                "AND" => Tok::And,
                "OR" => Tok::Or,
                "NOT" => Tok::Not,
                word => Tok::Ident(word.to_string()),
            }
        } else if c.is_ascii_digit() {
            chars.next();
            let mut seen_dot = false;
            while let Some(&(i, d)) = chars.peek() {
                let next_is_digit = text[i + 1..].starts_with(|x: char| x.is_ascii_digit());
                if d.is_ascii_digit() || (d == '.' && !seen_dot && next_is_digit) {
                    seen_dot |= d == '.';
                    chars.next();
                    end = i + 1;
                } else {
                    break;
                }
            }
            Tok::Number(text[start..end].to_string())
        } else {
            chars.next();
            let rest = &text[start..];
            let (tok, len) = if rest.starts_with("...") {
                (Tok::Ellipsis, 3)
            } else if rest.starts_with("<=") {
                (Tok::Cmp(CmpOp::Le), 2)
            } else if rest.starts_with(">=") {
                (Tok::Cmp(CmpOp::Ge), 2)
            } else if rest.starts_with("!=") || rest.starts_with("<>") {
                (Tok::Cmp(CmpOp::Ne), 2)
            } else {
                let t = match c {
                    '.' => Tok::Dot,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '<' => Tok::Cmp(CmpOp::Lt),
                    '>' => Tok::Cmp(CmpOp::Gt),
                    '=' => Tok::Cmp(CmpOp::Eq),
                    '+' => Tok::Arith(ArithOp::Add),
                    '-' | '−' => Tok::Arith(ArithOp::Sub),
                    '*' | '×' => Tok::Arith(ArithOp::Mul),
                    '/' | '÷' => Tok::Arith(ArithOp::Div),
                    _ => {
                        return Err(src.diag(
                            DiagnosticKind::Lexical,
                            src.span(start, end),
                            format!("unexpected character {c:?}"),
                        ))
                    }
                };
                (t, c.len_utf8())
            };
            for _ in 1..text[start..start + len].chars().count() {
                chars.next();
            }
            end = start + len;
            if tok == Tok::Cmp(CmpOp::Eq) && text[end..].starts_with('=') {
                return Err(src.diag(
                    DiagnosticKind::Lexical,
                    src.span(start, end + 1),
                    "use '=' for equality",
                ));
            }
            tok
        };
        tokens.push(Token {
            tok,
            span: src.span(start, end),
        });
    }
    tokens.push(Token {
        tok: Tok::Eof,
        span: src.span(text.len(), text.len()),
    });
    Ok(tokens)
}

/// Parse tree before type checking.
#[derive(Debug, Clone)]
enum Raw {
    Number { text: String, span: Span },
    Attr { ns: String, ns_span: Span, name: String, name_span: Span, span: Span },
    Not(Box<Raw>, Span),
    Neg(Box<Raw>, Span),
    Arith(ArithOp, Box<Raw>, Box<Raw>, Span),
    Cmp(CmpOp, Box<Raw>, Box<Raw>, Span),
    And(Box<Raw>, Box<Raw>, Span),
    Or(Box<Raw>, Box<Raw>, Span),
}

impl Raw {
    fn span(&self) -> Span {
        match self {
            Raw::Number { span, .. } | Raw::Attr { span, .. } => *span,
            Raw::Not(_, s) | Raw::Neg(_, s) | Raw::Arith(.., s) | Raw::Cmp(.., s) | Raw::And(.., s) | Raw::Or(.., s) => *s,
        }
    }

    fn describe(&self) -> &'static str {
        match self {
            Raw::Cmp(..) => "a comparison",
            Raw::And(..) => "an AND expression",
            Raw::Or(..) => "an OR expression",
            Raw::Not(..) => "a NOT expression",
            _ => "a numeric expression",
        }
    }
}

struct Parser<'a> {
    src: &'a Source<'a>,
    tokens: Vec<Token>,
    pos: usize,
    /// Spans of currently open parentheses.
    open: Vec<Span>,
}

type PResult<T> = Result<T, Diagnostic>;

fn join(a: Span, b: Span, src: &Source) -> Span {
    src.span(a.start, b.end)
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, message: impl Into<String>) -> Diagnostic {
        let t = &self.tokens[self.pos];
        if t.tok == Tok::Eof {
            if let Some(open) = self.open.last() {
                return self
                    .src
                    .diag(DiagnosticKind::UnbalancedParentheses, *open, "unclosed '('");
            }
        }
        self.src.diag(DiagnosticKind::Syntax, t.span, message)
    }

    fn describe_current(&self) -> String {
        match self.peek() {
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Number(s) => format!("number {s}"),
            Tok::Dot => "'.'".into(),
            Tok::Ellipsis => "'...'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::And => "AND".into(),
            Tok::Or => "OR".into(),
            Tok::Not => "NOT".into(),
            Tok::Cmp(op) => format!("'{}'", op.symbol()),
            Tok::Arith(op) => format!("'{}'", op.symbol()),
            Tok::Eof => "end of rule".into(),
        }
    }

    fn parse_rule(&mut self) -> PResult<Raw> {
        let e = self.or()?;
        match self.peek() {
            Tok::Eof => Ok(e),
            Tok::RParen => Err(self.src.diag(
                DiagnosticKind::UnbalancedParentheses,
                self.tokens[self.pos].span,
                "unmatched ')'",
            )),
            _ => Err(self.error_here(format!("unexpected {}", self.describe_current()))),
        }
    }

    fn or(&mut self) -> PResult<Raw> {
        let mut lhs = self.and()?;
        while *self.peek() == Tok::Or {
            self.bump();
            let rhs = self.and()?;
            let span = join(lhs.span(), rhs.span(), self.src);
            lhs = Raw::Or(Box::new(lhs), Box::new(rhs), span);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> PResult<Raw> {
        let mut lhs = self.cmp()?;
        while *self.peek() == Tok::And {
            self.bump();
            let rhs = self.cmp()?;
            let span = join(lhs.span(), rhs.span(), self.src);
            lhs = Raw::And(Box::new(lhs), Box::new(rhs), span);
        }
        Ok(lhs)
    }

    fn cmp(&mut self) -> PResult<Raw> {
        let mut lhs = self.sum()?;
        while let Tok::Cmp(op) = *self.peek() {
            self.bump();
            let rhs = self.sum()?;
            let span = join(lhs.span(), rhs.span(), self.src);
            lhs = Raw::Cmp(op, Box::new(lhs), Box::new(rhs), span);
        }
        Ok(lhs)
    }

    fn sum(&mut self) -> PResult<Raw> {
        let mut lhs = self.product()?;
        // The most recent term added with '+', for ellipsis expansion.
        let mut last_term = Some(lhs.clone());
        loop {
            let op = match *self.peek() {
                Tok::Arith(op @ (ArithOp::Add | ArithOp::Sub)) => op,
                _ => break,
            };
            let op_tok = self.bump();
            if op == ArithOp::Add && *self.peek() == Tok::Ellipsis {
                let dots = self.bump();
                if *self.peek() != Tok::Arith(ArithOp::Add) {
                    return Err(self.error_here("expected '+' after '...'"));
                }
                self.bump();
                let last = self.product()?;
                let first = last_term.take().ok_or_else(|| {
                    self.src
                        .diag(DiagnosticKind::Ellipsis, dots.span, "'...' must follow an added attribute")
                })?;
                for term in self.expand(&first, &last, dots.span)? {
                    let span = join(lhs.span(), dots.span, self.src);
                    lhs = Raw::Arith(ArithOp::Add, Box::new(lhs), Box::new(term), span);
                }
                let span = join(lhs.span(), last.span(), self.src);
                last_term = Some(last.clone());
                lhs = Raw::Arith(ArithOp::Add, Box::new(lhs), Box::new(last), span);
                continue;
            }
            let _ = op_tok;
            let rhs = self.product()?;
            last_term = (op == ArithOp::Add).then(|| rhs.clone());
            let span = join(lhs.span(), rhs.span(), self.src);
            lhs = Raw::Arith(op, Box::new(lhs), Box::new(rhs), span);
        }
        Ok(lhs)
    }

    /// Attributes strictly between `first` and `last` in a numbered series
    /// such as `...Grid1` to `...Grid4`.
    fn expand(&self, first: &Raw, last: &Raw, at: Span) -> PResult<Vec<Raw>> {
        let err = |m: &str| self.src.diag(DiagnosticKind::Ellipsis, at, m);
        let (
            Raw::Attr { ns: ns_a, ns_span, name: a, .. },
            Raw::Attr { ns: ns_b, name: b, .. },
        ) = (first, last)
        else {
            return Err(err("'...' needs attribute references on both sides"));
        };
        if ns_a != ns_b {
            return Err(err("'...' must join attributes of one namespace"));
        }
        let split = |s: &str| {
            let digits = s.len() - s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
            let (stem, num) = s.split_at(s.len() - digits);
            num.parse::<u32>().ok().map(|n| (stem.to_string(), n))
        };
        let (Some((stem_a, na)), Some((stem_b, nb))) = (split(a), split(b)) else {
            return Err(err("'...' needs numbered attributes such as Grid1 and Grid4"));
        };
        if stem_a != stem_b || na >= nb {
            return Err(err("'...' must run upward through one numbered series"));
        }
        Ok((na + 1..nb)
            .map(|n| Raw::Attr {
                ns: ns_a.clone(),
                ns_span: *ns_span,
                name: format!("{stem_a}{n}"),
                name_span: at,
                span: at,
            })
            .collect())
    }

    fn product(&mut self) -> PResult<Raw> {
        let mut lhs = self.unary()?;
        while let Tok::Arith(op @ (ArithOp::Mul | ArithOp::Div)) = *self.peek() {
            self.bump();
            let rhs = self.unary()?;
            let span = join(lhs.span(), rhs.span(), self.src);
            lhs = Raw::Arith(op, Box::new(lhs), Box::new(rhs), span);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Raw> {
        match self.peek() {
            Tok::Not => {
                let t = self.bump();
                let operand = self.unary()?;
                let span = join(t.span, operand.span(), self.src);
                Ok(Raw::Not(Box::new(operand), span))
            }
            Tok::Arith(ArithOp::Sub) => {
                let t = self.bump();
                let operand = self.unary()?;
                let span = join(t.span, operand.span(), self.src);
                Ok(Raw::Neg(Box::new(operand), span))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> PResult<Raw> {
        match self.peek().clone() {
            Tok::Number(text) => {
                let t = self.bump();
                Ok(Raw::Number { text, span: t.span })
            }
            Tok::Ident(ns) => {
                let ns_tok = self.bump();
                if *self.peek() != Tok::Dot {
                    let mut d = self.src.diag(
                        DiagnosticKind::Syntax,
                        ns_tok.span,
                        format!("expected '.' after namespace '{ns}'"),
                    );
                    if matches!(ns.as_str(), "and" | "or" | "not" | "And" | "Or" | "Not") {
                        d.message = format!("keywords are upper case: write {}", ns.to_uppercase());
                    }
                    return Err(d);
                }
                self.bump();
                match self.peek().clone() {
                    Tok::Ident(name) => {
                        let name_tok = self.bump();
                        Ok(Raw::Attr {
                            ns,
                            ns_span: ns_tok.span,
                            name,
                            name_span: name_tok.span,
                            span: join(ns_tok.span, name_tok.span, self.src),
                        })
                    }
                    _ => Err(self.error_here(format!("expected an attribute name, found {}", self.describe_current()))),
                }
            }
            Tok::LParen => {
                let open = self.bump();
                self.open.push(open.span);
                let inner = self.or()?;
                if *self.peek() != Tok::RParen {
                    if *self.peek() == Tok::Eof {
                        return Err(self
                            .src
                            .diag(DiagnosticKind::UnbalancedParentheses, open.span, "unclosed '('"));
                    }
                    return Err(self.error_here(format!("expected ')', found {}", self.describe_current())));
                }
                self.open.pop();
                self.bump();
                Ok(inner)
            }
            Tok::RParen => Err(self.src.diag(
                DiagnosticKind::UnbalancedParentheses,
                self.tokens[self.pos].span,
                "unmatched ')'",
            )),
            Tok::Eof if self.open.is_empty() && self.pos == 0 => Err(self.error_here("empty rule")),
            _ => Err(self.error_here(format!("expected a value, found {}", self.describe_current()))),
        }
    }
}

struct Checker<'a> {
    src: &'a Source<'a>,
    catalog: &'a SchemaCatalog,
    class: RuleClass,
    diagnostics: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn type_error(&mut self, raw: &Raw, expected: &str) {
        let message = match (raw, expected) {
            (Raw::Cmp(..), "a number") => "comparisons cannot be chained or used as numbers".to_string(),
            _ => format!("expected {expected}, found {}", raw.describe()),
        };
        let d = self.src.diag(DiagnosticKind::Type, raw.span(), message);
        self.diagnostics.push(d);
    }

    fn boolean(&mut self, raw: &Raw) -> Option<BoolExpr> {
        match raw {
            Raw::Cmp(op, l, r, span) => {
                let lhs = self.number(l);
                let rhs = self.number(r);
                Some(BoolExpr::Compare {
                    op: *op,
                    lhs: lhs?,
                    rhs: rhs?,
                    span: *span,
                })
            }
            Raw::And(l, r, _) => {
                let lhs = self.boolean(l);
                let rhs = self.boolean(r);
                Some(BoolExpr::And {
                    lhs: Box::new(lhs?),
                    rhs: Box::new(rhs?),
                })
            }
            Raw::Or(l, r, _) => {
                let lhs = self.boolean(l);
                let rhs = self.boolean(r);
                Some(BoolExpr::Or {
                    lhs: Box::new(lhs?),
                    rhs: Box::new(rhs?),
                })
            }
            Raw::Not(inner, span) => Some(BoolExpr::Not {
                operand: Box::new(self.boolean(inner)?),
                span: *span,
            }),
            other => {
                self.type_error(other, "a boolean expression");
                None
            }
        }
    }

    fn number(&mut self, raw: &Raw) -> Option<NumExpr> {
        match raw {
            Raw::Number { text, span } => Some(NumExpr::Literal {
                value: text.parse().expect("lexer only produces decimal literals"),
                text: text.clone(),
                span: *span,
            }),
            Raw::Attr {
                ns,
                ns_span,
                name,
                name_span,
                span,
            } => self.attribute(ns, *ns_span, name, *name_span, *span).map(NumExpr::Attribute),
            Raw::Neg(inner, span) => Some(NumExpr::Neg {
                operand: Box::new(self.number(inner)?),
                span: *span,
            }),
            Raw::Arith(op, l, r, span) => {
                let lhs = self.number(l);
                let rhs = self.number(r);
                Some(NumExpr::Binary {
                    op: *op,
                    lhs: Box::new(lhs?),
                    rhs: Box::new(rhs?),
                    span: *span,
                })
            }
            other => {
                self.type_error(other, "a number");
                None
            }
        }
    }

    fn attribute(&mut self, ns: &str, ns_span: Span, name: &str, name_span: Span, span: Span) -> Option<AttrRef> {
        let Some(namespace) = Namespace::parse(ns) else {
            let mut d = self.src.diag(
                DiagnosticKind::UnknownNamespace,
                ns_span,
                format!("unknown namespace '{ns}'"),
            );
            d.suggestions = suggest(ns, self.class.namespaces().iter().map(|n| n.name()));
            self.diagnostics.push(d);
            return None;
        };
        if !self.class.allows(namespace) {
            let allowed: Vec<&str> = self.class.namespaces().iter().map(|n| n.name()).collect();
            let d = self.src.diag(
                DiagnosticKind::IllegalNamespace,
                ns_span,
                format!(
                    "namespace '{ns}' is not available in {} rules (allowed: {})",
                    self.class,
                    allowed.join(", ")
                ),
            );
            self.diagnostics.push(d);
            return None;
        }
        resolve(self.catalog, namespace, name, span, name_span, self.src, &mut self.diagnostics)
    }
}

fn resolve(
    catalog: &SchemaCatalog,
    namespace: Namespace,
    name: &str,
    span: Span,
    name_span: Span,
    src: &Source,
    diagnostics: &mut Vec<Diagnostic>,
) -> Option<AttrRef> {
    match catalog.resolve(namespace, name) {
        Some(entry) => Some(AttrRef {
            namespace,
            name: entry.name.clone(),
            column: entry.column,
            span,
        }),
        None => {
            let mut d = src.diag(
                DiagnosticKind::UnknownAttribute,
                name_span,
                format!("unknown attribute '{name}' in namespace '{namespace}'"),
            );
            d.suggestions = catalog.suggestions(namespace, name);
            diagnostics.push(d);
            None
        }
    }
}

fn suggest<'a>(word: &str, options: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut scored: Vec<(f64, &str)> = options.map(|o| (strsim::jaro_winkler(word, o), o)).filter(|(s, _)| *s > 0.6).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.into_iter().take(3).map(|(_, o)| o.to_string()).collect()
}

/// Parses and type-checks a rule expression against `catalog`.
pub fn parse_expr_with(catalog: &SchemaCatalog, class: RuleClass, text: &str) -> Result<BoolExpr, ParseError> {
    let src = Source::new(text);
    let one = |d| ParseError { diagnostics: vec![d] };
    let tokens = lex(&src).map_err(one)?;
    let mut parser = Parser {
        src: &src,
        tokens,
        pos: 0,
        open: Vec::new(),
    };
    let raw = parser.parse_rule().map_err(one)?;
    let mut checker = Checker {
        src: &src,
        catalog,
        class,
        diagnostics: Vec::new(),
    };
    let expr = checker.boolean(&raw);
    match expr {
        Some(e) if checker.diagnostics.is_empty() => Ok(e),
        _ => Err(ParseError {
            diagnostics: checker.diagnostics,
        }),
    }
}

pub fn parse_expr(class: RuleClass, text: &str) -> Result<BoolExpr, ParseError> {
    parse_expr_with(&SchemaCatalog::standard(), class, text)
}

/// Re-resolves every attribute of a parsed expression against `catalog`,
/// returning one diagnostic per problem.
pub fn validate_expr(expr: &BoolExpr, class: RuleClass, catalog: &SchemaCatalog, source: &str) -> Vec<Diagnostic> {
    let src = Source::new(source);
    let mut out = Vec::new();
    expr.visit_attributes(&mut |a| {
        if !class.allows(a.namespace) {
            out.push(src.diag(
                DiagnosticKind::IllegalNamespace,
                a.span,
                format!("namespace '{}' is not available in {class} rules", a.namespace),
            ));
            return;
        }
        match catalog.resolve(a.namespace, &a.name) {
            Some(e) if e.column == a.column => {}
            Some(_) => out.push(src.diag(
                DiagnosticKind::UnknownAttribute,
                a.span,
                format!("attribute '{}' moved to a different column", a.name),
            )),
            None => {
                resolve(catalog, a.namespace, &a.name, a.span, a.span, &src, &mut out);
            }
        }
    });
    out
}

/// Resolves column positions again, e.g. after loading a rule parsed
/// against another catalog.
pub fn rebind(expr: &mut BoolExpr, catalog: &SchemaCatalog) -> bool {
    let mut ok = true;
    expr.visit_attributes_mut(&mut |a| match catalog.resolve(a.namespace, &a.name) {
        Some(e) => a.column = e.column,
        None => ok = false,
    });
    ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::library::{TABLE1, WALKTHROUGH_RULE};

    fn err(class: RuleClass, text: &str) -> Diagnostic {
        parse_expr(class, text).unwrap_err().diagnostics.remove(0)
    }

    #[test]
    fn worked_examples_parse_verbatim() {
        for (name, class, text) in TABLE1 {
            let e = parse_expr(class, text).unwrap_or_else(|e| panic!("{name}: {e}"));
            let again = parse_expr(class, &e.to_string()).unwrap();
            assert_eq!(e, again, "{name}");
        }
        parse_expr(RuleClass::Transition, WALKTHROUGH_RULE).unwrap();
    }

    #[test]
    fn ellipsis_expands_series() {
        let e = parse_expr(
            RuleClass::StaticState,
            "outputState.friendlyMarineTopGrid1 + ... + outputState.friendlyMarineTopGrid4 > 0",
        )
        .unwrap();
        assert_eq!(
            e.to_string(),
            "outputState.friendlyMarineTopGrid1 + outputState.friendlyMarineTopGrid2 + outputState.friendlyMarineTopGrid3 + outputState.friendlyMarineTopGrid4 > 0"
        );
        assert_eq!(err(RuleClass::StaticState, "outputState.enemyHealthTop + ... + outputState.friendlyHealthTop > 0").kind, DiagnosticKind::Ellipsis);
    }

    #[test]
    fn namespace_not_allowed_for_class() {
        let d = err(RuleClass::StaticState, "inputState.friendlyHealthTop > 0");
        assert_eq!(d.kind, DiagnosticKind::IllegalNamespace);
        let d = err(RuleClass::Transition, "outputStateForFlippedInputs.friendlyHealthTop > 0");
        assert_eq!(d.kind, DiagnosticKind::IllegalNamespace);
        let d = err(RuleClass::StaticState, "outputStat.friendlyHealthTop > 0");
        assert_eq!(d.kind, DiagnosticKind::UnknownNamespace);
    }

    #[test]
    fn unknown_attribute_suggests_neighbours() {
        let d = err(RuleClass::StaticState, "outputState.friendlyHealthMiddle > 0");
        assert_eq!(d.kind, DiagnosticKind::UnknownAttribute);
        assert!(d.suggestions.iter().any(|s| s == "friendlyHealthTop"), "{:?}", d.suggestions);
        assert_eq!((d.line, d.column), (1, 13));
    }

    #[test]
    fn literals_keep_their_text() {
        let e = parse_expr(RuleClass::Transition, "outputState.enemyHealthTop-inputState.enemyHealthTop>5.0").unwrap();
        assert_eq!(e.to_string(), "outputState.enemyHealthTop - inputState.enemyHealthTop > 5.0");
    }

    #[test]
    fn precedence_and_parentheses() {
        let cases = [
            ("outputState.waveIndex + 1 * 2 > 0", "outputState.waveIndex + 1 * 2 > 0"),
            ("(outputState.waveIndex + 1) * 2 > 0", "(outputState.waveIndex + 1) * 2 > 0"),
            ("outputState.waveIndex - (1 - 2) > 0", "outputState.waveIndex - (1 - 2) > 0"),
            ("(outputState.waveIndex - 1) - 2 > 0", "outputState.waveIndex - 1 - 2 > 0"),
            ("outputState.waveIndex > 0 OR outputState.waveIndex < 1 AND outputState.waveIndex = 2",
             "outputState.waveIndex > 0 OR outputState.waveIndex < 1 AND outputState.waveIndex = 2"),
            ("(outputState.waveIndex > 0 OR outputState.waveIndex < 1) AND outputState.waveIndex = 2",
             "(outputState.waveIndex > 0 OR outputState.waveIndex < 1) AND outputState.waveIndex = 2"),
            ("NOT (outputState.waveIndex > 0)", "NOT (outputState.waveIndex > 0)"),
            ("--outputState.waveIndex > 0", "--outputState.waveIndex > 0"),
            ("outputState.waveIndex × 2 ÷ 4 <> 0", "outputState.waveIndex * 2 / 4 != 0"),
        ];
        for (src, want) in cases {
            let e = parse_expr(RuleClass::StaticState, src).unwrap_or_else(|e| panic!("{src}: {e}"));
            assert_eq!(e.to_string(), want);
        }
        let e = parse_expr(RuleClass::StaticState, "outputState.waveIndex > 0 OR outputState.waveIndex < 1 AND outputState.waveIndex = 2").unwrap();
        assert!(matches!(e, BoolExpr::Or { .. }));
    }

    #[test]
    fn not_binds_to_primary() {
        let d = err(RuleClass::StaticState, "NOT outputState.waveIndex > 0");
        assert_eq!(d.kind, DiagnosticKind::Type);
        parse_expr(RuleClass::StaticState, "NOT (outputState.waveIndex > 0) AND outputState.waveIndex > 1").unwrap();
    }

    #[test]
    fn type_errors() {
        assert_eq!(err(RuleClass::StaticState, "outputState.waveIndex < 1 < 2").kind, DiagnosticKind::Type);
        assert_eq!(err(RuleClass::StaticState, "outputState.waveIndex + 1").kind, DiagnosticKind::Type);
        assert_eq!(err(RuleClass::StaticState, "(outputState.waveIndex > 1) + 1 > 0").kind, DiagnosticKind::Type);
    }

    #[test]
    fn unbalanced_parentheses_have_positions() {
        let d = err(RuleClass::StaticState, "outputState.waveIndex > 0 AND\n(outputState.waveIndex < 3");
        assert_eq!(d.kind, DiagnosticKind::UnbalancedParentheses);
        assert_eq!((d.line, d.column), (2, 1));
        let d = err(RuleClass::StaticState, "outputState.waveIndex > 0)");
        assert_eq!(d.kind, DiagnosticKind::UnbalancedParentheses);
        assert_eq!((d.line, d.column), (1, 26));
    }

    #[test]
    fn lexical_errors() {
        assert_eq!(err(RuleClass::StaticState, "outputState.waveIndex == 1").kind, DiagnosticKind::Lexical);
        assert_eq!(err(RuleClass::StaticState, "outputState.waveIndex # 1").kind, DiagnosticKind::Lexical);
        assert_eq!(err(RuleClass::StaticState, "outputState.waveIndex > 0 and outputState.waveIndex < 3").kind, DiagnosticKind::Syntax);
    }
}
