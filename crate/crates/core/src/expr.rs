//! Guard and action expression language.
//!
//! The language is small and statically typed: values are bools, ints,
//! strings and string lists. Guards are expressions that must check as bool
//! and cannot have side effects; actions are `name = expr;` assignments or
//! calls to the one mutating builtin, `push`.
//!
//! Grammar (comparisons do not chain):
//!
//! ```text
//! expr   := or
//! or     := and ("||" and)*
//! and    := cmp ("&&" cmp)*
//! cmp    := add (("==" | "!=" | "<" | "<=" | ">" | ">=") add)?
//! add    := unary (("+" | "-") unary)*
//! unary  := "!" unary | "-" unary | atom
//! atom   := int | "true" | "false" | "'" chars "'" | ident
//!         | ident "(" args ")" | "(" expr ")"
//! action := ident "=" expr ";" | ident "(" args ")" ";"
//! ```
//!
//! Strings are single-quoted with no escapes, so expressions embed cleanly
//! in double-quoted DSL fields.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use crate::efsm::{Context, Value, ValueType};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "||",
            BinOp::And => "&&",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
        }
    }

    /// Precedence level, higher binds tighter. Comparison operators share one
    /// non-chaining level.
    fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 3,
            BinOp::Add | BinOp::Sub => 4,
        }
    }

    fn is_comparison(self) -> bool {
        self.precedence() == 3
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Bool(bool),
    Int(i64),
    Str(String),
    Var(String),
    Unary {
        op: UnaryOp,
        expr: Box<Expr>,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Call {
        name: String,
        args: Vec<Expr>,
    },
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary { op, .. } => op.precedence(),
            Expr::Unary { .. } => 5,
            _ => 6,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let prec = self.precedence();
        if prec < min {
            f.write_str("(")?;
            self.fmt_prec(f, 0)?;
            return f.write_str(")");
        }
        match self {
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Int(i) => write!(f, "{i}"),
            Expr::Str(s) => write!(f, "'{s}'"),
            Expr::Var(name) => f.write_str(name),
            Expr::Unary { op, expr } => {
                f.write_str(match op {
                    UnaryOp::Not => "!",
                    UnaryOp::Neg => "-",
                })?;
                expr.fmt_prec(f, 5)
            }
            Expr::Binary { op, lhs, rhs } => {
                // Left-associative levels reuse their own precedence on the
                // left; the comparison level does not chain at all.
                let (lmin, rmin) = if op.is_comparison() {
                    (4, 4)
                } else {
                    (op.precedence(), op.precedence() + 1)
                };
                lhs.fmt_prec(f, lmin)?;
                write!(f, " {} ", op.symbol())?;
                rhs.fmt_prec(f, rmin)
            }
            Expr::Call { name, args } => {
                write!(f, "{name}(")?;
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    arg.fmt_prec(f, 0)?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// A single action statement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ActionStmt {
    Assign { name: String, value: Expr },
    Call { name: String, args: Vec<Expr> },
}

impl fmt::Display for ActionStmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionStmt::Assign { name, value } => write!(f, "{name} = {value};"),
            ActionStmt::Call { name, args } => {
                write!(f, "{name}(")?;
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{arg}")?;
                }
                f.write_str(");")
            }
        }
    }
}

/// Signature of a builtin function.
#[derive(Clone, Copy, Debug)]
pub struct BuiltinSig {
    pub name: &'static str,
    pub params: &'static [ValueType],
    /// `None` for builtins that only make sense as action statements.
    pub result: Option<ValueType>,
    /// Mutating builtins take a list variable as their first argument and
    /// are rejected in expression position.
    pub mutates: bool,
}

/// The fixed set of builtin functions.
pub struct BuiltinRegistry {
    sigs: Vec<BuiltinSig>,
}

static STANDARD: LazyLock<BuiltinRegistry> = LazyLock::new(|| BuiltinRegistry {
    sigs: vec![
        BuiltinSig {
            name: "contains",
            params: &[ValueType::List, ValueType::Str],
            result: Some(ValueType::Bool),
            mutates: false,
        },
        BuiltinSig {
            name: "len",
            params: &[ValueType::List],
            result: Some(ValueType::Int),
            mutates: false,
        },
        BuiltinSig {
            name: "push",
            params: &[ValueType::List, ValueType::Str],
            result: None,
            mutates: true,
        },
        BuiltinSig {
            name: "last",
            params: &[ValueType::List],
            result: Some(ValueType::Str),
            mutates: false,
        },
    ],
});

impl BuiltinRegistry {
    pub fn standard() -> &'static BuiltinRegistry {
        &STANDARD
    }

    pub fn lookup(&self, name: &str) -> Option<&BuiltinSig> {
        self.sigs.iter().find(|s| s.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &BuiltinSig> {
        self.sigs.iter()
    }
}

/// Syntax error with the byte offset of the offending token and the token
/// classes that would have been accepted there.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("at offset {offset}: expected {}, found {found}", expected.join(" or "))]
pub struct SyntaxError {
    pub offset: usize,
    pub expected: Vec<String>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    True,
    False,
    OrOr,
    AndAnd,
    EqEq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Bang,
    LParen,
    RParen,
    Comma,
    Assign,
    Semi,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(name) => format!("identifier '{name}'"),
            Tok::Int(i) => format!("integer {i}"),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::True => "'true'".into(),
            Tok::False => "'false'".into(),
            other => format!("'{}'", other.symbol()),
        }
    }

    fn symbol(&self) -> &'static str {
        match self {
            Tok::OrOr => "||",
            Tok::AndAnd => "&&",
            Tok::EqEq => "==",
            Tok::Ne => "!=",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Bang => "!",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::Comma => ",",
            Tok::Assign => "=",
            Tok::Semi => ";",
            _ => "",
        }
    }
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, SyntaxError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'0'..=b'9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let digits = &src[start..i];
                let value: i64 = digits.parse().map_err(|_| SyntaxError {
                    offset: start,
                    expected: vec!["an integer within i64 range".into()],
                    found: format!("'{digits}'"),
                })?;
                toks.push((start, Tok::Int(value)));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                let word = &src[start..i];
                let tok = match word {
                    "true" => Tok::True,
                    "false" => Tok::False,
                    _ => Tok::Ident(word.to_string()),
                };
                toks.push((start, tok));
            }
            b'\'' => {
                let start = i;
                i += 1;
                let text_start = i;
                while i < bytes.len() && bytes[i] != b'\'' {
                    i += 1;
                }
                if i >= bytes.len() {
                    return Err(SyntaxError {
                        offset: start,
                        expected: vec!["a closing '".into()],
                        found: "end of input".into(),
                    });
                }
                toks.push((start, Tok::Str(src[text_start..i].to_string())));
                i += 1;
            }
            b'|' if bytes.get(i + 1) == Some(&b'|') => {
                toks.push((i, Tok::OrOr));
                i += 2;
            }
            b'&' if bytes.get(i + 1) == Some(&b'&') => {
                toks.push((i, Tok::AndAnd));
                i += 2;
            }
            b'=' if bytes.get(i + 1) == Some(&b'=') => {
                toks.push((i, Tok::EqEq));
                i += 2;
            }
            b'!' if bytes.get(i + 1) == Some(&b'=') => {
                toks.push((i, Tok::Ne));
                i += 2;
            }
            b'<' if bytes.get(i + 1) == Some(&b'=') => {
                toks.push((i, Tok::Le));
                i += 2;
            }
            b'>' if bytes.get(i + 1) == Some(&b'=') => {
                toks.push((i, Tok::Ge));
                i += 2;
            }
            b'<' => {
                toks.push((i, Tok::Lt));
                i += 1;
            }
            b'>' => {
                toks.push((i, Tok::Gt));
                i += 1;
            }
            b'+' => {
                toks.push((i, Tok::Plus));
                i += 1;
            }
            b'-' => {
                toks.push((i, Tok::Minus));
                i += 1;
            }
            b'!' => {
                toks.push((i, Tok::Bang));
                i += 1;
            }
            b'(' => {
                toks.push((i, Tok::LParen));
                i += 1;
            }
            b')' => {
                toks.push((i, Tok::RParen));
                i += 1;
            }
            b',' => {
                toks.push((i, Tok::Comma));
                i += 1;
            }
            b'=' => {
                toks.push((i, Tok::Assign));
                i += 1;
            }
            b';' => {
                toks.push((i, Tok::Semi));
                i += 1;
            }
            _ => {
                return Err(SyntaxError {
                    offset: i,
                    expected: vec!["a token".into()],
                    found: format!("'{}'", &src[i..].chars().next().unwrap()),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn new(src: &str) -> Result<Self, SyntaxError> {
        Ok(Parser {
            toks: lex(src)?,
            pos: 0,
            end: src.len(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn advance(&mut self) -> Option<Tok> {
        let tok = self.toks.get(self.pos).map(|(_, t)| t.clone());
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn found(&self) -> String {
        match self.peek() {
            Some(tok) => tok.describe(),
            None => "end of input".into(),
        }
    }

    fn error(&self, expected: &[&str]) -> SyntaxError {
        SyntaxError {
            offset: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.found(),
        }
    }

    fn expect(&mut self, want: Tok, describe: &str) -> Result<(), SyntaxError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&[describe]))
        }
    }

    fn expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::OrOr) {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = Expr::Binary {
                op: BinOp::Or,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.cmp()?;
        while self.peek() == Some(&Tok::AndAnd) {
            self.pos += 1;
            let rhs = self.cmp()?;
            lhs = Expr::Binary {
                op: BinOp::And,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn cmp(&mut self) -> Result<Expr, SyntaxError> {
        let lhs = self.add()?;
        let op = match self.peek() {
            Some(Tok::EqEq) => BinOp::Eq,
            Some(Tok::Ne) => BinOp::Ne,
            Some(Tok::Lt) => BinOp::Lt,
            Some(Tok::Le) => BinOp::Le,
            Some(Tok::Gt) => BinOp::Gt,
            Some(Tok::Ge) => BinOp::Ge,
            _ => return Ok(lhs),
        };
        self.pos += 1;
        let rhs = self.add()?;
        Ok(Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        })
    }

    fn add(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn unary(&mut self) -> Result<Expr, SyntaxError> {
        match self.peek() {
            Some(Tok::Bang) => {
                self.pos += 1;
                Ok(Expr::Unary {
                    op: UnaryOp::Not,
                    expr: Box::new(self.unary()?),
                })
            }
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(Expr::Unary {
                    op: UnaryOp::Neg,
                    expr: Box::new(self.unary()?),
                })
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<Expr, SyntaxError> {
        match self.peek().cloned() {
            Some(Tok::Int(i)) => {
                self.pos += 1;
                Ok(Expr::Int(i))
            }
            Some(Tok::True) => {
                self.pos += 1;
                Ok(Expr::Bool(true))
            }
            Some(Tok::False) => {
                self.pos += 1;
                Ok(Expr::Bool(false))
            }
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(Expr::Str(s))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    let args = self.args()?;
                    Ok(Expr::Call { name, args })
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            _ => Err(self.error(&[
                "an integer",
                "'true'",
                "'false'",
                "a string",
                "an identifier",
                "'('",
            ])),
        }
    }

    /// Parses a comma-separated argument list ending in `)`. The opening
    /// paren has already been consumed.
    fn args(&mut self) -> Result<Vec<Expr>, SyntaxError> {
        let mut args = Vec::new();
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            match self.advance() {
                Some(Tok::Comma) => continue,
                Some(Tok::RParen) => return Ok(args),
                _ => {
                    self.pos = self.pos.saturating_sub(1);
                    return Err(self.error(&["','", "')'"]));
                }
            }
        }
    }

    fn action(&mut self) -> Result<ActionStmt, SyntaxError> {
        let name = match self.advance() {
            Some(Tok::Ident(name)) => name,
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return Err(self.error(&["an identifier"]));
            }
        };
        let stmt = match self.peek() {
            Some(Tok::Assign) => {
                self.pos += 1;
                let value = self.expr()?;
                ActionStmt::Assign { name, value }
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let args = self.args()?;
                ActionStmt::Call { name, args }
            }
            _ => return Err(self.error(&["'='", "'('"])),
        };
        self.expect(Tok::Semi, "';'")?;
        Ok(stmt)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }
}

/// Parses a single expression; trailing input is an error.
pub fn parse_expr(src: &str) -> Result<Expr, SyntaxError> {
    let mut p = Parser::new(src)?;
    let expr = p.expr()?;
    if !p.at_end() {
        return Err(p.error(&["end of input"]));
    }
    Ok(expr)
}

/// Parses a possibly empty sequence of `;`-terminated action statements.
pub fn parse_actions(src: &str) -> Result<Vec<ActionStmt>, SyntaxError> {
    let mut p = Parser::new(src)?;
    let mut stmts = Vec::new();
    while !p.at_end() {
        stmts.push(p.action()?);
    }
    Ok(stmts)
}

/// Static type error. `subject` is the rendered offending subexpression.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TypeError {
    #[error("unknown variable '{name}'")]
    UnknownVariable { name: String },
    #[error("unknown function '{name}'")]
    UnknownFunction { name: String },
    #[error("{name} takes {expected} argument(s), got {found}")]
    WrongArgCount {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("in `{subject}`: expected {expected}, found {found}")]
    Mismatch {
        subject: String,
        expected: String,
        found: ValueType,
    },
    #[error("in `{subject}`: operands of {op} must both be int or both be string")]
    BadComparison { subject: String, op: &'static str },
    #[error("'{name}' mutates its argument and cannot appear in an expression")]
    MutatingInExpression { name: String },
    #[error("statement call to '{name}' has no effect")]
    PureStatement { name: String },
    #[error("first argument of '{name}' must be a list variable")]
    MutableArgRequired { name: String },
}

/// Checks an expression against variable declarations; returns its type.
pub fn type_check(
    expr: &Expr,
    decls: &BTreeMap<String, ValueType>,
    reg: &BuiltinRegistry,
) -> Result<ValueType, TypeError> {
    match expr {
        Expr::Bool(_) => Ok(ValueType::Bool),
        Expr::Int(_) => Ok(ValueType::Int),
        Expr::Str(_) => Ok(ValueType::Str),
        Expr::Var(name) => decls
            .get(name)
            .copied()
            .ok_or_else(|| TypeError::UnknownVariable { name: name.clone() }),
        Expr::Unary { op, expr: inner } => {
            let found = type_check(inner, decls, reg)?;
            let expected = match op {
                UnaryOp::Not => ValueType::Bool,
                UnaryOp::Neg => ValueType::Int,
            };
            if found == expected {
                Ok(expected)
            } else {
                Err(TypeError::Mismatch {
                    subject: expr.to_string(),
                    expected: expected.to_string(),
                    found,
                })
            }
        }
        Expr::Binary { op, lhs, rhs } => {
            let lt = type_check(lhs, decls, reg)?;
            let rt = type_check(rhs, decls, reg)?;
            match op {
                BinOp::And | BinOp::Or => {
                    for (side, ty) in [(lhs, lt), (rhs, rt)] {
                        if ty != ValueType::Bool {
                            return Err(TypeError::Mismatch {
                                subject: side.to_string(),
                                expected: ValueType::Bool.to_string(),
                                found: ty,
                            });
                        }
                    }
                    Ok(ValueType::Bool)
                }
                BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
                    let comparable = matches!(lt, ValueType::Int | ValueType::Str);
                    if comparable && lt == rt {
                        Ok(ValueType::Bool)
                    } else {
                        Err(TypeError::BadComparison {
                            subject: expr.to_string(),
                            op: op.symbol(),
                        })
                    }
                }
                BinOp::Add => match (lt, rt) {
                    (ValueType::Int, ValueType::Int) => Ok(ValueType::Int),
                    (ValueType::Str, ValueType::Str) => Ok(ValueType::Str),
                    _ => Err(TypeError::Mismatch {
                        subject: expr.to_string(),
                        expected: "int + int or string + string".into(),
                        found: if lt == ValueType::Int || lt == ValueType::Str {
                            rt
                        } else {
                            lt
                        },
                    }),
                },
                BinOp::Sub => match (lt, rt) {
                    (ValueType::Int, ValueType::Int) => Ok(ValueType::Int),
                    _ => Err(TypeError::Mismatch {
                        subject: expr.to_string(),
                        expected: "int - int".into(),
                        found: if lt == ValueType::Int { rt } else { lt },
                    }),
                },
            }
        }
        Expr::Call { name, args } => {
            let sig = reg
                .lookup(name)
                .ok_or_else(|| TypeError::UnknownFunction { name: name.clone() })?;
            if sig.mutates {
                return Err(TypeError::MutatingInExpression { name: name.clone() });
            }
            check_call_args(name, sig, args, decls, reg)?;
            Ok(sig.result.expect("non-mutating builtins have a result"))
        }
    }
}

fn check_call_args(
    name: &str,
    sig: &BuiltinSig,
    args: &[Expr],
    decls: &BTreeMap<String, ValueType>,
    reg: &BuiltinRegistry,
) -> Result<(), TypeError> {
    if args.len() != sig.params.len() {
        return Err(TypeError::WrongArgCount {
            name: name.to_string(),
            expected: sig.params.len(),
            found: args.len(),
        });
    }
    for (arg, &expected) in args.iter().zip(sig.params) {
        let found = type_check(arg, decls, reg)?;
        if found != expected {
            return Err(TypeError::Mismatch {
                subject: arg.to_string(),
                expected: expected.to_string(),
                found,
            });
        }
    }
    Ok(())
}

/// Checks a sequence of action statements.
pub fn type_check_actions(
    stmts: &[ActionStmt],
    decls: &BTreeMap<String, ValueType>,
    reg: &BuiltinRegistry,
) -> Result<(), TypeError> {
    for stmt in stmts {
        match stmt {
            ActionStmt::Assign { name, value } => {
                let declared =
                    decls
                        .get(name)
                        .copied()
                        .ok_or_else(|| TypeError::UnknownVariable {
                            name: name.clone(),
                        })?;
                let found = type_check(value, decls, reg)?;
                if found != declared {
                    return Err(TypeError::Mismatch {
                        subject: format!("{name} = {value}"),
                        expected: declared.to_string(),
                        found,
                    });
                }
            }
            ActionStmt::Call { name, args } => {
                let sig = reg
                    .lookup(name)
                    .ok_or_else(|| TypeError::UnknownFunction { name: name.clone() })?;
                if !sig.mutates {
                    return Err(TypeError::PureStatement { name: name.clone() });
                }
                if !matches!(args.first(), Some(Expr::Var(_))) {
                    return Err(TypeError::MutableArgRequired { name: name.clone() });
                }
                check_call_args(name, sig, args, decls, reg)?;
            }
        }
    }
    Ok(())
}

/// Runtime evaluation error.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable '{name}'")]
    UnboundVariable { name: String },
    #[error("in `{expr}`: expected {expected}, found {found}")]
    TypeMismatch {
        expr: String,
        expected: &'static str,
        found: ValueType,
    },
    #[error("last() on empty list in `{expr}`")]
    EmptyList { expr: String },
    #[error("unknown function '{name}'")]
    UnknownFunction { name: String },
    #[error("'{name}' mutates its argument and cannot appear in an expression")]
    MutatingInExpression { name: String },
    #[error("{name} takes {expected} argument(s), got {found}")]
    WrongArgCount {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("first argument of '{name}' must be a list variable")]
    MutableArgRequired { name: String },
}

fn expect_bool(expr: &Expr, v: Value) -> Result<bool, EvalError> {
    match v {
        Value::Bool(b) => Ok(b),
        other => Err(EvalError::TypeMismatch {
            expr: expr.to_string(),
            expected: "bool",
            found: other.value_type(),
        }),
    }
}

fn expect_int(expr: &Expr, v: Value) -> Result<i64, EvalError> {
    match v {
        Value::Int(i) => Ok(i),
        other => Err(EvalError::TypeMismatch {
            expr: expr.to_string(),
            expected: "int",
            found: other.value_type(),
        }),
    }
}

/// Evaluates an expression. `&&` and `||` short-circuit; everything else is
/// strict. Never mutates the context.
pub fn eval_expr(expr: &Expr, ctx: &Context, reg: &BuiltinRegistry) -> Result<Value, EvalError> {
    match expr {
        Expr::Bool(b) => Ok(Value::Bool(*b)),
        Expr::Int(i) => Ok(Value::Int(*i)),
        Expr::Str(s) => Ok(Value::Str(s.clone())),
        Expr::Var(name) => ctx
            .get(name)
            .cloned()
            .ok_or_else(|| EvalError::UnboundVariable { name: name.clone() }),
        Expr::Unary { op, expr: inner } => {
            let v = eval_expr(inner, ctx, reg)?;
            match op {
                UnaryOp::Not => Ok(Value::Bool(!expect_bool(inner, v)?)),
                UnaryOp::Neg => Ok(Value::Int(-expect_int(inner, v)?)),
            }
        }
        Expr::Binary { op, lhs, rhs } => match op {
            BinOp::And => {
                if !expect_bool(lhs, eval_expr(lhs, ctx, reg)?)? {
                    return Ok(Value::Bool(false));
                }
                Ok(Value::Bool(expect_bool(rhs, eval_expr(rhs, ctx, reg)?)?))
            }
            BinOp::Or => {
                if expect_bool(lhs, eval_expr(lhs, ctx, reg)?)? {
                    return Ok(Value::Bool(true));
                }
                Ok(Value::Bool(expect_bool(rhs, eval_expr(rhs, ctx, reg)?)?))
            }
            _ => {
                let lv = eval_expr(lhs, ctx, reg)?;
                let rv = eval_expr(rhs, ctx, reg)?;
                eval_strict_binary(expr, *op, lv, rv)
            }
        },
        Expr::Call { name, args } => {
            let sig = reg
                .lookup(name)
                .ok_or_else(|| EvalError::UnknownFunction { name: name.clone() })?;
            if sig.mutates {
                return Err(EvalError::MutatingInExpression { name: name.clone() });
            }
            if args.len() != sig.params.len() {
                return Err(EvalError::WrongArgCount {
                    name: name.clone(),
                    expected: sig.params.len(),
                    found: args.len(),
                });
            }
            let mut values = Vec::with_capacity(args.len());
            for arg in args {
                values.push(eval_expr(arg, ctx, reg)?);
            }
            eval_builtin(expr, name, values)
        }
    }
}

fn eval_strict_binary(whole: &Expr, op: BinOp, lv: Value, rv: Value) -> Result<Value, EvalError> {
    use Value::{Int, Str};
    let mismatch = |found: ValueType| EvalError::TypeMismatch {
        expr: whole.to_string(),
        expected: "matching int or string operands",
        found,
    };
    match op {
        BinOp::Add => match (lv, rv) {
            (Int(a), Int(b)) => Ok(Int(a.wrapping_add(b))),
            (Str(a), Str(b)) => Ok(Str(a + &b)),
            (a, _) => Err(mismatch(a.value_type())),
        },
        BinOp::Sub => match (lv, rv) {
            (Int(a), Int(b)) => Ok(Int(a.wrapping_sub(b))),
            (a, _) => Err(mismatch(a.value_type())),
        },
        BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => {
            let ordering = match (&lv, &rv) {
                (Int(a), Int(b)) => a.cmp(b),
                (Str(a), Str(b)) => a.cmp(b),
                _ => return Err(mismatch(lv.value_type())),
            };
            let result = match op {
                BinOp::Eq => ordering.is_eq(),
                BinOp::Ne => ordering.is_ne(),
                BinOp::Lt => ordering.is_lt(),
                BinOp::Le => ordering.is_le(),
                BinOp::Gt => ordering.is_gt(),
                BinOp::Ge => ordering.is_ge(),
                _ => unreachable!(),
            };
            Ok(Value::Bool(result))
        }
        BinOp::And | BinOp::Or => unreachable!("short-circuit ops handled above"),
    }
}

fn eval_builtin(whole: &Expr, name: &str, mut values: Vec<Value>) -> Result<Value, EvalError> {
    let list_arg = |v: &Value| match v {
        Value::List(items) => Ok(items.clone()),
        other => Err(EvalError::TypeMismatch {
            expr: whole.to_string(),
            expected: "list",
            found: other.value_type(),
        }),
    };
    match name {
        "contains" => {
            let needle = match values.pop() {
                Some(Value::Str(s)) => s,
                Some(other) => {
                    return Err(EvalError::TypeMismatch {
                        expr: whole.to_string(),
                        expected: "string",
                        found: other.value_type(),
                    })
                }
                None => unreachable!("arity checked"),
            };
            let items = list_arg(&values[0])?;
            Ok(Value::Bool(items.contains(&needle)))
        }
        "len" => {
            let items = list_arg(&values[0])?;
            Ok(Value::Int(items.len() as i64))
        }
        "last" => {
            let items = list_arg(&values[0])?;
            items
                .last()
                .map(|s| Value::Str(s.clone()))
                .ok_or_else(|| EvalError::EmptyList {
                    expr: whole.to_string(),
                })
        }
        _ => Err(EvalError::UnknownFunction {
            name: name.to_string(),
        }),
    }
}

/// Error from running action statements; `index` is the first failing
/// statement's position in the sequence.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("action {index}: {source}")]
pub struct ActionError {
    pub index: usize,
    pub source: EvalError,
}

/// Runs action statements left to right; each statement sees the effects of
/// the previous ones. Returns the updated context, leaving the input alone.
pub fn exec_actions(
    stmts: &[ActionStmt],
    ctx: &Context,
    reg: &BuiltinRegistry,
) -> Result<Context, ActionError> {
    let mut current = ctx.clone();
    for (index, stmt) in stmts.iter().enumerate() {
        exec_one(stmt, &mut current, reg).map_err(|source| ActionError { index, source })?;
    }
    Ok(current)
}

fn exec_one(stmt: &ActionStmt, ctx: &mut Context, reg: &BuiltinRegistry) -> Result<(), EvalError> {
    match stmt {
        ActionStmt::Assign { name, value } => {
            if ctx.get(name).is_none() {
                return Err(EvalError::UnboundVariable { name: name.clone() });
            }
            let v = eval_expr(value, ctx, reg)?;
            ctx.set(name.clone(), v);
            Ok(())
        }
        ActionStmt::Call { name, args } => {
            let sig = reg
                .lookup(name)
                .ok_or_else(|| EvalError::UnknownFunction { name: name.clone() })?;
            if !sig.mutates {
                return Err(EvalError::MutatingInExpression { name: name.clone() });
            }
            if args.len() != sig.params.len() {
                return Err(EvalError::WrongArgCount {
                    name: name.clone(),
                    expected: sig.params.len(),
                    found: args.len(),
                });
            }
            // Only `push` mutates today: append a string to a list variable.
            let Some(Expr::Var(target)) = args.first() else {
                return Err(EvalError::MutableArgRequired { name: name.clone() });
            };
            let item = match eval_expr(&args[1], ctx, reg)? {
                Value::Str(s) => s,
                other => {
                    return Err(EvalError::TypeMismatch {
                        expr: args[1].to_string(),
                        expected: "string",
                        found: other.value_type(),
                    })
                }
            };
            match ctx.get(target) {
                Some(Value::List(items)) => {
                    let mut items = items.clone();
                    items.push(item);
                    ctx.set(target.clone(), Value::List(items));
                    Ok(())
                }
                Some(other) => Err(EvalError::TypeMismatch {
                    expr: target.clone(),
                    expected: "list",
                    found: other.value_type(),
                }),
                None => Err(EvalError::UnboundVariable {
                    name: target.clone(),
                }),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(name: &str) -> Expr {
        Expr::Var(name.into())
    }

    fn ctx(pairs: &[(&str, Value)]) -> Context {
        pairs
            .iter()
            .map(|(n, v)| (n.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn parses_precedence() {
        let e = parse_expr("a && b || !c").unwrap();
        assert_eq!(
            e,
            Expr::Binary {
                op: BinOp::Or,
                lhs: Box::new(Expr::Binary {
                    op: BinOp::And,
                    lhs: Box::new(var("a")),
                    rhs: Box::new(var("b")),
                }),
                rhs: Box::new(Expr::Unary {
                    op: UnaryOp::Not,
                    expr: Box::new(var("c")),
                }),
            }
        );
    }

    #[test]
    fn parses_comparison_over_add() {
        let e = parse_expr("count + 1 <= max").unwrap();
        assert_eq!(
            e,
            Expr::Binary {
                op: BinOp::Le,
                lhs: Box::new(Expr::Binary {
                    op: BinOp::Add,
                    lhs: Box::new(var("count")),
                    rhs: Box::new(Expr::Int(1)),
                }),
                rhs: Box::new(var("max")),
            }
        );
    }

    #[test]
    fn dangling_comparison_reports_offset() {
        let err = parse_expr("x ==").unwrap_err();
        assert_eq!(err.offset, 4);
        assert_eq!(err.found, "end of input");
    }

    #[test]
    fn comparisons_do_not_chain() {
        assert!(parse_expr("a < b < c").is_err());
    }

    #[test]
    fn parses_subtraction() {
        let e = parse_expr("x - 1").unwrap();
        assert_eq!(
            e,
            Expr::Binary {
                op: BinOp::Sub,
                lhs: Box::new(var("x")),
                rhs: Box::new(Expr::Int(1)),
            }
        );
    }

    #[test]
    fn rejects_unterminated_string() {
        let err = parse_expr("'abc").unwrap_err();
        assert_eq!(err.offset, 0);
    }

    #[test]
    fn parses_action_sequence() {
        let stmts = parse_actions("x = x - 1; push(scenes, 'Home');").unwrap();
        assert_eq!(stmts.len(), 2);
        assert!(matches!(&stmts[0], ActionStmt::Assign { name, .. } if name == "x"));
        assert!(matches!(&stmts[1], ActionStmt::Call { name, .. } if name == "push"));
        assert_eq!(parse_actions("").unwrap(), vec![]);
    }

    #[test]
    fn action_requires_semicolon() {
        assert!(parse_actions("x = 1").is_err());
    }

    #[test]
    fn type_checks_builtin_guard() {
        let decls: BTreeMap<String, ValueType> =
            [("scenes".to_string(), ValueType::List)].into_iter().collect();
        let e = parse_expr("len(scenes) > 2").unwrap();
        let ty = type_check(&e, &decls, BuiltinRegistry::standard()).unwrap();
        assert_eq!(ty, ValueType::Bool);
    }

    #[test]
    fn type_error_names_subexpression() {
        let decls = BTreeMap::new();
        let e = parse_expr("'a' + 1").unwrap();
        let err = type_check(&e, &decls, BuiltinRegistry::standard()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("'a' + 1"), "got: {msg}");
    }

    #[test]
    fn arity_error() {
        let decls: BTreeMap<String, ValueType> =
            [("scenes".to_string(), ValueType::List)].into_iter().collect();
        let e = parse_expr("contains(scenes)").unwrap();
        let err = type_check(&e, &decls, BuiltinRegistry::standard()).unwrap_err();
        assert_eq!(
            err,
            TypeError::WrongArgCount {
                name: "contains".into(),
                expected: 2,
                found: 1,
            }
        );
    }

    #[test]
    fn push_rejected_in_expression() {
        let decls: BTreeMap<String, ValueType> =
            [("scenes".to_string(), ValueType::List)].into_iter().collect();
        let e = parse_expr("len(scenes) > 0 && push(scenes, 'x')").unwrap();
        let err = type_check(&e, &decls, BuiltinRegistry::standard()).unwrap_err();
        assert!(matches!(err, TypeError::MutatingInExpression { .. }));
    }

    #[test]
    fn bool_comparison_rejected() {
        let decls: BTreeMap<String, ValueType> =
            [("a".to_string(), ValueType::Bool), ("b".to_string(), ValueType::Bool)]
                .into_iter()
                .collect();
        let e = parse_expr("a == b").unwrap();
        assert!(matches!(
            type_check(&e, &decls, BuiltinRegistry::standard()),
            Err(TypeError::BadComparison { .. })
        ));
    }

    #[test]
    fn evaluates_arithmetic_comparison() {
        let e = parse_expr("1 + 2 == 3").unwrap();
        let v = eval_expr(&e, &Context::new(), BuiltinRegistry::standard()).unwrap();
        assert_eq!(v, Value::Bool(true));
    }

    #[test]
    fn evaluates_contains() {
        let e = parse_expr("contains(scenes, 'Home')").unwrap();
        let c = ctx(&[("scenes", Value::List(vec!["Home".into()]))]);
        let v = eval_expr(&e, &c, BuiltinRegistry::standard()).unwrap();
        assert_eq!(v, Value::Bool(true));
    }

    #[test]
    fn last_on_empty_list_errors() {
        let e = parse_expr("last(scenes)").unwrap();
        let c = ctx(&[("scenes", Value::List(vec![]))]);
        let err = eval_expr(&e, &c, BuiltinRegistry::standard()).unwrap_err();
        assert!(matches!(err, EvalError::EmptyList { .. }));
    }

    #[test]
    fn and_short_circuits_past_errors() {
        let e = parse_expr("false && last(emptyList) == 'x'").unwrap();
        let c = ctx(&[("emptyList", Value::List(vec![]))]);
        let v = eval_expr(&e, &c, BuiltinRegistry::standard()).unwrap();
        assert_eq!(v, Value::Bool(false));

        let e = parse_expr("true || last(emptyList) == 'x'").unwrap();
        let v = eval_expr(&e, &c, BuiltinRegistry::standard()).unwrap();
        assert_eq!(v, Value::Bool(true));
    }

    #[test]
    fn string_concat_and_compare() {
        let e = parse_expr("'foo' + 'bar' == 'foobar'").unwrap();
        let v = eval_expr(&e, &Context::new(), BuiltinRegistry::standard()).unwrap();
        assert_eq!(v, Value::Bool(true));

        let e = parse_expr("'abc' < 'abd'").unwrap();
        let v = eval_expr(&e, &Context::new(), BuiltinRegistry::standard()).unwrap();
        assert_eq!(v, Value::Bool(true));
    }

    #[test]
    fn actions_apply_in_sequence() {
        let stmts = parse_actions("x = x + 1; x = x + 1;").unwrap();
        let c = ctx(&[("x", Value::Int(0))]);
        let out = exec_actions(&stmts, &c, BuiltinRegistry::standard()).unwrap();
        assert_eq!(out.get("x"), Some(&Value::Int(2)));
        assert_eq!(c.get("x"), Some(&Value::Int(0)));
    }

    #[test]
    fn push_appends_to_list() {
        let stmts = parse_actions("push(scenes, 'Home');").unwrap();
        let c = ctx(&[("scenes", Value::List(vec![]))]);
        let out = exec_actions(&stmts, &c, BuiltinRegistry::standard()).unwrap();
        assert_eq!(out.get("scenes"), Some(&Value::List(vec!["Home".into()])));
    }

    #[test]
    fn action_error_carries_statement_index() {
        let stmts = parse_actions("x = 1; y = last(scenes);").unwrap();
        let c = ctx(&[("x", Value::Int(0)), ("y", Value::Str(String::new())), (
            "scenes",
            Value::List(vec![]),
        )]);
        let err = exec_actions(&stmts, &c, BuiltinRegistry::standard()).unwrap_err();
        assert_eq!(err.index, 1);
        assert!(matches!(err.source, EvalError::EmptyList { .. }));
    }

    #[test]
    fn assignment_to_undeclared_variable_fails() {
        let stmts = parse_actions("nope = 1;").unwrap();
        let err = exec_actions(&stmts, &Context::new(), BuiltinRegistry::standard()).unwrap_err();
        assert_eq!(err.index, 0);
        assert!(matches!(err.source, EvalError::UnboundVariable { .. }));
    }

    #[test]
    fn action_type_check_flags_pure_statement() {
        let decls: BTreeMap<String, ValueType> =
            [("scenes".to_string(), ValueType::List)].into_iter().collect();
        let stmts = parse_actions("len(scenes);").unwrap();
        let err = type_check_actions(&stmts, &decls, BuiltinRegistry::standard()).unwrap_err();
        assert!(matches!(err, TypeError::PureStatement { .. }));
    }

    #[test]
    fn action_type_check_requires_list_variable_for_push() {
        let decls: BTreeMap<String, ValueType> =
            [("scenes".to_string(), ValueType::List)].into_iter().collect();
        let stmts = parse_actions("push(len(scenes) + 0, 'x');");
        // `push(len(scenes) + 0, ...)` parses; the checker rejects it.
        let err =
            type_check_actions(&stmts.unwrap(), &decls, BuiltinRegistry::standard()).unwrap_err();
        assert!(matches!(err, TypeError::MutableArgRequired { .. }));
    }

    fn arb_expr() -> impl proptest::strategy::Strategy<Value = Expr> {
        use proptest::prelude::*;
        let leaf = prop_oneof![
            any::<bool>().prop_map(Expr::Bool),
            (0i64..1000).prop_map(Expr::Int),
            "[a-z ]{0,6}".prop_map(Expr::Str),
            "[a-z][a-z0-9_]{0,5}".prop_map(Expr::Var),
        ];
        leaf.prop_recursive(4, 32, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), any::<u8>()).prop_map(|(lhs, rhs, pick)| {
                    let op = match pick % 10 {
                        0 => BinOp::Or,
                        1 => BinOp::And,
                        2 => BinOp::Eq,
                        3 => BinOp::Ne,
                        4 => BinOp::Lt,
                        5 => BinOp::Le,
                        6 => BinOp::Gt,
                        7 => BinOp::Ge,
                        8 => BinOp::Add,
                        _ => BinOp::Sub,
                    };
                    Expr::Binary {
                        op,
                        lhs: Box::new(lhs),
                        rhs: Box::new(rhs),
                    }
                }),
                (inner.clone(), any::<bool>()).prop_map(|(e, not)| Expr::Unary {
                    op: if not { UnaryOp::Not } else { UnaryOp::Neg },
                    expr: Box::new(e),
                }),
                proptest::collection::vec(inner, 0..3).prop_map(|args| Expr::Call {
                    name: "contains".into(),
                    args,
                }),
            ]
        })
    }

    proptest::proptest! {
        // Comparisons never chain, so a comparison directly under another
        // comparison must be parenthesized by the printer and survive the
        // round trip.
        #[test]
        fn printer_round_trips(expr in arb_expr()) {
            let printed = expr.to_string();
            let reparsed = parse_expr(&printed).expect("printed form parses");
            proptest::prop_assert_eq!(&expr, &reparsed, "printed: {}", printed);
        }

        #[test]
        fn eval_never_mutates_context(x in 0i64..100, y in 0i64..100) {
            let c = ctx(&[("x", Value::Int(x)), ("y", Value::Int(y))]);
            let before = c.clone();
            let e = parse_expr("x + y == y + x").unwrap();
            let _ = eval_expr(&e, &c, BuiltinRegistry::standard());
            proptest::prop_assert_eq!(before, c);
        }
    }

    #[test]
    fn pretty_print_round_trips_examples() {
        for src in [
            "a && b || !c",
            "count + 1 <= max",
            "x - 1 + 2",
            "!(a || b)",
            "contains(scenes, 'Home') && len(scenes) > 2",
            "-x + 1",
            "(a && b) && c",
            "'it''s' == 'x'",
        ] {
            let parsed = match parse_expr(src) {
                Ok(p) => p,
                Err(_) => continue,
            };
            let printed = parsed.to_string();
            let reparsed = parse_expr(&printed).unwrap();
            assert_eq!(parsed, reparsed, "source: {src} printed: {printed}");
        }
    }
}
