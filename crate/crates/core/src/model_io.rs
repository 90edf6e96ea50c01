//! Model loading, flattening, validation and label extraction.
//!
//! Two front ends produce the same in-memory form: a GraphML subset (as
//! exported from graph editors; only node/edge elements and their first
//! text label are read) and a compact textual DSL. Hierarchical bundles
//! are resolved by flattening submodel references into one plain model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::efsm::{EfsmModel, Label, State, Transition, Value, ValueType, VarDecl};
use crate::expr;

/// A set of named models plus the designated entry model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub models: BTreeMap<String, EfsmModel>,
    pub main_model: String,
}

impl ModelBundle {
    /// Wraps a single model as a bundle with itself as the main model.
    pub fn single(model: EfsmModel) -> Self {
        let name = model.name.clone();
        ModelBundle {
            models: [(name.clone(), model)].into_iter().collect(),
            main_model: name,
        }
    }

    pub fn main(&self) -> Option<&EfsmModel> {
        self.models.get(&self.main_model)
    }

    pub fn flatten(&self) -> Result<EfsmModel, FlattenError> {
        flatten(self)
    }
}

// ---------------------------------------------------------------------------
// GraphML front end
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum GraphmlError {
    #[error("not well-formed XML: {0}")]
    Xml(#[from] roxmltree::Error),
    #[error("no <graph> element found")]
    MissingGraph,
    #[error("element '{id}': {message}")]
    Element { id: String, message: String },
    #[error("label {label:?}: {message}")]
    LabelGrammar { label: String, message: String },
}

fn element_err(id: &str, message: impl Into<String>) -> GraphmlError {
    GraphmlError::Element {
        id: id.to_string(),
        message: message.into(),
    }
}

fn label_err(label: &str, message: impl Into<String>) -> GraphmlError {
    GraphmlError::LabelGrammar {
        label: label.to_string(),
        message: message.into(),
    }
}

/// First non-whitespace text content under a node, if any.
fn first_text(node: roxmltree::Node) -> Option<String> {
    node.descendants()
        .filter(|n| n.is_text())
        .filter_map(|n| n.text())
        .map(str::trim)
        .find(|t| !t.is_empty())
        .map(str::to_string)
}

/// Parses one model from a GraphML document.
///
/// Node labels: first line `v_Name`, then optional marker lines `START`,
/// `EXIT`, `SUBMODEL <name>`. Edge labels: `e_Name` optionally followed by
/// `[guard]` and `/ action; action;`. A graph-level `<data>` element may
/// declare variables using `var name: type = initial;` statements.
pub fn parse_graphml(src: &str) -> Result<EfsmModel, GraphmlError> {
    let doc = roxmltree::Document::parse(src)?;
    let graph = doc
        .descendants()
        .find(|n| n.has_tag_name("graph"))
        .ok_or(GraphmlError::MissingGraph)?;
    let name = graph.attribute("id").unwrap_or("model").to_string();

    let mut variables = Vec::new();
    for data in graph
        .children()
        .filter(|n| n.has_tag_name("data"))
    {
        if let Some(text) = first_text(data) {
            let decls = parse_var_block(&text)
                .map_err(|e| element_err(data.attribute("key").unwrap_or("data"), e.to_string()))?;
            variables.extend(decls);
        }
    }

    let mut states = Vec::new();
    let mut id_to_label: BTreeMap<String, Label> = BTreeMap::new();
    for node in graph.descendants().filter(|n| n.has_tag_name("node")) {
        let id = node
            .attribute("id")
            .ok_or_else(|| element_err("node", "missing id attribute"))?;
        // Unlabeled nodes are editor scaffolding, not states.
        let Some(text) = first_text(node) else {
            continue;
        };
        let state = parse_node_label(&text)?;
        id_to_label.insert(id.to_string(), state.label.clone());
        states.push(state);
    }

    let mut transitions = Vec::new();
    for edge in graph.descendants().filter(|n| n.has_tag_name("edge")) {
        let id = edge.attribute("id").unwrap_or("edge");
        let endpoint = |attr: &str| -> Result<Label, GraphmlError> {
            let node_id = edge
                .attribute(attr)
                .ok_or_else(|| element_err(id, format!("missing {attr} attribute")))?;
            id_to_label
                .get(node_id)
                .cloned()
                .ok_or_else(|| element_err(id, format!("{attr} names unknown node '{node_id}'")))
        };
        let source = endpoint("source")?;
        let target = endpoint("target")?;
        let text = first_text(edge).ok_or_else(|| element_err(id, "edge has no label"))?;
        let text = text.replace(['\n', '\r'], " ");
        let (label, guard, actions) = parse_edge_label(&text)?;
        transitions.push(Transition {
            label,
            source,
            target,
            guard,
            actions,
        });
    }

    Ok(EfsmModel {
        name,
        variables,
        states,
        transitions,
    })
}

fn parse_node_label(text: &str) -> Result<State, GraphmlError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let first = lines.next().ok_or_else(|| label_err(text, "empty label"))?;
    let label =
        Label::state(first).map_err(|e| label_err(text, format!("bad state name: {e}")))?;
    let mut state = State::plain(label);
    for line in lines {
        if line == "START" {
            state.is_start = true;
        } else if line == "EXIT" {
            state.is_exit = true;
        } else if let Some(rest) = line.strip_prefix("SUBMODEL") {
            let name = rest.trim();
            if name.is_empty() {
                return Err(label_err(text, "SUBMODEL marker without a model name"));
            }
            state.submodel = Some(name.to_string());
        } else {
            return Err(label_err(
                text,
                format!("unknown marker line {line:?} (expected START, EXIT or SUBMODEL <name>)"),
            ));
        }
    }
    Ok(state)
}

type EdgeParts = (Label, Option<expr::Expr>, Vec<expr::ActionStmt>);

fn parse_edge_label(text: &str) -> Result<EdgeParts, GraphmlError> {
    let text_trim = text.trim();
    let name_end = text_trim
        .find(|c: char| c.is_whitespace() || c == '[' || c == '/')
        .unwrap_or(text_trim.len());
    let name = &text_trim[..name_end];
    let label =
        Label::transition(name).map_err(|e| label_err(text, format!("bad edge name: {e}")))?;

    let mut rest = text_trim[name_end..].trim_start();
    let mut guard = None;
    if let Some(stripped) = rest.strip_prefix('[') {
        let close = find_unquoted(stripped, ']')
            .ok_or_else(|| label_err(text, "unterminated [guard] bracket"))?;
        let guard_src = &stripped[..close];
        guard = Some(
            expr::parse_expr(guard_src)
                .map_err(|e| label_err(text, format!("bad guard: {e}")))?,
        );
        rest = stripped[close + 1..].trim_start();
    }
    let mut actions = Vec::new();
    if let Some(stripped) = rest.strip_prefix('/') {
        actions = expr::parse_actions(stripped.trim())
            .map_err(|e| label_err(text, format!("bad actions: {e}")))?;
        rest = "";
    }
    if !rest.is_empty() {
        return Err(label_err(
            text,
            format!("unexpected trailing text {rest:?} (expected [guard] or / actions)"),
        ));
    }
    Ok((label, guard, actions))
}

/// Byte index of `needle` outside single-quoted strings.
fn find_unquoted(s: &str, needle: char) -> Option<usize> {
    let mut in_str = false;
    for (i, c) in s.char_indices() {
        if c == '\'' {
            in_str = !in_str;
        } else if c == needle && !in_str {
            return Some(i);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// DSL front end
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {col}: {message}")]
pub struct DslError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

struct Scanner<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str) -> Self {
        Scanner {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek()?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn err(&self, message: impl Into<String>) -> DslError {
        DslError {
            line: self.line,
            col: self.col,
            message: message.into(),
        }
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(b' ') | Some(b'\t') | Some(b'\r') | Some(b'\n') => {
                    self.bump();
                }
                Some(b'#') => {
                    while let Some(b) = self.peek() {
                        if b == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => return,
            }
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_trivia();
        self.peek().is_none()
    }

    /// Reads an identifier-like word; dots are allowed so qualified state
    /// names can be written directly.
    fn word(&mut self, what: &str) -> Result<String, DslError> {
        self.skip_trivia();
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_alphanumeric() || b == b'_' || b == b'.' {
                self.bump();
            } else {
                break;
            }
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn expect(&mut self, token: &str) -> Result<(), DslError> {
        self.skip_trivia();
        let bytes = token.as_bytes();
        if self.src[self.pos..].starts_with(bytes) {
            for _ in 0..bytes.len() {
                self.bump();
            }
            Ok(())
        } else {
            Err(self.err(format!("expected '{token}'")))
        }
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_trivia();
        if self.src[self.pos..].starts_with(token.as_bytes()) {
            for _ in 0..token.len() {
                self.bump();
            }
            true
        } else {
            false
        }
    }

    /// Reads a quoted string delimited by `quote`, without escapes.
    fn quoted(&mut self, quote: u8) -> Result<(String, usize, usize), DslError> {
        self.skip_trivia();
        let (line, col) = (self.line, self.col);
        if self.peek() != Some(quote) {
            return Err(self.err(format!("expected '{}'-quoted string", quote as char)));
        }
        self.bump();
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b == quote {
                let text = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
                self.bump();
                return Ok((text, line, col));
            }
            self.bump();
        }
        Err(DslError {
            line,
            col,
            message: "unterminated string".into(),
        })
    }
}

/// Parses one or more `model <name> { ... }` blocks. The first block is the
/// bundle's main model.
pub fn parse_dsl(src: &str) -> Result<ModelBundle, DslError> {
    let mut sc = Scanner::new(src);
    let mut models = BTreeMap::new();
    let mut main_model = None;
    while !sc.at_end() {
        let model = parse_model_block(&mut sc)?;
        if main_model.is_none() {
            main_model = Some(model.name.clone());
        }
        if models.insert(model.name.clone(), model.clone()).is_some() {
            return Err(sc.err(format!("duplicate model '{}'", model.name)));
        }
    }
    let main_model = main_model.ok_or_else(|| sc.err("expected at least one model block"))?;
    Ok(ModelBundle { models, main_model })
}

fn parse_model_block(sc: &mut Scanner) -> Result<EfsmModel, DslError> {
    sc.expect("model")?;
    let name = sc.word("a model name")?;
    sc.expect("{")?;
    let mut model = EfsmModel {
        name,
        variables: Vec::new(),
        states: Vec::new(),
        transitions: Vec::new(),
    };
    loop {
        if sc.eat("}") {
            return Ok(model);
        }
        sc.skip_trivia();
        let keyword_pos = (sc.line, sc.col);
        let keyword = sc.word("'var', 'state', 'trans' or '}'")?;
        match keyword.as_str() {
            "var" => model.variables.push(parse_var_decl(sc)?),
            "state" => model.states.push(parse_state_decl(sc)?),
            "trans" => model.transitions.push(parse_trans_decl(sc)?),
            other => {
                return Err(DslError {
                    line: keyword_pos.0,
                    col: keyword_pos.1,
                    message: format!("expected 'var', 'state' or 'trans', found '{other}'"),
                })
            }
        }
    }
}

fn parse_var_decl(sc: &mut Scanner) -> Result<VarDecl, DslError> {
    let name = sc.word("a variable name")?;
    sc.expect(":")?;
    let ty_word = sc.word("a type (bool, int, string, list)")?;
    let ty = match ty_word.as_str() {
        "bool" => ValueType::Bool,
        "int" => ValueType::Int,
        "string" => ValueType::Str,
        "list" => ValueType::List,
        other => return Err(sc.err(format!("unknown type '{other}'"))),
    };
    sc.expect("=")?;
    let initial = parse_literal(sc)?;
    sc.expect(";")?;
    if initial.value_type() != ty {
        return Err(sc.err(format!(
            "initial value for '{name}' has type {}, declared {ty}",
            initial.value_type()
        )));
    }
    Ok(VarDecl { name, ty, initial })
}

fn parse_literal(sc: &mut Scanner) -> Result<Value, DslError> {
    sc.skip_trivia();
    match sc.peek() {
        Some(b'\'') => {
            let (s, _, _) = sc.quoted(b'\'')?;
            Ok(Value::Str(s))
        }
        Some(b'[') => {
            sc.bump();
            let mut items = Vec::new();
            if sc.eat("]") {
                return Ok(Value::List(items));
            }
            loop {
                let (item, _, _) = sc.quoted(b'\'')?;
                items.push(item);
                if sc.eat("]") {
                    return Ok(Value::List(items));
                }
                sc.expect(",")?;
            }
        }
        Some(b) if b.is_ascii_digit() || b == b'-' => {
            let neg = sc.eat("-");
            let mut digits = String::new();
            while let Some(b) = sc.peek() {
                if b.is_ascii_digit() {
                    digits.push(b as char);
                    sc.bump();
                } else {
                    break;
                }
            }
            if digits.is_empty() {
                return Err(sc.err("expected digits"));
            }
            let n: i64 = digits
                .parse()
                .map_err(|_| sc.err("integer out of range"))?;
            Ok(Value::Int(if neg { -n } else { n }))
        }
        _ => {
            let word = sc.word("a literal")?;
            match word.as_str() {
                "true" => Ok(Value::Bool(true)),
                "false" => Ok(Value::Bool(false)),
                other => Err(sc.err(format!("expected a literal, found '{other}'"))),
            }
        }
    }
}

fn parse_state_decl(sc: &mut Scanner) -> Result<State, DslError> {
    sc.skip_trivia();
    let name_pos = (sc.line, sc.col);
    let name = sc.word("a state name")?;
    let label = Label::state(&name).map_err(|e| DslError {
        line: name_pos.0,
        col: name_pos.1,
        message: e.to_string(),
    })?;
    let mut state = State::plain(label);
    loop {
        if sc.eat(";") {
            return Ok(state);
        }
        let flag = sc.word("'start', 'exit', 'submodel', 'assert' or ';'")?;
        match flag.as_str() {
            "start" => state.is_start = true,
            "exit" => state.is_exit = true,
            "submodel" => state.submodel = Some(sc.word("a submodel name")?),
            "assert" => {
                let (key, _, _) = sc.quoted(b'"')?;
                state.assertion = Some(key);
            }
            other => return Err(sc.err(format!("unknown state flag '{other}'"))),
        }
    }
}

fn parse_trans_decl(sc: &mut Scanner) -> Result<Transition, DslError> {
    sc.skip_trivia();
    let name_pos = (sc.line, sc.col);
    let name = sc.word("a transition name")?;
    let label = Label::transition(&name).map_err(|e| DslError {
        line: name_pos.0,
        col: name_pos.1,
        message: e.to_string(),
    })?;
    sc.expect(":")?;
    let source = parse_state_ref(sc)?;
    sc.expect("->")?;
    let target = parse_state_ref(sc)?;
    let mut guard = None;
    let mut actions = Vec::new();
    loop {
        if sc.eat(";") {
            return Ok(Transition {
                label,
                source,
                target,
                guard,
                actions,
            });
        }
        let clause = sc.word("'guard', 'do' or ';'")?;
        match clause.as_str() {
            "guard" => {
                let (text, line, col) = sc.quoted(b'"')?;
                guard = Some(expr::parse_expr(&text).map_err(|e| DslError {
                    line,
                    col,
                    message: format!("in guard: {e}"),
                })?);
            }
            "do" => {
                let (text, line, col) = sc.quoted(b'"')?;
                actions = expr::parse_actions(&text).map_err(|e| DslError {
                    line,
                    col,
                    message: format!("in actions: {e}"),
                })?;
            }
            other => return Err(sc.err(format!("unknown transition clause '{other}'"))),
        }
    }
}

fn parse_state_ref(sc: &mut Scanner) -> Result<Label, DslError> {
    sc.skip_trivia();
    let pos = (sc.line, sc.col);
    let name = sc.word("a state name")?;
    Label::state(&name).map_err(|e| DslError {
        line: pos.0,
        col: pos.1,
        message: e.to_string(),
    })
}

/// Parses a block of `var name: type = initial;` statements, as used in the
/// GraphML variable channel.
pub fn parse_var_block(text: &str) -> Result<Vec<VarDecl>, DslError> {
    let mut sc = Scanner::new(text);
    let mut decls = Vec::new();
    while !sc.at_end() {
        sc.expect("var")?;
        decls.push(parse_var_decl(&mut sc)?);
    }
    Ok(decls)
}

// ---------------------------------------------------------------------------
// Flattening
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FlattenError {
    #[error("recursive submodel reference: {}", chain.join(" -> "))]
    Cycle { chain: Vec<String> },
    #[error("state '{state}' references unknown submodel '{name}'")]
    UnknownSubmodel { state: String, name: String },
    #[error(
        "submodel '{model}' (referenced by '{state}') has no EXIT state but the reference has outgoing edges"
    )]
    NoExit { model: String, state: String },
    #[error("model '{model}' has no start state")]
    NoStart { model: String },
    #[error("state '{state}' must not be both a submodel reference and an exit")]
    ExitRef { state: String },
    #[error(
        "variable '{name}' declared with conflicting type or initial value in models '{first}' and '{second}'"
    )]
    VarConflict {
        name: String,
        first: String,
        second: String,
    },
}

/// Replaces every submodel reference in the bundle's main model by a copy
/// of the referenced model, recursively.
///
/// Copied state labels gain a "Submodel." prefix (or "Site.Submodel." when
/// the same parent references the submodel from several states); transition
/// labels are kept as authored. Edges into the reference are redirected to
/// the copy's start state; every exit state of the copy inherits the
/// reference's outgoing edges. Variables are merged by name.
pub fn flatten(bundle: &ModelBundle) -> Result<EfsmModel, FlattenError> {
    let mut memo = BTreeMap::new();
    let mut stack = Vec::new();
    if !bundle.models.contains_key(&bundle.main_model) {
        return Err(FlattenError::UnknownSubmodel {
            state: "<main>".into(),
            name: bundle.main_model.clone(),
        });
    }
    flatten_model(&bundle.main_model, bundle, &mut memo, &mut stack)
}

fn flatten_model(
    name: &str,
    bundle: &ModelBundle,
    memo: &mut BTreeMap<String, EfsmModel>,
    stack: &mut Vec<String>,
) -> Result<EfsmModel, FlattenError> {
    if let Some(done) = memo.get(name) {
        return Ok(done.clone());
    }
    if stack.iter().any(|n| n == name) {
        let mut chain = stack.clone();
        chain.push(name.to_string());
        return Err(FlattenError::Cycle { chain });
    }
    stack.push(name.to_string());
    let result = flatten_model_inner(name, bundle, memo, stack);
    stack.pop();
    let flat = result?;
    memo.insert(name.to_string(), flat.clone());
    Ok(flat)
}

struct Expansion {
    site: String,
    entry: String,
    exits: Vec<String>,
    internal: Vec<Transition>,
}

fn flatten_model_inner(
    name: &str,
    bundle: &ModelBundle,
    memo: &mut BTreeMap<String, EfsmModel>,
    stack: &mut Vec<String>,
) -> Result<EfsmModel, FlattenError> {
    let base = &bundle.models[name];
    let mut variables = base.variables.clone();
    let mut states = Vec::new();
    let mut expansions: Vec<Expansion> = Vec::new();

    let mut ref_count: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &base.states {
        if let Some(m) = &s.submodel {
            *ref_count.entry(m.as_str()).or_default() += 1;
        }
    }

    for s in &base.states {
        let Some(sub_name) = &s.submodel else {
            states.push(s.clone());
            continue;
        };
        if s.is_exit {
            return Err(FlattenError::ExitRef {
                state: s.label.text().to_string(),
            });
        }
        if !bundle.models.contains_key(sub_name) {
            return Err(FlattenError::UnknownSubmodel {
                state: s.label.text().to_string(),
                name: sub_name.clone(),
            });
        }
        let sub = flatten_model(sub_name, bundle, memo, stack)?;
        // Two references to one submodel from the same parent need distinct
        // prefixes; the referencing state's name (minus "v_") supplies one.
        let prefix = if ref_count[sub_name.as_str()] > 1 {
            format!("{}.{}", s.label.local().trim_start_matches("v_"), sub_name)
        } else {
            sub_name.clone()
        };
        let start_local = sub
            .start_state()
            .ok_or_else(|| FlattenError::NoStart {
                model: sub_name.clone(),
            })?
            .label
            .text()
            .to_string();
        let has_outgoing = base.outgoing(s.label.text()).next().is_some();

        let mut exits = Vec::new();
        for sub_state in &sub.states {
            let mut copy = sub_state.clone();
            copy.label = copy.label.qualified(&prefix);
            if sub_state.is_exit {
                exits.push(copy.label.text().to_string());
            }
            copy.is_start = s.is_start && sub_state.label.text() == start_local;
            copy.is_exit = sub_state.is_exit && !has_outgoing;
            states.push(copy);
        }
        if has_outgoing && exits.is_empty() {
            return Err(FlattenError::NoExit {
                model: sub_name.clone(),
                state: s.label.text().to_string(),
            });
        }

        for decl in &sub.variables {
            match variables.iter().find(|v| v.name == decl.name) {
                None => variables.push(decl.clone()),
                Some(existing) if existing.ty == decl.ty && existing.initial == decl.initial => {}
                Some(_) => {
                    return Err(FlattenError::VarConflict {
                        name: decl.name.clone(),
                        first: name.to_string(),
                        second: sub_name.clone(),
                    })
                }
            }
        }

        let internal = sub
            .transitions
            .iter()
            .map(|t| Transition {
                label: t.label.clone(),
                source: t.source.qualified(&prefix),
                target: t.target.qualified(&prefix),
                guard: t.guard.clone(),
                actions: t.actions.clone(),
            })
            .collect();
        expansions.push(Expansion {
            site: s.label.text().to_string(),
            entry: format!("{prefix}.{start_local}"),
            exits,
            internal,
        });
    }

    let retarget = |label: &Label| -> Label {
        match expansions.iter().find(|e| e.site == label.text()) {
            Some(e) => Label::state(e.entry.clone()).expect("prefixed state label stays valid"),
            None => label.clone(),
        }
    };

    let mut transitions = Vec::new();
    for t in &base.transitions {
        let target = retarget(&t.target);
        match expansions.iter().find(|e| e.site == t.source.text()) {
            Some(exp) => {
                // The reference's outgoing edge is inherited by each exit.
                for exit in &exp.exits {
                    transitions.push(Transition {
                        label: t.label.clone(),
                        source: Label::state(exit.clone())
                            .expect("prefixed state label stays valid"),
                        target: target.clone(),
                        guard: t.guard.clone(),
                        actions: t.actions.clone(),
                    });
                }
            }
            None => transitions.push(Transition {
                label: t.label.clone(),
                source: t.source.clone(),
                target,
                guard: t.guard.clone(),
                actions: t.actions.clone(),
            }),
        }
    }
    for exp in expansions {
        transitions.extend(exp.internal);
    }

    Ok(EfsmModel {
        name: name.to_string(),
        variables,
        states,
        transitions,
    })
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::Error => f.write_str("error"),
            Severity::Warning => f.write_str("warning"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    /// Stable machine-readable code, e.g. "unreachable-state".
    pub code: String,
    /// The offending label, variable or transition.
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}[{}] {}: {}",
            self.severity, self.code, self.subject, self.message
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.findings
            .iter()
            .any(|f| f.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Warning)
    }

    fn push(&mut self, severity: Severity, code: &str, subject: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            severity,
            code: code.to_string(),
            subject: subject.into(),
            message: message.into(),
        });
    }
}

/// Checks a flattened model: start-state presence, duplicate labels,
/// dangling endpoints, guard/action typing and graph reachability.
/// Unreachable elements are warnings; everything else is an error.
pub fn validate(model: &EfsmModel) -> ValidationReport {
    let mut report = ValidationReport::default();

    let starts: Vec<&State> = model.states.iter().filter(|s| s.is_start).collect();
    if starts.is_empty() {
        report.push(
            Severity::Error,
            "missing-start",
            model.name.clone(),
            "model has no start state",
        );
    } else if starts.len() > 1 {
        let names: Vec<&str> = starts.iter().map(|s| s.label.text()).collect();
        report.push(
            Severity::Error,
            "multiple-start",
            model.name.clone(),
            format!("model has {} start states: {}", starts.len(), names.join(", ")),
        );
    }

    let mut seen = BTreeSet::new();
    for s in &model.states {
        if !seen.insert(s.label.text()) {
            report.push(
                Severity::Error,
                "duplicate-state",
                s.label.text(),
                "state label appears more than once",
            );
        }
        if let Some(sub) = &s.submodel {
            report.push(
                Severity::Error,
                "unresolved-submodel",
                s.label.text(),
                format!("submodel reference '{sub}' not flattened"),
            );
        }
    }

    let mut seen_vars = BTreeSet::new();
    for v in &model.variables {
        if !seen_vars.insert(v.name.as_str()) {
            report.push(
                Severity::Error,
                "duplicate-variable",
                v.name.clone(),
                "variable declared more than once",
            );
        }
        if v.initial.value_type() != v.ty {
            report.push(
                Severity::Error,
                "bad-initial",
                v.name.clone(),
                format!(
                    "initial value has type {}, declared {}",
                    v.initial.value_type(),
                    v.ty
                ),
            );
        }
    }

    let decls = model.declarations();
    let reg = expr::BuiltinRegistry::standard();
    let mut seen_edges = BTreeSet::new();
    for t in &model.transitions {
        let key = t.key();
        if !seen_edges.insert(key.clone()) {
            report.push(
                Severity::Error,
                "duplicate-transition",
                key.to_string(),
                "identical (source, label, target) triple appears more than once",
            );
        }
        for (attr, endpoint) in [("source", &t.source), ("target", &t.target)] {
            if model.state(endpoint.text()).is_none() {
                report.push(
                    Severity::Error,
                    "unknown-endpoint",
                    key.to_string(),
                    format!("{attr} '{endpoint}' is not a state"),
                );
            }
        }
        if let Some(guard) = &t.guard {
            match expr::type_check(guard, &decls, reg) {
                Ok(ValueType::Bool) => {}
                Ok(other) => report.push(
                    Severity::Error,
                    "guard-not-bool",
                    key.to_string(),
                    format!("guard `{guard}` has type {other}, expected bool"),
                ),
                Err(e) => report.push(
                    Severity::Error,
                    "guard-type",
                    key.to_string(),
                    e.to_string(),
                ),
            }
        }
        if let Err(e) = expr::type_check_actions(&t.actions, &decls, reg) {
            report.push(
                Severity::Error,
                "action-type",
                key.to_string(),
                e.to_string(),
            );
        }
    }

    if starts.len() == 1 {
        let (reach_states, reach_transitions) = model.reachable();
        for s in &model.states {
            if !reach_states.contains(s.label.text()) {
                report.push(
                    Severity::Warning,
                    "unreachable-state",
                    s.label.text(),
                    "not reachable from the start state (guards ignored)",
                );
            }
        }
        for t in &model.transitions {
            if !reach_transitions.contains(&t.key()) {
                report.push(
                    Severity::Warning,
                    "unreachable-transition",
                    t.key().to_string(),
                    "not reachable from the start state (guards ignored)",
                );
            }
        }
    }

    report
}

// ---------------------------------------------------------------------------
// Label inventory
// ---------------------------------------------------------------------------

/// The sorted, de-duplicated label sets of one flattened model, fed to the
/// mapping table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LabelInventory {
    pub content_hash: String,
    pub source_model: String,
    pub state_labels: Vec<String>,
    pub transition_labels: Vec<String>,
}

pub fn extract_labels(model: &EfsmModel) -> LabelInventory {
    let state_labels: BTreeSet<String> = model
        .states
        .iter()
        .map(|s| s.label.text().to_string())
        .collect();
    let transition_labels: BTreeSet<String> = model
        .transitions
        .iter()
        .map(|t| t.label.text().to_string())
        .collect();
    LabelInventory {
        content_hash: model.content_hash(),
        source_model: model.name.clone(),
        state_labels: state_labels.into_iter().collect(),
        transition_labels: transition_labels.into_iter().collect(),
    }
}

// ---------------------------------------------------------------------------
// File loading
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Graphml {
        path: PathBuf,
        source: GraphmlError,
    },
    #[error("{path}: {source}")]
    Dsl { path: PathBuf, source: DslError },
    #[error("model '{name}' defined in more than one file ({path})")]
    DuplicateModel { name: String, path: PathBuf },
    #[error("{path}: no model files found (expected .efsm or .graphml)")]
    NoModels { path: PathBuf },
    #[error(
        "{path}: cannot pick a main model; name one of them 'Main' or load a single-model file"
    )]
    AmbiguousMain { path: PathBuf },
    #[error("{path}: unsupported extension (expected .efsm, .graphml or a directory)")]
    UnknownFormat { path: PathBuf },
}

fn read(path: &Path) -> Result<String, LoadError> {
    std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a bundle from a `.efsm` file (whole bundle, first model is main),
/// a `.graphml` file (single model) or a directory of such files (main is
/// the model named "Main", or the only model).
pub fn load_bundle(path: &Path) -> Result<ModelBundle, LoadError> {
    let meta = std::fs::metadata(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if meta.is_dir() {
        return load_dir(path);
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("efsm") => parse_dsl(&read(path)?).map_err(|source| LoadError::Dsl {
            path: path.to_path_buf(),
            source,
        }),
        Some("graphml") => {
            let model = parse_graphml(&read(path)?).map_err(|source| LoadError::Graphml {
                path: path.to_path_buf(),
                source,
            })?;
            Ok(ModelBundle::single(model))
        }
        _ => Err(LoadError::UnknownFormat {
            path: path.to_path_buf(),
        }),
    }
}

fn load_dir(dir: &Path) -> Result<ModelBundle, LoadError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| LoadError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("efsm") | Some("graphml")
            )
        })
        .collect();
    entries.sort();

    let mut models: BTreeMap<String, EfsmModel> = BTreeMap::new();
    let mut insert = |model: EfsmModel, path: &Path| -> Result<(), LoadError> {
        let name = model.name.clone();
        if models.insert(name.clone(), model).is_some() {
            return Err(LoadError::DuplicateModel {
                name,
                path: path.to_path_buf(),
            });
        }
        Ok(())
    };
    for path in &entries {
        match path.extension().and_then(|e| e.to_str()) {
            Some("efsm") => {
                let bundle = parse_dsl(&read(path)?).map_err(|source| LoadError::Dsl {
                    path: path.clone(),
                    source,
                })?;
                for (_, model) in bundle.models {
                    insert(model, path)?;
                }
            }
            Some("graphml") => {
                let model = parse_graphml(&read(path)?).map_err(|source| LoadError::Graphml {
                    path: path.clone(),
                    source,
                })?;
                insert(model, path)?;
            }
            _ => unreachable!("filtered above"),
        }
    }

    if models.is_empty() {
        return Err(LoadError::NoModels {
            path: dir.to_path_buf(),
        });
    }
    let main_model = if models.contains_key("Main") {
        "Main".to_string()
    } else if models.len() == 1 {
        models.keys().next().unwrap().clone()
    } else {
        return Err(LoadError::AmbiguousMain {
            path: dir.to_path_buf(),
        });
    };
    Ok(ModelBundle { models, main_model })
}

/// Loads and flattens in one step, since most callers want the flat model.
pub fn load_flat_model(path: &Path) -> Result<EfsmModel, String> {
    let bundle = load_bundle(path).map_err(|e| e.to_string())?;
    flatten(&bundle).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dsl(src: &str) -> ModelBundle {
        parse_dsl(src).expect("dsl parses")
    }

    const CHAIN: &str = r#"
        model Main {
            state v_A start;
            state v_Sub submodel Sub;
            state v_B exit;
            trans e_In: v_A -> v_Sub;
            trans e_Out: v_Sub -> v_B;
        }
        model Sub {
            state v_S start exit;
        }
    "#;

    #[test]
    fn dsl_minimal_model() {
        let bundle = dsl("model m { state v_A start; state v_B exit; trans e_Go: v_A -> v_B; }");
        assert_eq!(bundle.main_model, "m");
        let m = bundle.main().unwrap();
        assert_eq!(m.states.len(), 2);
        assert_eq!(m.transitions.len(), 1);
        assert!(m.state("v_A").unwrap().is_start);
        assert!(m.state("v_B").unwrap().is_exit);
    }

    #[test]
    fn dsl_guard_and_actions() {
        let bundle = dsl(
            r#"model m {
                var x: int = 2;
                state v_A start;
                trans e_Dec: v_A -> v_A guard "x > 0" do "x = x - 1;";
            }"#,
        );
        let t = &bundle.main().unwrap().transitions[0];
        assert_eq!(t.guard.as_ref().unwrap().to_string(), "x > 0");
        assert_eq!(t.actions.len(), 1);
        assert_eq!(t.actions[0].to_string(), "x = x - 1;");
    }

    #[test]
    fn dsl_submodel_ref_and_assert() {
        let bundle = dsl(
            r#"model m {
                state v_InGame submodel InGame;
                state v_X start assert "custom_check";
            }"#,
        );
        let m = bundle.main().unwrap();
        assert_eq!(m.state("v_InGame").unwrap().submodel.as_deref(), Some("InGame"));
        assert_eq!(m.state("v_X").unwrap().assertion.as_deref(), Some("custom_check"));
    }

    #[test]
    fn dsl_error_carries_position() {
        let err = parse_dsl("model m {\n  state x_Bad start;\n}").unwrap_err();
        assert_eq!(err.line, 2);
        assert_eq!(err.col, 9);
    }

    #[test]
    fn dsl_list_literals() {
        let bundle = dsl("model m { var xs: list = ['a', 'b']; var ys: list = []; state v_A start; }");
        let m = bundle.main().unwrap();
        assert_eq!(
            m.variables[0].initial,
            Value::List(vec!["a".into(), "b".into()])
        );
        assert_eq!(m.variables[1].initial, Value::List(vec![]));
    }

    #[test]
    fn dsl_type_mismatch_on_initial() {
        let err = parse_dsl("model m { var x: int = 'oops'; state v_A start; }").unwrap_err();
        assert!(err.message.contains("type"), "got: {}", err.message);
    }

    const TWO_NODE_GRAPHML: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<graphml xmlns="http://graphml.graphdrawing.org/xmlns">
  <graph id="demo" edgedefault="directed">
    <node id="n0"><data key="d0">v_A
START</data></node>
    <node id="n1"><data key="d0">v_B</data></node>
    <edge id="e0" source="n0" target="n1"><data key="d1">e_Go</data></edge>
  </graph>
</graphml>"#;

    #[test]
    fn graphml_two_nodes_one_edge() {
        let m = parse_graphml(TWO_NODE_GRAPHML).unwrap();
        assert_eq!(m.name, "demo");
        assert_eq!(m.states.len(), 2);
        assert!(m.state("v_A").unwrap().is_start);
        assert_eq!(m.transitions.len(), 1);
        let t = &m.transitions[0];
        assert_eq!(t.label.text(), "e_Go");
        assert_eq!(t.source.text(), "v_A");
        assert_eq!(t.target.text(), "v_B");
        assert!(t.guard.is_none());
        assert!(t.actions.is_empty());
    }

    #[test]
    fn graphml_edge_guard_and_action() {
        let src = TWO_NODE_GRAPHML.replace(
            "e_Go",
            "e_TypePassword [loggedIn == false] / tries = tries + 1;",
        );
        let m = parse_graphml(&src).unwrap();
        let t = &m.transitions[0];
        assert_eq!(t.label.text(), "e_TypePassword");
        assert_eq!(t.guard.as_ref().unwrap().to_string(), "loggedIn == false");
        assert_eq!(t.actions[0].to_string(), "tries = tries + 1;");
    }

    #[test]
    fn graphml_variable_channel() {
        let src = TWO_NODE_GRAPHML.replace(
            "<node id=\"n0\">",
            "<data key=\"vars\">var tries: int = 0; var loggedIn: bool = false;</data><node id=\"n0\">",
        );
        let m = parse_graphml(&src).unwrap();
        assert_eq!(m.variables.len(), 2);
        assert_eq!(m.variables[0].name, "tries");
        assert_eq!(m.variables[1].initial, Value::Bool(false));
    }

    #[test]
    fn graphml_submodel_marker() {
        let src = TWO_NODE_GRAPHML.replace("v_B", "v_B\nSUBMODEL Game\n");
        let m = parse_graphml(&src).unwrap();
        assert_eq!(m.state("v_B").unwrap().submodel.as_deref(), Some("Game"));
    }

    #[test]
    fn graphml_bad_label_and_bad_xml() {
        let src = TWO_NODE_GRAPHML.replace("v_B", "b_Wrong");
        assert!(matches!(
            parse_graphml(&src),
            Err(GraphmlError::LabelGrammar { .. })
        ));
        assert!(matches!(
            parse_graphml("<graphml><graph>"),
            Err(GraphmlError::Xml(_))
        ));
        let src = TWO_NODE_GRAPHML.replace("e_Go", "");
        assert!(matches!(
            parse_graphml(&src),
            Err(GraphmlError::Element { .. })
        ));
    }

    #[test]
    fn frontends_agree_on_equivalent_content() {
        let from_dsl = dsl(
            r#"model demo {
                var tries: int = 0;
                state v_A start;
                state v_B;
                trans e_Go: v_A -> v_B guard "tries < 3" do "tries = tries + 1;";
            }"#,
        );
        let src = TWO_NODE_GRAPHML
            .replace(
                "<node id=\"n0\">",
                "<data key=\"vars\">var tries: int = 0;</data><node id=\"n0\">",
            )
            .replace("e_Go", "e_Go [tries &lt; 3] / tries = tries + 1;");
        let from_graphml = parse_graphml(&src).unwrap();
        assert_eq!(*from_dsl.main().unwrap(), from_graphml);
    }

    #[test]
    fn flatten_chain_example() {
        let flat = flatten(&dsl(CHAIN)).unwrap();
        let labels: Vec<&str> = flat.states.iter().map(|s| s.label.text()).collect();
        assert_eq!(labels, vec!["v_A", "Sub.v_S", "v_B"]);
        assert_eq!(flat.transitions.len(), 2);
        assert_eq!(flat.transitions[0].key().to_string(), "v_A -[e_In]-> Sub.v_S");
        assert_eq!(flat.transitions[1].key().to_string(), "Sub.v_S -[e_Out]-> v_B");
        assert!(flat.state("v_A").unwrap().is_start);
        assert!(!flat.state("Sub.v_S").unwrap().is_exit, "inherited exits clear the flag");
        assert!(flat.state("v_B").unwrap().is_exit);
    }

    #[test]
    fn flatten_duplicates_outgoing_edge_per_exit() {
        let bundle = dsl(
            r#"
            model Main {
                state v_A start;
                state v_Sub submodel Sub;
                state v_B exit;
                trans e_In: v_A -> v_Sub;
                trans e_Out: v_Sub -> v_B;
            }
            model Sub {
                state v_S start;
                state v_X1 exit;
                state v_X2 exit;
                trans e_L: v_S -> v_X1;
                trans e_R: v_S -> v_X2;
            }
            "#,
        );
        let flat = flatten(&bundle).unwrap();
        let outs: Vec<String> = flat
            .transitions
            .iter()
            .filter(|t| t.label.text() == "e_Out")
            .map(|t| t.key().to_string())
            .collect();
        assert_eq!(
            outs,
            vec!["Sub.v_X1 -[e_Out]-> v_B", "Sub.v_X2 -[e_Out]-> v_B"]
        );
    }

    #[test]
    fn flatten_nested_prefixes_accumulate() {
        let bundle = dsl(
            r#"
            model Main {
                state v_A start;
                state v_Mid submodel Mid;
                trans e_In: v_A -> v_Mid;
            }
            model Mid {
                state v_M start;
                state v_Leaf submodel Leaf;
                trans e_Down: v_M -> v_Leaf;
            }
            model Leaf {
                state v_L start;
            }
            "#,
        );
        let flat = flatten(&bundle).unwrap();
        assert!(flat.state("Mid.v_M").is_some());
        assert!(flat.state("Mid.Leaf.v_L").is_some());
    }

    #[test]
    fn flatten_disambiguates_same_parent_references() {
        let bundle = dsl(
            r#"
            model Main {
                state v_A start;
                state v_Left submodel Game;
                state v_Right submodel Game;
                trans e_L: v_A -> v_Left;
                trans e_R: v_A -> v_Right;
                trans e_LBack: v_Left -> v_A;
                trans e_RBack: v_Right -> v_A;
            }
            model Game {
                state v_G start exit;
            }
            "#,
        );
        let flat = flatten(&bundle).unwrap();
        assert!(flat.state("Left.Game.v_G").is_some());
        assert!(flat.state("Right.Game.v_G").is_some());
        assert_eq!(flat.states.len(), 3);
    }

    #[test]
    fn flatten_keeps_exit_when_reference_dangles() {
        // No outgoing edges on the reference, so the submodel's exit becomes
        // an exit of the parent.
        let bundle = dsl(
            r#"
            model Main {
                state v_A start;
                state v_Sub submodel Sub;
                trans e_In: v_A -> v_Sub;
            }
            model Sub {
                state v_S start;
                state v_E exit;
                trans e_Fin: v_S -> v_E;
            }
            "#,
        );
        let flat = flatten(&bundle).unwrap();
        assert!(flat.state("Sub.v_E").unwrap().is_exit);
    }

    #[test]
    fn flatten_error_cases() {
        let cyclic = dsl(
            r#"
            model Main { state v_A start submodel Sub; }
            model Sub { state v_S start submodel Main; }
            "#,
        );
        assert!(matches!(flatten(&cyclic), Err(FlattenError::Cycle { .. })));

        let unknown = dsl("model Main { state v_A start submodel Nowhere; }");
        assert!(matches!(
            flatten(&unknown),
            Err(FlattenError::UnknownSubmodel { .. })
        ));

        let no_exit = dsl(
            r#"
            model Main {
                state v_A start;
                state v_Sub submodel Sub;
                state v_B;
                trans e_In: v_A -> v_Sub;
                trans e_Out: v_Sub -> v_B;
            }
            model Sub { state v_S start; }
            "#,
        );
        match flatten(&no_exit) {
            Err(FlattenError::NoExit { model, state }) => {
                assert_eq!(model, "Sub");
                assert_eq!(state, "v_Sub");
            }
            other => panic!("expected NoExit, got {other:?}"),
        }

        let conflict = dsl(
            r#"
            model Main {
                var x: int = 0;
                state v_A start;
                state v_Sub submodel Sub;
                trans e_In: v_A -> v_Sub;
            }
            model Sub { var x: int = 1; state v_S start exit; }
            "#,
        );
        assert!(matches!(
            flatten(&conflict),
            Err(FlattenError::VarConflict { .. })
        ));
    }

    #[test]
    fn flatten_merges_identical_variables() {
        let bundle = dsl(
            r#"
            model Main {
                var x: int = 0;
                state v_A start;
                state v_Sub submodel Sub;
                trans e_In: v_A -> v_Sub;
            }
            model Sub { var x: int = 0; var y: bool = true; state v_S start exit; }
            "#,
        );
        let flat = flatten(&bundle).unwrap();
        assert_eq!(flat.variables.len(), 2);
    }

    #[test]
    fn validate_clean_model_is_empty() {
        let flat = flatten(&dsl(CHAIN)).unwrap();
        let report = validate(&flat);
        assert!(report.is_clean(), "unexpected findings: {:?}", report.findings);
    }

    #[test]
    fn validate_flags_island_state() {
        let bundle = dsl(
            "model m { state v_A start; state v_X; trans e_Loop: v_A -> v_A; }",
        );
        let report = validate(bundle.main().unwrap());
        assert!(!report.has_errors());
        let warning = report.warnings().next().unwrap();
        assert_eq!(warning.code, "unreachable-state");
        assert_eq!(warning.subject, "v_X");
    }

    #[test]
    fn validate_flags_guard_type_error() {
        let bundle = dsl(
            r#"model m { state v_A start; trans e_Go: v_A -> v_A guard "1 + true"; }"#,
        );
        let report = validate(bundle.main().unwrap());
        let finding = report.errors().next().unwrap();
        assert_eq!(finding.code, "guard-type");
        assert!(finding.subject.contains("e_Go"));
    }

    #[test]
    fn validate_flags_non_bool_guard_and_unknown_endpoint() {
        let bundle = dsl(
            r#"model m { var n: int = 0; state v_A start; trans e_Go: v_A -> v_Gone guard "n + 1"; }"#,
        );
        let report = validate(bundle.main().unwrap());
        let codes: Vec<&str> = report.findings.iter().map(|f| f.code.as_str()).collect();
        assert!(codes.contains(&"guard-not-bool"));
        assert!(codes.contains(&"unknown-endpoint"));
    }

    #[test]
    fn validate_flags_duplicates_and_missing_start() {
        let bundle = dsl(
            "model m { state v_A; state v_A; trans e_Go: v_A -> v_A; trans e_Go: v_A -> v_A; }",
        );
        let report = validate(bundle.main().unwrap());
        let codes: Vec<&str> = report.findings.iter().map(|f| f.code.as_str()).collect();
        assert!(codes.contains(&"missing-start"));
        assert!(codes.contains(&"duplicate-state"));
        assert!(codes.contains(&"duplicate-transition"));
    }

    #[test]
    fn extract_labels_sorts_and_dedups() {
        let bundle = dsl(
            r#"model m {
                state v_B start;
                state v_A;
                trans e_Back: v_B -> v_A;
                trans e_Back: v_A -> v_B;
                trans e_Go: v_B -> v_B;
            }"#,
        );
        let inv = extract_labels(bundle.main().unwrap());
        assert_eq!(inv.state_labels, vec!["v_A", "v_B"]);
        assert_eq!(inv.transition_labels, vec!["e_Back", "e_Go"]);
        assert_eq!(inv.source_model, "m");
        assert!(!inv.content_hash.is_empty());
    }

    #[test]
    fn extract_labels_insensitive_to_declaration_order() {
        let a = dsl("model m { state v_A start; state v_B; trans e_Go: v_A -> v_B; }");
        let b = dsl("model m { state v_B; state v_A start; trans e_Go: v_A -> v_B; }");
        assert_eq!(
            extract_labels(a.main().unwrap()),
            extract_labels(b.main().unwrap())
        );
    }

    #[test]
    fn extract_labels_reflects_model_edits() {
        let before = dsl("model m { state v_A start; state v_B; trans e_Go: v_A -> v_B; }");
        let after = dsl(
            "model m { state v_A start; state v_B; trans e_Go: v_A -> v_B; trans e_New: v_B -> v_A; }",
        );
        let inv_before = extract_labels(before.main().unwrap());
        let inv_after = extract_labels(after.main().unwrap());
        let added: Vec<&String> = inv_after
            .transition_labels
            .iter()
            .filter(|l| !inv_before.transition_labels.contains(l))
            .collect();
        assert_eq!(added, vec!["e_New"]);
        assert_ne!(inv_before.content_hash, inv_after.content_hash);
    }

    #[test]
    fn load_bundle_dispatches_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let efsm = dir.path().join("m.efsm");
        std::fs::write(&efsm, "model Solo { state v_A start; }").unwrap();
        let bundle = load_bundle(&efsm).unwrap();
        assert_eq!(bundle.main_model, "Solo");

        let gml = dir.path().join("m.graphml");
        std::fs::write(&gml, TWO_NODE_GRAPHML).unwrap();
        let bundle = load_bundle(&gml).unwrap();
        assert_eq!(bundle.main_model, "demo");

        let txt = dir.path().join("m.txt");
        std::fs::write(&txt, "nope").unwrap();
        assert!(matches!(
            load_bundle(&txt),
            Err(LoadError::UnknownFormat { .. })
        ));
    }

    #[test]
    fn load_dir_merges_and_picks_main() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("main.efsm"),
            "model Main { state v_A start submodel Sub; }",
        )
        .unwrap();
        std::fs::write(dir.path().join("sub.efsm"), "model Sub { state v_S start exit; }")
            .unwrap();
        let bundle = load_bundle(dir.path()).unwrap();
        assert_eq!(bundle.main_model, "Main");
        assert_eq!(bundle.models.len(), 2);

        std::fs::write(dir.path().join("dup.efsm"), "model Sub { state v_S start; }").unwrap();
        assert!(matches!(
            load_bundle(dir.path()),
            Err(LoadError::DuplicateModel { .. })
        ));
    }
}
