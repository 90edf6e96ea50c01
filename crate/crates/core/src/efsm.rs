//! Core EFSM domain types and single-step semantics.
//!
//! A model is a set of labelled states and guarded transitions over a typed
//! variable context. [`EfsmModel::enabled_transitions`] and
//! [`EfsmModel::apply_transition`] are the only two operations the generator
//! needs; everything else here is plumbing around labels, values and
//! declarations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::expr::{self, ActionStmt, BuiltinRegistry, EvalError, Expr};

/// Whether a label names a state or a transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    State,
    Transition,
}

impl fmt::Display for LabelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelKind::State => f.write_str("state"),
            LabelKind::Transition => f.write_str("transition"),
        }
    }
}

/// A state or transition label.
///
/// State labels carry a `v_` prefix, transition labels an `e_` prefix, so the
/// kind is recoverable from the text alone. Flattening prepends dotted
/// submodel qualifiers to state labels (`Sub.v_S`); the qualifier never
/// contains the kind prefix, so recovery still works after flattening.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label {
    text: String,
    kind: LabelKind,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("label '{0}' must start with 'v_' (state) or 'e_' (transition) after any dotted qualifier")]
    BadPrefix(String),
    #[error("label is empty")]
    Empty,
    #[error("label '{0}': transition labels cannot carry a dotted qualifier")]
    QualifiedTransition(String),
}

impl Label {
    /// Parses a label, inferring the kind from the `v_`/`e_` prefix.
    pub fn parse(text: impl Into<String>) -> Result<Self, LabelError> {
        let text = text.into();
        if text.is_empty() {
            return Err(LabelError::Empty);
        }
        let local = text.rsplit('.').next().unwrap_or(&text);
        let kind = if local.starts_with("v_") {
            LabelKind::State
        } else if local.starts_with("e_") {
            LabelKind::Transition
        } else {
            return Err(LabelError::BadPrefix(text));
        };
        if kind == LabelKind::Transition && text.contains('.') {
            return Err(LabelError::QualifiedTransition(text));
        }
        Ok(Label { text, kind })
    }

    pub fn state(text: impl Into<String>) -> Result<Self, LabelError> {
        let label = Self::parse(text)?;
        match label.kind {
            LabelKind::State => Ok(label),
            LabelKind::Transition => Err(LabelError::BadPrefix(label.text)),
        }
    }

    pub fn transition(text: impl Into<String>) -> Result<Self, LabelError> {
        let label = Self::parse(text)?;
        match label.kind {
            LabelKind::Transition => Ok(label),
            LabelKind::State => Err(LabelError::BadPrefix(label.text)),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    /// The label text after the last dotted qualifier, e.g. `v_S` for `Sub.v_S`.
    pub fn local(&self) -> &str {
        self.text.rsplit('.').next().unwrap_or(&self.text)
    }

    /// Dotted qualifier segments, outermost first. Empty for authored labels.
    pub fn qualifiers(&self) -> Vec<&str> {
        let mut parts: Vec<&str> = self.text.split('.').collect();
        parts.pop();
        parts
    }

    /// Returns a copy qualified with one more leading segment.
    ///
    /// Only meaningful for state labels; flattening never qualifies
    /// transition labels.
    pub fn qualified(&self, segment: &str) -> Label {
        Label {
            text: format!("{segment}.{}", self.text),
            kind: self.kind,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.text)
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Label::parse(text).map_err(D::Error::custom)
    }
}

/// The type of a context variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Bool,
    Int,
    Str,
    List,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueType::Bool => f.write_str("bool"),
            ValueType::Int => f.write_str("int"),
            ValueType::Str => f.write_str("string"),
            ValueType::List => f.write_str("list"),
        }
    }
}

/// A runtime value. Lists hold strings only.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Str(String),
    List(Vec<String>),
}

impl Value {
    pub fn value_type(&self) -> ValueType {
        match self {
            Value::Bool(_) => ValueType::Bool,
            Value::Int(_) => ValueType::Int,
            Value::Str(_) => ValueType::Str,
            Value::List(_) => ValueType::List,
        }
    }

    /// Renders the value for placeholder substitution.
    pub fn render(&self) -> String {
        match self {
            Value::Bool(b) => b.to_string(),
            Value::Int(i) => i.to_string(),
            Value::Str(s) => s.clone(),
            Value::List(items) => serde_json::to_string(items).expect("string list serializes"),
        }
    }
}

/// A set of named variable bindings, kept sorted so serialization is stable.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Context {
    vars: BTreeMap<String, Value>,
}

impl Context {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.vars.get(name)
    }

    pub fn set(&mut self, name: impl Into<String>, value: Value) {
        self.vars.insert(name.into(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

impl FromIterator<(String, Value)> for Context {
    fn from_iter<T: IntoIterator<Item = (String, Value)>>(iter: T) -> Self {
        Context {
            vars: iter.into_iter().collect(),
        }
    }
}

/// A typed variable declaration with its initial value.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarDecl {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ValueType,
    pub initial: Value,
}

/// A model state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    pub label: Label,
    /// Key the mapping table resolves to an assertion fragment. Defaults to
    /// the state's own label when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assertion: Option<String>,
    #[serde(default)]
    pub is_start: bool,
    #[serde(default)]
    pub is_exit: bool,
    /// Name of the submodel this state expands to, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submodel: Option<String>,
}

impl State {
    pub fn plain(label: Label) -> Self {
        State {
            label,
            assertion: None,
            is_start: false,
            is_exit: false,
            submodel: None,
        }
    }
}

/// A guarded transition between two states.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub label: Label,
    pub source: Label,
    pub target: Label,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "ser_guard",
        deserialize_with = "de_guard"
    )]
    pub guard: Option<Expr>,
    #[serde(
        default,
        skip_serializing_if = "Vec::is_empty",
        serialize_with = "ser_actions",
        deserialize_with = "de_actions"
    )]
    pub actions: Vec<ActionStmt>,
}

fn ser_guard<S: Serializer>(guard: &Option<Expr>, serializer: S) -> Result<S::Ok, S::Error> {
    match guard {
        Some(expr) => serializer.serialize_str(&expr.to_string()),
        None => serializer.serialize_none(),
    }
}

fn de_guard<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Option<Expr>, D::Error> {
    let text = Option::<String>::deserialize(deserializer)?;
    match text {
        Some(text) => expr::parse_expr(&text).map(Some).map_err(D::Error::custom),
        None => Ok(None),
    }
}

fn ser_actions<S: Serializer>(actions: &[ActionStmt], serializer: S) -> Result<S::Ok, S::Error> {
    let rendered: Vec<String> = actions.iter().map(|a| a.to_string()).collect();
    rendered.serialize(serializer)
}

fn de_actions<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<ActionStmt>, D::Error> {
    let rendered = Vec::<String>::deserialize(deserializer)?;
    let mut actions = Vec::new();
    for text in rendered {
        actions.extend(expr::parse_actions(&text).map_err(D::Error::custom)?);
    }
    Ok(actions)
}

/// Identifies a transition by its (source, label, target) triple, which is
/// unique within a model.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TransitionKey {
    pub source: String,
    pub label: String,
    pub target: String,
}

impl Transition {
    pub fn key(&self) -> TransitionKey {
        TransitionKey {
            source: self.source.text().to_string(),
            label: self.label.text().to_string(),
            target: self.target.text().to_string(),
        }
    }
}

impl fmt::Display for TransitionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -[{}]-> {}", self.source, self.label, self.target)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EfsmError {
    #[error("unknown state '{0}'")]
    UnknownState(String),
    #[error("guard on {transition}: {source}")]
    GuardTypeError {
        transition: TransitionKey,
        source: EvalError,
    },
    #[error("guard on {transition} does not hold")]
    GuardViolation { transition: TransitionKey },
    #[error("action {index} on {transition}: {source}")]
    ActionError {
        transition: TransitionKey,
        index: usize,
        source: EvalError,
    },
}

/// A flat (or not yet flattened) state machine.
///
/// Declaration order of states and transitions is meaningful: enabled
/// transitions are reported in declaration order so walks are reproducible.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EfsmModel {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variables: Vec<VarDecl>,
    pub states: Vec<State>,
    pub transitions: Vec<Transition>,
}

impl EfsmModel {
    pub fn state(&self, label: &str) -> Option<&State> {
        self.states.iter().find(|s| s.label.text() == label)
    }

    pub fn start_state(&self) -> Option<&State> {
        self.states.iter().find(|s| s.is_start)
    }

    /// Outgoing transitions of a state, in declaration order.
    pub fn outgoing<'a>(&'a self, state: &str) -> impl Iterator<Item = &'a Transition> + 'a {
        let state = state.to_string();
        self.transitions
            .iter()
            .filter(move |t| t.source.text() == state)
    }

    /// The context built from the variable declarations' initial values.
    pub fn initial_context(&self) -> Context {
        self.variables
            .iter()
            .map(|v| (v.name.clone(), v.initial.clone()))
            .collect()
    }

    pub fn declarations(&self) -> BTreeMap<String, ValueType> {
        self.variables
            .iter()
            .map(|v| (v.name.clone(), v.ty))
            .collect()
    }

    /// Transitions leaving `at` whose guard is absent or evaluates to true,
    /// in declaration order.
    pub fn enabled_transitions<'a>(
        &'a self,
        at: &str,
        ctx: &Context,
    ) -> Result<Vec<&'a Transition>, EfsmError> {
        if self.state(at).is_none() {
            return Err(EfsmError::UnknownState(at.to_string()));
        }
        let reg = BuiltinRegistry::standard();
        let mut enabled = Vec::new();
        for t in self.outgoing(at) {
            if Self::guard_holds(t, ctx, reg)? {
                enabled.push(t);
            }
        }
        Ok(enabled)
    }

    fn guard_holds(t: &Transition, ctx: &Context, reg: &BuiltinRegistry) -> Result<bool, EfsmError> {
        match &t.guard {
            None => Ok(true),
            Some(guard) => match expr::eval_expr(guard, ctx, reg) {
                Ok(Value::Bool(b)) => Ok(b),
                Ok(other) => Err(EfsmError::GuardTypeError {
                    transition: t.key(),
                    source: EvalError::TypeMismatch {
                        expr: guard.to_string(),
                        expected: "bool",
                        found: other.value_type(),
                    },
                }),
                Err(source) => Err(EfsmError::GuardTypeError {
                    transition: t.key(),
                    source,
                }),
            },
        }
    }

    /// Re-checks the guard, runs the actions and returns the target state
    /// label with the updated context. The input context is not modified.
    pub fn apply_transition(
        &self,
        t: &Transition,
        ctx: &Context,
    ) -> Result<(Label, Context), EfsmError> {
        let reg = BuiltinRegistry::standard();
        if !Self::guard_holds(t, ctx, reg)? {
            return Err(EfsmError::GuardViolation { transition: t.key() });
        }
        let next = expr::exec_actions(&t.actions, ctx, reg).map_err(|e| EfsmError::ActionError {
            transition: t.key(),
            index: e.index,
            source: e.source,
        })?;
        Ok((t.target.clone(), next))
    }

    /// Hex SHA-256 over an order-normalized serialization: reordering
    /// declarations does not change the hash, any other edit does.
    pub fn content_hash(&self) -> String {
        let mut normalized = self.clone();
        normalized
            .variables
            .sort_by(|a, b| a.name.cmp(&b.name));
        normalized.states.sort_by(|a, b| a.label.cmp(&b.label));
        normalized.transitions.sort_by_key(|t| t.key());
        let value = serde_json::to_value(&normalized).expect("model serializes");
        let bytes = serde_json::to_vec(&value).expect("value serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// States and transitions reachable from the start state when guards are
    /// ignored. Returns (state labels, transition keys).
    pub fn reachable(&self) -> (BTreeSet<String>, BTreeSet<TransitionKey>) {
        let mut states = BTreeSet::new();
        let mut transitions = BTreeSet::new();
        let Some(start) = self.start_state() else {
            return (states, transitions);
        };
        let mut stack = vec![start.label.text().to_string()];
        states.insert(start.label.text().to_string());
        while let Some(current) = stack.pop() {
            for t in self.outgoing(&current) {
                transitions.insert(t.key());
                if states.insert(t.target.text().to_string()) {
                    stack.push(t.target.text().to_string());
                }
            }
        }
        (states, transitions)
    }
}
