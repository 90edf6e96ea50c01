//! Label-to-code-fragment mapping tables and test instantiation.
//!
//! A mapping table turns the labels of an abstract test into concrete code
//! fragments. Entries live in named groups; a group may extend another, and
//! lookup walks child before parent so scene groups can override shared
//! fragments from a base group. Tables are plain JSON files meant to be
//! edited by hand; [`update_table`] keeps them in sync with a model by
//! adding TODO templates for new labels and flagging stale ones.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::efsm::{Context, LabelKind};
use crate::generator::AbstractTestCase;
use crate::model_io::LabelInventory;

pub const DEFAULT_GROUP: &str = "base";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    /// Structured driver commands, runnable in-process.
    Exec,
    /// Text fragments emitted as scripts for an external toolchain.
    Raw,
}

/// One request to a driver. `args` and `expect` values may contain
/// `{{var}}` placeholders filled from a step's context snapshot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverCommand {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub args: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<BTreeMap<String, String>>,
    pub name: String,
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// The code attached to one label. A table uses a single flavor
/// throughout; `todo` marks generated templates that still need a human.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Fragment {
    Exec {
        commands: Vec<DriverCommand>,
        #[serde(default, skip_serializing_if = "is_false")]
        todo: bool,
    },
    Raw {
        text: String,
        #[serde(default, skip_serializing_if = "is_false")]
        todo: bool,
    },
}

impl Fragment {
    pub fn is_todo(&self) -> bool {
        match self {
            Fragment::Exec { todo, .. } | Fragment::Raw { todo, .. } => *todo,
        }
    }

    pub fn flavor(&self) -> Flavor {
        match self {
            Fragment::Exec { .. } => Flavor::Exec,
            Fragment::Raw { .. } => Flavor::Raw,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    #[serde(default)]
    pub entries: BTreeMap<String, Fragment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extends: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MappingTable {
    pub flavor: Flavor,
    pub groups: BTreeMap<String, Group>,
    pub model_hash: String,
}

#[derive(Debug, thiserror::Error)]
pub enum MappingError {
    #[error("no fragment for label '{label}' in group '{group}' or its ancestors")]
    MissingLabel { label: String, group: String },
    #[error("unknown mapping group '{0}'")]
    UnknownGroup(String),
    #[error("group inheritance cycle: {0}")]
    ExtendsCycle(String),
    #[error("unresolved placeholder '{{{{{name}}}}}' at step '{label}'")]
    UnresolvedPlaceholder { name: String, label: String },
    #[error("fragment for '{0}' is still a TODO template")]
    TodoFragment(String),
    #[error("mapping table was built for model {table}, suite model is {model}")]
    HashMismatch { table: String, model: String },
    #[error("step '{label}' resolved to a {found:?} fragment, expected {expected:?}")]
    WrongFlavor {
        label: String,
        expected: Flavor,
        found: Flavor,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MappingTable {
    pub fn new(flavor: Flavor) -> Self {
        MappingTable {
            flavor,
            groups: BTreeMap::new(),
            model_hash: String::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, MappingError> {
        let table: MappingTable = serde_json::from_str(text)?;
        table.validate()?;
        Ok(table)
    }

    /// Pretty JSON with keys in sorted order; the on-disk format.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("mapping table serializes");
        text.push('\n');
        text
    }

    /// Checks that extends targets exist, inheritance is acyclic, and every
    /// fragment matches the table flavor.
    pub fn validate(&self) -> Result<(), MappingError> {
        for (name, group) in &self.groups {
            if let Some(parent) = &group.extends {
                if !self.groups.contains_key(parent) {
                    return Err(MappingError::UnknownGroup(parent.clone()));
                }
            }
            self.chain(name)?;
            for (label, fragment) in &group.entries {
                if fragment.flavor() != self.flavor {
                    return Err(MappingError::WrongFlavor {
                        label: label.clone(),
                        expected: self.flavor,
                        found: fragment.flavor(),
                    });
                }
            }
        }
        Ok(())
    }

    /// The inheritance chain starting at `group`, child first.
    fn chain<'a>(&'a self, group: &'a str) -> Result<Vec<&'a str>, MappingError> {
        let mut chain = Vec::new();
        let mut seen = BTreeSet::new();
        let mut current = group;
        loop {
            if !seen.insert(current.to_string()) {
                chain.push(current);
                let trail: Vec<&str> = chain.to_vec();
                return Err(MappingError::ExtendsCycle(trail.join(" -> ")));
            }
            let node = self
                .groups
                .get(current)
                .ok_or_else(|| MappingError::UnknownGroup(current.to_string()))?;
            chain.push(current);
            match &node.extends {
                Some(parent) => current = parent,
                None => return Ok(chain),
            }
        }
    }

    /// Looks up `label` in `group`, then along the extends chain; the first
    /// hit wins.
    pub fn resolve(&self, label: &str, group: &str) -> Result<&Fragment, MappingError> {
        for name in self.chain(group)? {
            if let Some(fragment) = self.groups[name].entries.get(label) {
                return Ok(fragment);
            }
        }
        Err(MappingError::MissingLabel {
            label: label.to_string(),
            group: group.to_string(),
        })
    }

    /// All labels that have an entry in any group.
    pub fn known_labels(&self) -> BTreeSet<String> {
        self.groups
            .values()
            .flat_map(|g| g.entries.keys().cloned())
            .collect()
    }

    pub fn check_model_hash(&self, model_hash: &str) -> Result<(), MappingError> {
        if self.model_hash == model_hash {
            Ok(())
        } else {
            Err(MappingError::HashMismatch {
                table: self.model_hash.clone(),
                model: model_hash.to_string(),
            })
        }
    }
}

/// What [`update_table`] did: labels it added templates for and entries
/// whose label no longer appears in the model.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ChangeReport {
    pub added: Vec<String>,
    pub stale: Vec<String>,
}

impl ChangeReport {
    pub fn is_noop(&self) -> bool {
        self.added.is_empty() && self.stale.is_empty()
    }
}

impl std::fmt::Display for ChangeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} added, {} stale", self.added.len(), self.stale.len())?;
        if !self.added.is_empty() {
            write!(f, "; new: {}", self.added.join(", "))?;
        }
        if !self.stale.is_empty() {
            write!(f, "; stale: {}", self.stale.join(", "))?;
        }
        Ok(())
    }
}

/// Brings a table in line with a model's label inventory. Labels without an
/// entry in any group get a TODO template in the default group; existing
/// entries are never touched; entries for vanished labels are reported
/// stale but kept, so hand-written fragments survive model edits.
pub fn update_table(table: &MappingTable, inventory: &LabelInventory) -> (MappingTable, ChangeReport) {
    let mut next = table.clone();
    next.model_hash = inventory.content_hash.clone();

    let wanted: BTreeSet<&String> = inventory
        .state_labels
        .iter()
        .chain(&inventory.transition_labels)
        .collect();
    let present = next.known_labels();

    let mut report = ChangeReport::default();
    for label in &wanted {
        if !present.contains(*label) {
            let template = match next.flavor {
                Flavor::Exec => Fragment::Exec {
                    commands: Vec::new(),
                    todo: true,
                },
                Flavor::Raw => Fragment::Raw {
                    text: format!("# TODO {label}"),
                    todo: true,
                },
            };
            next.groups
                .entry(DEFAULT_GROUP.to_string())
                .or_default()
                .entries
                .insert((*label).clone(), template);
            report.added.push((*label).clone());
        }
    }
    report.stale = present
        .iter()
        .filter(|l| !wanted.contains(l))
        .cloned()
        .collect();
    (next, report)
}

// ---------------------------------------------------------------------------
// Instantiation
// ---------------------------------------------------------------------------

/// One fully resolved step: the abstract label and its fragment with all
/// placeholders substituted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcreteStep {
    pub fragment: Fragment,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConcreteTestCase {
    pub id: u64,
    pub resolved_steps: Vec<ConcreteStep>,
    pub source_abstract_id: u64,
}

/// Default grouping policy: a state's nearest enclosing submodel name
/// (the segment before the local state name), if any.
pub fn scene_group(state_label: &str) -> Option<String> {
    let mut parts = state_label.rsplit('.');
    parts.next()?;
    parts.next().map(str::to_string)
}

/// Replaces every `{{name}}` in `text` with the rendered value of `name`
/// from `ctx`. Unmatched braces pass through untouched.
fn substitute(text: &str, ctx: &Context, step_label: &str) -> Result<String, MappingError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find("{{") {
        let Some(close) = rest[open + 2..].find("}}") else {
            break;
        };
        let name = rest[open + 2..open + 2 + close].trim();
        out.push_str(&rest[..open]);
        match ctx.get(name) {
            Some(value) => out.push_str(&value.render()),
            None => {
                return Err(MappingError::UnresolvedPlaceholder {
                    name: name.to_string(),
                    label: step_label.to_string(),
                })
            }
        }
        rest = &rest[open + 2 + close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

fn substitute_map(
    map: &BTreeMap<String, String>,
    ctx: &Context,
    label: &str,
) -> Result<BTreeMap<String, String>, MappingError> {
    map.iter()
        .map(|(k, v)| Ok((k.clone(), substitute(v, ctx, label)?)))
        .collect()
}

fn resolve_fragment(
    fragment: &Fragment,
    ctx: &Context,
    label: &str,
) -> Result<Fragment, MappingError> {
    match fragment {
        Fragment::Exec { commands, .. } => {
            let commands = commands
                .iter()
                .map(|c| {
                    Ok(DriverCommand {
                        args: substitute_map(&c.args, ctx, label)?,
                        expect: c
                            .expect
                            .as_ref()
                            .map(|e| substitute_map(e, ctx, label))
                            .transpose()?,
                        name: c.name.clone(),
                    })
                })
                .collect::<Result<Vec<_>, MappingError>>()?;
            Ok(Fragment::Exec {
                commands,
                todo: false,
            })
        }
        Fragment::Raw { text, .. } => Ok(Fragment::Raw {
            text: substitute(text, ctx, label)?,
            todo: false,
        }),
    }
}

/// Turns an abstract test into a concrete one.
///
/// State steps pick their group through `group_for` (falling back to the
/// default group when the policy's choice is not in the table) and may
/// redirect the lookup key through `assertion_keys`. Transition steps look
/// up their bare label in the group of the preceding state, so a shared
/// transition label can mean different code in different scenes.
pub fn instantiate(
    test: &AbstractTestCase,
    table: &MappingTable,
    group_for: impl Fn(&str) -> Option<String>,
    assertion_keys: &BTreeMap<String, String>,
) -> Result<ConcreteTestCase, MappingError> {
    let mut group = DEFAULT_GROUP.to_string();
    let mut resolved_steps = Vec::with_capacity(test.steps.len());
    for step in &test.steps {
        let key = match step.kind {
            LabelKind::State => {
                group = group_for(&step.label)
                    .filter(|g| table.groups.contains_key(g))
                    .unwrap_or_else(|| DEFAULT_GROUP.to_string());
                assertion_keys
                    .get(&step.label)
                    .unwrap_or(&step.label)
                    .clone()
            }
            LabelKind::Transition => step.label.clone(),
        };
        let fragment = table.resolve(&key, &group)?;
        if fragment.is_todo() {
            return Err(MappingError::TodoFragment(key));
        }
        resolved_steps.push(ConcreteStep {
            fragment: resolve_fragment(fragment, &step.ctx, &step.label)?,
            label: step.label.clone(),
        });
    }
    Ok(ConcreteTestCase {
        id: test.id,
        resolved_steps,
        source_abstract_id: test.id,
    })
}

/// [`instantiate`] over a whole suite, stopping at the first error.
pub fn instantiate_suite(
    suite: &[AbstractTestCase],
    table: &MappingTable,
    group_for: impl Fn(&str) -> Option<String>,
    assertion_keys: &BTreeMap<String, String>,
) -> Result<Vec<ConcreteTestCase>, MappingError> {
    suite
        .iter()
        .map(|t| instantiate(t, table, &group_for, assertion_keys))
        .collect()
}

/// Concatenates a raw-flavor concrete test into script text, one fragment
/// per line block, separated by single newlines.
pub fn emit_text(test: &ConcreteTestCase) -> Result<String, MappingError> {
    let mut parts = Vec::with_capacity(test.resolved_steps.len());
    for step in &test.resolved_steps {
        match &step.fragment {
            Fragment::Raw { text, .. } => parts.push(text.as_str()),
            Fragment::Exec { .. } => {
                return Err(MappingError::WrongFlavor {
                    label: step.label.clone(),
                    expected: Flavor::Raw,
                    found: Flavor::Exec,
                })
            }
        }
    }
    Ok(parts.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efsm::Value;
    use crate::generator::Step;
    use proptest::prelude::*;

    fn exec_fragment(name: &str) -> Fragment {
        Fragment::Exec {
            commands: vec![DriverCommand {
                args: BTreeMap::new(),
                expect: None,
                name: name.to_string(),
            }],
            todo: false,
        }
    }

    fn raw_fragment(text: &str) -> Fragment {
        Fragment::Raw {
            text: text.to_string(),
            todo: false,
        }
    }

    fn inventory(states: &[&str], transitions: &[&str]) -> LabelInventory {
        LabelInventory {
            content_hash: "cafe".to_string(),
            source_model: "m".to_string(),
            state_labels: states.iter().map(|s| s.to_string()).collect(),
            transition_labels: transitions.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn state_step(label: &str, ctx: Context) -> Step {
        Step {
            ctx,
            kind: LabelKind::State,
            label: label.to_string(),
        }
    }

    fn trans_step(label: &str, ctx: Context) -> Step {
        Step {
            ctx,
            kind: LabelKind::Transition,
            label: label.to_string(),
        }
    }

    #[test]
    fn update_fills_empty_table_with_templates() {
        let table = MappingTable::new(Flavor::Exec);
        let (next, report) = update_table(&table, &inventory(&["v_A", "v_B"], &["e_Go"]));
        assert_eq!(report.added, vec!["e_Go", "v_A", "v_B"]);
        assert!(report.stale.is_empty());
        assert_eq!(next.model_hash, "cafe");
        let base = &next.groups[DEFAULT_GROUP];
        assert_eq!(base.entries.len(), 3);
        assert!(base.entries.values().all(Fragment::is_todo));
    }

    #[test]
    fn update_is_idempotent_and_leaves_complete_tables_alone() {
        let table = MappingTable::new(Flavor::Exec);
        let inv = inventory(&["v_A"], &["e_Go"]);
        let (once, _) = update_table(&table, &inv);
        let (twice, report) = update_table(&once, &inv);
        assert!(report.is_noop());
        assert_eq!(once.to_json(), twice.to_json());
    }

    #[test]
    fn update_flags_vanished_labels_stale_but_keeps_them() {
        let mut table = MappingTable::new(Flavor::Exec);
        table.groups.insert(
            DEFAULT_GROUP.to_string(),
            Group {
                entries: BTreeMap::from([
                    ("v_A".to_string(), exec_fragment("read")),
                    ("e_Go".to_string(), exec_fragment("go")),
                ]),
                extends: None,
            },
        );
        let (next, report) = update_table(&table, &inventory(&["v_A"], &[]));
        assert!(report.added.is_empty());
        assert_eq!(report.stale, vec!["e_Go"]);
        assert!(next.groups[DEFAULT_GROUP].entries.contains_key("e_Go"));
    }

    #[test]
    fn update_does_not_duplicate_labels_present_in_scene_groups() {
        let mut table = MappingTable::new(Flavor::Exec);
        table
            .groups
            .insert(DEFAULT_GROUP.to_string(), Group::default());
        table.groups.insert(
            "Home".to_string(),
            Group {
                entries: BTreeMap::from([("v_Home".to_string(), exec_fragment("read"))]),
                extends: Some(DEFAULT_GROUP.to_string()),
            },
        );
        let (next, report) = update_table(&table, &inventory(&["v_Home"], &[]));
        assert!(report.is_noop());
        assert!(!next.groups[DEFAULT_GROUP].entries.contains_key("v_Home"));
    }

    fn two_level_table() -> MappingTable {
        let mut table = MappingTable::new(Flavor::Exec);
        table.groups.insert(
            "base".to_string(),
            Group {
                entries: BTreeMap::from([
                    ("e_Back".to_string(), exec_fragment("base_back")),
                    ("e_Only".to_string(), exec_fragment("only")),
                ]),
                extends: None,
            },
        );
        table.groups.insert(
            "Home".to_string(),
            Group {
                entries: BTreeMap::from([("e_Back".to_string(), exec_fragment("home_back"))]),
                extends: Some("base".to_string()),
            },
        );
        table
    }

    #[test]
    fn resolve_walks_child_then_parent() {
        let table = two_level_table();
        let inherited = table.resolve("e_Only", "Home").unwrap();
        assert_eq!(inherited, &exec_fragment("only"));
        let overridden = table.resolve("e_Back", "Home").unwrap();
        assert_eq!(overridden, &exec_fragment("home_back"));
        let direct = table.resolve("e_Back", "base").unwrap();
        assert_eq!(direct, &exec_fragment("base_back"));
    }

    #[test]
    fn resolve_errors_name_label_and_group() {
        let table = two_level_table();
        match table.resolve("e_Missing", "Home").unwrap_err() {
            MappingError::MissingLabel { label, group } => {
                assert_eq!(label, "e_Missing");
                assert_eq!(group, "Home");
            }
            other => panic!("unexpected: {other:?}"),
        }
        assert!(matches!(
            table.resolve("e_Back", "Nowhere").unwrap_err(),
            MappingError::UnknownGroup(g) if g == "Nowhere"
        ));
    }

    #[test]
    fn validate_rejects_cycles_missing_parents_and_mixed_flavors() {
        let mut table = MappingTable::new(Flavor::Exec);
        table.groups.insert(
            "a".to_string(),
            Group {
                entries: BTreeMap::new(),
                extends: Some("b".to_string()),
            },
        );
        table.groups.insert(
            "b".to_string(),
            Group {
                entries: BTreeMap::new(),
                extends: Some("a".to_string()),
            },
        );
        assert!(matches!(
            table.validate().unwrap_err(),
            MappingError::ExtendsCycle(_)
        ));

        let mut dangling = MappingTable::new(Flavor::Exec);
        dangling.groups.insert(
            "a".to_string(),
            Group {
                entries: BTreeMap::new(),
                extends: Some("ghost".to_string()),
            },
        );
        assert!(matches!(
            dangling.validate().unwrap_err(),
            MappingError::UnknownGroup(g) if g == "ghost"
        ));

        let mut mixed = MappingTable::new(Flavor::Exec);
        mixed.groups.insert(
            "base".to_string(),
            Group {
                entries: BTreeMap::from([("v_A".to_string(), raw_fragment("x"))]),
                extends: None,
            },
        );
        assert!(matches!(
            mixed.validate().unwrap_err(),
            MappingError::WrongFlavor { .. }
        ));
    }

    fn abstract_test(steps: Vec<Step>) -> AbstractTestCase {
        AbstractTestCase {
            id: 1,
            seed: 0,
            steps,
        }
    }

    #[test]
    fn instantiate_resolves_every_step_and_substitutes() {
        let mut table = MappingTable::new(Flavor::Exec);
        let mut entries = BTreeMap::new();
        entries.insert("v_Form".to_string(), exec_fragment("read"));
        entries.insert(
            "e_Type".to_string(),
            Fragment::Exec {
                commands: vec![DriverCommand {
                    args: BTreeMap::from([
                        ("field".to_string(), "email".to_string()),
                        ("text".to_string(), "{{email}}".to_string()),
                    ]),
                    expect: None,
                    name: "type_text".to_string(),
                }],
                todo: false,
            },
        );
        entries.insert("v_Filled".to_string(), exec_fragment("read"));
        table.groups.insert(
            DEFAULT_GROUP.to_string(),
            Group {
                entries,
                extends: None,
            },
        );

        let mut ctx = Context::new();
        ctx.set("email", Value::Str("a@b.c".to_string()));
        let test = abstract_test(vec![
            state_step("v_Form", Context::new()),
            trans_step("e_Type", ctx.clone()),
            state_step("v_Filled", ctx),
        ]);
        let concrete = instantiate(&test, &table, scene_group, &BTreeMap::new()).unwrap();
        assert_eq!(concrete.resolved_steps.len(), test.steps.len());
        assert_eq!(concrete.source_abstract_id, 1);
        match &concrete.resolved_steps[1].fragment {
            Fragment::Exec { commands, .. } => {
                assert_eq!(commands[0].args["text"], "a@b.c");
                assert_eq!(commands[0].args["field"], "email");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn instantiate_names_the_missing_label_exactly() {
        let mut table = MappingTable::new(Flavor::Exec);
        table.groups.insert(
            DEFAULT_GROUP.to_string(),
            Group {
                entries: BTreeMap::from([("e_Go".to_string(), exec_fragment("go"))]),
                extends: None,
            },
        );
        let test = abstract_test(vec![
            state_step("v_Home", Context::new()),
            trans_step("e_Go", Context::new()),
            state_step("v_Home", Context::new()),
        ]);
        match instantiate(&test, &table, scene_group, &BTreeMap::new()).unwrap_err() {
            MappingError::MissingLabel { label, .. } => assert_eq!(label, "v_Home"),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn instantiate_rejects_todo_templates() {
        let table = MappingTable::new(Flavor::Exec);
        let inv = inventory(&["v_A"], &[]);
        let (table, _) = update_table(&table, &inv);
        let test = abstract_test(vec![state_step("v_A", Context::new())]);
        assert!(matches!(
            instantiate(&test, &table, scene_group, &BTreeMap::new()).unwrap_err(),
            MappingError::TodoFragment(label) if label == "v_A"
        ));
    }

    #[test]
    fn instantiate_reports_unknown_placeholder_with_step() {
        let mut table = MappingTable::new(Flavor::Exec);
        table.groups.insert(
            DEFAULT_GROUP.to_string(),
            Group {
                entries: BTreeMap::from([(
                    "v_A".to_string(),
                    Fragment::Exec {
                        commands: vec![DriverCommand {
                            args: BTreeMap::new(),
                            expect: Some(BTreeMap::from([(
                                "header".to_string(),
                                "{{missing}}".to_string(),
                            )])),
                            name: "read".to_string(),
                        }],
                        todo: false,
                    },
                )]),
                extends: None,
            },
        );
        let test = abstract_test(vec![state_step("v_A", Context::new())]);
        match instantiate(&test, &table, scene_group, &BTreeMap::new()).unwrap_err() {
            MappingError::UnresolvedPlaceholder { name, label } => {
                assert_eq!(name, "missing");
                assert_eq!(label, "v_A");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn scene_policy_prefers_enclosing_submodel_and_falls_back() {
        assert_eq!(
            scene_group("InGame.HomeScene.v_Scene"),
            Some("HomeScene".to_string())
        );
        assert_eq!(scene_group("EmailLogin.v_Form"), Some("EmailLogin".to_string()));
        assert_eq!(scene_group("v_Welcome"), None);

        // Transition resolution follows the preceding state's group.
        let mut table = two_level_table();
        table
            .groups
            .get_mut("base")
            .unwrap()
            .entries
            .insert("Home.v_Scene".to_string(), exec_fragment("read"));
        let test = abstract_test(vec![
            state_step("Home.v_Scene", Context::new()),
            trans_step("e_Back", Context::new()),
            state_step("Home.v_Scene", Context::new()),
        ]);
        let concrete = instantiate(&test, &table, scene_group, &BTreeMap::new()).unwrap();
        assert_eq!(
            concrete.resolved_steps[1].fragment,
            exec_fragment("home_back"),
            "transition resolves in the scene group, not base"
        );

        // A state whose policy group is absent from the table uses base.
        let test = abstract_test(vec![
            state_step("Ghost.v_Scene", Context::new()),
            trans_step("e_Back", Context::new()),
            state_step("Ghost.v_Scene", Context::new()),
        ]);
        let mut with_ghost_state = table.clone();
        with_ghost_state
            .groups
            .get_mut("base")
            .unwrap()
            .entries
            .insert("Ghost.v_Scene".to_string(), exec_fragment("read"));
        let concrete =
            instantiate(&test, &with_ghost_state, scene_group, &BTreeMap::new()).unwrap();
        assert_eq!(concrete.resolved_steps[1].fragment, exec_fragment("base_back"));
    }

    #[test]
    fn assertion_keys_redirect_state_lookup() {
        let mut table = MappingTable::new(Flavor::Exec);
        table.groups.insert(
            DEFAULT_GROUP.to_string(),
            Group {
                entries: BTreeMap::from([("sharedCheck".to_string(), exec_fragment("read"))]),
                extends: None,
            },
        );
        let keys = BTreeMap::from([("v_A".to_string(), "sharedCheck".to_string())]);
        let test = abstract_test(vec![state_step("v_A", Context::new())]);
        let concrete = instantiate(&test, &table, scene_group, &keys).unwrap();
        assert_eq!(concrete.resolved_steps[0].label, "v_A");
        assert_eq!(concrete.resolved_steps[0].fragment, exec_fragment("read"));
    }

    #[test]
    fn substitution_renders_each_value_type() {
        let mut ctx = Context::new();
        ctx.set("flag", Value::Bool(true));
        ctx.set("count", Value::Int(-3));
        ctx.set("name", Value::Str("Zed".to_string()));
        ctx.set(
            "scenes",
            Value::List(vec!["Home".to_string(), "Topics".to_string()]),
        );
        let text = "{{flag}}|{{count}}|{{name}}|{{scenes}}";
        assert_eq!(
            substitute(text, &ctx, "v_A").unwrap(),
            r#"true|-3|Zed|["Home","Topics"]"#
        );
        assert_eq!(substitute("{{ name }}", &ctx, "v_A").unwrap(), "Zed");
        assert_eq!(substitute("no placeholders", &ctx, "v_A").unwrap(), "no placeholders");
        assert_eq!(substitute("open {{ brace", &ctx, "v_A").unwrap(), "open {{ brace");
    }

    #[test]
    fn emit_joins_raw_fragments_with_newlines() {
        let concrete = ConcreteTestCase {
            id: 1,
            resolved_steps: vec![
                ConcreteStep {
                    fragment: raw_fragment("A"),
                    label: "v_A".to_string(),
                },
                ConcreteStep {
                    fragment: raw_fragment("B"),
                    label: "e_Go".to_string(),
                },
                ConcreteStep {
                    fragment: raw_fragment("C"),
                    label: "v_B".to_string(),
                },
            ],
            source_abstract_id: 1,
        };
        assert_eq!(emit_text(&concrete).unwrap(), "A\nB\nC");

        let empty = ConcreteTestCase {
            id: 2,
            resolved_steps: Vec::new(),
            source_abstract_id: 2,
        };
        assert_eq!(emit_text(&empty).unwrap(), "");

        let exec = ConcreteTestCase {
            id: 3,
            resolved_steps: vec![ConcreteStep {
                fragment: exec_fragment("read"),
                label: "v_A".to_string(),
            }],
            source_abstract_id: 3,
        };
        assert!(matches!(
            emit_text(&exec).unwrap_err(),
            MappingError::WrongFlavor { .. }
        ));
    }

    #[test]
    fn table_json_round_trips_with_sorted_keys() {
        let table = two_level_table();
        let json = table.to_json();
        let back = MappingTable::from_json(&json).unwrap();
        assert_eq!(table, back);
        let base_pos = json.find("\"base\"").unwrap();
        let home_pos = json.find("\"Home\"").unwrap();
        assert!(home_pos < base_pos, "BTreeMap orders 'Home' before 'base'");
        assert!(json.find("\"flavor\"").unwrap() < json.find("\"groups\"").unwrap());
        assert!(json.find("\"groups\"").unwrap() < json.find("\"modelHash\"").unwrap());
    }

    #[test]
    fn template_and_fragment_serial_forms() {
        let (table, _) = update_table(&MappingTable::new(Flavor::Exec), &inventory(&["v_A"], &[]));
        let entry = &table.groups[DEFAULT_GROUP].entries["v_A"];
        assert_eq!(
            serde_json::to_string(entry).unwrap(),
            r#"{"commands":[],"todo":true}"#
        );
        assert_eq!(
            serde_json::to_string(&raw_fragment("do it")).unwrap(),
            r#"{"text":"do it"}"#
        );
        let parsed: Fragment = serde_json::from_str(r#"{"text":"x","todo":true}"#).unwrap();
        assert!(parsed.is_todo());
        assert_eq!(
            serde_json::to_string(&exec_fragment("read")).unwrap(),
            r#"{"commands":[{"name":"read"}]}"#
        );
    }

    #[test]
    fn hash_check_matches_and_mismatches() {
        let mut table = MappingTable::new(Flavor::Exec);
        table.model_hash = "abc".to_string();
        assert!(table.check_model_hash("abc").is_ok());
        assert!(matches!(
            table.check_model_hash("def").unwrap_err(),
            MappingError::HashMismatch { table, model } if table == "abc" && model == "def"
        ));
    }

    fn arb_label() -> impl Strategy<Value = String> {
        prop::sample::select(vec![
            "v_A", "v_B", "v_C", "e_Go", "e_Back", "e_Open", "e_Close", "v_D",
        ])
        .prop_map(str::to_string)
    }

    proptest! {
        #[test]
        fn update_table_idempotent_for_any_inventory(
            states in prop::collection::btree_set(arb_label(), 0..6),
            transitions in prop::collection::btree_set(arb_label(), 0..6),
        ) {
            let inv = LabelInventory {
                content_hash: "h".to_string(),
                source_model: "m".to_string(),
                state_labels: states.into_iter().collect(),
                transition_labels: transitions.into_iter().collect(),
            };
            let (once, _) = update_table(&MappingTable::new(Flavor::Exec), &inv);
            let (twice, report) = update_table(&once, &inv);
            prop_assert!(report.added.is_empty());
            prop_assert_eq!(once.to_json(), twice.to_json());
        }

        #[test]
        fn resolve_matches_linear_scan_on_three_level_chains(
            leaf in prop::collection::btree_map(arb_label(), "[a-z]{1,4}", 0..4),
            mid in prop::collection::btree_map(arb_label(), "[a-z]{1,4}", 0..4),
            root in prop::collection::btree_map(arb_label(), "[a-z]{1,4}", 0..4),
            query in arb_label(),
        ) {
            let to_entries = |m: &BTreeMap<String, String>| {
                m.iter()
                    .map(|(k, v)| (k.clone(), raw_fragment(v)))
                    .collect::<BTreeMap<_, _>>()
            };
            let mut table = MappingTable::new(Flavor::Raw);
            table.groups.insert("root".to_string(), Group { entries: to_entries(&root), extends: None });
            table.groups.insert("mid".to_string(), Group { entries: to_entries(&mid), extends: Some("root".to_string()) });
            table.groups.insert("leaf".to_string(), Group { entries: to_entries(&leaf), extends: Some("mid".to_string()) });

            // Oracle: first hit scanning leaf, mid, root in that order.
            let expected = leaf.get(&query).or_else(|| mid.get(&query)).or_else(|| root.get(&query));
            match (table.resolve(&query, "leaf"), expected) {
                (Ok(f), Some(text)) => prop_assert_eq!(f, &raw_fragment(text)),
                (Err(MappingError::MissingLabel { .. }), None) => {}
                (got, want) => prop_assert!(false, "resolve {:?} vs oracle {:?}", got, want),
            }
        }
    }
}
