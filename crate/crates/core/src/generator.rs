//! Abstract test generation by seeded random traversal.
//!
//! A suite is grown one test at a time until the stopping criterion is
//! satisfied. Each test is a walk from the start state: at every state one
//! of the guard-enabled transitions is chosen uniformly at random, context
//! snapshots are recorded, and the walk ends on reaching an exit state
//! (after at least one transition) or the per-test step limit.
//!
//! Generation is a pure function of (model, criterion, seed, initial
//! context); serialized suites are byte-identical across runs.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::efsm::{Context, EfsmModel, EfsmError, LabelKind, TransitionKey};

pub const DEFAULT_MAX_STEPS: usize = 200;
/// Generation cap when the criterion carries no test-count node.
pub const DEFAULT_TEST_BUDGET: usize = 1000;
/// Consecutive dead-end discards tolerated before giving up.
pub const GUARD_TRAP_LIMIT: usize = 100;
pub const DEFAULT_CRITERIA: &str = "states:100,transitions:100,tests:100";

// ---------------------------------------------------------------------------
// Stopping criteria
// ---------------------------------------------------------------------------

/// When to stop growing a suite. Composable with [`StoppingCriterion::All`]
/// and [`StoppingCriterion::Any`].
#[derive(Clone, Debug, PartialEq)]
pub enum StoppingCriterion {
    /// Percentage of reachable states that must be visited, in (0, 100].
    StateCoverage(f64),
    /// Percentage of reachable transitions that must be traversed.
    TransitionCoverage(f64),
    /// Number of test cases to produce; also caps generation.
    MaxTestCases(usize),
    /// Step limit per test (states and transitions both count). Not a
    /// stopping goal by itself; it configures the walks.
    MaxStepsPerTest(usize),
    All(Vec<StoppingCriterion>),
    Any(Vec<StoppingCriterion>),
}

impl Default for StoppingCriterion {
    /// Full state and transition coverage with exactly 100 test cases.
    fn default() -> Self {
        parse_criteria(DEFAULT_CRITERIA).expect("default criteria string parses")
    }
}

impl StoppingCriterion {
    /// Rejects out-of-range targets and criteria with no goal to reach.
    pub fn validate(&self) -> Result<(), String> {
        self.check_targets()?;
        if !self.has_goal() {
            return Err(
                "criterion needs at least one coverage or test-count component".to_string(),
            );
        }
        Ok(())
    }

    fn check_targets(&self) -> Result<(), String> {
        match self {
            StoppingCriterion::StateCoverage(pct)
            | StoppingCriterion::TransitionCoverage(pct) => {
                if *pct > 0.0 && *pct <= 100.0 {
                    Ok(())
                } else {
                    Err(format!("coverage target {pct} out of range (0, 100]"))
                }
            }
            StoppingCriterion::MaxTestCases(n) | StoppingCriterion::MaxStepsPerTest(n) => {
                if *n > 0 {
                    Ok(())
                } else {
                    Err("count criteria must be positive".to_string())
                }
            }
            StoppingCriterion::All(cs) | StoppingCriterion::Any(cs) => {
                cs.iter().try_for_each(Self::check_targets)
            }
        }
    }

    fn has_goal(&self) -> bool {
        match self {
            StoppingCriterion::StateCoverage(_)
            | StoppingCriterion::TransitionCoverage(_)
            | StoppingCriterion::MaxTestCases(_) => true,
            StoppingCriterion::MaxStepsPerTest(_) => false,
            StoppingCriterion::All(cs) | StoppingCriterion::Any(cs) => {
                cs.iter().any(Self::has_goal)
            }
        }
    }

    /// The tightest per-test step limit mentioned anywhere in the tree.
    pub fn max_steps(&self) -> usize {
        self.fold_min(|c| match c {
            StoppingCriterion::MaxStepsPerTest(n) => Some(*n),
            _ => None,
        })
        .unwrap_or(DEFAULT_MAX_STEPS)
    }

    /// The tightest test-count bound, used as the generation cap.
    pub fn test_cap(&self) -> usize {
        self.fold_min(|c| match c {
            StoppingCriterion::MaxTestCases(n) => Some(*n),
            _ => None,
        })
        .unwrap_or(DEFAULT_TEST_BUDGET)
    }

    fn fold_min(&self, pick: impl Fn(&Self) -> Option<usize> + Copy) -> Option<usize> {
        match self {
            StoppingCriterion::All(cs) | StoppingCriterion::Any(cs) => {
                cs.iter().filter_map(|c| c.fold_min(pick)).min()
            }
            leaf => pick(leaf),
        }
    }

    /// Whether the criterion is met. Step-limit nodes are neutral: they
    /// never satisfy an `Any` and never block an `All`.
    pub fn satisfied(&self, ledger: &CoverageLedger, tests: usize) -> bool {
        self.satisfied_inner(ledger, tests).unwrap_or(false)
    }

    fn satisfied_inner(&self, ledger: &CoverageLedger, tests: usize) -> Option<bool> {
        match self {
            StoppingCriterion::StateCoverage(pct) => Some(ledger.state_coverage() >= *pct),
            StoppingCriterion::TransitionCoverage(pct) => {
                Some(ledger.transition_coverage() >= *pct)
            }
            StoppingCriterion::MaxTestCases(n) => Some(tests >= *n),
            StoppingCriterion::MaxStepsPerTest(_) => None,
            StoppingCriterion::All(cs) => Some(
                cs.iter()
                    .filter_map(|c| c.satisfied_inner(ledger, tests))
                    .all(|b| b),
            ),
            StoppingCriterion::Any(cs) => Some(
                cs.iter()
                    .filter_map(|c| c.satisfied_inner(ledger, tests))
                    .any(|b| b),
            ),
        }
    }
}

/// Parses the criteria mini-language: comma-separated atoms form an "all
/// of" group, `|`-separated groups form an "any of" choice. Atoms are
/// `states:N`, `transitions:N`, `tests:N` and `steps:N`.
pub fn parse_criteria(src: &str) -> Result<StoppingCriterion, String> {
    fn atom(s: &str) -> Result<StoppingCriterion, String> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| format!("bad criterion atom '{s}', expected kind:value"))?;
        let number = || {
            value
                .trim()
                .parse::<usize>()
                .map_err(|_| format!("bad number '{value}' in criterion '{s}'"))
        };
        match kind.trim() {
            "states" => Ok(StoppingCriterion::StateCoverage(number()? as f64)),
            "transitions" => Ok(StoppingCriterion::TransitionCoverage(number()? as f64)),
            "tests" => Ok(StoppingCriterion::MaxTestCases(number()?)),
            "steps" => Ok(StoppingCriterion::MaxStepsPerTest(number()?)),
            other => Err(format!(
                "unknown criterion kind '{other}' (expected states, transitions, tests or steps)"
            )),
        }
    }
    fn group(s: &str) -> Result<StoppingCriterion, String> {
        let mut atoms = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(atom)
            .collect::<Result<Vec<_>, _>>()?;
        match atoms.len() {
            0 => Err("empty criterion group".to_string()),
            1 => Ok(atoms.remove(0)),
            _ => Ok(StoppingCriterion::All(atoms)),
        }
    }
    let mut groups = src
        .split('|')
        .map(group)
        .collect::<Result<Vec<_>, _>>()?;
    let criterion = match groups.len() {
        1 => groups.remove(0),
        _ => StoppingCriterion::Any(groups),
    };
    criterion.validate()?;
    Ok(criterion)
}

// ---------------------------------------------------------------------------
// Test cases and coverage
// ---------------------------------------------------------------------------

/// One element of a test-case walk. Transition steps snapshot the context
/// after their actions ran, so a transition and the state that follows it
/// share a snapshot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub ctx: Context,
    pub kind: LabelKind,
    pub label: String,
}

/// A generated walk: alternating state and transition steps, starting and
/// ending with a state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractTestCase {
    pub id: u64,
    pub seed: u64,
    pub steps: Vec<Step>,
}

impl AbstractTestCase {
    /// (source, label, target) triples for the transition steps.
    pub fn transition_keys(&self) -> Vec<TransitionKey> {
        self.steps
            .windows(3)
            .filter(|w| w[1].kind == LabelKind::Transition)
            .map(|w| TransitionKey {
                source: w[0].label.clone(),
                label: w[1].label.clone(),
                target: w[2].label.clone(),
            })
            .collect()
    }
}

fn ser_keys<S: Serializer>(keys: &BTreeSet<TransitionKey>, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(keys.iter().map(|k| k.to_string()))
}

/// Coverage bookkeeping over the reachable part of a model. Unreachable
/// elements are excluded from the denominators and listed separately.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CoverageLedger {
    #[serde(skip)]
    reachable_states: BTreeSet<String>,
    #[serde(skip)]
    reachable_transitions: BTreeSet<TransitionKey>,
    pub state_denominator: usize,
    pub transition_denominator: usize,
    #[serde(serialize_with = "ser_keys")]
    pub traversed_transitions: BTreeSet<TransitionKey>,
    pub unreachable_states: Vec<String>,
    pub unreachable_transitions: Vec<String>,
    pub visited_states: BTreeSet<String>,
}

impl CoverageLedger {
    pub fn new(model: &EfsmModel) -> Self {
        let (reachable_states, reachable_transitions) = model.reachable();
        let unreachable_states = model
            .states
            .iter()
            .map(|s| s.label.text().to_string())
            .filter(|l| !reachable_states.contains(l))
            .collect();
        let unreachable_transitions = model
            .transitions
            .iter()
            .map(|t| t.key())
            .filter(|k| !reachable_transitions.contains(k))
            .map(|k| k.to_string())
            .collect();
        CoverageLedger {
            state_denominator: reachable_states.len(),
            transition_denominator: reachable_transitions.len(),
            reachable_states,
            reachable_transitions,
            traversed_transitions: BTreeSet::new(),
            unreachable_states,
            unreachable_transitions,
            visited_states: BTreeSet::new(),
        }
    }

    /// Folds one test's steps into the ledger. Only reachable elements
    /// count, keeping visited sets inside the denominators.
    pub fn record(&mut self, test: &AbstractTestCase) {
        for step in &test.steps {
            if step.kind == LabelKind::State && self.reachable_states.contains(&step.label) {
                self.visited_states.insert(step.label.clone());
            }
        }
        for key in test.transition_keys() {
            if self.reachable_transitions.contains(&key) {
                self.traversed_transitions.insert(key);
            }
        }
    }

    pub fn state_coverage(&self) -> f64 {
        percentage(self.visited_states.len(), self.state_denominator)
    }

    pub fn transition_coverage(&self) -> f64 {
        percentage(self.traversed_transitions.len(), self.transition_denominator)
    }

    pub fn uncovered_states(&self) -> Vec<String> {
        self.reachable_states
            .difference(&self.visited_states)
            .cloned()
            .collect()
    }

    pub fn uncovered_transitions(&self) -> Vec<String> {
        self.reachable_transitions
            .difference(&self.traversed_transitions)
            .map(|k| k.to_string())
            .collect()
    }
}

fn percentage(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        100.0
    } else {
        part as f64 / whole as f64 * 100.0
    }
}

// ---------------------------------------------------------------------------
// Seed derivation
// ---------------------------------------------------------------------------

/// Derives the per-test seed for test `index` of a suite.
///
/// This is the splitmix64 finalizer over `suite_seed + index * golden`,
/// published so any single test can be regenerated in isolation.
pub fn derive_seed(suite_seed: u64, index: u64) -> u64 {
    let mut z = suite_seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// A state with no enabled outgoing transition, with the guard values that
/// blocked each edge.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("dead end at '{state}': {detail}")]
pub struct DeadEnd {
    pub state: String,
    pub detail: String,
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("invalid stopping criterion: {0}")]
    InvalidCriterion(String),
    #[error("model has no start state")]
    NoStartState,
    #[error(
        "budget of {budget} test cases exhausted with {uncovered} element(s) uncovered: {}",
        detail.join(", ")
    )]
    BudgetExhausted {
        budget: usize,
        uncovered: usize,
        detail: Vec<String>,
    },
    #[error("{attempts} consecutive walks hit dead ends; last: {last}")]
    GuardTrap { attempts: usize, last: DeadEnd },
    #[error(transparent)]
    Efsm(#[from] EfsmError),
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateOneError {
    #[error(transparent)]
    DeadEnd(#[from] DeadEnd),
    #[error("model has no start state")]
    NoStartState,
    #[error(transparent)]
    Efsm(#[from] EfsmError),
}

/// Generates a single walk. `id` is left 0 for the caller to assign.
pub fn generate_one(
    model: &EfsmModel,
    seed: u64,
    max_steps: usize,
    initial: &Context,
) -> Result<AbstractTestCase, GenerateOneError> {
    let start = model
        .start_state()
        .ok_or(GenerateOneError::NoStartState)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = initial.clone();
    let mut current = start.label.text().to_string();
    let mut steps = vec![Step {
        ctx: ctx.clone(),
        kind: LabelKind::State,
        label: current.clone(),
    }];

    loop {
        let is_exit = model.state(&current).is_some_and(|s| s.is_exit);
        if is_exit && steps.len() > 1 {
            break;
        }
        if steps.len() + 2 > max_steps {
            break;
        }
        let enabled = model.enabled_transitions(&current, &ctx)?;
        if enabled.is_empty() {
            return Err(dead_end(model, &current, &ctx).into());
        }
        let choice = enabled[rng.gen_range(0..enabled.len())];
        let (target, next_ctx) = model.apply_transition(choice, &ctx)?;
        ctx = next_ctx;
        steps.push(Step {
            ctx: ctx.clone(),
            kind: LabelKind::Transition,
            label: choice.label.text().to_string(),
        });
        current = target.text().to_string();
        steps.push(Step {
            ctx: ctx.clone(),
            kind: LabelKind::State,
            label: current.clone(),
        });
    }

    Ok(AbstractTestCase { id: 0, seed, steps })
}

fn dead_end(model: &EfsmModel, state: &str, ctx: &Context) -> DeadEnd {
    let reg = crate::expr::BuiltinRegistry::standard();
    let mut parts = Vec::new();
    for t in model.outgoing(state) {
        let verdict = match &t.guard {
            None => "unguarded".to_string(),
            Some(g) => match crate::expr::eval_expr(g, ctx, reg) {
                Ok(v) => format!("`{g}` = {}", v.render()),
                Err(e) => format!("`{g}` failed: {e}"),
            },
        };
        parts.push(format!("{}: {verdict}", t.key()));
    }
    let detail = if parts.is_empty() {
        "no outgoing transitions".to_string()
    } else {
        parts.join("; ")
    };
    DeadEnd {
        state: state.to_string(),
        detail,
    }
}

/// Grows a suite until the criterion is satisfied.
///
/// Per-test seeds are derived from (seed, attempt index), so discarded
/// dead-end walks simply advance to the next derived seed. Identical
/// arguments always produce identical suites.
pub fn generate_suite(
    model: &EfsmModel,
    criterion: &StoppingCriterion,
    seed: u64,
    initial: &Context,
) -> Result<(Vec<AbstractTestCase>, CoverageLedger), GenerateError> {
    criterion
        .validate()
        .map_err(GenerateError::InvalidCriterion)?;
    if model.start_state().is_none() {
        return Err(GenerateError::NoStartState);
    }
    let max_steps = criterion.max_steps();
    let cap = criterion.test_cap();
    let mut ledger = CoverageLedger::new(model);
    let mut tests: Vec<AbstractTestCase> = Vec::new();
    let mut attempt: u64 = 0;
    let mut consecutive_dead_ends = 0;

    while !criterion.satisfied(&ledger, tests.len()) {
        if tests.len() >= cap {
            let uncovered: Vec<String> = ledger
                .uncovered_states()
                .into_iter()
                .chain(ledger.uncovered_transitions())
                .collect();
            return Err(GenerateError::BudgetExhausted {
                budget: cap,
                uncovered: uncovered.len(),
                detail: uncovered,
            });
        }
        let test_seed = derive_seed(seed, attempt);
        attempt += 1;
        match generate_one(model, test_seed, max_steps, initial) {
            Ok(mut test) => {
                consecutive_dead_ends = 0;
                test.id = tests.len() as u64 + 1;
                ledger.record(&test);
                tests.push(test);
            }
            Err(GenerateOneError::DeadEnd(last)) => {
                consecutive_dead_ends += 1;
                if consecutive_dead_ends >= GUARD_TRAP_LIMIT {
                    return Err(GenerateError::GuardTrap {
                        attempts: consecutive_dead_ends,
                        last,
                    });
                }
            }
            Err(GenerateOneError::NoStartState) => return Err(GenerateError::NoStartState),
            Err(GenerateOneError::Efsm(e)) => return Err(GenerateError::Efsm(e)),
        }
    }
    Ok((tests, ledger))
}

// ---------------------------------------------------------------------------
// Post-hoc coverage measurement
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MeasureError {
    #[error("suite references unknown state '{0}'")]
    UnknownState(String),
    #[error("suite references unknown transition '{0}'")]
    UnknownTransition(String),
}

/// Recomputes a ledger from a suite alone, independent of generation-time
/// bookkeeping.
pub fn measure_coverage(
    suite: &[AbstractTestCase],
    model: &EfsmModel,
) -> Result<CoverageLedger, MeasureError> {
    let mut ledger = CoverageLedger::new(model);
    let all_keys: BTreeSet<TransitionKey> = model.transitions.iter().map(|t| t.key()).collect();
    for test in suite {
        for step in &test.steps {
            if step.kind == LabelKind::State && model.state(&step.label).is_none() {
                return Err(MeasureError::UnknownState(step.label.clone()));
            }
        }
        for key in test.transition_keys() {
            if !all_keys.contains(&key) {
                return Err(MeasureError::UnknownTransition(key.to_string()));
            }
        }
        ledger.record(test);
    }
    Ok(ledger)
}

// ---------------------------------------------------------------------------
// Suite files
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum SuiteIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

/// Writes a suite as JSON Lines, one test per line, keys in fixed order.
pub fn write_suite<W: Write>(suite: &[AbstractTestCase], mut out: W) -> Result<(), SuiteIoError> {
    for test in suite {
        serde_json::to_writer(&mut out, test).map_err(|e| SuiteIoError::Json {
            line: test.id as usize,
            source: e,
        })?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_suite<R: BufRead>(input: R) -> Result<Vec<AbstractTestCase>, SuiteIoError> {
    let mut suite = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let test = serde_json::from_str(&line).map_err(|source| SuiteIoError::Json {
            line: i + 1,
            source,
        })?;
        suite.push(test);
    }
    Ok(suite)
}
