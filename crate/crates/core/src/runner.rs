//! Concrete test execution against a pluggable driver.
//!
//! A driver owns the connection to a system under test and hands out
//! sessions; the runner opens a fresh session per test, feeds it the
//! driver commands of each resolved step in order, and checks every
//! command's expectations against the response. Tests fail fast: the first
//! mismatching step ends the test, later steps are skipped, and the suite
//! carries on. Reports serialize to sorted-key JSON or JUnit XML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::mapping::{ConcreteTestCase, Fragment};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error(String),
}

impl Status {
    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Ok)
    }

    fn describe(&self) -> String {
        match self {
            Status::Ok => "ok".to_string(),
            Status::Error(text) => format!("error: {text}"),
        }
    }
}

/// What the system under test answered: a status plus named render fields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub fields: BTreeMap<String, String>,
    pub status: Status,
}

impl Response {
    pub fn ok(fields: BTreeMap<String, String>) -> Self {
        Response {
            fields,
            status: Status::Ok,
        }
    }

    pub fn error(text: impl Into<String>, fields: BTreeMap<String, String>) -> Self {
        Response {
            fields,
            status: Status::Error(text.into()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("driver unavailable: {0}")]
    Unavailable(String),
    #[error("session error: {0}")]
    Session(String),
}

/// One synchronous connection to the system under test. Commands within a
/// session execute strictly in call order.
pub trait DriverSession: Send {
    fn apply(
        &mut self,
        command: &str,
        args: &BTreeMap<String, String>,
    ) -> Result<Response, DriverError>;

    /// Releases session resources; the default is a no-op for in-process
    /// drivers.
    fn end_session(&mut self) {}
}

/// A factory for sessions. Drivers are shared across worker threads, so a
/// fresh session must not depend on other live sessions.
pub trait Driver: Send + Sync {
    fn start_session(&self) -> Result<Box<dyn DriverSession>, DriverError>;
}

/// Driver configuration file contents. `qtds_path` is resolved relative to
/// the config file's directory on load. `profile` is an opaque tag for
/// drivers that target device matrices; the in-process driver ignores it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DriverConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_state: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qtds_path: Option<PathBuf>,
}

impl DriverConfig {
    pub fn load(path: &Path) -> Result<Self, DriverError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DriverError::Unavailable(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: DriverConfig = serde_json::from_str(&text)
            .map_err(|e| DriverError::Unavailable(format!("bad config {}: {e}", path.display())))?;
        if let (Some(qtds), Some(dir)) = (&config.qtds_path, path.parent()) {
            if qtds.is_relative() {
                config.qtds_path = Some(dir.join(qtds));
            }
        }
        Ok(config)
    }
}

/// Builds one of the bundled drivers by name.
pub fn builtin_driver(name: &str, config: &DriverConfig) -> Result<Box<dyn Driver>, DriverError> {
    match name {
        "refsut" => Ok(Box::new(crate::refsut::RefSutDriver::from_config(config)?)),
        other => Err(DriverError::Unavailable(format!(
            "unknown driver '{other}' (available: refsut)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Passed,
    Failed,
    Errored,
}

/// One expectation that did not hold. `actual` is absent when the response
/// lacked the field entirely.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDiff {
    pub actual: Option<String>,
    pub expected: String,
    pub field: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureDetail {
    pub diff: Vec<FieldDiff>,
    pub label: String,
    pub message: String,
}

/// One executed driver command with its response, for post-mortems.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub args: BTreeMap<String, String>,
    pub command: String,
    pub label: String,
    pub response: Response,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TestResult {
    pub failing_step: Option<usize>,
    pub failure: Option<FailureDetail>,
    pub id: u64,
    pub trace: Vec<TraceEntry>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TestReport {
    pub errored: usize,
    pub failed: usize,
    pub passed: usize,
    pub results: Vec<TestResult>,
    pub total: usize,
}

impl TestReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0 && self.errored == 0
    }
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

enum StepOutcome {
    Continue,
    Stop(Verdict, FailureDetail),
}

fn check_expectations(
    expect: Option<&BTreeMap<String, String>>,
    response: &Response,
    label: &str,
) -> Option<FailureDetail> {
    let mut diff = Vec::new();
    match expect {
        None => {
            // No expectations means the command must at least succeed.
            if !response.status.is_ok() {
                diff.push(FieldDiff {
                    actual: Some(response.status.describe()),
                    expected: "ok".to_string(),
                    field: "status".to_string(),
                });
            }
        }
        Some(map) => {
            for (field, expected) in map {
                if field == "status" {
                    let actual = response.status.describe();
                    let matches = match expected.as_str() {
                        "ok" => response.status.is_ok(),
                        "error" => !response.status.is_ok(),
                        exact => actual == exact,
                    };
                    if !matches {
                        diff.push(FieldDiff {
                            actual: Some(actual),
                            expected: expected.clone(),
                            field: field.clone(),
                        });
                    }
                } else {
                    let actual = response.fields.get(field);
                    if actual != Some(expected) {
                        diff.push(FieldDiff {
                            actual: actual.cloned(),
                            expected: expected.clone(),
                            field: field.clone(),
                        });
                    }
                }
            }
            if map.is_empty() && !response.status.is_ok() {
                diff.push(FieldDiff {
                    actual: Some(response.status.describe()),
                    expected: "ok".to_string(),
                    field: "status".to_string(),
                });
            }
        }
    }
    if diff.is_empty() {
        None
    } else {
        let fields = diff
            .iter()
            .map(|d| d.field.as_str())
            .collect::<Vec<_>>()
            .join(", ");
        Some(FailureDetail {
            diff,
            label: label.to_string(),
            message: format!("expectation mismatch on {fields}"),
        })
    }
}

fn run_one(test: &ConcreteTestCase, driver: &dyn Driver) -> TestResult {
    let mut result = TestResult {
        failing_step: None,
        failure: None,
        id: test.id,
        trace: Vec::new(),
        verdict: Verdict::Passed,
    };
    let mut session = match driver.start_session() {
        Ok(session) => session,
        Err(e) => {
            result.verdict = Verdict::Errored;
            result.failure = Some(FailureDetail {
                diff: Vec::new(),
                label: String::new(),
                message: format!("session start failed: {e}"),
            });
            return result;
        }
    };

    'steps: for (index, step) in test.resolved_steps.iter().enumerate() {
        let commands = match &step.fragment {
            Fragment::Exec { commands, .. } => commands,
            Fragment::Raw { .. } => {
                result.verdict = Verdict::Errored;
                result.failing_step = Some(index);
                result.failure = Some(FailureDetail {
                    diff: Vec::new(),
                    label: step.label.clone(),
                    message: "raw fragment is not executable; re-instantiate with an exec table"
                        .to_string(),
                });
                break 'steps;
            }
        };
        for command in commands {
            let outcome = match session.apply(&command.name, &command.args) {
                Err(e) => StepOutcome::Stop(
                    Verdict::Errored,
                    FailureDetail {
                        diff: Vec::new(),
                        label: step.label.clone(),
                        message: format!("driver error on '{}': {e}", command.name),
                    },
                ),
                Ok(response) => {
                    result.trace.push(TraceEntry {
                        args: command.args.clone(),
                        command: command.name.clone(),
                        label: step.label.clone(),
                        response: response.clone(),
                    });
                    match check_expectations(command.expect.as_ref(), &response, &step.label) {
                        Some(failure) => StepOutcome::Stop(Verdict::Failed, failure),
                        None => StepOutcome::Continue,
                    }
                }
            };
            if let StepOutcome::Stop(verdict, failure) = outcome {
                result.verdict = verdict;
                result.failing_step = Some(index);
                result.failure = Some(failure);
                break 'steps;
            }
        }
    }
    session.end_session();
    result
}

/// Runs every test in its own fresh session, `jobs` tests at a time, and
/// assembles results in test order regardless of completion order.
pub fn run_suite(tests: &[ConcreteTestCase], driver: &dyn Driver, jobs: usize) -> TestReport {
    let workers = jobs.max(1).min(tests.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<TestResult>>> = Mutex::new(vec![None; tests.len()]);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= tests.len() {
                    break;
                }
                let result = run_one(&tests[index], driver);
                slots.lock().unwrap()[index] = Some(result);
            });
        }
    });

    let results: Vec<TestResult> = slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every test produced a result"))
        .collect();
    let count = |v: Verdict| results.iter().filter(|r| r.verdict == v).count();
    TestReport {
        errored: count(Verdict::Errored),
        failed: count(Verdict::Failed),
        passed: count(Verdict::Passed),
        total: results.len(),
        results,
    }
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Junit,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "junit" => Ok(ReportFormat::Junit),
            other => Err(format!("unknown report format '{other}' (json or junit)")),
        }
    }
}

fn xml_escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            other => out.push(other),
        }
    }
    out
}

fn failure_text(result: &TestResult) -> String {
    let Some(failure) = &result.failure else {
        return String::new();
    };
    let mut parts = Vec::new();
    if let Some(step) = result.failing_step {
        parts.push(format!("step {step} ({})", failure.label));
    }
    parts.push(failure.message.clone());
    for d in &failure.diff {
        parts.push(format!(
            "{}: expected \"{}\", actual {}",
            d.field,
            d.expected,
            match &d.actual {
                Some(a) => format!("\"{a}\""),
                None => "absent".to_string(),
            }
        ));
    }
    parts.join("; ")
}

pub fn write_report(report: &TestReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut text =
                serde_json::to_string_pretty(report).expect("report serializes");
            text.push('\n');
            text
        }
        ReportFormat::Junit => {
            let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
            out.push_str(&format!(
                "<testsuite name=\"mbt\" tests=\"{}\" failures=\"{}\" errors=\"{}\">\n",
                report.total, report.failed, report.errored
            ));
            for result in &report.results {
                match result.verdict {
                    Verdict::Passed => {
                        out.push_str(&format!("  <testcase name=\"test-{}\"/>\n", result.id));
                    }
                    Verdict::Failed => {
                        out.push_str(&format!(
                            "  <testcase name=\"test-{}\">\n    <failure message=\"{}\"/>\n  </testcase>\n",
                            result.id,
                            xml_escape(&failure_text(result))
                        ));
                    }
                    Verdict::Errored => {
                        out.push_str(&format!(
                            "  <testcase name=\"test-{}\">\n    <error message=\"{}\"/>\n  </testcase>\n",
                            result.id,
                            xml_escape(&failure_text(result))
                        ));
                    }
                }
            }
            out.push_str("</testsuite>\n");
            out
        }
    }
}

pub fn read_report(text: &str) -> Result<TestReport, serde_json::Error> {
    serde_json::from_str(text)
}
