//! Command-line front end for the model-based-testing toolchain.
//!
//! Subcommands follow the pipeline order: `validate` a model, `generate`
//! an abstract suite from it, keep a mapping table in sync with `labels`,
//! `instantiate` the suite into concrete tests, `run` them against a
//! driver, and reformat saved reports with `report`.
//!
//! Exit codes: 0 success, 1 test failures, 2 usage or IO errors,
//! 3 model validation errors.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mbt_core::generator::{
    generate_suite, parse_criteria, read_suite, write_suite, DEFAULT_CRITERIA,
};
use mbt_core::mapping::{
    emit_text, instantiate_suite, scene_group, update_table, Flavor, MappingTable,
};
use mbt_core::model_io::{extract_labels, load_bundle, validate};
use mbt_core::runner::{builtin_driver, read_report, run_suite, write_report, DriverConfig, ReportFormat};
use mbt_core::{ConcreteTestCase, EfsmModel};

const EXIT_TEST_FAILURES: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mbt",
    version,
    about = "Model-based test generation, instantiation and execution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a model, flatten its submodel hierarchy and report findings.
    Validate {
        /// Model file (.efsm or .graphml) or a directory of .graphml files.
        model: PathBuf,
    },
    /// Generate an abstract test suite by seeded random traversal.
    Generate {
        model: PathBuf,
        /// Suite seed; per-test seeds are derived from it.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Stopping criteria: comma for "all of", '|' for "any of";
        /// atoms are states:N, transitions:N, tests:N, steps:N.
        #[arg(long, default_value = DEFAULT_CRITERIA)]
        criteria: String,
        /// Output suite file (JSON Lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a mapping table against a model's label inventory.
    Labels {
        model: PathBuf,
        /// Mapping table JSON file; created on --update if missing.
        #[arg(long)]
        table: PathBuf,
        /// Write TODO templates for unmapped labels into the table.
        #[arg(long)]
        update: bool,
        /// Fragment flavor when creating a new table.
        #[arg(long, default_value = "exec", value_parser = ["exec", "raw"])]
        flavor: String,
    },
    /// Resolve an abstract suite into concrete tests via a mapping table.
    Instantiate {
        /// Abstract suite file (JSON Lines).
        suite: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// exec writes concrete tests as JSON Lines; emit writes raw
        /// fragment text.
        #[arg(long, default_value = "exec", value_parser = ["exec", "emit"])]
        mode: String,
        /// Model to check the table's hash against and to take assertion
        /// key overrides from.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Execute a concrete suite against a driver and write a JSON report.
    Run {
        /// Concrete suite file (JSON Lines).
        concrete: PathBuf,
        /// Driver name; built in: refsut.
        #[arg(long)]
        driver: String,
        /// Driver config JSON: {baseState, faults, qtdsPath, profile}.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Tests to run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Report output file (JSON).
        #[arg(long)]
        report: PathBuf,
    },
    /// Reprint a saved report as json or junit.
    Report {
        /// Report file written by `run`.
        file: PathBuf,
        #[arg(long, value_parser = ["json", "junit"])]
        format: String,
    },
}

/// A command failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Display) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))
}

/// Loads a model file or directory and flattens it to a single machine.
/// Unreadable files are usage errors; model defects are validation errors.
fn load_flat(path: &Path) -> Result<EfsmModel, Failure> {
    use mbt_core::model_io::LoadError;
    let bundle = load_bundle(path).map_err(|e| match e {
        LoadError::Io { .. } => fail(EXIT_USAGE, e),
        other => fail(EXIT_VALIDATION, other),
    })?;
    bundle.flatten().map_err(|e| fail(EXIT_VALIDATION, e))
}

fn cmd_validate(model_path: &Path) -> Result<u8, Failure> {
    let flat = load_flat(model_path)?;
    let report = validate(&flat);
    for finding in &report.findings {
        println!("{finding}");
    }
    if report.has_errors() {
        return Err(fail(
            EXIT_VALIDATION,
            format!("{} validation error(s)", report.errors().count()),
        ));
    }
    println!(
        "ok: model '{}', {} states, {} transitions",
        flat.name,
        flat.states.len(),
        flat.transitions.len()
    );
    Ok(0)
}

/// Loads, flattens and validates; errors abort with exit 3.
fn load_checked(path: &Path) -> Result<EfsmModel, Failure> {
    let flat = load_flat(path)?;
    let report = validate(&flat);
    if report.has_errors() {
        let mut lines: Vec<String> = report.errors().map(|f| f.to_string()).collect();
        lines.insert(0, format!("model '{}' does not validate:", flat.name));
        return Err(fail(EXIT_VALIDATION, lines.join("\n")));
    }
    Ok(flat)
}

fn cmd_generate(
    model_path: &Path,
    seed: u64,
    criteria: &str,
    out: &Path,
) -> Result<u8, Failure> {
    let model = load_checked(model_path)?;
    let criterion = parse_criteria(criteria)
        .map_err(|e| fail(EXIT_USAGE, format!("invalid value for --criteria: {e}")))?;
    let (suite, ledger) = generate_suite(&model, &criterion, seed, &model.initial_context())
        .map_err(|e| fail(EXIT_USAGE, format!("generation failed: {e}")))?;
    let mut bytes = Vec::new();
    write_suite(&suite, &mut bytes).map_err(|e| fail(EXIT_USAGE, e))?;
    write_file(out, &bytes)?;
    println!(
        "wrote {} tests to {} (state coverage {:.1}%, transition coverage {:.1}%)",
        suite.len(),
        out.display(),
        ledger.state_coverage(),
        ledger.transition_coverage()
    );
    Ok(0)
}

fn load_table(path: &Path) -> Result<MappingTable, Failure> {
    let text = read_file(path)?;
    MappingTable::from_json(&text)
        .map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn cmd_labels(
    model_path: &Path,
    table_path: &Path,
    update: bool,
    flavor: &str,
) -> Result<u8, Failure> {
    let model = load_checked(model_path)?;
    let inventory = extract_labels(&model);
    let table = if table_path.exists() {
        load_table(table_path)?
    } else {
        let flavor = match flavor {
            "raw" => Flavor::Raw,
            _ => Flavor::Exec,
        };
        MappingTable::new(flavor)
    };
    let (next, report) = update_table(&table, &inventory);
    println!(
        "model '{}': {} state labels, {} transition labels; table: {report}",
        inventory.source_model,
        inventory.state_labels.len(),
        inventory.transition_labels.len()
    );
    if update {
        write_file(table_path, next.to_json().as_bytes())?;
        println!("wrote {}", table_path.display());
    } else if !report.added.is_empty() {
        println!(
            "{} label(s) lack fragments; run with --update to add templates",
            report.added.len()
        );
    }
    Ok(0)
}

fn cmd_instantiate(
    suite_path: &Path,
    table_path: &Path,
    out: &Path,
    mode: &str,
    model_path: Option<&Path>,
) -> Result<u8, Failure> {
    let text = read_file(suite_path)?;
    let suite = read_suite(text.as_bytes())
        .map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", suite_path.display())))?;
    let table = load_table(table_path)?;

    let mut assertion_keys = BTreeMap::new();
    if let Some(path) = model_path {
        let model = load_checked(path)?;
        table
            .check_model_hash(&model.content_hash())
            .map_err(|e| fail(EXIT_USAGE, e))?;
        for state in &model.states {
            if let Some(key) = &state.assertion {
                assertion_keys.insert(state.label.text().to_string(), key.clone());
            }
        }
    }

    let concrete = instantiate_suite(&suite, &table, scene_group, &assertion_keys)
        .map_err(|e| fail(EXIT_USAGE, format!("instantiation failed: {e}")))?;

    match mode {
        "emit" => {
            let mut scripts = Vec::with_capacity(concrete.len());
            for test in &concrete {
                scripts.push(emit_text(test).map_err(|e| {
                    fail(
                        EXIT_USAGE,
                        format!("--mode emit needs a raw-flavor table: {e}"),
                    )
                })?);
            }
            let mut text = scripts.join("\n\n");
            text.push('\n');
            write_file(out, text.as_bytes())?;
            println!("emitted {} script(s) to {}", concrete.len(), out.display());
        }
        _ => {
            let mut bytes = Vec::new();
            for test in &concrete {
                serde_json::to_writer(&mut bytes, test).map_err(|e| fail(EXIT_USAGE, e))?;
                bytes.push(b'\n');
            }
            write_file(out, &bytes)?;
            println!(
                "wrote {} concrete tests to {}",
                concrete.len(),
                out.display()
            );
        }
    }
    Ok(0)
}

fn read_concrete(path: &Path) -> Result<Vec<ConcreteTestCase>, Failure> {
    let text = read_file(path)?;
    let mut tests = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let test = serde_json::from_str(line)
            .map_err(|e| fail(EXIT_USAGE, format!("{} line {}: {e}", path.display(), i + 1)))?;
        tests.push(test);
    }
    Ok(tests)
}

fn cmd_run(
    concrete_path: &Path,
    driver_name: &str,
    config_path: Option<&Path>,
    jobs: usize,
    report_path: &Path,
) -> Result<u8, Failure> {
    let tests = read_concrete(concrete_path)?;
    let config = match config_path {
        Some(path) => DriverConfig::load(path).map_err(|e| fail(EXIT_USAGE, e))?,
        None => DriverConfig::default(),
    };
    let driver = builtin_driver(driver_name, &config).map_err(|e| fail(EXIT_USAGE, e))?;
    let report = run_suite(&tests, driver.as_ref(), jobs);
    write_file(report_path, write_report(&report, ReportFormat::Json).as_bytes())?;
    println!(
        "total {}: {} passed, {} failed, {} errored; report {}",
        report.total,
        report.passed,
        report.failed,
        report.errored,
        report_path.display()
    );
    Ok(if report.all_passed() { 0 } else { EXIT_TEST_FAILURES })
}

fn cmd_report(file: &Path, format: &str) -> Result<u8, Failure> {
    let text = read_file(file)?;
    let report =
        read_report(&text).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", file.display())))?;
    let format: ReportFormat = format.parse().map_err(|e| fail(EXIT_USAGE, e))?;
    print!("{}", write_report(&report, format));
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Validate { model } => cmd_validate(model),
        Command::Generate {
            model,
            seed,
            criteria,
            out,
        } => cmd_generate(model, *seed, criteria, out),
        Command::Labels {
            model,
            table,
            update,
            flavor,
        } => cmd_labels(model, table, *update, flavor),
        Command::Instantiate {
            suite,
            table,
            out,
            mode,
            model,
        } => cmd_instantiate(suite, table, out, mode, model.as_deref()),
        Command::Run {
            concrete,
            driver,
            config,
            jobs,
            report,
        } => cmd_run(concrete, driver, config.as_deref(), *jobs, report),
        Command::Report { file, format } => cmd_report(file, format),
    }
}

fn main() -> ExitCode {
    // Clap itself exits 2 on usage errors, naming the offending flag.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
