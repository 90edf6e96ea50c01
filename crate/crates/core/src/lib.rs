//! Model-based testing for request/response systems driven by extended
//! finite-state machines.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`model_io`] loads models from GraphML or the textual DSL, flattens
//!    submodel hierarchies and validates the result.
//! 2. [`generator`] walks a flattened model with a seeded RNG and produces
//!    abstract test cases under configurable stopping criteria.
//! 3. [`mapping`] maintains the label-to-code-fragment table and turns
//!    abstract tests into concrete ones.
//! 4. [`runner`] feeds concrete tests to a driver and reports verdicts.
//!
//! [`refsut`] ships an in-process quiz game with switchable faults so the
//! whole chain can be exercised without an external system under test.

pub mod efsm;
pub mod expr;
pub mod generator;
pub mod mapping;
pub mod model_io;
pub mod qtds;
pub mod refsut;
pub mod runner;

pub use efsm::{Context, EfsmModel, Label, LabelKind, State, Transition, Value, ValueType};
pub use expr::{ActionStmt, BuiltinRegistry, Expr};
pub use generator::{AbstractTestCase, CoverageLedger, Step, StoppingCriterion};
pub use mapping::{ConcreteTestCase, DriverCommand, Fragment, MappingTable};
pub use model_io::{LabelInventory, ModelBundle, ValidationReport};
pub use runner::{Driver, DriverConfig, DriverSession, Response, Status, TestReport};
