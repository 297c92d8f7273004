//! Scenario files and batch commands for `tonelli`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod output;
pub mod scenario;
pub mod svg;

pub use commands::{run, CliError, Command, Flags};
pub use scenario::{parse_scenario, ParseError, Scenario, ScenarioError, ValidationError};
