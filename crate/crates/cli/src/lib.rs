//! Pipeline commands behind the `eqalign` binary.
//!
//! Each command is a pure function of its configuration, input files and
//! seed; outputs are CSV files plus versioned binary checkpoints.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_eval, cmd_posttrain, cmd_pretrain, cmd_report, cmd_verify_theory, EvalOutput, EvalSummary, PosttrainOutput,
    PretrainOutput, TheoryOutput,
};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
