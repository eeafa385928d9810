//! Expression parser, JSON problem files, and the `kkt-sens` subcommands.

pub mod commands;
pub mod parse;
pub mod problem;

pub use commands::{
    cmd_fdcheck, cmd_sense, cmd_solve, cmd_sweep, CliError, FdCheckRequest, SenseRequest, SweepRequest,
};
pub use parse::{parse_expression, ParseError};
pub use problem::{load_problem, problem_from_str, LoadError, LoadedProblem, ProblemFile};
