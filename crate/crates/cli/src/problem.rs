//! JSON problem files.
//!
//! ```json
//! {
//!   "schema": 1,
//!   "description": "optional free text",
//!   "variables": [{"name": "g1", "lower": 0, "upper": 150}],
//!   "parameters": [{"name": "d", "value": 100}],
//!   "constraints": [{"name": "balance", "expr": "g1 + g2 + phi", "rel": "==", "rhs": "d"}],
//!   "objective": {"sense": "min", "expr": "20*g1 + 0.2*g1^2"},
//!   "loss": {"expr": "(x1 - 0.1)^2", "description": "optional"}
//! }
//! ```
//!
//! `rhs` may be an expression string or a number. Constraint names are
//! optional. `loss` is an optional scalar functional of the variables and
//! parameters that `sweep` reports together with its reverse-mode gradient.

use std::fmt;
use std::path::Path;

use kkt_sens_core::{Expr, ModelError, ParametricProgram, Relation, Sense};
use serde::{Deserialize, Serialize};

use crate::parse::{parse_expression, ParseError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub variables: Vec<VariableSpec>,
    #[serde(default)]
    pub parameters: Vec<ParameterSpec>,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    pub objective: ObjectiveSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpec {
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExprText {
    Text(String),
    Number(f64),
}

impl ExprText {
    fn text(&self) -> String {
        match self {
            ExprText::Text(s) => s.clone(),
            ExprText::Number(v) => format!("{v}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub expr: String,
    pub rel: Relation,
    pub rhs: ExprText,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub sense: Sense,
    pub expr: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub expr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LoadError {
    Io { path: String, message: String },
    /// Malformed JSON.
    Json { line: usize, column: usize, message: String },
    /// Well-formed JSON that does not describe a valid program.
    Schema(String),
    /// Syntax error inside an expression string.
    Expression { location: String, error: ParseError },
    UnknownSymbol { location: String, name: String, offset: usize },
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Io { path, message } => write!(f, "cannot read {path}: {message}"),
            LoadError::Json { line, column, message } => {
                write!(f, "invalid JSON at line {line}, column {column}: {message}")
            }
            LoadError::Schema(msg) => write!(f, "schema error: {msg}"),
            LoadError::Expression { location, error } => write!(f, "{location}: {error}"),
            LoadError::UnknownSymbol { location, name, offset } => {
                write!(f, "{location}: unknown symbol '{name}' at byte {offset}")
            }
        }
    }
}

impl std::error::Error for LoadError {}

impl LoadError {
    /// Short machine-readable kind.
    pub fn kind(&self) -> &'static str {
        match self {
            LoadError::Io { .. } => "io",
            LoadError::Json { .. } | LoadError::Expression { .. } => "parse",
            LoadError::Schema(_) => "schema",
            LoadError::UnknownSymbol { .. } => "unknown_symbol",
        }
    }
}

/// A program built from a problem file, with its optional loss functional.
#[derive(Clone, Debug)]
pub struct LoadedProblem {
    pub file: ProblemFile,
    pub program: ParametricProgram<f64>,
    pub loss: Option<Expr<f64>>,
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<LoadedProblem, LoadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| LoadError::Io { path: path.display().to_string(), message: e.to_string() })?;
    problem_from_str(&text)
}

pub fn problem_from_str(text: &str) -> Result<LoadedProblem, LoadError> {
    let file: ProblemFile = serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => LoadError::Schema(e.to_string()),
            _ => LoadError::Json { line: e.line(), column: e.column(), message: e.to_string() },
        }
    })?;
    build_program(file)
}

fn model_error(e: ModelError) -> LoadError {
    LoadError::Schema(e.to_string())
}

fn parse_at(
    prog: &ParametricProgram<f64>,
    text: &str,
    location: impl Fn() -> String,
) -> Result<Expr<f64>, LoadError> {
    parse_expression(text, prog).map_err(|error| match error {
        ParseError::UnknownSymbol { name, offset } => LoadError::UnknownSymbol { location: location(), name, offset },
        error => LoadError::Expression { location: location(), error },
    })
}

pub fn build_program(file: ProblemFile) -> Result<LoadedProblem, LoadError> {
    if file.schema != SCHEMA_VERSION {
        return Err(LoadError::Schema(format!(
            "unsupported schema version {} (expected {SCHEMA_VERSION})",
            file.schema
        )));
    }
    let mut prog = ParametricProgram::new();
    for v in &file.variables {
        prog.add_variable(&v.name, v.lower, v.upper).map_err(model_error)?;
    }
    for p in &file.parameters {
        prog.add_parameter(&p.name, p.value).map_err(model_error)?;
    }
    for (i, c) in file.constraints.iter().enumerate() {
        let label = || match &c.name {
            Some(n) => format!("constraint '{n}'"),
            None => format!("constraint {}", i + 1),
        };
        let lhs = parse_at(&prog, &c.expr, || format!("{} expr", label()))?;
        let rhs = parse_at(&prog, &c.rhs.text(), || format!("{} rhs", label()))?;
        match &c.name {
            Some(n) => prog.add_named_constraint(n, lhs, c.rel, rhs),
            None => prog.add_constraint(lhs, c.rel, rhs),
        }
        .map_err(model_error)?;
    }
    let objective = parse_at(&prog, &file.objective.expr, || "objective".to_owned())?;
    prog.set_objective(objective, file.objective.sense).map_err(model_error)?;
    let loss = match &file.loss {
        Some(l) => Some(parse_at(&prog, &l.expr, || "loss".to_owned())?),
        None => None,
    };
    Ok(LoadedProblem { file, program: prog, loss })
}
