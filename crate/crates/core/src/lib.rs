//! Parametric nonlinear programs with implicit sensitivities.
//!
//! A [`ParametricProgram`] is built from expressions over variables and
//! parameters, canonicalized to `min f(x; p) s.t. c(x; p) = 0, x_B ≥ 0`, and
//! solved with a primal-dual interior-point method. Derivatives of the
//! solution with respect to the parameters come from the implicit function
//! theorem applied to the KKT conditions, in forward or reverse mode.

pub mod diffmodel;
pub mod expr;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod scalar;
pub mod sensitivity;
pub mod solver;

pub use diffmodel::{DiffModel, DiffModelError};
pub use expr::{BinaryOp, Expr, Func, Leaf, NameLookup, ParameterHandle, ProgramId, SymbolTable, Variable};
pub use graph::{EvalError, EvalWorkspace, ExprGraph, GraphBuilder, NodeId};
pub use linalg::{LuFactorization, Matrix, SingularMatrix};
pub use model::{CanonicalForm, Constraint, ModelError, ParametricProgram, Relation, Sense};
pub use scalar::Scalar;
pub use sensitivity::{KktSystem, RegularizationPolicy, SensitivityError, SensitivitySession, Tangents};
pub use solver::{
    adopt_external_point, check_regularity, kkt_residual, solve, solve_from, KktResidual, PrimalDualPoint,
    RegularityReport, Solution, SolveError, SolverConfig,
};

/// Double-precision aliases.
pub type Program = ParametricProgram<f64>;
pub type Canonical = CanonicalForm<f64>;
pub type Expression = Expr<f64>;
pub type Point = PrimalDualPoint<f64>;
pub type Session = SensitivitySession<f64>;
pub type Model = DiffModel<f64>;
pub type Config = SolverConfig<f64>;

/// Single-precision aliases.
pub type Program32 = ParametricProgram<f32>;
pub type Canonical32 = CanonicalForm<f32>;
pub type Expression32 = Expr<f32>;
pub type Point32 = PrimalDualPoint<f32>;
pub type Session32 = SensitivitySession<f32>;
pub type Model32 = DiffModel<f32>;
pub type Config32 = SolverConfig<f32>;
