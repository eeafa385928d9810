//! Parametric program builder and the rewrite into standard form
//! `min f(x;p) s.t. c(x;p) = 0, x_B ≥ 0`.
//!
//! Canonicalization rules:
//! * a `max` objective is negated; the sign is kept so reported objective
//!   values and objective sensitivities stay in the user's sense;
//! * `lhs == rhs` becomes the row `rhs − lhs = 0`, so the row multiplier is
//!   the marginal value `∂J/∂rhs`;
//! * `lhs ≤ rhs` becomes `lhs − rhs + s = 0` and `lhs ≥ rhs` becomes
//!   `rhs − lhs + s = 0`, with a fresh slack `s ≥ 0`;
//! * a finite lower bound `b` shifts the variable, `x̃ = x − b ≥ 0`;
//! * a finite upper bound `u` adds the row `x̃ + s_u − (u − b) = 0`;
//! * variables without a lower bound stay free: no bound multiplier and no
//!   complementarity row.
//!
//! Canonical variables are the user variables in declaration order followed
//! by slacks in row order. Rows are the user constraints in declaration order
//! followed by upper-bound rows in variable order.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, Leaf, NameLookup, ParameterHandle, ProgramId, SymbolTable, Variable};
use crate::graph::{EvalError, ExprGraph, GraphBuilder, NodeId};
use crate::scalar::Scalar;

static NEXT_PROGRAM: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("name `{0}` is already declared")]
    DuplicateName(String),
    #[error("invalid bounds for `{name}`: lower {lower} > upper {upper}")]
    InvalidBounds { name: String, lower: f64, upper: f64 },
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("handle does not belong to this program or is out of range")]
    StaleHandle,
    #[error("program has no objective")]
    NoObjective,
    #[error("program has no variables")]
    NoVariables,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariableDef<T> {
    pub name: String,
    pub lower: Option<T>,
    pub upper: Option<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterDef<T> {
    pub name: String,
    pub value: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintDef<T> {
    pub name: Option<String>,
    pub lhs: Expr<T>,
    pub relation: Relation,
    pub rhs: Expr<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective<T> {
    pub expr: Expr<T>,
    pub sense: Sense,
}

/// Handle to a user constraint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Constraint {
    owner: ProgramId,
    index: usize,
}

impl Constraint {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
pub struct ParametricProgram<T> {
    id: ProgramId,
    variables: Vec<VariableDef<T>>,
    parameters: Vec<ParameterDef<T>>,
    constraints: Vec<ConstraintDef<T>>,
    objective: Option<Objective<T>>,
    symbols: HashMap<String, Leaf>,
    revision: u64,
}

impl<T: Scalar> Default for ParametricProgram<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParametricProgram<T> {
    pub fn new() -> Self {
        Self {
            id: ProgramId(NEXT_PROGRAM.fetch_add(1, Ordering::Relaxed)),
            variables: Vec::new(),
            parameters: Vec::new(),
            constraints: Vec::new(),
            objective: None,
            symbols: HashMap::new(),
            revision: 0,
        }
    }

    pub fn id(&self) -> ProgramId {
        self.id
    }

    /// Bumped by every mutation; lets callers detect stale solves.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    fn claim_name(&mut self, name: &str, leaf: Leaf) -> Result<(), ModelError> {
        if self.symbols.contains_key(name) {
            return Err(ModelError::DuplicateName(name.to_owned()));
        }
        self.symbols.insert(name.to_owned(), leaf);
        Ok(())
    }

    /// Declares a variable. Infinite bounds are treated as absent.
    pub fn add_variable(
        &mut self,
        name: &str,
        lower: Option<T>,
        upper: Option<T>,
    ) -> Result<Variable, ModelError> {
        let lower = lower.filter(|l| *l != T::neg_infinity());
        let upper = upper.filter(|u| *u != T::infinity());
        let bad = |v: Option<T>| v.is_some_and(|b| b.is_nan() || b.is_infinite());
        if bad(lower) || bad(upper) || matches!((lower, upper), (Some(l), Some(u)) if l > u) {
            return Err(ModelError::InvalidBounds {
                name: name.to_owned(),
                lower: lower.map_or(f64::NEG_INFINITY, Scalar::to_f64_lossy),
                upper: upper.map_or(f64::INFINITY, Scalar::to_f64_lossy),
            });
        }
        let handle = Variable { owner: self.id, index: self.variables.len() };
        self.claim_name(name, Leaf::Var(handle))?;
        self.variables.push(VariableDef { name: name.to_owned(), lower, upper });
        self.revision += 1;
        Ok(handle)
    }

    pub fn add_parameter(&mut self, name: &str, value: T) -> Result<ParameterHandle, ModelError> {
        let handle = ParameterHandle { owner: self.id, index: self.parameters.len() };
        self.claim_name(name, Leaf::Param(handle))?;
        self.parameters.push(ParameterDef { name: name.to_owned(), value });
        self.revision += 1;
        Ok(handle)
    }

    pub fn add_constraint(
        &mut self,
        lhs: impl Into<Expr<T>>,
        relation: Relation,
        rhs: impl Into<Expr<T>>,
    ) -> Result<Constraint, ModelError> {
        self.push_constraint(None, lhs.into(), relation, rhs.into())
    }

    pub fn add_named_constraint(
        &mut self,
        name: &str,
        lhs: impl Into<Expr<T>>,
        relation: Relation,
        rhs: impl Into<Expr<T>>,
    ) -> Result<Constraint, ModelError> {
        if self.constraints.iter().any(|c| c.name.as_deref() == Some(name)) {
            return Err(ModelError::DuplicateName(name.to_owned()));
        }
        self.push_constraint(Some(name.to_owned()), lhs.into(), relation, rhs.into())
    }

    fn push_constraint(
        &mut self,
        name: Option<String>,
        lhs: Expr<T>,
        relation: Relation,
        rhs: Expr<T>,
    ) -> Result<Constraint, ModelError> {
        self.validate(&lhs)?;
        self.validate(&rhs)?;
        let handle = Constraint { owner: self.id, index: self.constraints.len() };
        self.constraints.push(ConstraintDef { name, lhs, relation, rhs });
        self.revision += 1;
        Ok(handle)
    }

    pub fn set_objective(&mut self, expr: impl Into<Expr<T>>, sense: Sense) -> Result<(), ModelError> {
        let expr = expr.into();
        self.validate(&expr)?;
        self.objective = Some(Objective { expr, sense });
        self.revision += 1;
        Ok(())
    }

    pub fn set_parameter_value(&mut self, p: ParameterHandle, value: T) -> Result<(), ModelError> {
        self.check_param(p)?;
        self.parameters[p.index].value = value;
        self.revision += 1;
        Ok(())
    }

    pub fn parameter_value(&self, p: ParameterHandle) -> Result<T, ModelError> {
        self.check_param(p)?;
        Ok(self.parameters[p.index].value)
    }

    /// Current parameter vector in column order.
    pub fn parameter_values(&self) -> Vec<T> {
        self.parameters.iter().map(|p| p.value).collect()
    }

    pub fn variable(&self, name: &str) -> Option<Variable> {
        match self.symbols.get(name) {
            Some(Leaf::Var(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn parameter(&self, name: &str) -> Option<ParameterHandle> {
        match self.symbols.get(name) {
            Some(Leaf::Param(p)) => Some(*p),
            _ => None,
        }
    }

    pub fn constraint(&self, name: &str) -> Option<Constraint> {
        self.constraints
            .iter()
            .position(|c| c.name.as_deref() == Some(name))
            .map(|index| Constraint { owner: self.id, index })
    }

    pub fn variables(&self) -> &[VariableDef<T>] {
        &self.variables
    }

    pub fn parameters(&self) -> &[ParameterDef<T>] {
        &self.parameters
    }

    pub fn constraints(&self) -> &[ConstraintDef<T>] {
        &self.constraints
    }

    pub fn objective(&self) -> Option<&Objective<T>> {
        self.objective.as_ref()
    }

    /// Handles of all variables in declaration order.
    pub fn variable_handles(&self) -> Vec<Variable> {
        (0..self.variables.len()).map(|index| Variable { owner: self.id, index }).collect()
    }

    pub fn parameter_handles(&self) -> Vec<ParameterHandle> {
        (0..self.parameters.len()).map(|index| ParameterHandle { owner: self.id, index }).collect()
    }

    pub fn constraint_handles(&self) -> Vec<Constraint> {
        (0..self.constraints.len()).map(|index| Constraint { owner: self.id, index }).collect()
    }

    /// Display label of a constraint: its name, or `c<k>` (1-based).
    pub fn constraint_label(&self, c: Constraint) -> Result<String, ModelError> {
        if c.owner != self.id || c.index >= self.constraints.len() {
            return Err(ModelError::StaleHandle);
        }
        Ok(self.constraints[c.index]
            .name
            .clone()
            .unwrap_or_else(|| format!("c{}", c.index + 1)))
    }

    fn check_param(&self, p: ParameterHandle) -> Result<(), ModelError> {
        if p.owner != self.id || p.index >= self.parameters.len() {
            return Err(ModelError::StaleHandle);
        }
        Ok(())
    }

    fn validate(&self, e: &Expr<T>) -> Result<(), ModelError> {
        let mut err = None;
        e.for_each_leaf(&mut |leaf| {
            if err.is_some() {
                return;
            }
            let ok = match leaf {
                Leaf::Var(v) => v.owner == self.id && v.index < self.variables.len(),
                Leaf::Param(p) => p.owner == self.id && p.index < self.parameters.len(),
            };
            if !ok {
                err = Some(ModelError::UnknownSymbol(match leaf {
                    Leaf::Var(v) => format!("variable #{} of another program", v.index),
                    Leaf::Param(p) => format!("parameter #{} of another program", p.index),
                }));
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Compiles an expression over the user variables (no shifts, no slacks)
    /// into a standalone graph. Used for auxiliary functionals such as a
    /// downstream loss.
    pub fn compile_functional(&self, e: &Expr<T>) -> Result<(ExprGraph<T>, NodeId), ModelError> {
        self.validate(e)?;
        let mut b = GraphBuilder::new(self.variables.len(), self.parameters.len());
        let root = b.lower(e, &mut |b, leaf| match leaf {
            Leaf::Var(v) => b.variable(v.index),
            Leaf::Param(p) => b.parameter(p.index),
        });
        Ok((b.seal(), root))
    }

    pub fn canonicalize(&self) -> Result<CanonicalForm<T>, ModelError> {
        let objective = self.objective.as_ref().ok_or(ModelError::NoObjective)?;
        if self.variables.is_empty() {
            return Err(ModelError::NoVariables);
        }
        let n_user = self.variables.len();
        let n_ineq = self.constraints.iter().filter(|c| c.relation != Relation::Eq).count();
        let n_upper = self.variables.iter().filter(|v| v.upper.is_some()).count();
        let n = n_user + n_ineq + n_upper;
        let l = self.parameters.len();

        let shifts: Vec<T> = self.variables.iter().map(|v| v.lower.unwrap_or_else(T::zero)).collect();
        let mut bounded: Vec<bool> = self.variables.iter().map(|v| v.lower.is_some()).collect();
        let mut names: Vec<String> = self.variables.iter().map(|v| v.name.clone()).collect();

        let mut b = GraphBuilder::new(n, l);
        let mut shifted: Vec<Option<NodeId>> = vec![None; n_user];
        let mut leaf = |b: &mut GraphBuilder<T>, leaf: Leaf| match leaf {
            Leaf::Var(v) => *shifted[v.index].get_or_insert_with(|| {
                let x = b.variable(v.index);
                if shifts[v.index] == T::zero() {
                    x
                } else {
                    let s = b.constant(shifts[v.index]);
                    b.add(x, s)
                }
            }),
            Leaf::Param(p) => b.parameter(p.index),
        };

        let mut obj = b.lower(&objective.expr, &mut leaf);
        if objective.sense == Sense::Max {
            obj = b.neg(obj);
        }

        let mut rows = Vec::with_capacity(self.constraints.len() + n_upper);
        let mut slacks = Vec::with_capacity(n_ineq + n_upper);
        let mut constraint_slacks = Vec::with_capacity(self.constraints.len());
        let mut next_slack = n_user;
        for (i, c) in self.constraints.iter().enumerate() {
            let lhs = b.lower(&c.lhs, &mut leaf);
            let rhs = b.lower(&c.rhs, &mut leaf);
            let label = c.name.clone().unwrap_or_else(|| format!("c{}", i + 1));
            let row = match c.relation {
                Relation::Eq => {
                    constraint_slacks.push(None);
                    b.sub(rhs, lhs)
                }
                Relation::Le | Relation::Ge => {
                    let diff = if c.relation == Relation::Le { b.sub(lhs, rhs) } else { b.sub(rhs, lhs) };
                    let s = b.variable(next_slack);
                    slacks.push(SlackRecord { var: next_slack, source: SlackSource::Inequality(i) });
                    constraint_slacks.push(Some(next_slack));
                    names.push(format!("slack[{label}]"));
                    next_slack += 1;
                    b.add(diff, s)
                }
            };
            rows.push(row);
        }
        let mut upper_rows = vec![None; n_user];
        for (j, v) in self.variables.iter().enumerate() {
            if let Some(u) = v.upper {
                let x = b.variable(j);
                let s = b.variable(next_slack);
                let sum = b.add(x, s);
                let cap = b.constant(u - shifts[j]);
                upper_rows[j] = Some(rows.len());
                rows.push(b.sub(sum, cap));
                slacks.push(SlackRecord { var: next_slack, source: SlackSource::UpperBound(j) });
                names.push(format!("slack[{}<=ub]", v.name));
                next_slack += 1;
            }
        }
        debug_assert_eq!(next_slack, n);
        bounded.resize(n, true);

        Ok(CanonicalForm {
            program: self.id,
            graph: Arc::new(b.seal()),
            objective: obj,
            constraints: rows,
            bounded,
            shifts,
            slacks,
            constraint_slacks,
            upper_rows,
            sense: objective.sense,
            var_names: names,
            n_user,
            param_names: self.parameters.iter().map(|p| p.name.clone()).collect(),
        })
    }
}

impl<T: Scalar> SymbolTable for ParametricProgram<T> {
    fn lookup(&self, name: &str) -> Option<Leaf> {
        self.symbols.get(name).copied()
    }
}

impl<T: Scalar> NameLookup for ParametricProgram<T> {
    fn variable_name(&self, v: Variable) -> Option<&str> {
        (v.owner == self.id).then(|| self.variables.get(v.index).map(|d| d.name.as_str())).flatten()
    }

    fn parameter_name(&self, p: ParameterHandle) -> Option<&str> {
        (p.owner == self.id).then(|| self.parameters.get(p.index).map(|d| d.name.as_str())).flatten()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlackSource {
    /// Slack of the user inequality with this index.
    Inequality(usize),
    /// Slack of the upper bound of this user variable.
    UpperBound(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlackRecord {
    /// Canonical variable index of the slack.
    pub var: usize,
    pub source: SlackSource,
}

/// Standard-form program plus the bookkeeping that maps it back to user space.
#[derive(Clone, Debug)]
pub struct CanonicalForm<T> {
    program: ProgramId,
    graph: Arc<ExprGraph<T>>,
    objective: NodeId,
    constraints: Vec<NodeId>,
    bounded: Vec<bool>,
    shifts: Vec<T>,
    slacks: Vec<SlackRecord>,
    constraint_slacks: Vec<Option<usize>>,
    upper_rows: Vec<Option<usize>>,
    sense: Sense,
    var_names: Vec<String>,
    n_user: usize,
    param_names: Vec<String>,
}

impl<T: Scalar> CanonicalForm<T> {
    pub fn graph(&self) -> &ExprGraph<T> {
        &self.graph
    }

    pub fn objective_root(&self) -> NodeId {
        self.objective
    }

    pub fn constraint_roots(&self) -> &[NodeId] {
        &self.constraints
    }

    /// Number of canonical variables.
    pub fn n(&self) -> usize {
        self.bounded.len()
    }

    /// Number of equality rows.
    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    /// Number of parameters `ℓ`.
    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_user_vars(&self) -> usize {
        self.n_user
    }

    pub fn is_bounded(&self, k: usize) -> bool {
        self.bounded[k]
    }

    pub fn bound_flags(&self) -> &[bool] {
        &self.bounded
    }

    /// Canonical indices of variables with an implicit `≥ 0` bound.
    pub fn bounded_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&k| self.bounded[k]).collect()
    }

    pub fn n_bounded(&self) -> usize {
        self.bounded.iter().filter(|&&b| b).count()
    }

    pub fn slacks(&self) -> &[SlackRecord] {
        &self.slacks
    }

    pub fn shifts(&self) -> &[T] {
        &self.shifts
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    /// `+1` for minimization, `−1` for maximization.
    pub fn sign(&self) -> T {
        match self.sense {
            Sense::Min => T::one(),
            Sense::Max => -T::one(),
        }
    }

    pub fn variable_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn program(&self) -> ProgramId {
        self.program
    }

    /// Canonical index of a user variable. Slacks have no user handle.
    pub fn canonical_var(&self, v: Variable) -> Result<usize, ModelError> {
        if v.owner != self.program || v.index >= self.n_user {
            return Err(ModelError::StaleHandle);
        }
        Ok(v.index)
    }

    pub fn param_column(&self, p: ParameterHandle) -> Result<usize, ModelError> {
        if p.owner != self.program || p.index >= self.n_params() {
            return Err(ModelError::StaleHandle);
        }
        Ok(p.index)
    }

    /// Canonical row of a user constraint.
    pub fn constraint_row(&self, c: Constraint) -> Result<usize, ModelError> {
        if c.owner != self.program || c.index >= self.constraint_slacks.len() {
            return Err(ModelError::StaleHandle);
        }
        Ok(c.index)
    }

    /// Canonical row of the upper-bound constraint of a user variable.
    pub fn upper_bound_row(&self, v: Variable) -> Result<Option<usize>, ModelError> {
        Ok(self.upper_rows[self.canonical_var(v)?])
    }

    /// Upper-bound row per user variable, by canonical index.
    pub fn upper_rows(&self) -> &[Option<usize>] {
        &self.upper_rows
    }

    pub fn constraint_slack(&self, c: Constraint) -> Result<Option<usize>, ModelError> {
        Ok(self.constraint_slacks[self.constraint_row(c)?])
    }

    /// Maps a canonical point to user variables: `x_j = x̃_j + b_j`.
    pub fn to_user_point(&self, x: &[T]) -> Vec<T> {
        (0..self.n_user).map(|j| x[j] + self.shifts[j]).collect()
    }

    /// Maps user-space variable tangents to canonical ones (shifts vanish).
    pub fn to_user_tangent(&self, dx: &[T]) -> Vec<T> {
        dx[..self.n_user].to_vec()
    }

    /// Canonical point for a user point, with slacks set so every slacked row
    /// holds exactly. Slacks may come out negative when the user point
    /// violates an inequality.
    pub fn lift_user_point(&self, x_user: &[T], p: &[T]) -> Result<Vec<T>, EvalError> {
        if x_user.len() != self.n_user {
            return Err(EvalError::Dimension { what: "x", expected: self.n_user, got: x_user.len() });
        }
        let mut x = vec![T::zero(); self.n()];
        for j in 0..self.n_user {
            x[j] = x_user[j] - self.shifts[j];
        }
        let rows = self.graph.workspace().evaluate_many(&self.graph, &self.constraints, &x, p)?;
        for s in &self.slacks {
            let row = match s.source {
                SlackSource::Inequality(i) => i,
                SlackSource::UpperBound(j) => self.upper_rows[j].expect("upper row recorded"),
            };
            x[s.var] = -rows[row];
        }
        Ok(x)
    }

    /// User-sense objective from a canonical objective value.
    pub fn user_objective(&self, canonical: T) -> T {
        self.sign() * canonical
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dispatch() -> (ParametricProgram<f64>, Vec<Variable>, ParameterHandle) {
        let mut prog = ParametricProgram::new();
        let d = prog.add_parameter("d", 100.0).unwrap();
        let g1 = prog.add_variable("g1", Some(0.0), Some(150.0)).unwrap();
        let g2 = prog.add_variable("g2", Some(0.0), Some(80.0)).unwrap();
        let phi = prog.add_variable("phi", Some(0.0), None).unwrap();
        let cost = 20.0 * Expr::var(g1)
            + 30.0 * Expr::var(g2)
            + 0.2 * Expr::var(g1).powi(2)
            + 0.1 * Expr::var(g2).powi(2)
            + 1000.0 * Expr::var(phi);
        prog.set_objective(cost, Sense::Min).unwrap();
        prog.add_constraint(Expr::var(g1) + g2 + phi, Relation::Eq, d).unwrap();
        (prog, vec![g1, g2, phi], d)
    }

    #[test]
    fn duplicate_and_inverted_declarations_fail() {
        let mut prog = ParametricProgram::<f64>::new();
        prog.add_parameter("d", 1.0).unwrap();
        assert_eq!(prog.add_parameter("d", 2.0), Err(ModelError::DuplicateName("d".into())));
        assert_eq!(prog.add_variable("d", None, None), Err(ModelError::DuplicateName("d".into())));
        assert!(matches!(
            prog.add_variable("x", Some(5.0), Some(3.0)),
            Err(ModelError::InvalidBounds { .. })
        ));
        let free = prog.add_variable("theta1", None, None).unwrap();
        assert_eq!(prog.variables()[free.index()].lower, None);
    }

    #[test]
    fn foreign_symbols_are_rejected() {
        let mut other = ParametricProgram::<f64>::new();
        let z = other.add_variable("z", None, None).unwrap();
        let mut prog = ParametricProgram::<f64>::new();
        let x = prog.add_variable("x", None, None).unwrap();
        assert!(matches!(
            prog.add_constraint(Expr::var(x) + z, Relation::Le, 1.0),
            Err(ModelError::UnknownSymbol(_))
        ));
        let p = other.add_parameter("p", 1.0).unwrap();
        assert_eq!(prog.set_parameter_value(p, 2.0), Err(ModelError::StaleHandle));
    }

    #[test]
    fn dispatch_canonical_counts() {
        let (prog, _, _) = dispatch();
        let cf = prog.canonicalize().unwrap();
        assert_eq!(cf.n(), 5);
        assert_eq!(cf.m(), 3);
        assert_eq!(cf.n_bounded(), 5);
        assert_eq!(cf.n_params(), 1);
    }

    #[test]
    fn free_and_unconstrained_programs() {
        let mut prog = ParametricProgram::<f64>::new();
        let x = prog.add_variable("x", None, None).unwrap();
        prog.set_objective(Expr::var(x).powi(2), Sense::Min).unwrap();
        let cf = prog.canonicalize().unwrap();
        assert_eq!((cf.n(), cf.m(), cf.n_bounded()), (1, 0, 0));

        let mut empty = ParametricProgram::<f64>::new();
        empty.add_variable("x", None, None).unwrap();
        assert_eq!(empty.canonicalize().unwrap_err(), ModelError::NoObjective);
        empty.set_objective(Expr::Const(0.0), Sense::Min).unwrap();
        assert!(empty.canonicalize().is_ok());
    }

    #[test]
    fn max_objective_is_negated_once() {
        let mut prog = ParametricProgram::<f64>::new();
        let x = prog.add_variable("x", Some(0.0), None).unwrap();
        prog.set_objective(3.0 * Expr::var(x), Sense::Max).unwrap();
        let cf = prog.canonicalize().unwrap();
        let v = cf.graph().evaluate(cf.objective_root(), &[2.0], &[]).unwrap();
        assert_eq!(v, -6.0);
        assert_eq!(cf.user_objective(v), 6.0);
    }

    #[test]
    fn shifted_bounds_round_trip() {
        let mut prog = ParametricProgram::<f64>::new();
        let p = prog.add_parameter("p", 2.0).unwrap();
        let x = prog.add_variable("x", Some(-1.0), Some(4.0)).unwrap();
        let y = prog.add_variable("y", None, Some(3.0)).unwrap();
        prog.set_objective(Expr::var(x) + y, Sense::Min).unwrap();
        prog.add_constraint(Expr::var(x) * p, Relation::Ge, Expr::var(y) - 5.0).unwrap();
        let cf = prog.canonicalize().unwrap();
        // x, y, slack of >=, slack of x<=4, slack of y<=3
        assert_eq!(cf.n(), 5);
        assert_eq!(cf.bound_flags(), &[true, false, true, true, true]);
        let pv = prog.parameter_values();
        let xc = cf.lift_user_point(&[0.5, 1.0], &pv).unwrap();
        assert_eq!(xc[0], 1.5);
        // 2*0.5 >= 1 - 5 leaves slack 5; bound slacks 4-0.5 and 3-1
        assert_eq!(&xc[2..], &[5.0, 3.5, 2.0]);
        let rows = cf.graph().workspace().evaluate_many(cf.graph(), cf.constraint_roots(), &xc, &pv).unwrap();
        assert!(rows.iter().all(|r| r.abs() < 1e-12));
        assert_eq!(cf.to_user_point(&xc), vec![0.5, 1.0]);
    }

    #[test]
    fn canonicalization_is_deterministic() {
        let (prog, _, _) = dispatch();
        let a = prog.canonicalize().unwrap();
        let b = prog.canonicalize().unwrap();
        assert_eq!(a.graph(), b.graph());
        assert_eq!(a.constraint_roots(), b.constraint_roots());
        assert_eq!(a.variable_names(), b.variable_names());
    }

    #[test]
    fn one_parameter_column_for_many_occurrences() {
        let mut prog = ParametricProgram::<f64>::new();
        let p = prog.add_parameter("p", 1.0).unwrap();
        let x = prog.add_variable("x", Some(0.0), None).unwrap();
        prog.set_objective(Expr::param(p) * x, Sense::Min).unwrap();
        for k in 0..3 {
            prog.add_constraint(Expr::var(x) * p, Relation::Le, Expr::param(p) + k as f64).unwrap();
        }
        let cf = prog.canonicalize().unwrap();
        assert_eq!(cf.n_params(), 1);
        assert_eq!(cf.graph().n_params(), 1);
    }
}
