//! Program, solver, and sensitivity session behind one handle.

use thiserror::Error;

use crate::expr::{ParameterHandle, Variable};
use crate::model::{CanonicalForm, Constraint, ModelError, ParametricProgram};
use crate::sensitivity::{RegularizationPolicy, SensitivityError, SensitivitySession, Tangents};
use crate::solver::{solve, solve_from, Solution, SolveError, SolverConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffModelError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error("model has not been optimized since its last change")]
    NotSolved,
}

/// A parametric program that can be optimized and differentiated.
///
/// Changing a parameter value or the program drops the cached solution and
/// sensitivity session.
#[derive(Clone, Debug)]
pub struct DiffModel<T: Scalar> {
    program: ParametricProgram<T>,
    config: SolverConfig<T>,
    policy: RegularizationPolicy<T>,
    canonical: Option<(u64, CanonicalForm<T>)>,
    solution: Option<Solution<T>>,
    session: Option<SensitivitySession<T>>,
}

impl<T: Scalar> DiffModel<T> {
    pub fn new(program: ParametricProgram<T>) -> Self {
        Self {
            program,
            config: SolverConfig::default(),
            policy: RegularizationPolicy::default(),
            canonical: None,
            solution: None,
            session: None,
        }
    }

    pub fn with_config(mut self, config: SolverConfig<T>) -> Self {
        self.config = config;
        self.invalidate();
        self
    }

    pub fn with_policy(mut self, policy: RegularizationPolicy<T>) -> Self {
        self.policy = policy;
        self.session = None;
        self
    }

    pub fn program(&self) -> &ParametricProgram<T> {
        &self.program
    }

    pub fn program_mut(&mut self) -> &mut ParametricProgram<T> {
        self.invalidate();
        &mut self.program
    }

    pub fn config(&self) -> &SolverConfig<T> {
        &self.config
    }

    fn invalidate(&mut self) {
        self.solution = None;
        self.session = None;
    }

    pub fn set_parameter_value(&mut self, p: ParameterHandle, value: T) -> Result<(), DiffModelError> {
        self.program.set_parameter_value(p, value)?;
        self.invalidate();
        Ok(())
    }

    pub fn canonical(&mut self) -> Result<&CanonicalForm<T>, DiffModelError> {
        let rev = self.program.revision();
        if self.canonical.as_ref().is_none_or(|(r, _)| *r != rev) {
            self.canonical = Some((rev, self.program.canonicalize()?));
        }
        Ok(&self.canonical.as_ref().expect("canonical form cached").1)
    }

    /// Solves from the default starting point.
    pub fn optimize(&mut self) -> Result<&Solution<T>, DiffModelError> {
        self.invalidate();
        let p = self.program.parameter_values();
        let cfg = self.config.clone();
        let sol = solve(self.canonical()?, &p, &cfg)?;
        Ok(self.solution.insert(sol))
    }

    /// Solves starting from `previous` (typically the optimum at nearby
    /// parameter values).
    pub fn optimize_from(&mut self, previous: &Solution<T>) -> Result<&Solution<T>, DiffModelError> {
        self.invalidate();
        let p = self.program.parameter_values();
        let cfg = self.config.clone();
        let sol = solve_from(self.canonical()?, &p, &cfg, &previous.point)?;
        Ok(self.solution.insert(sol))
    }

    pub fn solution(&self) -> Result<&Solution<T>, DiffModelError> {
        self.solution.as_ref().ok_or(DiffModelError::NotSolved)
    }

    /// Optimal value of a user variable.
    pub fn value(&self, v: Variable) -> Result<T, DiffModelError> {
        let sol = self.solution()?;
        let cf = &self.canonical.as_ref().ok_or(DiffModelError::NotSolved)?.1;
        let j = cf.canonical_var(v)?;
        Ok(sol.point.x[j] + cf.shifts()[j])
    }

    /// Multiplier of a user constraint, in the canonical row sign.
    pub fn dual(&self, c: Constraint) -> Result<T, DiffModelError> {
        let sol = self.solution()?;
        let cf = &self.canonical.as_ref().ok_or(DiffModelError::NotSolved)?.1;
        Ok(sol.point.lambda[cf.constraint_row(c)?])
    }

    pub fn objective_value(&self) -> Result<T, DiffModelError> {
        Ok(self.solution()?.point.objective)
    }

    /// Sensitivity session at the current optimum, built on first use.
    pub fn session(&mut self) -> Result<&mut SensitivitySession<T>, DiffModelError> {
        if self.session.is_none() {
            let point = self.solution()?.point.clone();
            let cf = &self.canonical.as_ref().ok_or(DiffModelError::NotSolved)?.1;
            self.session = Some(SensitivitySession::with_policy(cf, point, &self.policy)?);
        }
        Ok(self.session.as_mut().expect("session built"))
    }

    pub fn set_forward_parameter(&mut self, p: ParameterHandle, value: T) -> Result<(), DiffModelError> {
        Ok(self.session()?.set_forward_parameter(p, value)?)
    }

    pub fn empty_input_sensitivities(&mut self) -> Result<(), DiffModelError> {
        self.session()?.empty_input_sensitivities();
        Ok(())
    }

    pub fn forward_differentiate(&mut self) -> Result<Tangents<T>, DiffModelError> {
        Ok(self.session()?.forward_differentiate()?.clone())
    }

    pub fn get_forward_variable(&mut self, v: Variable) -> Result<T, DiffModelError> {
        Ok(self.session()?.get_forward_variable(v)?)
    }

    pub fn get_forward_objective(&mut self) -> Result<T, DiffModelError> {
        Ok(self.session()?.get_forward_objective()?)
    }

    pub fn set_reverse_variable(&mut self, v: Variable, weight: T) -> Result<(), DiffModelError> {
        Ok(self.session()?.set_reverse_variable(v, weight)?)
    }

    pub fn set_reverse_objective(&mut self, weight: T) -> Result<(), DiffModelError> {
        Ok(self.session()?.set_reverse_objective(weight)?)
    }

    pub fn reverse_differentiate(&mut self) -> Result<Vec<T>, DiffModelError> {
        Ok(self.session()?.reverse_differentiate()?.to_vec())
    }

    pub fn get_reverse_parameter(&mut self, p: ParameterHandle) -> Result<T, DiffModelError> {
        Ok(self.session()?.get_reverse_parameter(p)?)
    }
}
