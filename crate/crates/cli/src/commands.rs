//! Subcommand implementations. Each returns its report as a value so the
//! binary only handles argument parsing, printing and exit codes.

use std::fmt;

use kkt_sens_core::{
    check_regularity, solve, solve_from, solver::active_set, CanonicalForm, Expr, ParametricProgram, Relation,
    SensitivityError, SensitivitySession, Solution, SolveError, SolverConfig,
};
use serde_json::{json, Map, Value};

use crate::problem::{LoadError, LoadedProblem};

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Load(LoadError),
    Usage(String),
    Solve(SolveError),
    Sensitivity(SensitivityError),
    ConflictingSeeds(String),
    SweepFailed(String),
    Output(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Load(e) => e.fmt(f),
            CliError::Usage(m) | CliError::ConflictingSeeds(m) | CliError::SweepFailed(m) | CliError::Output(m) => {
                f.write_str(m)
            }
            CliError::Solve(e) => e.fmt(f),
            CliError::Sensitivity(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for CliError {}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        CliError::Load(e)
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        CliError::Solve(e)
    }
}

impl From<SensitivityError> for CliError {
    fn from(e: SensitivityError) -> Self {
        match e {
            SensitivityError::ConflictingSeeds => CliError::ConflictingSeeds(e.to_string()),
            e => CliError::Sensitivity(e),
        }
    }
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const SOLVER: i32 = 2;
    pub const INPUT: i32 = 3;
    pub const SEED_CONFLICT: i32 = 4;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Load(_) | CliError::Usage(_) => exit::INPUT,
            CliError::Solve(_) | CliError::Sensitivity(_) | CliError::SweepFailed(_) => exit::SOLVER,
            CliError::ConflictingSeeds(_) => exit::SEED_CONFLICT,
            CliError::Output(_) => exit::CHECK_FAILED,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Load(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Solve(e) => solve_error_kind(e),
            CliError::Sensitivity(e) => sensitivity_error_kind(e),
            CliError::ConflictingSeeds(_) => "conflicting_seeds",
            CliError::SweepFailed(_) => "sweep_failed",
            CliError::Output(_) => "output",
        }
    }

    /// Structured form written to stderr.
    pub fn to_json(&self) -> Value {
        json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
            }
        })
    }
}

pub fn solve_error_kind(e: &SolveError) -> &'static str {
    match e {
        SolveError::MaxIterations { .. } => "max_iterations",
        SolveError::EvalDomain(_) => "eval_domain",
        SolveError::Infeasible { .. } => "infeasible",
        SolveError::NotStationary { .. } => "not_stationary",
        SolveError::SingularNewtonSystem => "singular_newton_system",
        SolveError::InvalidConfig(_) => "invalid_config",
    }
}

pub fn sensitivity_error_kind(e: &SensitivityError) -> &'static str {
    match e {
        SensitivityError::SingularKkt { .. } => "singular_kkt",
        SensitivityError::StaleHandle => "stale_handle",
        SensitivityError::QueryBeforeDifferentiate => "query_before_differentiate",
        SensitivityError::ConflictingSeeds => "conflicting_seeds",
        SensitivityError::NoSeed => "no_seed",
        SensitivityError::Eval(_) => "eval_domain",
    }
}

/// Parses `name=value`.
pub fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected name=value, got '{s}'"))?;
    let value: f64 = value.trim().parse().map_err(|_| format!("'{value}' is not a number"))?;
    if !value.is_finite() {
        return Err(format!("'{s}' is not finite"));
    }
    Ok((name.trim().to_owned(), value))
}

pub fn apply_overrides(prog: &mut ParametricProgram<f64>, sets: &[(String, f64)]) -> Result<(), CliError> {
    for (name, value) in sets {
        let p = prog.parameter(name).ok_or_else(|| CliError::Usage(format!("unknown parameter '{name}'")))?;
        prog.set_parameter_value(p, *value).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

pub fn solver_config(tol: Option<f64>) -> Result<SolverConfig<f64>, CliError> {
    let mut cfg = SolverConfig::default();
    if let Some(t) = tol {
        cfg.tolerance = t;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn canonicalize(prog: &ParametricProgram<f64>) -> Result<CanonicalForm<f64>, CliError> {
    prog.canonicalize().map_err(|e| CliError::Load(LoadError::Schema(e.to_string())))
}

/// Multiplier of user constraint `i`, expressed as the derivative of the
/// user objective with respect to that constraint's right-hand side.
fn constraint_dual(prog: &ParametricProgram<f64>, cf: &CanonicalForm<f64>, lambda: &[f64], i: usize) -> f64 {
    let s = cf.sign() * lambda[i];
    match prog.constraints()[i].relation {
        Relation::Eq | Relation::Ge => s,
        Relation::Le => -s,
    }
}

fn constraint_labels(prog: &ParametricProgram<f64>) -> Vec<String> {
    prog.constraint_handles().into_iter().map(|c| prog.constraint_label(c).expect("own handle")).collect()
}

fn parameter_map(prog: &ParametricProgram<f64>, values: &[f64]) -> Value {
    let mut m = Map::new();
    for (def, v) in prog.parameters().iter().zip(values) {
        m.insert(def.name.clone(), json!(v));
    }
    Value::Object(m)
}

fn user_map(prog: &ParametricProgram<f64>, values: &[f64]) -> Value {
    let mut m = Map::new();
    for (def, v) in prog.variables().iter().zip(values) {
        m.insert(def.name.clone(), json!(v));
    }
    Value::Object(m)
}

fn duals_report(prog: &ParametricProgram<f64>, cf: &CanonicalForm<f64>, lambda: &[f64], nu: &[f64]) -> Value {
    let mut constraints = Map::new();
    for (i, label) in constraint_labels(prog).into_iter().enumerate() {
        constraints.insert(label, json!(constraint_dual(prog, cf, lambda, i)));
    }
    let mut lower = Map::new();
    let mut upper = Map::new();
    for (j, v) in prog.variables().iter().enumerate() {
        if v.lower.is_some() {
            lower.insert(v.name.clone(), json!(cf.sign() * nu[j]));
        }
        if let Some(row) = cf.upper_rows()[j] {
            upper.insert(v.name.clone(), json!(-cf.sign() * lambda[row]));
        }
    }
    json!({"constraints": constraints, "lower_bounds": lower, "upper_bounds": upper})
}

fn regularity_report(cf: &CanonicalForm<f64>, sol: &Solution<f64>) -> Result<Value, CliError> {
    let r = check_regularity(cf, &sol.point, 1e-6).map_err(SolveError::from)?;
    let names = cf.variable_names();
    Ok(json!({
        "complementarity_margin": r.complementarity_margin,
        "near_degenerate": r.near_degenerate.iter().map(|&i| names[i].clone()).collect::<Vec<_>>(),
        "licq_proxy": r.licq_proxy,
        "strict_complementarity": r.scs_ok,
        "licq": r.licq_ok,
    }))
}

pub struct Solved {
    pub cf: CanonicalForm<f64>,
    pub solution: Solution<f64>,
}

pub fn solve_program(prog: &ParametricProgram<f64>, cfg: &SolverConfig<f64>) -> Result<Solved, CliError> {
    let cf = canonicalize(prog)?;
    let solution = solve(&cf, &prog.parameter_values(), cfg)?;
    Ok(Solved { cf, solution })
}

pub fn cmd_solve(
    problem: &LoadedProblem,
    sets: &[(String, f64)],
    tol: Option<f64>,
) -> Result<Value, CliError> {
    let mut prog = problem.program.clone();
    apply_overrides(&mut prog, sets)?;
    let cfg = solver_config(tol)?;
    let Solved { cf, solution } = solve_program(&prog, &cfg)?;
    let pt = &solution.point;
    Ok(json!({
        "status": "optimal",
        "parameters": parameter_map(&prog, &pt.p),
        "variables": user_map(&prog, &cf.to_user_point(&pt.x)),
        "objective": pt.objective,
        "duals": duals_report(&prog, &cf, &pt.lambda, &pt.nu),
        "iterations": solution.iterations,
        "kkt_residual": solution.residual,
        "regularity": regularity_report(&cf, &solution)?,
    }))
}

#[derive(Clone, Debug, Default)]
pub struct SenseRequest {
    pub forward: Vec<(String, f64)>,
    pub reverse: Vec<(String, f64)>,
    pub objective: Option<f64>,
}

pub fn cmd_sense(
    problem: &LoadedProblem,
    sets: &[(String, f64)],
    req: &SenseRequest,
    tol: Option<f64>,
) -> Result<Value, CliError> {
    if !req.reverse.is_empty() && req.objective.is_some() {
        return Err(CliError::ConflictingSeeds(
            "reverse variable seeds and the reverse objective seed are mutually exclusive; \
             pass either --reverse or --objective"
                .to_owned(),
        ));
    }
    if req.forward.is_empty() && req.reverse.is_empty() && req.objective.is_none() {
        return Err(CliError::Usage("give --forward, --reverse or --objective seeds".to_owned()));
    }
    let mut prog = problem.program.clone();
    apply_overrides(&mut prog, sets)?;
    let forward: Vec<_> = req
        .forward
        .iter()
        .map(|(n, v)| {
            prog.parameter(n).map(|h| (h, *v)).ok_or_else(|| CliError::Usage(format!("unknown parameter '{n}'")))
        })
        .collect::<Result<_, _>>()?;
    let reverse: Vec<_> = req
        .reverse
        .iter()
        .map(|(n, v)| {
            prog.variable(n).map(|h| (h, *v)).ok_or_else(|| CliError::Usage(format!("unknown variable '{n}'")))
        })
        .collect::<Result<_, _>>()?;

    let cfg = solver_config(tol)?;
    let Solved { cf, solution } = solve_program(&prog, &cfg)?;
    let mut session = SensitivitySession::new(&cf, solution.point.clone())?;
    let mut report = Map::new();
    report.insert("parameters".into(), parameter_map(&prog, &solution.point.p));
    report.insert("delta".into(), json!(session.delta()));

    if !forward.is_empty() {
        let mut seed = Map::new();
        for &(h, v) in &forward {
            session.set_forward_parameter(h, v)?;
        }
        for (def, v) in prog.parameters().iter().zip(session.forward_seed()) {
            if *v != 0.0 {
                seed.insert(def.name.clone(), json!(v));
            }
        }
        let t = session.forward_differentiate()?.clone();
        let mut duals = Map::new();
        for (i, label) in constraint_labels(&prog).into_iter().enumerate() {
            duals.insert(label, json!(constraint_dual(&prog, &cf, &t.lambda, i)));
        }
        report.insert(
            "forward".into(),
            json!({
                "seed": seed,
                "variables": user_map(&prog, &cf.to_user_tangent(&t.x)),
                "objective": t.objective,
                "duals": duals,
            }),
        );
    }

    if !reverse.is_empty() || req.objective.is_some() {
        let mut seed = Map::new();
        for &(h, v) in &reverse {
            session.set_reverse_variable(h, v)?;
        }
        if let Some(jbar) = req.objective {
            session.set_reverse_objective(jbar)?;
            seed.insert("objective".into(), json!(jbar));
        } else {
            let mut vars = Map::new();
            for (n, v) in &req.reverse {
                vars.insert(n.clone(), json!(v));
            }
            seed.insert("variables".into(), Value::Object(vars));
        }
        let pbar = session.reverse_differentiate()?.to_vec();
        report.insert("reverse".into(), json!({"seed": seed, "parameters": parameter_map(&prog, &pbar)}));
    }

    // objective sensitivity to every parameter, from a separate objective seed
    session.empty_input_sensitivities();
    session.set_reverse_objective(1.0)?;
    let grad = session.reverse_differentiate()?.to_vec();
    report.insert("objective_gradient".into(), parameter_map(&prog, &grad));
    Ok(Value::Object(report))
}

#[derive(Clone, Debug)]
pub struct SweepRequest {
    pub param: String,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
    pub warm: bool,
}

/// Fixed-width scientific notation with 17 significant digits.
pub fn format_number(v: f64) -> String {
    // fold -0 into 0 so equal values print identically
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.16e}")
}

struct SweepRow {
    cells: Vec<String>,
    ok: bool,
}

pub fn cmd_sweep(
    problem: &LoadedProblem,
    sets: &[(String, f64)],
    req: &SweepRequest,
    tol: Option<f64>,
) -> Result<String, CliError> {
    if req.steps < 2 {
        return Err(CliError::Usage("--steps must be at least 2".to_owned()));
    }
    if !(req.from.is_finite() && req.to.is_finite()) || req.from > req.to {
        return Err(CliError::Usage("--from must not exceed --to".to_owned()));
    }
    let mut prog = problem.program.clone();
    apply_overrides(&mut prog, sets)?;
    let handle = prog
        .parameter(&req.param)
        .ok_or_else(|| CliError::Usage(format!("unknown parameter '{}'", req.param)))?;
    let cfg = solver_config(tol)?;
    let cf = canonicalize(&prog)?;
    let labels = constraint_labels(&prog);
    let var_names: Vec<String> = prog.variables().iter().map(|v| v.name.clone()).collect();
    let loss = match &problem.loss {
        Some(e) => Some(LossFunctional::new(&prog, e)?),
        None => None,
    };

    let mut header = vec![req.param.clone(), "status".into(), "iterations".into(), "delta".into(), "objective".into()];
    header.extend(var_names.iter().cloned());
    header.extend(labels.iter().map(|l| format!("lambda[{l}]")));
    header.extend(var_names.iter().map(|n| format!("d{n}/d{}", req.param)));
    header.push(format!("dobjective/d{}", req.param));
    if loss.is_some() {
        header.push("loss".into());
        header.push(format!("dloss/d{}", req.param));
    }
    let width = header.len();

    let mut out = header.join(",");
    out.push('\n');
    let mut previous: Option<Solution<f64>> = None;
    let mut any_ok = false;
    for k in 0..req.steps {
        let value = if k + 1 == req.steps {
            req.to
        } else {
            req.from + (req.to - req.from) * k as f64 / (req.steps - 1) as f64
        };
        prog.set_parameter_value(handle, value).expect("own handle");
        let p = prog.parameter_values();
        let result = match (&previous, req.warm) {
            (Some(prev), true) => solve_from(&cf, &p, &cfg, &prev.point),
            _ => solve(&cf, &p, &cfg),
        };
        let row = sweep_row(&prog, &cf, handle, loss.as_ref(), value, result.as_ref(), width);
        if let Ok(sol) = result {
            previous = Some(sol);
        }
        any_ok |= row.ok;
        out.push_str(&row.cells.join(","));
        out.push('\n');
    }
    if !any_ok {
        return Err(CliError::SweepFailed(format!("all {} sweep points failed", req.steps)));
    }
    Ok(out)
}

fn sweep_row(
    prog: &ParametricProgram<f64>,
    cf: &CanonicalForm<f64>,
    handle: kkt_sens_core::ParameterHandle,
    loss: Option<&LossFunctional>,
    value: f64,
    result: Result<&Solution<f64>, &SolveError>,
    width: usize,
) -> SweepRow {
    let mut cells = vec![format_number(value)];
    let sol = match result {
        Ok(sol) => sol,
        Err(e) => {
            cells.push(solve_error_kind(e).to_owned());
            cells.resize(width, String::new());
            return SweepRow { cells, ok: false };
        }
    };
    let pt = &sol.point;
    let n_user = cf.n_user_vars();
    let m_user = prog.constraints().len();
    let mut primal = vec![format_number(pt.objective)];
    primal.extend(cf.to_user_point(&pt.x).into_iter().map(format_number));
    primal.extend((0..m_user).map(|i| format_number(constraint_dual(prog, cf, &pt.lambda, i))));

    let sens = (|| -> Result<(f64, Vec<String>), SensitivityError> {
        let mut s = SensitivitySession::new(cf, pt.clone())?;
        s.set_forward_parameter(handle, 1.0)?;
        let t = s.forward_differentiate()?.clone();
        let mut cells: Vec<String> = t.x[..n_user].iter().copied().map(format_number).collect();
        cells.push(format_number(t.objective));
        if let Some(l) = loss {
            let (value, grad_x, grad_p) = l.evaluate(&cf.to_user_point(&pt.x), &pt.p);
            let mut any = false;
            for (v, &g) in prog.variable_handles().into_iter().zip(&grad_x) {
                if g != 0.0 {
                    s.set_reverse_variable(v, g)?;
                    any = true;
                }
            }
            let col = cf.param_column(handle).expect("own handle");
            let indirect = if any { s.reverse_differentiate()?[col] } else { 0.0 };
            cells.push(format_number(value));
            cells.push(format_number(indirect + grad_p[col]));
        }
        Ok((s.delta(), cells))
    })();

    match sens {
        Ok((delta, sens_cells)) => {
            cells.push("ok".into());
            cells.push(sol.iterations.to_string());
            cells.push(format_number(delta));
            cells.extend(primal);
            cells.extend(sens_cells);
            SweepRow { cells, ok: true }
        }
        Err(e) => {
            cells.push(sensitivity_error_kind(&e).into());
            cells.push(sol.iterations.to_string());
            cells.push(String::new());
            cells.extend(primal);
            cells.resize(width, String::new());
            SweepRow { cells, ok: true }
        }
    }
}

/// A scalar functional of user variables and parameters with its gradients.
pub struct LossFunctional {
    graph: kkt_sens_core::ExprGraph<f64>,
    root: kkt_sens_core::NodeId,
}

impl LossFunctional {
    pub fn new(prog: &ParametricProgram<f64>, e: &Expr<f64>) -> Result<Self, CliError> {
        let (graph, root) =
            prog.compile_functional(e).map_err(|e| CliError::Load(LoadError::Schema(e.to_string())))?;
        Ok(Self { graph, root })
    }

    /// Value and gradients with respect to user variables and parameters.
    pub fn evaluate(&self, x_user: &[f64], p: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        match self.graph.workspace().gradient(&self.graph, self.root, x_user, p) {
            Ok((gx, gp, v)) => (v, gx, gp),
            Err(_) => (f64::NAN, vec![f64::NAN; x_user.len()], vec![f64::NAN; p.len()]),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FdCheckRequest {
    /// Parameters to check; all when empty.
    pub params: Vec<String>,
    /// Pass threshold on the relative error.
    pub threshold: f64,
}

/// Tolerance used for the solves behind finite differences.
pub const FD_SOLVE_TOLERANCE: f64 = 1e-12;

/// Relative error `|fd − ad| / max(1, |ad|)`.
pub fn relative_error(fd: f64, ad: f64) -> f64 {
    (fd - ad).abs() / ad.abs().max(1.0)
}

pub fn fd_step(p: f64) -> f64 {
    1e-6 * p.abs().max(1.0)
}

/// Returns the report and whether every checked row passed.
pub fn cmd_fdcheck(
    problem: &LoadedProblem,
    sets: &[(String, f64)],
    req: &FdCheckRequest,
) -> Result<(Value, bool), CliError> {
    let mut prog = problem.program.clone();
    apply_overrides(&mut prog, sets)?;
    let handles = if req.params.is_empty() {
        prog.parameter_handles()
    } else {
        req.params
            .iter()
            .map(|n| prog.parameter(n).ok_or_else(|| CliError::Usage(format!("unknown parameter '{n}'"))))
            .collect::<Result<_, _>>()?
    };
    let cfg = SolverConfig { tolerance: FD_SOLVE_TOLERANCE, ..SolverConfig::default() };
    let cf = canonicalize(&prog)?;
    let base_p = prog.parameter_values();
    let mut results = Vec::new();
    let mut all_pass = true;
    if handles.is_empty() {
        return Ok((json!({"threshold": req.threshold, "pass": true, "results": []}), true));
    }
    let base = solve(&cf, &base_p, &cfg)?;
    let session = SensitivitySession::new(&cf, base.point.clone());
    let base_active = active_set(&cf, &base.point);
    let var_names: Vec<String> = prog.variables().iter().map(|v| v.name.clone()).collect();

    for h in handles {
        let col = cf.param_column(h).expect("own handle");
        let name = prog.parameters()[col].name.clone();
        let step = fd_step(base_p[col]);
        let mut entry = Map::new();
        entry.insert("parameter".into(), json!(name));
        entry.insert("value".into(), json!(base_p[col]));
        entry.insert("step".into(), json!(step));
        let session = match &session {
            Ok(s) if s.delta() == 0.0 => s,
            Ok(s) => {
                entry.insert("status".into(), json!("singular"));
                entry.insert("delta".into(), json!(s.delta()));
                results.push(Value::Object(entry));
                all_pass = false;
                continue;
            }
            Err(e) => {
                entry.insert("status".into(), json!("singular"));
                entry.insert("message".into(), json!(e.to_string()));
                results.push(Value::Object(entry));
                all_pass = false;
                continue;
            }
        };
        let mut seed = vec![0.0; base_p.len()];
        seed[col] = 1.0;
        let t = session.tangents(&seed)?;
        let solve_at = |v: f64| {
            let mut p = base_p.clone();
            p[col] = v;
            solve(&cf, &p, &cfg)
        };
        let (plus, minus) = match (solve_at(base_p[col] + step), solve_at(base_p[col] - step)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                entry.insert("status".into(), json!("solver_failure"));
                entry.insert("message".into(), json!(e.to_string()));
                results.push(Value::Object(entry));
                all_pass = false;
                continue;
            }
        };
        if active_set(&cf, &plus.point) != base_active || active_set(&cf, &minus.point) != base_active {
            entry.insert("status".into(), json!("skipped_active_set_change"));
            results.push(Value::Object(entry));
            continue;
        }
        let xp = cf.to_user_point(&plus.point.x);
        let xm = cf.to_user_point(&minus.point.x);
        let mut rows = Vec::new();
        let mut pass = true;
        let mut check = |output: String, ad: f64, fd: f64| {
            let err = relative_error(fd, ad);
            let ok = err <= req.threshold;
            pass &= ok;
            rows.push(json!({"output": output, "forward": ad, "central_difference": fd, "relative_error": err, "pass": ok}));
        };
        for (j, n) in var_names.iter().enumerate() {
            check(n.clone(), t.x[j], (xp[j] - xm[j]) / (2.0 * step));
        }
        check("objective".into(), t.objective, (plus.point.objective - minus.point.objective) / (2.0 * step));
        all_pass &= pass;
        entry.insert("status".into(), json!(if pass { "pass" } else { "fail" }));
        entry.insert("rows".into(), Value::Array(rows));
        results.push(Value::Object(entry));
    }
    Ok((json!({"threshold": req.threshold, "pass": all_pass, "results": results}), all_pass))
}
