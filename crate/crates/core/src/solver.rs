//! Primal-dual interior-point solver for the canonical form, KKT residuals,
//! regularity diagnostics, and adoption of externally computed points.
//!
//! Each iteration takes a Newton step on the barrier-perturbed KKT system
//! `∇f + Aᵀλ − ν = 0, c = 0, x_i ν_i = μ` (bounded `i` only), keeps iterates
//! strictly interior with a fraction-to-boundary rule, and accepts steps on an
//! ℓ1 penalty merit of the barrier objective. If the Newton matrix is singular
//! or the step is not a descent direction, `δ_w I` is added to the Hessian
//! block, escalating ×10 from the configured regularization up to `1e-2`.

use thiserror::Error;

use crate::graph::{EvalError, EvalWorkspace};
use crate::linalg::{smallest_row_singular_value, LuFactorization, Matrix};
use crate::model::{CanonicalForm, SlackSource};
use crate::scalar::{dot, max_abs, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("no convergence after {iterations} iterations (KKT residual {residual:.3e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("iterate left the function domain: {0}")]
    EvalDomain(#[from] EvalError),
    #[error("problem appears infeasible: constraint violation stalled at {residual:.3e}")]
    Infeasible { residual: f64 },
    #[error("point is not stationary: {row} has residual {residual:.3e}")]
    NotStationary { row: String, residual: f64 },
    #[error("Newton system could not be factored even with maximal regularization")]
    SingularNewtonSystem,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig<T> {
    /// Infinity-norm tolerance on the unperturbed KKT residual.
    pub tolerance: T,
    pub max_iterations: usize,
    pub initial_barrier: T,
    pub barrier_reduction: T,
    /// Fraction-to-boundary parameter `τ ∈ (0, 1)`.
    pub fraction_to_boundary: T,
    /// Base primal/dual regularization of the Newton matrix.
    pub regularization: T,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            // 1e-8, or a hundred ulps where that is below working precision
            tolerance: T::lit(1e-8).max(T::lit(100.0) * T::epsilon()),
            max_iterations: 200,
            initial_barrier: T::lit(0.1),
            barrier_reduction: T::lit(0.2),
            fraction_to_boundary: T::lit(0.995),
            regularization: T::lit(1e-8),
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<(), SolveError> {
        let positive = |v: T| v > T::zero() && v.is_finite();
        if !positive(self.tolerance) {
            return Err(SolveError::InvalidConfig("tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(SolveError::InvalidConfig("max_iterations must be positive"));
        }
        if !positive(self.initial_barrier) || !positive(self.regularization) {
            return Err(SolveError::InvalidConfig("barrier and regularization must be positive"));
        }
        if !(self.barrier_reduction > T::zero() && self.barrier_reduction < T::one()) {
            return Err(SolveError::InvalidConfig("barrier_reduction must lie in (0, 1)"));
        }
        if !(self.fraction_to_boundary > T::zero() && self.fraction_to_boundary < T::one()) {
            return Err(SolveError::InvalidConfig("fraction_to_boundary must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// `y = (x, λ, ν)` at parameter `p`, in canonical coordinates.
///
/// `nu` has one slot per canonical variable; slots of free variables are
/// always zero.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimalDualPoint<T> {
    pub x: Vec<T>,
    pub lambda: Vec<T>,
    pub nu: Vec<T>,
    pub p: Vec<T>,
    /// Objective value in the user's sense.
    pub objective: T,
}

#[derive(Clone, Debug)]
pub struct Solution<T> {
    pub point: PrimalDualPoint<T>,
    pub iterations: usize,
    /// Final KKT residual, infinity norm.
    pub residual: T,
    /// Barrier parameters in the order they were used.
    pub barrier_trace: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KktResidual<T> {
    /// `∇f + Aᵀλ − ν`, one entry per canonical variable.
    pub stationarity: Vec<T>,
    /// `c(x; p)`.
    pub primal: Vec<T>,
    /// `x_i ν_i` for each bounded variable, in index order.
    pub complementarity: Vec<T>,
}

impl<T: Scalar> KktResidual<T> {
    pub fn max_norm(&self) -> T {
        max_abs(&self.stationarity)
            .max(max_abs(&self.primal))
            .max(max_abs(&self.complementarity))
    }

    /// Label and magnitude of the largest residual entry.
    pub fn worst(&self, cf: &CanonicalForm<T>) -> (String, T) {
        let mut best = (String::from("none"), T::zero());
        let names = cf.variable_names();
        for (i, r) in self.stationarity.iter().enumerate() {
            if r.abs() > best.1 {
                best = (format!("stationarity[{}]", names[i]), r.abs());
            }
        }
        for (i, r) in self.primal.iter().enumerate() {
            if r.abs() > best.1 {
                best = (format!("constraint row {i}"), r.abs());
            }
        }
        for (r, i) in self.complementarity.iter().zip(cf.bounded_indices()) {
            if r.abs() > best.1 {
                best = (format!("complementarity[{}]", names[i]), r.abs());
            }
        }
        best
    }
}

/// Diagnostics for the regularity conditions under which the KKT system is
/// locally invertible (second-order sufficiency is not checked here; it shows
/// up as a singular or damped KKT factorization).
#[derive(Clone, Debug, PartialEq)]
pub struct RegularityReport<T> {
    /// `min_i max(x_i, ν_i)` over bounded variables; `None` when there are none.
    pub complementarity_margin: Option<T>,
    /// Bounded variables with both `x_i < ε_d` and `ν_i < ε_d`.
    pub near_degenerate: Vec<usize>,
    /// Smallest singular value of `A` restricted to free and inactive
    /// columns; `None` without constraints.
    pub licq_proxy: Option<T>,
    pub scs_ok: bool,
    pub licq_ok: bool,
}

impl<T: Scalar> RegularityReport<T> {
    pub fn is_regular(&self) -> bool {
        self.scs_ok && self.licq_ok
    }
}

fn check_dims<T: Scalar>(cf: &CanonicalForm<T>, pt: &PrimalDualPoint<T>) -> Result<(), EvalError> {
    let checks = [
        ("x", cf.n(), pt.x.len()),
        ("lambda", cf.m(), pt.lambda.len()),
        ("nu", cf.n(), pt.nu.len()),
        ("p", cf.n_params(), pt.p.len()),
    ];
    for (what, expected, got) in checks {
        if expected != got {
            return Err(EvalError::Dimension { what, expected, got });
        }
    }
    Ok(())
}

struct FirstOrder<T> {
    f: T,
    grad: Vec<T>,
    c: Vec<T>,
    a: Matrix<T>,
}

fn first_order<T: Scalar>(
    cf: &CanonicalForm<T>,
    ws: &mut EvalWorkspace<T>,
    x: &[T],
    p: &[T],
) -> Result<FirstOrder<T>, EvalError> {
    let g = cf.graph();
    let (grad, _, f) = ws.gradient(g, cf.objective_root(), x, p)?;
    let (a, _, c) = ws.jacobians(g, cf.constraint_roots(), x, p)?;
    Ok(FirstOrder { f, grad, c, a })
}

fn stationarity<T: Scalar>(grad: &[T], a: &Matrix<T>, lambda: &[T], nu: &[T]) -> Vec<T> {
    let atl = a.tr_mul_vec(lambda);
    grad.iter().zip(&atl).zip(nu).map(|((&g, &t), &v)| g + t - v).collect()
}

pub fn kkt_residual<T: Scalar>(
    cf: &CanonicalForm<T>,
    pt: &PrimalDualPoint<T>,
) -> Result<KktResidual<T>, EvalError> {
    check_dims(cf, pt)?;
    let mut ws = cf.graph().workspace();
    let fo = first_order(cf, &mut ws, &pt.x, &pt.p)?;
    let nu: Vec<T> = (0..cf.n()).map(|i| if cf.is_bounded(i) { pt.nu[i] } else { T::zero() }).collect();
    Ok(KktResidual {
        stationarity: stationarity(&fo.grad, &fo.a, &pt.lambda, &nu),
        primal: fo.c,
        complementarity: cf.bounded_indices().into_iter().map(|i| pt.x[i] * pt.nu[i]).collect(),
    })
}

/// A bounded variable counts as active when `x_i ≤ ν_i`.
pub fn active_set<T: Scalar>(cf: &CanonicalForm<T>, pt: &PrimalDualPoint<T>) -> Vec<usize> {
    cf.bounded_indices().into_iter().filter(|&i| pt.x[i] <= pt.nu[i]).collect()
}

pub fn check_regularity<T: Scalar>(
    cf: &CanonicalForm<T>,
    pt: &PrimalDualPoint<T>,
    eps_d: T,
) -> Result<RegularityReport<T>, EvalError> {
    check_dims(cf, pt)?;
    let bounded = cf.bounded_indices();
    let complementarity_margin = bounded
        .iter()
        .map(|&i| pt.x[i].max(pt.nu[i]).max(T::zero()))
        .reduce(T::min);
    let near_degenerate: Vec<usize> = bounded
        .iter()
        .copied()
        .filter(|&i| pt.x[i] < eps_d && pt.nu[i] < eps_d)
        .collect();

    let a = cf.graph().jacobian_x(cf.constraint_roots(), &pt.x, &pt.p)?;
    let active = active_set(cf, pt);
    let inactive: Vec<usize> = (0..cf.n()).filter(|i| !active.contains(i)).collect();
    let licq_proxy = smallest_row_singular_value(&a.select_columns(&inactive));
    let licq_ok = licq_proxy.is_none_or(|s| s > T::lit(1e-8));
    Ok(RegularityReport {
        complementarity_margin,
        scs_ok: near_degenerate.is_empty(),
        near_degenerate,
        licq_proxy,
        licq_ok,
    })
}

/// Validates an externally computed primal-dual point against `tolerance`.
pub fn adopt_external_point<T: Scalar>(
    cf: &CanonicalForm<T>,
    x: Vec<T>,
    lambda: Vec<T>,
    nu: Vec<T>,
    p: Vec<T>,
    tolerance: T,
) -> Result<PrimalDualPoint<T>, SolveError> {
    let mut pt = PrimalDualPoint { x, lambda, nu, p, objective: T::zero() };
    let res = kkt_residual(cf, &pt)?;
    let (row, worst) = res.worst(cf);
    let sign_ok = cf
        .bounded_indices()
        .into_iter()
        .all(|i| pt.x[i] >= -tolerance && pt.nu[i] >= -tolerance);
    let free_ok = (0..cf.n()).all(|i| cf.is_bounded(i) || pt.nu[i] == T::zero());
    if !(worst <= tolerance) {
        return Err(SolveError::NotStationary { row, residual: worst.to_f64_lossy() });
    }
    if !sign_ok || !free_ok {
        return Err(SolveError::NotStationary {
            row: String::from("bound sign conditions"),
            residual: f64::NAN,
        });
    }
    let f = cf.graph().evaluate(cf.objective_root(), &pt.x, &pt.p)?;
    pt.objective = cf.user_objective(f);
    Ok(pt)
}

/// Assembles `[[W + δ_w I, Aᵀ, −I_B], [A, −δ_c I, 0], [V_B, 0, X_B]]`.
pub(crate) fn assemble_kkt_matrix<T: Scalar>(
    w: &Matrix<T>,
    a: &Matrix<T>,
    x: &[T],
    nu: &[T],
    bounded: &[usize],
    delta_w: T,
    delta_c: T,
) -> Matrix<T> {
    let n = w.rows();
    let m = a.rows();
    let nb = bounded.len();
    let mut k = Matrix::zeros(n + m + nb, n + m + nb);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = w[(i, j)];
        }
        k[(i, i)] += delta_w;
    }
    for r in 0..m {
        for j in 0..n {
            k[(j, n + r)] = a[(r, j)];
            k[(n + r, j)] = a[(r, j)];
        }
        k[(n + r, n + r)] = -delta_c;
    }
    for (s, &i) in bounded.iter().enumerate() {
        k[(i, n + m + s)] = -T::one();
        k[(n + m + s, i)] = nu[i];
        k[(n + m + s, n + m + s)] = x[i];
    }
    k
}

/// Solves from the default interior starting point.
pub fn solve<T: Scalar>(
    cf: &CanonicalForm<T>,
    p: &[T],
    cfg: &SolverConfig<T>,
) -> Result<Solution<T>, SolveError> {
    cfg.validate()?;
    let x0 = initial_point(cf, p)?;
    Interior::new(cf, p, cfg, x0, None)?.run()
}

/// Solves starting from a previous solution (bounded components are pushed
/// back into the interior).
pub fn solve_from<T: Scalar>(
    cf: &CanonicalForm<T>,
    p: &[T],
    cfg: &SolverConfig<T>,
    start: &PrimalDualPoint<T>,
) -> Result<Solution<T>, SolveError> {
    cfg.validate()?;
    check_dims(cf, &PrimalDualPoint { p: p.to_vec(), ..start.clone() })?;
    let floor = T::lit(1e-2);
    let x0: Vec<T> = start
        .x
        .iter()
        .enumerate()
        .map(|(i, &v)| if cf.is_bounded(i) { v.max(floor) } else { v })
        .collect();
    Interior::new(cf, p, cfg, x0, Some(start.lambda.clone()))?.run()
}

/// Bounded user variables start at 1 (or mid-range when the range is
/// shorter than 2), free variables at 0, and each slack at
/// `max(1, value that satisfies its row)`.
fn initial_point<T: Scalar>(cf: &CanonicalForm<T>, p: &[T]) -> Result<Vec<T>, SolveError> {
    let mut x = vec![T::zero(); cf.n()];
    let g = cf.graph();
    let mut ws = g.workspace();
    let zero = x.clone();
    for j in 0..cf.n_user_vars() {
        if !cf.is_bounded(j) {
            continue;
        }
        x[j] = T::one();
        if let Some(row) = cf.upper_rows()[j] {
            // the row reads x̃ + s − (u − b), so at the origin it is −(u − b)
            let range = -ws.evaluate(g, cf.constraint_roots()[row], &zero, p)?;
            if range > T::zero() {
                x[j] = T::one().min(range * T::half());
            }
        }
    }
    let rows = ws.evaluate_many(g, cf.constraint_roots(), &x, p)?;
    for s in cf.slacks() {
        let row = match s.source {
            SlackSource::Inequality(i) => i,
            SlackSource::UpperBound(j) => cf.upper_rows()[j].expect("upper row recorded"),
        };
        x[s.var] = T::one().max(-rows[row]);
    }
    Ok(x)
}

struct Interior<'a, T: Scalar> {
    cf: &'a CanonicalForm<T>,
    p: &'a [T],
    cfg: &'a SolverConfig<T>,
    ws: EvalWorkspace<T>,
    bounded: Vec<usize>,
    x: Vec<T>,
    lambda: Vec<T>,
    nu: Vec<T>,
    mu: T,
    rho: T,
    /// Trust radius for the step in the free variables.
    radius: T,
}

impl<'a, T: Scalar> Interior<'a, T> {
    fn new(
        cf: &'a CanonicalForm<T>,
        p: &'a [T],
        cfg: &'a SolverConfig<T>,
        x: Vec<T>,
        lambda: Option<Vec<T>>,
    ) -> Result<Self, SolveError> {
        if p.len() != cf.n_params() {
            return Err(EvalError::Dimension { what: "p", expected: cf.n_params(), got: p.len() }.into());
        }
        let bounded = cf.bounded_indices();
        let mu = cfg.initial_barrier;
        let mut nu = vec![T::zero(); cf.n()];
        for &i in &bounded {
            nu[i] = mu / x[i];
        }
        Ok(Self {
            cf,
            p,
            cfg,
            ws: cf.graph().workspace(),
            bounded,
            x,
            lambda: lambda.unwrap_or_else(|| vec![T::zero(); cf.m()]),
            nu,
            mu,
            rho: T::one(),
            radius: T::one(),
        })
    }

    fn mu_min(&self) -> T {
        self.cfg.tolerance / T::lit(10.0)
    }

    /// Infinity norm of the KKT residual perturbed by `mu`.
    fn error(&self, fo: &FirstOrder<T>, mu: T) -> T {
        let st = stationarity(&fo.grad, &fo.a, &self.lambda, &self.nu);
        let comp = self
            .bounded
            .iter()
            .fold(T::zero(), |m, &i| m.max((self.x[i] * self.nu[i] - mu).abs()));
        max_abs(&st).max(max_abs(&fo.c)).max(comp)
    }

    fn merit(&mut self, x: &[T]) -> Result<T, EvalError> {
        let g = self.cf.graph();
        let mut roots = Vec::with_capacity(self.cf.m() + 1);
        roots.push(self.cf.objective_root());
        roots.extend_from_slice(self.cf.constraint_roots());
        let vals = self.ws.evaluate_many(g, &roots, x, self.p)?;
        let barrier: T = self.bounded.iter().map(|&i| x[i].ln()).sum();
        let violation: T = vals[1..].iter().map(|c| c.abs()).sum();
        Ok(vals[0] - self.mu * barrier + self.rho * violation)
    }

    fn newton_direction(&mut self, fo: &FirstOrder<T>) -> Result<Vec<T>, SolveError> {
        let n = self.cf.n();
        let w = self.ws.lagrangian_hessian_xx(
            self.cf.graph(),
            self.cf.objective_root(),
            self.cf.constraint_roots(),
            &self.x,
            &self.lambda,
            self.p,
        )?;
        let st = stationarity(&fo.grad, &fo.a, &self.lambda, &self.nu);
        let mut rhs: Vec<T> = st.iter().map(|&v| -v).collect();
        rhs.extend(fo.c.iter().map(|&v| -v));
        rhs.extend(self.bounded.iter().map(|&i| self.mu - self.x[i] * self.nu[i]));

        // Rank-deficient constraint Jacobian: regularize the dual block in
        // proportion to the residual so the multiplier step stays bounded.
        let reg = self.cfg.regularization;
        let mut delta_c = T::zero();
        let scale = T::one().max(fo.a.max_abs());
        if let Some(s) = smallest_row_singular_value(&fo.a) {
            if s <= T::lit(1e-6) * scale {
                delta_c = reg.max(T::one().min(self.error(fo, self.mu)));
            }
        }

        let mut fallback = None;
        let mut delta_w = T::zero();
        let cap = T::lit(1e-2);
        loop {
            let k = assemble_kkt_matrix(&w, &fo.a, &self.x, &self.nu, &self.bounded, delta_w, delta_c);
            let lu = match LuFactorization::factor(&k) {
                Err(_) if delta_c == T::zero() => {
                    // degenerate active set: regularize the dual block and retry
                    delta_c = reg * self.mu.powf(T::lit(0.25));
                    continue;
                }
                other => other,
            };
            if let Ok(lu) = lu {
                let d = lu.solve(&rhs);
                let dx = &d[..n];
                let wdx = w.mul_vec(dx);
                let mut curvature = dot(dx, &wdx) + delta_w * dot(dx, dx);
                for &i in &self.bounded {
                    curvature += self.nu[i] / self.x[i] * dx[i] * dx[i];
                }
                if d.iter().all(|v| v.is_finite()) {
                    if curvature >= T::lit(1e-10) * dot(dx, dx) {
                        return Ok(d);
                    }
                    fallback = Some(d);
                }
            }
            if delta_w >= cap {
                break;
            }
            delta_w = if delta_w == T::zero() { reg } else { (delta_w * T::lit(10.0)).min(cap) };
        }
        fallback.ok_or(SolveError::SingularNewtonSystem)
    }

    fn max_step(&self, v: &[T], dv: &[T]) -> T {
        let tau = self.cfg.fraction_to_boundary;
        self.bounded.iter().fold(T::one(), |alpha, &i| {
            if dv[i] < T::zero() {
                alpha.min(-tau * v[i] / dv[i])
            } else {
                alpha
            }
        })
    }

    fn run(mut self) -> Result<Solution<T>, SolveError> {
        let (n, m) = (self.cf.n(), self.cf.m());
        let tol = self.cfg.tolerance;
        let mut trace = vec![self.mu];
        let mut fo = first_order(self.cf, &mut self.ws, &self.x, self.p)?;
        let mut stalls = 0usize;
        let mut full_capped = 0usize;

        for iter in 0..=self.cfg.max_iterations {
            let err0 = self.error(&fo, T::zero());
            if err0 <= tol {
                let point = PrimalDualPoint {
                    x: self.x,
                    lambda: self.lambda,
                    nu: self.nu,
                    p: self.p.to_vec(),
                    objective: self.cf.user_objective(fo.f),
                };
                return Ok(Solution { point, iterations: iter, residual: err0, barrier_trace: trace });
            }
            if iter == self.cfg.max_iterations {
                break;
            }
            if !self.bounded.is_empty() {
                while self.mu > self.mu_min() && self.error(&fo, self.mu) <= T::lit(10.0) * self.mu {
                    let next = (self.cfg.barrier_reduction * self.mu).min(self.mu.powf(T::lit(1.5)));
                    self.mu = next.max(self.mu_min());
                    trace.push(self.mu);
                }
            }

            let d = match self.newton_direction(&fo) {
                Ok(d) => d,
                Err(_) if max_abs(&fo.c) > T::lit(1e3) * tol => {
                    return Err(SolveError::Infeasible { residual: max_abs(&fo.c).to_f64_lossy() })
                }
                Err(e) => return Err(e),
            };
            let (dx, rest) = d.split_at(n);
            let (dl, dnu_b) = rest.split_at(m);
            let mut dnu = vec![T::zero(); n];
            for (s, &i) in self.bounded.iter().enumerate() {
                dnu[i] = dnu_b[s];
            }
            // free variables have no boundary to stop at; keep their step
            // within a trust radius so a near-singular Jacobian cannot throw
            // the iterate into a distant basin
            let mut alpha_max = self.max_step(&self.x, dx);
            let free_dx = (0..n)
                .filter(|&i| !self.cf.is_bounded(i))
                .fold(T::zero(), |m, i| m.max(dx[i].abs()));
            let capped = free_dx > self.radius;
            if capped {
                alpha_max = alpha_max.min(self.radius / free_dx);
            }
            let alpha_dual = self.max_step(&self.nu, &dnu);

            let lambda_plus = max_abs(
                &self.lambda.iter().zip(dl).map(|(&l, &d)| l + d).collect::<Vec<_>>(),
            );
            self.rho = self.rho.max(T::lit(1.5) * lambda_plus + T::lit(1e-4));

            // directional derivative of the merit along dx
            let adx = fo.a.mul_vec(dx);
            let mut slope = dot(&fo.grad, dx);
            for &i in &self.bounded {
                slope -= self.mu / self.x[i] * dx[i];
            }
            for (ci, adi) in fo.c.iter().zip(&adx) {
                slope += self.rho
                    * if *ci == T::zero() { adi.abs() } else { ci.signum() * *adi };
            }
            let slope = slope.min(T::zero());

            let phi0 = self.merit(&self.x.clone())?;
            let err_mu = self.error(&fo, self.mu);
            let mut alpha = alpha_max;
            let mut accepted = None;
            for _ in 0..50 {
                let trial: Vec<T> = self.x.iter().zip(dx).map(|(&x, &d)| x + alpha * d).collect();
                if let Ok(phi) = self.merit(&trial) {
                    // merit changes at roundoff level count as acceptable
                    let noise = T::lit(10.0) * T::epsilon() * T::one().max(phi0.abs());
                    let armijo = phi <= phi0 + T::lit(1e-4) * alpha * slope + noise;
                    let close = err_mu <= T::lit(1e-2);
                    let ok = armijo
                        || (close && {
                            let lam: Vec<T> =
                                self.lambda.iter().zip(dl).map(|(&l, &d)| l + alpha * d).collect();
                            let nu: Vec<T> = self
                                .nu
                                .iter()
                                .zip(&dnu)
                                .map(|(&v, &d)| v + alpha_dual * d)
                                .collect();
                            match first_order(self.cf, &mut self.ws, &trial, self.p) {
                                Ok(tfo) => {
                                    let saved = (
                                        std::mem::replace(&mut self.x, trial.clone()),
                                        std::mem::replace(&mut self.lambda, lam),
                                        std::mem::replace(&mut self.nu, nu),
                                    );
                                    let e = self.error(&tfo, self.mu);
                                    self.x = saved.0;
                                    self.lambda = saved.1;
                                    self.nu = saved.2;
                                    e <= (T::one() - T::lit(1e-4) * alpha) * err_mu
                                }
                                Err(_) => false,
                            }
                        });
                    if ok {
                        accepted = Some(trial);
                        break;
                    }
                }
                alpha *= T::half();
            }
            let trial = match accepted {
                Some(t) => {
                    stalls = 0;
                    if alpha < alpha_max {
                        self.radius = (alpha * free_dx).max(T::one());
                        full_capped = 0;
                    } else if capped {
                        full_capped += 1;
                        if full_capped >= 3 {
                            self.radius *= T::lit(2.0);
                        }
                    } else {
                        full_capped = 0;
                    }
                    t
                }
                None => {
                    stalls += 1;
                    if stalls >= 5 {
                        break;
                    }
                    // take a tiny step so the iteration can move off a kink
                    self.x.iter().zip(dx).map(|(&x, &d)| x + alpha * d).collect()
                }
            };
            fo = first_order(self.cf, &mut self.ws, &trial, self.p)?;
            self.x = trial;
            for (l, &d) in self.lambda.iter_mut().zip(dl) {
                *l += alpha * d;
            }
            let big = T::lit(1e10);
            for &i in &self.bounded {
                let v = self.nu[i] + alpha_dual * dnu[i];
                let lo = self.mu / (big * self.x[i]);
                let hi = big * self.mu / self.x[i];
                self.nu[i] = v.max(lo).min(hi);
            }
        }

        let residual = self.error(&fo, T::zero()).to_f64_lossy();
        let violation = max_abs(&fo.c);
        if violation > T::lit(1e3) * tol {
            Err(SolveError::Infeasible { residual: violation.to_f64_lossy() })
        } else {
            Err(SolveError::MaxIterations { iterations: self.cfg.max_iterations, residual })
        }
    }
}
