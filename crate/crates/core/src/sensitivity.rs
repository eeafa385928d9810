//! Implicit differentiation of the KKT conditions.
//!
//! At a primal-dual point `y = (x, λ, ν)` the KKT residual `F(y; p) = 0` has
//! Jacobians `M = ∂F/∂y` and `N = ∂F/∂p`, so `∂y/∂p = −M⁻¹N`. Forward mode
//! solves `M ẏ = −N v̇`; reverse mode solves `Mᵀ z = [v̄; 0; 0]` and returns
//! `p̄ = −Nᵀz`. `M` is factored once per session.

use std::cell::Cell;

use thiserror::Error;

use crate::expr::{ParameterHandle, Variable};
use crate::graph::EvalError;
use crate::linalg::{LuFactorization, Matrix};
use crate::model::{CanonicalForm, ModelError};
use crate::scalar::{dot, Scalar};
use crate::solver::{assemble_kkt_matrix, check_regularity, PrimalDualPoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensitivityError {
    #[error(
        "KKT matrix is singular even with maximal damping (smallest pivot {smallest_pivot:.3e}, \
         near-degenerate variables {near_degenerate:?})"
    )]
    SingularKkt { smallest_pivot: f64, near_degenerate: Vec<usize> },
    #[error("handle does not refer to a user variable or parameter of this model")]
    StaleHandle,
    #[error("no sensitivities computed since the last seed change")]
    QueryBeforeDifferentiate,
    #[error("reverse variable seeds and the reverse objective seed are mutually exclusive")]
    ConflictingSeeds,
    #[error("no reverse seed set")]
    NoSeed,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<ModelError> for SensitivityError {
    fn from(_: ModelError) -> Self {
        SensitivityError::StaleHandle
    }
}

/// Damping schedule for a singular KKT matrix: `δ·I` is added to all of `M`,
/// starting at `initial` and stepping through `ladder` until `M + δI` factors.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularizationPolicy<T> {
    pub initial: T,
    pub ladder: Vec<T>,
}

impl<T: Scalar> Default for RegularizationPolicy<T> {
    fn default() -> Self {
        Self {
            initial: T::zero(),
            ladder: [1e-10, 1e-9, 1e-8, 1e-7, 1e-6].iter().map(|&d| T::lit(d)).collect(),
        }
    }
}

/// Assembled and factored KKT Jacobians at one primal-dual point.
#[derive(Clone, Debug)]
pub struct KktSystem<T> {
    m: Matrix<T>,
    n: Matrix<T>,
    lu: LuFactorization<T>,
    delta: T,
    factorizations: usize,
    solves: Cell<usize>,
}

impl<T: Scalar> KktSystem<T> {
    /// Builds `M` and `N` at `pt` and factors `M`, escalating damping per
    /// `policy` if needed.
    pub fn build(
        cf: &CanonicalForm<T>,
        pt: &PrimalDualPoint<T>,
        policy: &RegularizationPolicy<T>,
    ) -> Result<Self, SensitivityError> {
        let g = cf.graph();
        let mut ws = g.workspace();
        let (f, c) = (cf.objective_root(), cf.constraint_roots());
        let w = ws.lagrangian_hessian_xx(g, f, c, &pt.x, &pt.lambda, &pt.p)?;
        let wxp = ws.lagrangian_hessian_xp(g, f, c, &pt.x, &pt.lambda, &pt.p)?;
        let (a, ap, _) = ws.jacobians(g, c, &pt.x, &pt.p)?;
        let bounded = cf.bounded_indices();
        let m = assemble_kkt_matrix(&w, &a, &pt.x, &pt.nu, &bounded, T::zero(), T::zero());

        let (nv, nc, l) = (cf.n(), cf.m(), cf.n_params());
        let mut n = Matrix::zeros(m.rows(), l);
        for j in 0..l {
            for i in 0..nv {
                n[(i, j)] = wxp[(i, j)];
            }
            for r in 0..nc {
                n[(nv + r, j)] = ap[(r, j)];
            }
        }

        let mut factorizations = 0;
        let mut smallest_pivot = f64::INFINITY;
        for delta in std::iter::once(policy.initial).chain(policy.ladder.iter().copied().filter(|&d| d > policy.initial)) {
            let mut damped = m.clone();
            for i in 0..damped.rows() {
                damped[(i, i)] += delta;
            }
            factorizations += 1;
            match LuFactorization::factor(&damped) {
                Ok(lu) => {
                    return Ok(Self { m, n, lu, delta, factorizations, solves: Cell::new(0) });
                }
                Err(e) => smallest_pivot = smallest_pivot.min(e.pivot.abs()),
            }
        }
        let near_degenerate = check_regularity(cf, pt, T::lit(1e-6))?.near_degenerate;
        Err(SensitivityError::SingularKkt { smallest_pivot, near_degenerate })
    }

    pub fn dim(&self) -> usize {
        self.m.rows()
    }

    /// Undamped `M`.
    pub fn m(&self) -> &Matrix<T> {
        &self.m
    }

    pub fn n(&self) -> &Matrix<T> {
        &self.n
    }

    /// Damping applied to the factored matrix; zero when `M` factored as is.
    pub fn delta(&self) -> T {
        self.delta
    }

    /// Factorization attempts made while building (one unless damping was needed).
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    /// Linear solves performed against the cached factorization.
    pub fn solves(&self) -> usize {
        self.solves.get()
    }

    /// `ẏ = −(M + δI)⁻¹ N v̇`.
    pub fn tangent(&self, seed: &[T]) -> Vec<T> {
        let rhs: Vec<T> = self.n.mul_vec(seed).into_iter().map(|v| -v).collect();
        self.solves.set(self.solves.get() + 1);
        self.lu.solve(&rhs)
    }

    /// `−Nᵀ (M + δI)⁻ᵀ w`.
    pub fn cotangent(&self, w: &[T]) -> Vec<T> {
        self.solves.set(self.solves.get() + 1);
        let z = self.lu.solve_transpose(w);
        self.n.tr_mul_vec(&z).into_iter().map(|v| -v).collect()
    }

    /// `‖(M + δI)ẏ + N v̇‖∞`.
    pub fn tangent_residual(&self, dy: &[T], seed: &[T]) -> T {
        let my = self.m.mul_vec(dy);
        let nv = self.n.mul_vec(seed);
        my.iter()
            .zip(&nv)
            .zip(dy)
            .fold(T::zero(), |acc, ((&a, &b), &d)| acc.max((a + b + self.delta * d).abs()))
    }
}

/// Tangents of the primal-dual solution along one seed direction.
#[derive(Clone, Debug, PartialEq)]
pub struct Tangents<T> {
    /// Canonical variable tangents, slacks included.
    pub x: Vec<T>,
    pub lambda: Vec<T>,
    /// One entry per canonical variable; zero on free variables.
    pub nu: Vec<T>,
    /// User-sense objective tangent.
    pub objective: T,
}

/// Seeds, cached factorization, and results for one solved point.
#[derive(Clone, Debug)]
pub struct SensitivitySession<T> {
    cf: CanonicalForm<T>,
    point: PrimalDualPoint<T>,
    kkt: KktSystem<T>,
    grad_fx: Vec<T>,
    grad_fp: Vec<T>,
    forward_seed: Vec<T>,
    reverse_seed: Option<Vec<T>>,
    objective_seed: Option<T>,
    forward: Option<Tangents<T>>,
    reverse: Option<Vec<T>>,
}

impl<T: Scalar> SensitivitySession<T> {
    pub fn new(cf: &CanonicalForm<T>, point: PrimalDualPoint<T>) -> Result<Self, SensitivityError> {
        Self::with_policy(cf, point, &RegularizationPolicy::default())
    }

    pub fn with_policy(
        cf: &CanonicalForm<T>,
        point: PrimalDualPoint<T>,
        policy: &RegularizationPolicy<T>,
    ) -> Result<Self, SensitivityError> {
        let kkt = KktSystem::build(cf, &point, policy)?;
        let (grad_fx, grad_fp, _) =
            cf.graph().workspace().gradient(cf.graph(), cf.objective_root(), &point.x, &point.p)?;
        Ok(Self {
            forward_seed: vec![T::zero(); cf.n_params()],
            reverse_seed: None,
            objective_seed: None,
            forward: None,
            reverse: None,
            cf: cf.clone(),
            point,
            kkt,
            grad_fx,
            grad_fp,
        })
    }

    pub fn kkt(&self) -> &KktSystem<T> {
        &self.kkt
    }

    pub fn point(&self) -> &PrimalDualPoint<T> {
        &self.point
    }

    pub fn canonical(&self) -> &CanonicalForm<T> {
        &self.cf
    }

    /// Damping used by the factorization.
    pub fn delta(&self) -> T {
        self.kkt.delta()
    }

    pub fn forward_seed(&self) -> &[T] {
        &self.forward_seed
    }

    /// Adds `value` to the seed coordinate of `param`.
    pub fn set_forward_parameter(&mut self, param: ParameterHandle, value: T) -> Result<(), SensitivityError> {
        let col = self.cf.param_column(param)?;
        self.forward_seed[col] += value;
        self.forward = None;
        Ok(())
    }

    /// Clears every seed and every result.
    pub fn empty_input_sensitivities(&mut self) {
        self.forward_seed.iter_mut().for_each(|v| *v = T::zero());
        self.reverse_seed = None;
        self.objective_seed = None;
        self.forward = None;
        self.reverse = None;
    }

    /// Tangents along `seed`; `full_jacobian` and `forward_differentiate`
    /// both go through here.
    pub fn tangents(&self, seed: &[T]) -> Result<Tangents<T>, SensitivityError> {
        if seed.len() != self.cf.n_params() {
            return Err(EvalError::Dimension { what: "seed", expected: self.cf.n_params(), got: seed.len() }.into());
        }
        let (n, m) = (self.cf.n(), self.cf.m());
        let dy = self.kkt.tangent(seed);
        let mut nu = vec![T::zero(); n];
        for (s, i) in self.cf.bounded_indices().into_iter().enumerate() {
            nu[i] = dy[n + m + s];
        }
        let x = dy[..n].to_vec();
        let objective = self.cf.sign() * (dot(&self.grad_fx, &x) + dot(&self.grad_fp, seed));
        Ok(Tangents { x, lambda: dy[n..n + m].to_vec(), nu, objective })
    }

    pub fn forward_differentiate(&mut self) -> Result<&Tangents<T>, SensitivityError> {
        let t = self.tangents(&self.forward_seed)?;
        Ok(self.forward.insert(t))
    }

    pub fn forward_result(&self) -> Result<&Tangents<T>, SensitivityError> {
        self.forward.as_ref().ok_or(SensitivityError::QueryBeforeDifferentiate)
    }

    pub fn get_forward_variable(&self, var: Variable) -> Result<T, SensitivityError> {
        let t = self.forward_result()?;
        Ok(t.x[self.cf.canonical_var(var)?])
    }

    pub fn get_forward_objective(&self) -> Result<T, SensitivityError> {
        Ok(self.forward_result()?.objective)
    }

    /// Tangent of the multiplier of constraint row `row`.
    pub fn get_forward_dual(&self, row: usize) -> Result<T, SensitivityError> {
        let t = self.forward_result()?;
        t.lambda.get(row).copied().ok_or(SensitivityError::StaleHandle)
    }

    /// Sets the cotangent weight of a user variable (last write wins).
    /// Fails if an objective seed is already set.
    pub fn set_reverse_variable(&mut self, var: Variable, weight: T) -> Result<(), SensitivityError> {
        let j = self.cf.canonical_var(var)?;
        if self.objective_seed.is_some() {
            return Err(SensitivityError::ConflictingSeeds);
        }
        let n_user = self.cf.n_user_vars();
        self.reverse_seed.get_or_insert_with(|| vec![T::zero(); n_user])[j] = weight;
        self.reverse = None;
        Ok(())
    }

    /// Sets the objective cotangent `J̄`. Fails if variable seeds are set.
    pub fn set_reverse_objective(&mut self, weight: T) -> Result<(), SensitivityError> {
        if self.reverse_seed.is_some() {
            return Err(SensitivityError::ConflictingSeeds);
        }
        self.objective_seed = Some(weight);
        self.reverse = None;
        Ok(())
    }

    /// Parameter cotangents for the current reverse seed.
    pub fn reverse_differentiate(&mut self) -> Result<&[T], SensitivityError> {
        let mut w = vec![T::zero(); self.kkt.dim()];
        let mut direct = vec![T::zero(); self.cf.n_params()];
        match (&self.reverse_seed, self.objective_seed) {
            (Some(seed), None) => w[..seed.len()].copy_from_slice(seed),
            (None, Some(jbar)) => {
                // effective variable seed ∇ₓf·J̄ plus the direct ∇ₚf·J̄ term
                let s = self.cf.sign() * jbar;
                for (wi, &g) in w.iter_mut().zip(&self.grad_fx) {
                    *wi = s * g;
                }
                for (d, &g) in direct.iter_mut().zip(&self.grad_fp) {
                    *d = s * g;
                }
            }
            (None, None) => return Err(SensitivityError::NoSeed),
            (Some(_), Some(_)) => return Err(SensitivityError::ConflictingSeeds),
        }
        let pbar: Vec<T> = self.kkt.cotangent(&w).into_iter().zip(direct).map(|(a, b)| a + b).collect();
        Ok(self.reverse.insert(pbar))
    }

    pub fn reverse_result(&self) -> Result<&[T], SensitivityError> {
        self.reverse.as_deref().ok_or(SensitivityError::QueryBeforeDifferentiate)
    }

    pub fn get_reverse_parameter(&self, param: ParameterHandle) -> Result<T, SensitivityError> {
        let col = self.cf.param_column(param)?;
        Ok(self.reverse_result()?[col])
    }

    /// `∂y/∂p` with one column per parameter, rows ordered `[x; λ; ν_B]`.
    pub fn full_jacobian(&self) -> Result<Matrix<T>, SensitivityError> {
        let l = self.cf.n_params();
        let mut jac = Matrix::zeros(self.kkt.dim(), l);
        let mut seed = vec![T::zero(); l];
        for j in 0..l {
            seed[j] = T::one();
            let dy = self.kkt.tangent(&seed);
            jac.set_column(j, &dy);
            seed[j] = T::zero();
        }
        Ok(jac)
    }
}
