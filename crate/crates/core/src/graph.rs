//! Sealed expression DAG with evaluation, gradients, Jacobians and
//! Lagrangian Hessians.
//!
//! Nodes are stored in topological order (children before parents). First
//! derivatives come from one reverse sweep. Second derivatives are computed
//! forward-over-reverse: the forward sweep carries a tangent along one leaf
//! direction and the reverse sweep is run in dual arithmetic, so the tangent
//! part of each leaf adjoint is one Hessian column.

use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

use crate::expr::{BinaryOp, Expr, Func, Leaf};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node<T> {
    Const(T),
    Var(usize),
    Param(usize),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    /// Integer power with `|e| > 4`; smaller exponents are expanded into products.
    PowI(NodeId, i32),
    /// Real power; the base must be positive.
    PowF(NodeId, T),
    Unary(Func, NodeId),
}

impl<T> Node<T> {
    fn children(&self) -> (Option<NodeId>, Option<NodeId>) {
        match *self {
            Node::Const(_) | Node::Var(_) | Node::Param(_) => (None, None),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                (Some(a), Some(b))
            }
            Node::Neg(a) | Node::PowI(a, _) | Node::PowF(a, _) | Node::Unary(_, a) => {
                (Some(a), None)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error at node {node}: {reason}")]
    Domain { node: NodeId, reason: &'static str },
    #[error("{what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Value with one directional tangent.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Dual<T> {
    v: T,
    d: T,
}

impl<T: Scalar> Dual<T> {
    fn constant(v: T) -> Self {
        Self { v, d: T::zero() }
    }

    fn scale(self, k: T) -> Self {
        Self {
            v: self.v * k,
            d: self.d * k,
        }
    }

    fn recip(self) -> Self {
        let r = T::one() / self.v;
        Self { v: r, d: -self.d * r * r }
    }

    fn sin(self) -> Self {
        Self { v: self.v.sin(), d: self.d * self.v.cos() }
    }

    fn cos(self) -> Self {
        Self { v: self.v.cos(), d: -self.d * self.v.sin() }
    }

    fn tan(self) -> Self {
        let t = self.v.tan();
        Self { v: t, d: self.d * (T::one() + t * t) }
    }

    fn exp(self) -> Self {
        let e = self.v.exp();
        Self { v: e, d: self.d * e }
    }

    fn ln(self) -> Self {
        Self { v: self.v.ln(), d: self.d / self.v }
    }

    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        Self { v: s, d: self.d / (T::two() * s) }
    }

    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::constant(T::one());
        }
        let lower = self.v.powi(n - 1);
        Self {
            v: lower * self.v,
            d: self.d * T::from_i32(n).unwrap() * lower,
        }
    }

    fn powf(self, r: T) -> Self {
        let lower = self.v.powf(r - T::one());
        Self {
            v: lower * self.v,
            d: self.d * r * lower,
        }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { v: self.v + o.v, d: self.d + o.d }
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self { v: self.v - o.v, d: self.d - o.d }
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
        }
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        Self { v: q, d: (self.d - q * o.d) / o.v }
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self { v: -self.v, d: -self.d }
    }
}

/// Evaluates one node from its children's values, checking domains.
/// `strict` also rejects points where the value exists but the derivative
/// does not (square root at zero).
fn apply<T: Scalar>(
    node: &Node<T>,
    a: Dual<T>,
    b: Dual<T>,
    strict: bool,
) -> Result<Dual<T>, &'static str> {
    let out = match *node {
        Node::Const(c) => Dual::constant(c),
        Node::Var(_) | Node::Param(_) => unreachable!("leaves are seeded directly"),
        Node::Add(..) => a + b,
        Node::Sub(..) => a - b,
        Node::Mul(..) => a * b,
        Node::Div(..) => {
            if b.v == T::zero() {
                return Err("division by zero");
            }
            a / b
        }
        Node::Neg(_) => -a,
        Node::PowI(_, e) => {
            if e < 0 && a.v == T::zero() {
                return Err("negative power of zero");
            }
            a.powi(e)
        }
        Node::PowF(_, r) => {
            if !(a.v > T::zero()) {
                return Err("real power of nonpositive base");
            }
            a.powf(r)
        }
        Node::Unary(f, _) => match f {
            Func::Sin => a.sin(),
            Func::Cos => a.cos(),
            Func::Tan => a.tan(),
            Func::Exp => a.exp(),
            Func::Log => {
                if !(a.v > T::zero()) {
                    return Err("log of nonpositive argument");
                }
                a.ln()
            }
            Func::Sqrt => {
                if a.v < T::zero() || (strict && a.v == T::zero()) {
                    return Err(if a.v < T::zero() {
                        "sqrt of negative argument"
                    } else {
                        "sqrt is not differentiable at zero"
                    });
                }
                a.sqrt()
            }
        },
    };
    if !out.v.is_finite() {
        return Err("non-finite result");
    }
    Ok(out)
}

/// Local partial derivatives of `node` with respect to its children, as duals
/// so that their tangents feed the second-order sweep.
fn partials<T: Scalar>(node: &Node<T>, a: Dual<T>, b: Dual<T>, y: Dual<T>) -> (Dual<T>, Dual<T>) {
    let one = Dual::constant(T::one());
    let zero = Dual::constant(T::zero());
    match *node {
        Node::Const(_) | Node::Var(_) | Node::Param(_) => (zero, zero),
        Node::Add(..) => (one, one),
        Node::Sub(..) => (one, -one),
        Node::Mul(..) => (b, a),
        Node::Div(..) => {
            let inv = b.recip();
            (inv, -(y * inv))
        }
        Node::Neg(_) => (-one, zero),
        Node::PowI(_, e) => (a.powi(e - 1).scale(T::from_i32(e).unwrap()), zero),
        Node::PowF(_, r) => (a.powf(r - T::one()).scale(r), zero),
        Node::Unary(f, _) => {
            let d = match f {
                Func::Sin => a.cos(),
                Func::Cos => -a.sin(),
                Func::Tan => one + y * y,
                Func::Exp => y,
                Func::Log => a.recip(),
                Func::Sqrt => y.recip().scale(T::half()),
            };
            (d, zero)
        }
    }
}

/// Append-only builder. Literal-only subtrees are folded into constants;
/// nothing else is simplified.
#[derive(Clone, Debug)]
pub struct GraphBuilder<T> {
    nodes: Vec<Node<T>>,
    n_vars: usize,
    n_params: usize,
    var_leaves: Vec<Option<NodeId>>,
    param_leaves: Vec<Option<NodeId>>,
}

impl<T: Scalar> GraphBuilder<T> {
    pub fn new(n_vars: usize, n_params: usize) -> Self {
        Self {
            nodes: Vec::new(),
            n_vars,
            n_params,
            var_leaves: vec![None; n_vars],
            param_leaves: vec![None; n_params],
        }
    }

    fn push(&mut self, node: Node<T>) -> NodeId {
        let id = NodeId(u32::try_from(self.nodes.len()).expect("graph too large"));
        self.nodes.push(node);
        id
    }

    fn const_value(&self, id: NodeId) -> Option<T> {
        match self.nodes[id.index()] {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Pushes `node`, folding it when every child is a literal and the result
    /// is well defined.
    fn push_folded(&mut self, node: Node<T>) -> NodeId {
        let (ca, cb) = node.children();
        let a = ca.map(|c| self.const_value(c));
        let b = cb.map(|c| self.const_value(c));
        let foldable = !matches!(a, Some(None)) && !matches!(b, Some(None));
        if foldable {
            let a = Dual::constant(a.flatten().unwrap_or_else(T::zero));
            let b = Dual::constant(b.flatten().unwrap_or_else(T::zero));
            if let Ok(v) = apply(&node, a, b, false) {
                return self.push(Node::Const(v.v));
            }
        }
        self.push(node)
    }

    pub fn constant(&mut self, v: T) -> NodeId {
        self.push(Node::Const(v))
    }

    pub fn variable(&mut self, i: usize) -> NodeId {
        assert!(i < self.n_vars, "variable {i} out of range");
        if let Some(id) = self.var_leaves[i] {
            return id;
        }
        let id = self.push(Node::Var(i));
        self.var_leaves[i] = Some(id);
        id
    }

    pub fn parameter(&mut self, j: usize) -> NodeId {
        assert!(j < self.n_params, "parameter {j} out of range");
        if let Some(id) = self.param_leaves[j] {
            return id;
        }
        let id = self.push(Node::Param(j));
        self.param_leaves[j] = Some(id);
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push_folded(Node::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push_folded(Node::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push_folded(Node::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push_folded(Node::Div(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push_folded(Node::Neg(a))
    }

    pub fn unary(&mut self, f: Func, a: NodeId) -> NodeId {
        self.push_folded(Node::Unary(f, a))
    }

    /// `a^e`. Integral exponents with `|e| ≤ 4` become products (and a
    /// reciprocal when negative); other integers use `PowI`; everything else
    /// is a real power requiring a positive base.
    pub fn pow(&mut self, a: NodeId, e: T) -> NodeId {
        let is_int = e.fract() == T::zero() && e.abs() <= T::lit(i32::MAX as f64);
        if !is_int {
            return self.push_folded(Node::PowF(a, e));
        }
        let k = e.to_i32().unwrap();
        match k.unsigned_abs() {
            0 => self.constant(T::one()),
            m @ 1..=4 => {
                let pos = match m {
                    1 => a,
                    2 => self.mul(a, a),
                    3 => {
                        let sq = self.mul(a, a);
                        self.mul(sq, a)
                    }
                    _ => {
                        let sq = self.mul(a, a);
                        self.mul(sq, sq)
                    }
                };
                if k < 0 {
                    let one = self.constant(T::one());
                    self.div(one, pos)
                } else {
                    pos
                }
            }
            _ => self.push_folded(Node::PowI(a, k)),
        }
    }

    /// Lowers an expression tree. `leaf` maps each variable or parameter
    /// reference to a node, which lets callers substitute (e.g. shift) leaves.
    pub fn lower<F>(&mut self, e: &Expr<T>, leaf: &mut F) -> NodeId
    where
        F: FnMut(&mut Self, Leaf) -> NodeId,
    {
        match e {
            Expr::Const(c) => self.constant(*c),
            Expr::Var(v) => leaf(self, Leaf::Var(*v)),
            Expr::Param(p) => leaf(self, Leaf::Param(*p)),
            Expr::Neg(a) => {
                let a = self.lower(a, leaf);
                self.neg(a)
            }
            Expr::Binary(op, a, b) => {
                let a = self.lower(a, leaf);
                let b = self.lower(b, leaf);
                match op {
                    BinaryOp::Add => self.add(a, b),
                    BinaryOp::Sub => self.sub(a, b),
                    BinaryOp::Mul => self.mul(a, b),
                    BinaryOp::Div => self.div(a, b),
                }
            }
            Expr::Pow(a, r) => {
                let a = self.lower(a, leaf);
                self.pow(a, *r)
            }
            Expr::Call(f, a) => {
                let a = self.lower(a, leaf);
                self.unary(*f, a)
            }
        }
    }

    pub fn seal(self) -> ExprGraph<T> {
        ExprGraph {
            nodes: self.nodes,
            n_vars: self.n_vars,
            n_params: self.n_params,
        }
    }
}

/// Immutable expression DAG over `n_vars` variables and `n_params`
/// parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprGraph<T> {
    nodes: Vec<Node<T>>,
    n_vars: usize,
    n_params: usize,
}

impl<T: Scalar> ExprGraph<T> {
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node<T> {
        &self.nodes[id.index()]
    }

    pub fn workspace(&self) -> EvalWorkspace<T> {
        EvalWorkspace::new(self)
    }

    pub fn evaluate(&self, root: NodeId, x: &[T], p: &[T]) -> Result<T, EvalError> {
        self.workspace().evaluate(self, root, x, p)
    }

    pub fn gradient_x(&self, root: NodeId, x: &[T], p: &[T]) -> Result<Vec<T>, EvalError> {
        Ok(self.workspace().gradient(self, root, x, p)?.0)
    }

    pub fn gradient_p(&self, root: NodeId, x: &[T], p: &[T]) -> Result<Vec<T>, EvalError> {
        Ok(self.workspace().gradient(self, root, x, p)?.1)
    }

    pub fn jacobian_x(&self, roots: &[NodeId], x: &[T], p: &[T]) -> Result<Matrix<T>, EvalError> {
        Ok(self.workspace().jacobians(self, roots, x, p)?.0)
    }

    pub fn jacobian_p(&self, roots: &[NodeId], x: &[T], p: &[T]) -> Result<Matrix<T>, EvalError> {
        Ok(self.workspace().jacobians(self, roots, x, p)?.1)
    }

    /// `∇²ₓₓ (f + λᵀc)`, exactly symmetric.
    pub fn hessian_xx_lagrangian(
        &self,
        f_root: NodeId,
        c_roots: &[NodeId],
        x: &[T],
        lambda: &[T],
        p: &[T],
    ) -> Result<Matrix<T>, EvalError> {
        self.workspace()
            .lagrangian_hessian_xx(self, f_root, c_roots, x, lambda, p)
    }

    /// `∇²ₓₚ (f + λᵀc)`, rows indexed by variables, columns by parameters.
    pub fn hessian_xp_lagrangian(
        &self,
        f_root: NodeId,
        c_roots: &[NodeId],
        x: &[T],
        lambda: &[T],
        p: &[T],
    ) -> Result<Matrix<T>, EvalError> {
        self.workspace()
            .lagrangian_hessian_xp(self, f_root, c_roots, x, lambda, p)
    }
}

#[derive(Clone, Copy)]
enum Direction {
    None,
    Var(usize),
    Param(usize),
}

/// Scratch buffers for one evaluation stream over a given graph.
#[derive(Clone, Debug)]
pub struct EvalWorkspace<T> {
    vals: Vec<Dual<T>>,
    adj: Vec<Dual<T>>,
    live: Vec<bool>,
    order: Vec<usize>,
}

impl<T: Scalar> EvalWorkspace<T> {
    pub fn new(g: &ExprGraph<T>) -> Self {
        let n = g.len();
        Self {
            vals: vec![Dual::default(); n],
            adj: vec![Dual::default(); n],
            live: vec![false; n],
            order: Vec::with_capacity(n),
        }
    }

    fn check(&mut self, g: &ExprGraph<T>, x: &[T], p: &[T]) -> Result<(), EvalError> {
        if x.len() != g.n_vars {
            return Err(EvalError::Dimension { what: "x", expected: g.n_vars, got: x.len() });
        }
        if p.len() != g.n_params {
            return Err(EvalError::Dimension { what: "p", expected: g.n_params, got: p.len() });
        }
        if self.vals.len() != g.len() {
            *self = Self::new(g);
        }
        Ok(())
    }

    /// Marks the nodes reachable from `roots`; `order` lists them ascending.
    fn mark(&mut self, g: &ExprGraph<T>, roots: &[NodeId]) {
        self.live.iter_mut().for_each(|l| *l = false);
        let Some(top) = roots.iter().map(|r| r.index()).max() else {
            self.order.clear();
            return;
        };
        for r in roots {
            self.live[r.index()] = true;
        }
        for k in (0..=top).rev() {
            if self.live[k] {
                let (a, b) = g.nodes[k].children();
                for c in [a, b].into_iter().flatten() {
                    self.live[c.index()] = true;
                }
            }
        }
        self.order.clear();
        self.order.extend((0..=top).filter(|&k| self.live[k]));
    }

    fn forward(
        &mut self,
        g: &ExprGraph<T>,
        x: &[T],
        p: &[T],
        dir: Direction,
        strict: bool,
    ) -> Result<(), EvalError> {
        for &k in &self.order {
            let node = &g.nodes[k];
            let val = match *node {
                Node::Var(i) => Dual {
                    v: x[i],
                    d: if matches!(dir, Direction::Var(j) if j == i) { T::one() } else { T::zero() },
                },
                Node::Param(i) => Dual {
                    v: p[i],
                    d: if matches!(dir, Direction::Param(j) if j == i) { T::one() } else { T::zero() },
                },
                _ => {
                    let (a, b) = node.children();
                    let a = a.map_or_else(Dual::default, |c| self.vals[c.index()]);
                    let b = b.map_or_else(Dual::default, |c| self.vals[c.index()]);
                    apply(node, a, b, strict).map_err(|reason| EvalError::Domain {
                        node: NodeId(k as u32),
                        reason,
                    })?
                }
            };
            self.vals[k] = val;
        }
        Ok(())
    }

    /// Reverse sweep seeded with `weights` on the given roots.
    fn reverse(&mut self, g: &ExprGraph<T>, weights: &[(NodeId, T)]) {
        for &k in &self.order {
            self.adj[k] = Dual::default();
        }
        for &(r, w) in weights {
            self.adj[r.index()].v += w;
        }
        for idx in (0..self.order.len()).rev() {
            let k = self.order[idx];
            let bar = self.adj[k];
            if bar == Dual::default() {
                continue;
            }
            let node = &g.nodes[k];
            let (ca, cb) = node.children();
            let a = ca.map_or_else(Dual::default, |c| self.vals[c.index()]);
            let b = cb.map_or_else(Dual::default, |c| self.vals[c.index()]);
            let (da, db) = partials(node, a, b, self.vals[k]);
            if let Some(c) = ca {
                self.adj[c.index()] = self.adj[c.index()] + bar * da;
            }
            if let Some(c) = cb {
                self.adj[c.index()] = self.adj[c.index()] + bar * db;
            }
        }
    }

    /// Reads leaf adjoints into dense gradient vectors. `tangent` selects the
    /// second-order part.
    fn collect(&self, g: &ExprGraph<T>, tangent: bool) -> (Vec<T>, Vec<T>) {
        let mut gx = vec![T::zero(); g.n_vars];
        let mut gp = vec![T::zero(); g.n_params];
        for &k in &self.order {
            let a = self.adj[k];
            let v = if tangent { a.d } else { a.v };
            match g.nodes[k] {
                Node::Var(i) => gx[i] = v,
                Node::Param(i) => gp[i] = v,
                _ => {}
            }
        }
        (gx, gp)
    }

    pub fn evaluate(&mut self, g: &ExprGraph<T>, root: NodeId, x: &[T], p: &[T]) -> Result<T, EvalError> {
        Ok(self.evaluate_many(g, &[root], x, p)?[0])
    }

    pub fn evaluate_many(
        &mut self,
        g: &ExprGraph<T>,
        roots: &[NodeId],
        x: &[T],
        p: &[T],
    ) -> Result<Vec<T>, EvalError> {
        self.check(g, x, p)?;
        self.mark(g, roots);
        self.forward(g, x, p, Direction::None, false)?;
        Ok(roots.iter().map(|r| self.vals[r.index()].v).collect())
    }

    /// Value and gradients `(∇ₓ, ∇ₚ)` of one root.
    pub fn gradient(
        &mut self,
        g: &ExprGraph<T>,
        root: NodeId,
        x: &[T],
        p: &[T],
    ) -> Result<(Vec<T>, Vec<T>, T), EvalError> {
        self.check(g, x, p)?;
        self.mark(g, &[root]);
        self.forward(g, x, p, Direction::None, true)?;
        self.reverse(g, &[(root, T::one())]);
        let (gx, gp) = self.collect(g, false);
        Ok((gx, gp, self.vals[root.index()].v))
    }

    /// Values and Jacobians `(∂/∂x, ∂/∂p)` of several roots, one row each.
    pub fn jacobians(
        &mut self,
        g: &ExprGraph<T>,
        roots: &[NodeId],
        x: &[T],
        p: &[T],
    ) -> Result<(Matrix<T>, Matrix<T>, Vec<T>), EvalError> {
        self.check(g, x, p)?;
        let mut jx = Matrix::zeros(roots.len(), g.n_vars);
        let mut jp = Matrix::zeros(roots.len(), g.n_params);
        let mut values = Vec::with_capacity(roots.len());
        for (i, &r) in roots.iter().enumerate() {
            self.mark(g, &[r]);
            self.forward(g, x, p, Direction::None, true)?;
            self.reverse(g, &[(r, T::one())]);
            let (gx, gp) = self.collect(g, false);
            jx.row_mut(i).copy_from_slice(&gx);
            jp.row_mut(i).copy_from_slice(&gp);
            values.push(self.vals[r.index()].v);
        }
        Ok((jx, jp, values))
    }

    fn lagrangian_columns(
        &mut self,
        g: &ExprGraph<T>,
        f_root: NodeId,
        c_roots: &[NodeId],
        x: &[T],
        lambda: &[T],
        p: &[T],
        dirs: impl Iterator<Item = Direction>,
        out: &mut Matrix<T>,
    ) -> Result<(), EvalError> {
        self.check(g, x, p)?;
        if lambda.len() != c_roots.len() {
            return Err(EvalError::Dimension {
                what: "lambda",
                expected: c_roots.len(),
                got: lambda.len(),
            });
        }
        let mut weights = Vec::with_capacity(c_roots.len() + 1);
        weights.push((f_root, T::one()));
        weights.extend(c_roots.iter().copied().zip(lambda.iter().copied()));
        let roots: Vec<NodeId> = weights.iter().map(|w| w.0).collect();
        self.mark(g, &roots);
        for (col, dir) in dirs.enumerate() {
            self.forward(g, x, p, dir, true)?;
            self.reverse(g, &weights);
            let (hx, _) = self.collect(g, true);
            out.set_column(col, &hx);
        }
        Ok(())
    }

    pub fn lagrangian_hessian_xx(
        &mut self,
        g: &ExprGraph<T>,
        f_root: NodeId,
        c_roots: &[NodeId],
        x: &[T],
        lambda: &[T],
        p: &[T],
    ) -> Result<Matrix<T>, EvalError> {
        let n = g.n_vars;
        let mut w = Matrix::zeros(n, n);
        self.lagrangian_columns(g, f_root, c_roots, x, lambda, p, (0..n).map(Direction::Var), &mut w)?;
        for i in 0..n {
            for j in (i + 1)..n {
                let s = (w[(i, j)] + w[(j, i)]) * T::half();
                w[(i, j)] = s;
                w[(j, i)] = s;
            }
        }
        Ok(w)
    }

    pub fn lagrangian_hessian_xp(
        &mut self,
        g: &ExprGraph<T>,
        f_root: NodeId,
        c_roots: &[NodeId],
        x: &[T],
        lambda: &[T],
        p: &[T],
    ) -> Result<Matrix<T>, EvalError> {
        let mut w = Matrix::zeros(g.n_vars, g.n_params);
        let dirs = (0..g.n_params).map(Direction::Param);
        self.lagrangian_columns(g, f_root, c_roots, x, lambda, p, dirs, &mut w)?;
        Ok(w)
    }
}
