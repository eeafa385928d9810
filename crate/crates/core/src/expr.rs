//! User-level expression trees.
//!
//! An [`Expr`] is what users (and the text parser) build. It is lowered into a
//! sealed [`ExprGraph`](crate::graph::ExprGraph) during canonicalization, which
//! is where evaluation and differentiation happen.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::scalar::Scalar;

/// Identity of the program a handle was issued by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProgramId(pub(crate) u64);

/// Handle to a decision variable of a [`ParametricProgram`](crate::model::ParametricProgram).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variable {
    pub(crate) owner: ProgramId,
    pub(crate) index: usize,
}

impl Variable {
    /// Position of the variable in declaration order.
    pub fn index(self) -> usize {
        self.index
    }
}

/// Handle to a named parameter. One column of the parameter Jacobian per
/// handle, however many expressions reference it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParameterHandle {
    pub(crate) owner: ProgramId,
    pub(crate) index: usize,
}

impl ParameterHandle {
    /// Column of this parameter in `p`.
    pub fn column(self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub const ALL: [Func; 6] = [Func::Sin, Func::Cos, Func::Tan, Func::Exp, Func::Log, Func::Sqrt];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Scalar expression over variables and parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr<T> {
    Const(T),
    Var(Variable),
    Param(ParameterHandle),
    Neg(Box<Expr<T>>),
    Binary(BinaryOp, Box<Expr<T>>, Box<Expr<T>>),
    /// Power with a constant exponent.
    Pow(Box<Expr<T>>, T),
    Call(Func, Box<Expr<T>>),
}

impl<T: Scalar> Expr<T> {
    pub fn constant(v: T) -> Self {
        Expr::Const(v)
    }

    pub fn var(v: Variable) -> Self {
        Expr::Var(v)
    }

    pub fn param(p: ParameterHandle) -> Self {
        Expr::Param(p)
    }

    pub fn binary(op: BinaryOp, lhs: impl Into<Self>, rhs: impl Into<Self>) -> Self {
        Expr::Binary(op, Box::new(lhs.into()), Box::new(rhs.into()))
    }

    pub fn pow(self, exponent: T) -> Self {
        Expr::Pow(Box::new(self), exponent)
    }

    pub fn powi(self, exponent: i32) -> Self {
        Expr::Pow(Box::new(self), T::from_i32(exponent).expect("integer exponent"))
    }

    pub fn call(f: Func, arg: impl Into<Self>) -> Self {
        Expr::Call(f, Box::new(arg.into()))
    }

    pub fn sin(self) -> Self {
        Self::call(Func::Sin, self)
    }

    pub fn cos(self) -> Self {
        Self::call(Func::Cos, self)
    }

    pub fn tan(self) -> Self {
        Self::call(Func::Tan, self)
    }

    pub fn exp(self) -> Self {
        Self::call(Func::Exp, self)
    }

    pub fn log(self) -> Self {
        Self::call(Func::Log, self)
    }

    pub fn sqrt(self) -> Self {
        Self::call(Func::Sqrt, self)
    }

    /// Sum of the given terms; `0` when empty.
    pub fn sum<I>(terms: I) -> Self
    where
        I: IntoIterator,
        I::Item: Into<Self>,
    {
        terms
            .into_iter()
            .map(Into::into)
            .reduce(|a, b| a + b)
            .unwrap_or(Expr::Const(T::zero()))
    }

    /// Visits every leaf reference in the tree.
    pub fn for_each_leaf(&self, f: &mut impl FnMut(Leaf)) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => f(Leaf::Var(*v)),
            Expr::Param(p) => f(Leaf::Param(*p)),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.for_each_leaf(f),
            Expr::Binary(_, a, b) => {
                a.for_each_leaf(f);
                b.for_each_leaf(f);
            }
        }
    }

    /// Pretty-prints with names from `names`. The output parses back into an
    /// identical tree.
    pub fn display<'a, N: NameLookup + ?Sized>(&'a self, names: &'a N) -> ExprDisplay<'a, T, N> {
        ExprDisplay { expr: self, names }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Leaf {
    Var(Variable),
    Param(ParameterHandle),
}

/// Name resolution used by the parser.
pub trait SymbolTable {
    fn lookup(&self, name: &str) -> Option<Leaf>;
}

/// Reverse name resolution used by the pretty-printer.
pub trait NameLookup {
    fn variable_name(&self, v: Variable) -> Option<&str>;
    fn parameter_name(&self, p: ParameterHandle) -> Option<&str>;
}

pub struct ExprDisplay<'a, T, N: ?Sized> {
    expr: &'a Expr<T>,
    names: &'a N,
}

const PREC_ATOM: u8 = 4;
const PREC_POW: u8 = 3;

fn precedence<T>(e: &Expr<T>) -> u8 {
    match e {
        Expr::Binary(op, _, _) => op.precedence(),
        Expr::Pow(_, _) => PREC_POW,
        _ => PREC_ATOM,
    }
}

impl<T: Scalar, N: NameLookup + ?Sized> ExprDisplay<'_, T, N> {
    fn write(&self, e: &Expr<T>, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match e {
            Expr::Const(c) => write_number(*c, f),
            Expr::Var(v) => match self.names.variable_name(*v) {
                Some(n) => f.write_str(n),
                None => write!(f, "<var#{}>", v.index),
            },
            Expr::Param(p) => match self.names.parameter_name(*p) {
                Some(n) => f.write_str(n),
                None => write!(f, "<param#{}>", p.index),
            },
            Expr::Neg(a) => {
                f.write_str("-")?;
                self.write_wrapped(a, precedence(a) < PREC_ATOM, f)
            }
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                self.write_wrapped(a, precedence(a) < p, f)?;
                write!(f, " {} ", op.symbol())?;
                // left associativity: an equal-precedence right operand needs parens
                self.write_wrapped(b, precedence(b) <= p, f)
            }
            Expr::Pow(a, exp) => {
                self.write_wrapped(a, precedence(a) < PREC_ATOM, f)?;
                f.write_str("^")?;
                if *exp < T::zero() {
                    f.write_str("-")?;
                    write_number(-*exp, f)
                } else {
                    write_number(*exp, f)
                }
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                self.write(a, f)?;
                f.write_str(")")
            }
        }
    }

    fn write_wrapped(&self, e: &Expr<T>, parens: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if parens {
            f.write_str("(")?;
            self.write(e, f)?;
            f.write_str(")")
        } else {
            self.write(e, f)
        }
    }
}

fn write_number<T: Scalar>(v: T, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if v < T::zero() {
        write!(f, "(-{})", -v)
    } else {
        write!(f, "{}", v)
    }
}

impl<T: Scalar, N: NameLookup + ?Sized> fmt::Display for ExprDisplay<'_, T, N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.expr, f)
    }
}

impl<T> From<Variable> for Expr<T> {
    fn from(v: Variable) -> Self {
        Expr::Var(v)
    }
}

impl<T> From<ParameterHandle> for Expr<T> {
    fn from(p: ParameterHandle) -> Self {
        Expr::Param(p)
    }
}

impl From<f64> for Expr<f64> {
    fn from(v: f64) -> Self {
        Expr::Const(v)
    }
}

impl From<f32> for Expr<f32> {
    fn from(v: f32) -> Self {
        Expr::Const(v)
    }
}

impl<T: Scalar> Neg for Expr<T> {
    type Output = Expr<T>;

    fn neg(self) -> Expr<T> {
        Expr::Neg(Box::new(self))
    }
}

macro_rules! impl_binary_ops {
    ($($tr:ident $method:ident $op:ident),*) => {$(
        impl<T: Scalar> $tr<Expr<T>> for Expr<T> {
            type Output = Expr<T>;
            fn $method(self, rhs: Expr<T>) -> Expr<T> {
                Expr::binary(BinaryOp::$op, self, rhs)
            }
        }
        impl<T: Scalar> $tr<Variable> for Expr<T> {
            type Output = Expr<T>;
            fn $method(self, rhs: Variable) -> Expr<T> {
                Expr::binary(BinaryOp::$op, self, rhs)
            }
        }
        impl<T: Scalar> $tr<ParameterHandle> for Expr<T> {
            type Output = Expr<T>;
            fn $method(self, rhs: ParameterHandle) -> Expr<T> {
                Expr::binary(BinaryOp::$op, self, rhs)
            }
        }
        impl<T: Scalar> $tr<T> for Expr<T> {
            type Output = Expr<T>;
            fn $method(self, rhs: T) -> Expr<T> {
                Expr::binary(BinaryOp::$op, self, Expr::Const(rhs))
            }
        }
        impl $tr<Expr<f64>> for f64 {
            type Output = Expr<f64>;
            fn $method(self, rhs: Expr<f64>) -> Expr<f64> {
                Expr::binary(BinaryOp::$op, Expr::Const(self), rhs)
            }
        }
        impl $tr<Expr<f32>> for f32 {
            type Output = Expr<f32>;
            fn $method(self, rhs: Expr<f32>) -> Expr<f32> {
                Expr::binary(BinaryOp::$op, Expr::Const(self), rhs)
            }
        }
    )*};
}

impl_binary_ops!(Add add Add, Sub sub Sub, Mul mul Mul, Div div Div);
