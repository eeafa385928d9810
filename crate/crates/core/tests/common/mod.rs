#![allow(dead_code)]

use kkt_sens_core::{Expr, ParametricProgram, Relation, Sense};

/// Two generators with quadratic cost, capacities, and a penalized shortfall
/// variable covering demand `d`.
pub fn dispatch(d: f64) -> ParametricProgram<f64> {
    let mut prog = ParametricProgram::new();
    let g1 = prog.add_variable("g1", Some(0.0), Some(150.0)).unwrap();
    let g2 = prog.add_variable("g2", Some(0.0), Some(80.0)).unwrap();
    let phi = prog.add_variable("phi", Some(0.0), None).unwrap();
    let demand = prog.add_parameter("d", d).unwrap();
    let cost = 20.0 * Expr::var(g1) + 0.2 * Expr::var(g1).powi(2)
        + 30.0 * Expr::var(g2)
        + 0.1 * Expr::var(g2).powi(2)
        + 1000.0 * Expr::var(phi);
    prog.set_objective(cost, Sense::Min).unwrap();
    prog.add_named_constraint("balance", Expr::var(g1) + g2 + phi, Relation::Eq, demand).unwrap();
    prog
}

/// Two-link planar arm of unit links reaching `(xt, yt)` with minimal joint effort.
pub fn inverse_kinematics(xt: f64, yt: f64) -> ParametricProgram<f64> {
    let mut prog = ParametricProgram::new();
    let t1 = prog.add_variable("t1", None, None).unwrap();
    let t2 = prog.add_variable("t2", None, None).unwrap();
    let px = prog.add_parameter("xt", xt).unwrap();
    let py = prog.add_parameter("yt", yt).unwrap();
    let (a, b) = (Expr::var(t1), Expr::var(t2));
    prog.set_objective(a.clone().powi(2) + b.clone().powi(2), Sense::Min).unwrap();
    let sum = a.clone() + b.clone();
    prog.add_constraint(a.clone().cos() + sum.clone().cos(), Relation::Eq, px).unwrap();
    prog.add_constraint(a.sin() + sum.sin(), Relation::Eq, py).unwrap();
    prog
}

pub const SIGMA: [[f64; 3]; 3] = [[0.002, 0.0005, 0.001], [0.0005, 0.003, 0.0002], [0.001, 0.0002, 0.0025]];
pub const MU: [f64; 3] = [0.05, 0.08, 0.12];

/// Long-only portfolio maximizing expected return under a volatility cap.
pub fn portfolio(sigma_max: f64) -> ParametricProgram<f64> {
    let mut prog = ParametricProgram::new();
    let x: Vec<_> = ["x1", "x2", "x3"]
        .iter()
        .map(|n| prog.add_variable(n, Some(0.0), None).unwrap())
        .collect();
    let s = prog.add_parameter("sigma_max", sigma_max).unwrap();
    let ret = Expr::sum((0..3).map(|i| MU[i] * Expr::var(x[i])));
    prog.set_objective(ret, Sense::Max).unwrap();
    prog.add_constraint(Expr::sum(x.iter().map(|&v| Expr::var(v))), Relation::Eq, 1.0).unwrap();
    let mut quad = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            quad.push(SIGMA[i][j] * Expr::var(x[i]) * x[j]);
        }
    }
    prog.add_constraint(Expr::sum(quad), Relation::Le, Expr::param(s).powi(2)).unwrap();
    prog
}
