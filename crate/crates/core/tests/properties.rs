mod common;

use kkt_sens_core::{
    adopt_external_point, kkt_residual, solve, solve_from, CanonicalForm, DiffModel, Expr, ParametricProgram,
    PrimalDualPoint, Program32, RegularizationPolicy, Relation, SensitivityError, SensitivitySession, Sense,
    SolveError, SolverConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tight() -> SolverConfig<f64> {
    SolverConfig { tolerance: 1e-12, ..SolverConfig::default() }
}

fn solved(prog: &ParametricProgram<f64>) -> (CanonicalForm<f64>, PrimalDualPoint<f64>) {
    let cf = prog.canonicalize().unwrap();
    let sol = solve(&cf, &prog.parameter_values(), &tight()).unwrap();
    (cf, sol.point)
}

/// User-variable values at the optimum for parameters `p`.
fn user_solution(cf: &CanonicalForm<f64>, p: &[f64]) -> (Vec<f64>, f64) {
    let sol = solve(cf, p, &tight()).unwrap();
    (cf.to_user_point(&sol.point.x), sol.point.objective)
}

/// Central differences of the user solution and objective along `dir`.
fn central_difference(cf: &CanonicalForm<f64>, p: &[f64], dir: &[f64]) -> (Vec<f64>, f64) {
    let scale = p.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let h = 1e-6 * scale;
    let shifted = |s: f64| -> Vec<f64> { p.iter().zip(dir).map(|(a, d)| a + s * h * d).collect() };
    let (xp, jp) = user_solution(cf, &shifted(1.0));
    let (xm, jm) = user_solution(cf, &shifted(-1.0));
    let dx = xp.iter().zip(&xm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    (dx, (jp - jm) / (2.0 * h))
}

fn assert_matches_fd(prog: &ParametricProgram<f64>, dir: &[f64], tol: f64) {
    let (cf, pt) = solved(prog);
    let p = pt.p.clone();
    let s = SensitivitySession::new(&cf, pt).unwrap();
    let t = s.tangents(dir).unwrap();
    let ad = cf.to_user_tangent(&t.x);
    let (fd, fd_obj) = central_difference(&cf, &p, dir);
    for (k, (a, f)) in ad.iter().zip(&fd).enumerate() {
        let err = (a - f).abs() / a.abs().max(1.0);
        assert!(err < tol, "p={p:?} var {k}: ad {a} fd {f}");
    }
    let err = (t.objective - fd_obj).abs() / t.objective.abs().max(1.0);
    assert!(err < tol, "p={p:?} objective: ad {} fd {fd_obj}", t.objective);
}

/// Keeps `d` away from the dispatch regime breakpoints.
fn dispatch_demand() -> impl Strategy<Value = f64> {
    prop_oneof![5.0..20.0, 30.0..140.0, 150.0..225.0, 235.0..300.0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dispatch_tangents_match_finite_differences(d in dispatch_demand()) {
        assert_matches_fd(&common::dispatch(d), &[1.0], 1e-4);
    }

    #[test]
    fn portfolio_tangents_match_finite_differences(sigma in 0.036..0.049) {
        assert_matches_fd(&common::portfolio(sigma), &[1.0], 1e-4);
    }

    #[test]
    fn inverse_kinematics_tangents_match_finite_differences(
        r in 0.6..1.8_f64,
        angle in 0.3..2.0_f64,
        dir in (-1.0..1.0_f64, -1.0..1.0_f64),
    ) {
        let prog = common::inverse_kinematics(r * angle.cos(), r * angle.sin());
        assert_matches_fd(&prog, &[dir.0, dir.1], 1e-4);
    }

    #[test]
    fn adjoint_identity(
        r in 0.6..1.8_f64,
        angle in 0.3..2.0_f64,
        vdot in prop::array::uniform2(-1.0..1.0_f64),
        vbar in prop::array::uniform2(-1.0..1.0_f64),
    ) {
        let prog = common::inverse_kinematics(r * angle.cos(), r * angle.sin());
        let (cf, pt) = solved(&prog);
        let mut s = SensitivitySession::new(&cf, pt).unwrap();
        let vars = prog.variable_handles();
        let params = prog.parameter_handles();
        for (p, v) in params.iter().zip(vdot) {
            s.set_forward_parameter(*p, v).unwrap();
        }
        for (x, w) in vars.iter().zip(vbar) {
            s.set_reverse_variable(*x, w).unwrap();
        }
        let xdot = s.forward_differentiate().unwrap().x.clone();
        let pbar = s.reverse_differentiate().unwrap().to_vec();
        let lhs: f64 = vbar.iter().zip(&xdot).map(|(a, b)| a * b).sum();
        let rhs: f64 = pbar.iter().zip(&vdot).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn forward_seeds_are_linear(
        a in -3.0..3.0_f64,
        b in -3.0..3.0_f64,
        s1 in prop::array::uniform2(-1.0..1.0_f64),
        s2 in prop::array::uniform2(-1.0..1.0_f64),
    ) {
        let (cf, pt) = solved(&common::inverse_kinematics(1.0, 1.0));
        let s = SensitivitySession::new(&cf, pt).unwrap();
        let combined = [a * s1[0] + b * s2[0], a * s1[1] + b * s2[1]];
        let (t1, t2, t) = (s.tangents(&s1).unwrap(), s.tangents(&s2).unwrap(), s.tangents(&combined).unwrap());
        for k in 0..t.x.len() {
            let want = a * t1.x[k] + b * t2.x[k];
            prop_assert!((t.x[k] - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
        let want = a * t1.objective + b * t2.objective;
        prop_assert!((t.objective - want).abs() <= 1e-10 * want.abs().max(1.0));
    }

    #[test]
    fn objective_sensitivity_is_forward_reverse_consistent(sigma in 0.036..0.049) {
        let prog = common::portfolio(sigma);
        let mut model = DiffModel::new(prog.clone()).with_config(tight());
        model.optimize().unwrap();
        let s = prog.parameter("sigma_max").unwrap();
        model.set_forward_parameter(s, 1.0).unwrap();
        model.forward_differentiate().unwrap();
        let fwd = model.get_forward_objective().unwrap();
        model.set_reverse_objective(1.0).unwrap();
        model.reverse_differentiate().unwrap();
        let rev = model.get_reverse_parameter(s).unwrap();
        prop_assert!((fwd - rev).abs() <= 1e-10 * fwd.abs().max(1.0), "{fwd} vs {rev}");
        // envelope: dJ/dσ = 2σ·λ_risk in the user sense, with λ of the ≤ row
        let risk = prog.constraint_handles()[1];
        let lambda = model.dual(risk).unwrap();
        let envelope = 2.0 * sigma * lambda;
        prop_assert!((fwd - envelope).abs() <= 1e-8 * fwd.abs().max(1.0), "{fwd} vs {envelope}");
    }

    #[test]
    fn random_interior_starts_agree(seed in any::<u64>(), sigma in 0.036..0.049) {
        let prog = common::portfolio(sigma);
        let cf = prog.canonicalize().unwrap();
        let p = prog.parameter_values();
        let reference = solve(&cf, &p, &tight()).unwrap().point;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..3 {
            let start = PrimalDualPoint {
                x: (0..cf.n()).map(|_| rng.gen_range(0.05..2.0)).collect(),
                lambda: (0..cf.m()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                nu: vec![0.0; cf.n()],
                p: p.clone(),
                objective: 0.0,
            };
            let sol = solve_from(&cf, &p, &tight(), &start).unwrap();
            for (a, b) in sol.point.x.iter().zip(&reference.x) {
                prop_assert!((a - b).abs() < 1e-7, "{:?} vs {:?}", sol.point.x, reference.x);
            }
        }
    }

    #[test]
    fn scaling_the_objective_scales_the_duals(d in dispatch_demand()) {
        let base = common::dispatch(d);
        let mut scaled = base.clone();
        let f = base.objective().unwrap().expr.clone();
        scaled.set_objective(2.0 * f, Sense::Min).unwrap();
        let (_, a) = solved(&base);
        let (_, b) = solved(&scaled);
        for (u, v) in a.x.iter().zip(&b.x) {
            prop_assert!((u - v).abs() <= 1e-6 * u.abs().max(1.0));
        }
        for (u, v) in a.lambda.iter().zip(&b.lambda).chain(a.nu.iter().zip(&b.nu)) {
            prop_assert!((2.0 * u - v).abs() <= 1e-6 * v.abs().max(1.0), "{u} {v}");
        }
    }
}

#[test]
fn one_factorization_serves_all_solves() {
    let prog = common::inverse_kinematics(1.0, 1.0);
    let (cf, pt) = solved(&prog);
    let mut s = SensitivitySession::new(&cf, pt).unwrap();
    assert_eq!(s.kkt().factorizations(), 1);
    s.full_jacobian().unwrap();
    assert_eq!(s.kkt().solves(), 2);
    s.set_forward_parameter(prog.parameter("xt").unwrap(), 1.0).unwrap();
    s.forward_differentiate().unwrap();
    s.set_reverse_objective(1.0).unwrap();
    s.reverse_differentiate().unwrap();
    assert_eq!(s.kkt().solves(), 4);
    assert_eq!(s.kkt().factorizations(), 1);
}

#[test]
fn damped_system_is_solved_accurately() {
    let prog = common::inverse_kinematics(2.0, 0.0);
    let cf = prog.canonicalize().unwrap();
    let sol = solve(&cf, &[2.0, 0.0], &SolverConfig::default()).unwrap();
    let s = SensitivitySession::new(&cf, sol.point).unwrap();
    assert!(s.delta() > 0.0 && s.delta() <= 1e-6);
    for seed in [[1.0, 0.0], [0.0, 1.0], [0.3, -0.7]] {
        let dy = s.kkt().tangent(&seed);
        assert!(s.kkt().tangent_residual(&dy, &seed) <= 1e-10);
    }
}

#[test]
fn exhausted_damping_reports_singular_kkt() {
    let prog = common::inverse_kinematics(2.0, 0.0);
    let cf = prog.canonicalize().unwrap();
    let sol = solve(&cf, &[2.0, 0.0], &SolverConfig::default()).unwrap();
    let policy = RegularizationPolicy { initial: 0.0, ladder: vec![] };
    let err = SensitivitySession::with_policy(&cf, sol.point, &policy).unwrap_err();
    assert!(matches!(err, SensitivityError::SingularKkt { .. }), "{err:?}");
}

#[test]
fn seed_errors() {
    let prog = common::dispatch(100.0);
    let (cf, pt) = solved(&prog);
    let mut s = SensitivitySession::new(&cf, pt).unwrap();
    let g1 = prog.variable("g1").unwrap();

    assert_eq!(s.forward_result().unwrap_err(), SensitivityError::QueryBeforeDifferentiate);
    assert_eq!(s.get_reverse_parameter(prog.parameter("d").unwrap()).unwrap_err(), SensitivityError::QueryBeforeDifferentiate);
    assert_eq!(s.reverse_differentiate().unwrap_err(), SensitivityError::NoSeed);

    s.set_reverse_variable(g1, 1.0).unwrap();
    assert_eq!(s.set_reverse_objective(1.0).unwrap_err(), SensitivityError::ConflictingSeeds);
    s.empty_input_sensitivities();
    s.set_reverse_objective(1.0).unwrap();
    assert_eq!(s.set_reverse_variable(g1, 1.0).unwrap_err(), SensitivityError::ConflictingSeeds);

    // handles from another program
    let other = common::inverse_kinematics(1.0, 1.0);
    assert_eq!(s.set_reverse_variable(other.variable("t1").unwrap(), 1.0).unwrap_err(), SensitivityError::StaleHandle);
    assert_eq!(s.set_forward_parameter(other.parameter("xt").unwrap(), 1.0).unwrap_err(), SensitivityError::StaleHandle);

    // changing a seed drops the previous result
    s.set_forward_parameter(prog.parameter("d").unwrap(), 1.0).unwrap();
    s.forward_differentiate().unwrap();
    s.set_forward_parameter(prog.parameter("d").unwrap(), 1.0).unwrap();
    assert_eq!(s.get_forward_objective().unwrap_err(), SensitivityError::QueryBeforeDifferentiate);
}

#[test]
fn zero_reverse_seed_gives_zero_cotangent() {
    let prog = common::dispatch(100.0);
    let (cf, pt) = solved(&prog);
    let mut s = SensitivitySession::new(&cf, pt).unwrap();
    s.set_reverse_variable(prog.variable("g2").unwrap(), 0.0).unwrap();
    assert_eq!(s.reverse_differentiate().unwrap(), &[0.0]);
}

#[test]
fn diff_model_requires_a_solve() {
    let prog = common::dispatch(100.0);
    let d = prog.parameter("d").unwrap();
    let mut model = DiffModel::new(prog);
    assert!(model.set_forward_parameter(d, 1.0).is_err());
    model.optimize().unwrap();
    model.set_parameter_value(d, 120.0).unwrap();
    assert!(model.solution().is_err());
    let first = model.optimize().unwrap().clone();
    model.set_parameter_value(d, 121.0).unwrap();
    let warm = model.optimize_from(&first).unwrap();
    assert!(warm.iterations <= first.iterations, "{} vs {}", warm.iterations, first.iterations);
    let g1 = model.program().variable("g1").unwrap();
    // equal marginal costs 20 + 0.4 g1 = 30 + 0.2 (d - g1)
    assert!((model.value(g1).unwrap() - (50.0 + 121.0) / 3.0).abs() < 1e-6);
}

#[test]
fn barrier_trace_decreases() {
    for prog in [common::dispatch(100.0), common::portfolio(0.04), common::inverse_kinematics(1.0, 1.0)] {
        let cf = prog.canonicalize().unwrap();
        let sol = solve(&cf, &prog.parameter_values(), &SolverConfig::default()).unwrap();
        assert!(!sol.barrier_trace.is_empty());
        assert!(sol.barrier_trace.windows(2).all(|w| w[1] < w[0]), "{:?}", sol.barrier_trace);
        assert!(sol.iterations <= 200 && sol.residual <= 1e-8);
    }
}

#[test]
fn external_points_are_validated() {
    let (cf, pt) = solved(&common::dispatch(100.0));
    let ok = adopt_external_point(&cf, pt.x.clone(), pt.lambda.clone(), pt.nu.clone(), pt.p.clone(), 1e-8).unwrap();
    assert!((ok.objective - 3250.0).abs() < 1e-6);
    let mut lambda = pt.lambda.clone();
    lambda[0] += 1.0;
    let err = adopt_external_point(&cf, pt.x.clone(), lambda, pt.nu.clone(), pt.p.clone(), 1e-8).unwrap_err();
    assert!(matches!(err, SolveError::NotStationary { .. }), "{err:?}");
}

#[test]
fn residual_of_solution_is_within_tolerance() {
    let (cf, pt) = solved(&common::portfolio(0.04));
    assert!(kkt_residual(&cf, &pt).unwrap().max_norm() <= 1e-12);
}

#[test]
fn single_precision_solve() {
    let mut prog = Program32::new();
    let t1 = prog.add_variable("t1", None, None).unwrap();
    let t2 = prog.add_variable("t2", None, None).unwrap();
    let px = prog.add_parameter("xt", 1.0).unwrap();
    let py = prog.add_parameter("yt", 1.0).unwrap();
    let (a, b) = (Expr::var(t1), Expr::var(t2));
    prog.set_objective(a.clone().powi(2) + b.clone().powi(2), Sense::Min).unwrap();
    let sum = a.clone() + b.clone();
    prog.add_constraint(a.clone().cos() + sum.clone().cos(), Relation::Eq, px).unwrap();
    prog.add_constraint(a.sin() + sum.sin(), Relation::Eq, py).unwrap();
    let cf = prog.canonicalize().unwrap();
    let cfg = SolverConfig::<f32>::default();
    assert!(cfg.tolerance > 1e-8);
    let sol = solve(&cf, &[1.0, 1.0], &cfg).unwrap();
    assert!(sol.point.x[0].abs() < 1e-3);
    assert!((sol.point.x[1] - std::f32::consts::FRAC_PI_2).abs() < 1e-3);
    let s = SensitivitySession::new(&cf, sol.point).unwrap();
    let jac = s.full_jacobian().unwrap();
    assert!((jac[(1, 0)] + 1.0).abs() < 1e-2 && (jac[(0, 1)] - 1.0).abs() < 1e-2);
}
