//! Acceptance checks for the bundled case studies. Prints one PASS or FAIL
//! line per criterion and exits nonzero if any fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kkt_sens_cli::{cmd_sweep, load_problem, LoadedProblem, SweepRequest};
use kkt_sens_core::{
    solve, CanonicalForm, DiffModel, ParametricProgram, PrimalDualPoint, SensitivityError, SensitivitySession,
    SolverConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn load(name: &str) -> LoadedProblem {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name);
    load_problem(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn program(name: &str) -> ParametricProgram<f64> {
    load(name).program
}

fn with_params(prog: &ParametricProgram<f64>, values: &[f64]) -> ParametricProgram<f64> {
    let mut prog = prog.clone();
    for (h, &v) in prog.parameter_handles().into_iter().zip(values) {
        prog.set_parameter_value(h, v).unwrap();
    }
    prog
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tight() -> SolverConfig<f64> {
    SolverConfig { tolerance: 1e-12, ..SolverConfig::default() }
}

fn solve_at(cf: &CanonicalForm<f64>, p: &[f64], cfg: &SolverConfig<f64>) -> Result<PrimalDualPoint<f64>, String> {
    solve(cf, p, cfg).map(|s| s.point).map_err(|e| format!("solve at {p:?}: {e}"))
}

/// Dispatch oracle: derivatives of `(g1, g2, phi)` in `d` by regime, from
/// equal marginal costs `20 + 0.4 g1 = 30 + 0.2 g2` and the capacities.
fn dispatch_slopes(d: f64) -> [f64; 3] {
    if d < 25.0 {
        [1.0, 0.0, 0.0]
    } else if d < 145.0 {
        [1.0 / 3.0, 2.0 / 3.0, 0.0]
    } else if d < 230.0 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    }
}

/// Marginal cost of demand in each regime.
fn dispatch_lambda(d: f64) -> f64 {
    if d < 25.0 {
        20.0 + 0.4 * d
    } else if d < 145.0 {
        20.0 + 0.4 * (50.0 + d) / 3.0
    } else if d < 230.0 {
        20.0 + 0.4 * (d - 80.0)
    } else {
        1000.0
    }
}

const BREAKPOINTS: [f64; 3] = [25.0, 145.0, 230.0];

fn ac1() -> Check {
    let start = Instant::now();
    let prog = program("dispatch.json");
    let d = prog.parameter("d").unwrap();
    let vars: Vec<_> = ["g1", "g2", "phi"].iter().map(|n| prog.variable(n).unwrap()).collect();
    let mut points = vec![10.0, 100.0, 200.0, 290.0];
    // both sides of every breakpoint
    points.extend(BREAKPOINTS.iter().flat_map(|b| [b - 0.5, b + 0.5]));
    for &demand in &points {
        let mut model = DiffModel::new(with_params(&prog, &[demand]));
        model.optimize().map_err(|e| format!("d={demand}: {e}"))?;
        model.set_forward_parameter(d, 1.0).map_err(|e| e.to_string())?;
        model.forward_differentiate().map_err(|e| e.to_string())?;
        let want = dispatch_slopes(demand);
        for (k, &v) in vars.iter().enumerate() {
            let got = model.get_forward_variable(v).map_err(|e| e.to_string())?;
            ensure((got - want[k]).abs() <= 1e-3, || format!("d={demand} var {k}: {got} vs {}", want[k]))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("{} demand levels incl. both sides of 25/145/230 in {elapsed:.2?}", points.len()))
}

fn ac2() -> Check {
    let prog = program("dispatch.json");
    let d = prog.parameter("d").unwrap();
    let balance = prog.constraint("balance").unwrap();
    let mut model = DiffModel::new(prog);
    model.optimize().map_err(|e| e.to_string())?;
    let dual = model.dual(balance).map_err(|e| e.to_string())?;
    model.set_forward_parameter(d, 1.0).map_err(|e| e.to_string())?;
    model.forward_differentiate().map_err(|e| e.to_string())?;
    let fwd = model.get_forward_objective().map_err(|e| e.to_string())?;
    model.set_reverse_objective(1.0).map_err(|e| e.to_string())?;
    model.reverse_differentiate().map_err(|e| e.to_string())?;
    let rev = model.get_reverse_parameter(d).map_err(|e| e.to_string())?;
    let oracle = dispatch_lambda(100.0);
    for (what, v) in [("forward", fwd), ("reverse", rev), ("dual", dual)] {
        ensure((v - oracle).abs() <= 1e-5, || format!("{what} {v} vs {oracle}"))?;
    }
    Ok(format!("forward {fwd:.9}, reverse {rev:.9}, dual {dual:.9}, oracle {oracle}"))
}

fn ac3() -> Check {
    let prog = program("ik.json");
    let cf = prog.canonicalize().map_err(|e| e.to_string())?;
    let pt = solve_at(&cf, &[1.0, 1.0], &SolverConfig::default())?;
    let session = SensitivitySession::new(&cf, pt).map_err(|e| e.to_string())?;
    // θ = (0, π/2); columns of the inverse of the forward kinematic Jacobian
    let expected = [[0.0, -1.0], [1.0, -1.0]];
    for (j, column) in expected.iter().enumerate() {
        let mut seed = [0.0; 2];
        seed[j] = 1.0;
        let t = session.tangents(&seed).map_err(|e| e.to_string())?;
        for k in 0..2 {
            ensure((t.x[k] - column[k]).abs() <= 1e-5, || format!("column {j} row {k}: {} vs {}", t.x[k], column[k]))?;
        }
    }
    let pt = solve_at(&cf, &[2.0, 0.0], &SolverConfig::default())?;
    let singular = match SensitivitySession::new(&cf, pt) {
        Ok(s) if s.delta() > 0.0 => format!("δ = {:.0e}", s.delta()),
        Ok(_) => return Err("target (2,0) factored without damping".into()),
        Err(SensitivityError::SingularKkt { smallest_pivot, .. }) => format!("SingularKkt, pivot {smallest_pivot:.1e}"),
        Err(e) => return Err(e.to_string()),
    };
    Ok(format!("Jacobian columns match; (2,0) reported singular ({singular})"))
}

/// Bounded canonical indices with `x ≤ ν`.
fn active(cf: &CanonicalForm<f64>, pt: &PrimalDualPoint<f64>) -> Vec<usize> {
    cf.bounded_indices().into_iter().filter(|&i| pt.x[i] <= pt.nu[i]).collect()
}

struct FdTally {
    checked: usize,
    skipped: usize,
    worst: f64,
}

/// Compares forward tangents at `p` with central differences of tight
/// re-solves, one parameter at a time.
fn fd_compare(prog: &ParametricProgram<f64>, p: &[f64], tally: &mut FdTally) -> Result<(), String> {
    let cf = prog.canonicalize().map_err(|e| e.to_string())?;
    let base = solve_at(&cf, p, &tight())?;
    let session = SensitivitySession::new(&cf, base.clone()).map_err(|e| format!("p={p:?}: {e}"))?;
    for j in 0..p.len() {
        let mut seed = vec![0.0; p.len()];
        seed[j] = 1.0;
        let t = session.tangents(&seed).map_err(|e| e.to_string())?;
        let h = 1e-6 * p[j].abs().max(1.0);
        let shifted = |s: f64| {
            let mut q = p.to_vec();
            q[j] += s * h;
            solve_at(&cf, &q, &tight())
        };
        let (plus, minus) = (shifted(1.0)?, shifted(-1.0)?);
        let base_active = active(&cf, &base);
        if active(&cf, &plus) != base_active || active(&cf, &minus) != base_active {
            tally.skipped += 1;
            continue;
        }
        let (xp, xm) = (cf.to_user_point(&plus.x), cf.to_user_point(&minus.x));
        let mut pairs: Vec<(f64, f64)> = cf
            .to_user_tangent(&t.x)
            .into_iter()
            .zip(xp.iter().zip(&xm).map(|(a, b)| (a - b) / (2.0 * h)))
            .collect();
        pairs.push((t.objective, (plus.objective - minus.objective) / (2.0 * h)));
        for (ad, fd) in pairs {
            let err = (fd - ad).abs() / ad.abs().max(1.0);
            tally.worst = tally.worst.max(err);
            tally.checked += 1;
            ensure(err <= 1e-4, || format!("p={p:?} param {j}: ad {ad} fd {fd}"))?;
        }
    }
    Ok(())
}

fn ac4() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut tally = FdTally { checked: 0, skipped: 0, worst: 0.0 };
    for name in ["dispatch.json", "portfolio.json", "ik.json"] {
        let prog = program(name);
        let defaults = prog.parameter_values();
        fd_compare(&prog, &defaults, &mut tally)?;
        for _ in 0..10 {
            // ±10% keeps the portfolio above its minimum-variance cap
            let p: Vec<f64> = defaults.iter().map(|v| v * (1.0 + rng.gen_range(-0.1..0.1))).collect();
            fd_compare(&prog, &p, &mut tally)?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} derivatives, worst relative error {:.1e}, {} active-set skips, {elapsed:.2?}",
        tally.checked, tally.worst, tally.skipped
    ))
}

fn ac5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xad01);
    let mut worst = 0.0_f64;
    for name in ["dispatch.json", "portfolio.json", "ik.json"] {
        let prog = program(name);
        let cf = prog.canonicalize().map_err(|e| e.to_string())?;
        let pt = solve_at(&cf, &prog.parameter_values(), &SolverConfig::default())?;
        let mut s = SensitivitySession::new(&cf, pt).map_err(|e| e.to_string())?;
        let (params, vars) = (prog.parameter_handles(), prog.variable_handles());
        for _ in 0..100 {
            s.empty_input_sensitivities();
            let vdot: Vec<f64> = params.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            let vbar: Vec<f64> = vars.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            for (&h, &v) in params.iter().zip(&vdot) {
                s.set_forward_parameter(h, v).map_err(|e| e.to_string())?;
            }
            for (&h, &w) in vars.iter().zip(&vbar) {
                s.set_reverse_variable(h, w).map_err(|e| e.to_string())?;
            }
            let xdot = cf.to_user_tangent(&s.forward_differentiate().map_err(|e| e.to_string())?.x);
            let pbar = s.reverse_differentiate().map_err(|e| e.to_string())?.to_vec();
            let lhs: f64 = vbar.iter().zip(&xdot).map(|(a, b)| a * b).sum();
            let rhs: f64 = pbar.iter().zip(&vdot).map(|(a, b)| a * b).sum();
            let gap = (lhs - rhs).abs() / (1.0 + lhs.abs());
            worst = worst.max(gap);
            ensure(gap <= 1e-10, || format!("{name}: {lhs} vs {rhs}"))?;
        }
    }
    Ok(format!("300 pairs, worst scaled gap {worst:.1e}"))
}

fn ac6() -> Check {
    let prog = program("portfolio.json");
    let cf = prog.canonicalize().map_err(|e| e.to_string())?;
    let pt = solve_at(&cf, &prog.parameter_values(), &SolverConfig::default())?;
    let s = SensitivitySession::new(&cf, pt).map_err(|e| e.to_string())?;
    let before = s.kkt().solves();
    s.full_jacobian().map_err(|e| e.to_string())?;
    let (factorizations, solves) = (s.kkt().factorizations(), s.kkt().solves() - before);
    let l = cf.n_params();
    ensure(factorizations == 1 && solves == l, || {
        format!("{factorizations} factorizations, {solves} solves for {l} parameters")
    })?;
    Ok(format!("1 factorization, {solves} solve for {l} parameter"))
}

fn ac7() -> Check {
    let cfg = SolverConfig::default();
    let mut count = 0;
    let mut worst = (0.0_f64, 0usize);
    let mut check = |prog: &ParametricProgram<f64>, p: &[f64]| -> Result<(), String> {
        let cf = prog.canonicalize().map_err(|e| e.to_string())?;
        let sol = solve(&cf, p, &cfg).map_err(|e| format!("p={p:?}: {e}"))?;
        ensure(sol.residual <= 1e-8 && sol.iterations <= 200, || {
            format!("p={p:?}: residual {} after {} iterations", sol.residual, sol.iterations)
        })?;
        worst = (worst.0.max(sol.residual), worst.1.max(sol.iterations));
        count += 1;
        Ok(())
    };
    let dispatch = program("dispatch.json");
    let portfolio = program("portfolio.json");
    let ik = program("ik.json");
    for prog in [&dispatch, &portfolio, &ik] {
        check(prog, &prog.parameter_values())?;
    }
    for d in 1..=300 {
        check(&dispatch, &[d as f64])?;
    }
    // feasible caps start at the minimum-variance level, about 0.0348
    for k in 0..=45 {
        check(&portfolio, &[0.035 + 0.001 * k as f64])?;
    }
    for k in 0..=12 {
        let angle = 0.3 + 0.14 * k as f64;
        for r in [0.5, 1.0, 1.5, 1.9] {
            check(&ik, &[r * angle.cos(), r * angle.sin()])?;
        }
    }
    check(&ik, &[2.0, 0.0])?;
    Ok(format!("{count} solves, worst residual {:.1e}, most iterations {}", worst.0, worst.1))
}

fn csv_column(csv: &str, name: &str) -> Result<Vec<Option<f64>>, String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().ok_or("empty CSV")?.split(',').collect();
    let col = header.iter().position(|&h| h == name).ok_or_else(|| format!("no column {name}"))?;
    Ok(lines.map(|l| l.split(',').nth(col).and_then(|c| c.parse().ok())).collect())
}

fn sign(v: f64) -> i8 {
    if v.abs() <= 1e-6 {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

fn ac8() -> Check {
    let dispatch = load("dispatch.json");
    let req = SweepRequest { param: "d".into(), from: 1.0, to: 300.0, steps: 300, warm: false };
    let csv = cmd_sweep(&dispatch, &[], &req, None).map_err(|e| e.to_string())?;
    let ds = csv_column(&csv, "d")?;
    let lambda = csv_column(&csv, "lambda[balance]")?;
    let mut prev = f64::NEG_INFINITY;
    for (d, l) in ds.iter().zip(&lambda) {
        let (d, l) = (d.ok_or("missing d")?, l.ok_or_else(|| "failed sweep point".to_owned())?);
        ensure(l >= prev - 1e-6, || format!("λ decreases at d={d}: {prev} -> {l}"))?;
        prev = l;
        if BREAKPOINTS.iter().all(|b| (d - b).abs() >= 0.5) {
            let want = dispatch_lambda(d);
            ensure((l - want).abs() <= 1e-5 * want, || format!("λ({d}) = {l}, oracle {want}"))?;
        }
    }

    let portfolio = load("portfolio.json");
    let req = SweepRequest { param: "sigma_max".into(), from: 0.02, to: 0.08, steps: 61, warm: false };
    let csv = cmd_sweep(&portfolio, &[], &req, None).map_err(|e| e.to_string())?;
    let sigma = csv_column(&csv, "sigma_max")?;
    let loss = csv_column(&csv, "loss")?;
    let grad = csv_column(&csv, "dloss/dsigma_max")?;
    let (mut agree, mut interior) = (0, 0);
    for i in 1..loss.len() - 1 {
        let (Some(a), Some(b), Some(g)) = (loss[i - 1], loss[i + 1], grad[i]) else { continue };
        let h = sigma[i + 1].unwrap() - sigma[i - 1].unwrap();
        interior += 1;
        if sign((b - a) / h) == sign(g) {
            agree += 1;
        }
    }
    ensure(interior > 0 && agree * 100 >= 95 * interior, || format!("sign agreement {agree}/{interior}"))?;
    Ok(format!("λ(d) monotone and on the oracle plateaus; loss slope signs agree at {agree}/{interior} interior points"))
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Check); 8] = [
        ("AC1", "dispatch regime sensitivities", ac1),
        ("AC2", "objective sensitivity equals the balance dual", ac2),
        ("AC3", "inverse kinematics Jacobian and singular reach", ac3),
        ("AC4", "finite-difference oracle", ac4),
        ("AC5", "adjoint identity", ac5),
        ("AC6", "factorization reuse", ac6),
        ("AC7", "solver self-consistency", ac7),
        ("AC8", "sweep shapes", ac8),
    ];
    let mut failed = 0;
    for (id, title, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {id} {title}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {id} {title}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {id} {title}: panicked");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
