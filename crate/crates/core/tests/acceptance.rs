//! Acceptance suite: one test per criterion, each printing a pass line with
//! the measured figures (`cargo test --test acceptance -- --nocapture` shows
//! them on a green run; failures carry the figures in the assert messages).

use portpmp::bench::{
    analytic_classic, classic_problem, ported_problem, CheapestStopParams, PortParams,
};
use portpmp::direct::{compare, solve_direct};
use portpmp::dynamics::rk4;
use portpmp::expr::{parse, Expr, ExprKind, Symbols};
use portpmp::indirect::{check_certificate, solve, Maximizer, NuMode, SolverConfig};
use portpmp::model::load_problem;
use portpmp::Problem64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::convert::Infallible;
use std::time::Instant;

fn bench_params() -> CheapestStopParams<f64> {
    CheapestStopParams {
        x0: 0.0,
        v0: 1.0,
        x1: 1.0,
        t1: 1.0,
    }
}

/// Least-squares degree-1 fit residual of (t_i, u_i).
fn linear_fit_residual(ts: &[f64], us: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let st: f64 = ts.iter().sum();
    let su: f64 = us.iter().sum();
    let stt: f64 = ts.iter().map(|t| t * t).sum();
    let stu: f64 = ts.iter().zip(us).map(|(t, u)| t * u).sum();
    let det = n * stt - st * st;
    let a = (n * stu - st * su) / det;
    let b = (su * stt - st * stu) / det;
    ts.iter()
        .zip(us)
        .map(|(t, u)| (u - (a * t + b)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn criterion_1_cheapest_stop_exactness() {
    let start = Instant::now();
    let params = bench_params();
    let problem = classic_problem(&params).unwrap();
    let oracle = analytic_classic(&params);
    let ex = solve(&problem, &SolverConfig::default(), NuMode::Auto).unwrap();
    let elapsed = start.elapsed();

    assert_eq!(ex.nu, -1.0, "normal class expected");
    let traj = &ex.trajectory;
    let mut max_u_err = 0.0f64;
    for (i, &t) in traj.times.iter().enumerate() {
        max_u_err = max_u_err.max((traj.u_at(i)[0] - (oracle.alpha * t + oracle.beta)).abs());
    }
    let j_err = (ex.cost - 4.0).abs();
    println!(
        "acceptance 1 (cheapest-stop exactness): PASS — α={:.3}, β={:.3}, max|u-(αt+β)|={:.2e}, |J-4|={:.2e}, {:.0} ms",
        oracle.alpha,
        oracle.beta,
        max_u_err,
        j_err,
        elapsed.as_secs_f64() * 1e3
    );
    assert!((oracle.alpha + 6.0).abs() < 1e-12 && (oracle.beta - 2.0).abs() < 1e-12);
    assert!(
        max_u_err < 1e-6,
        "control deviates from αt+β by {max_u_err}"
    );
    assert!(j_err < 1e-6, "cost off by {j_err}");
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
}

#[test]
fn criterion_2_linearity_over_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = SolverConfig::default();
    let mut worst_fit = 0.0f64;
    let mut worst_costate = 0.0f64;
    for draw in 0..20 {
        let params = CheapestStopParams {
            x0: rng.random_range(-2.0..2.0),
            v0: rng.random_range(-2.0..2.0),
            x1: rng.random_range(-2.0..2.0),
            t1: rng.random_range(0.5..2.0),
        };
        let problem = classic_problem(&params).unwrap();
        let ex = solve(&problem, &cfg, NuMode::Auto)
            .unwrap_or_else(|e| panic!("draw {draw} ({params:?}) failed: {e}"));
        let traj = &ex.trajectory;
        let us: Vec<f64> = (0..traj.times.len()).map(|i| traj.u_at(i)[0]).collect();
        worst_fit = worst_fit.max(linear_fit_residual(&traj.times, &us));
        for i in 0..traj.times.len() {
            worst_costate = worst_costate.max((traj.u_at(i)[0] - traj.lambda_at(i)[1] / 2.0).abs());
        }
    }
    println!(
        "acceptance 2 (linear optimal control): PASS — worst degree-1 fit residual {:.2e}, worst |u - ξ₂/2| {:.2e}",
        worst_fit, worst_costate
    );
    assert!(worst_fit < 1e-6, "fit residual {worst_fit}");
    assert!(
        worst_costate < 1e-8,
        "costate relation violated by {worst_costate}"
    );
}

#[test]
fn criterion_3_abnormal_class_is_rejected() {
    let problem = classic_problem(&bench_params()).unwrap();
    let err = solve(&problem, &SolverConfig::default(), NuMode::Abnormal).unwrap_err();
    let unbounded = err.has_unbounded_hamiltonian();
    let trivial = err.has_nontriviality_rejection();
    println!(
        "acceptance 3 (abnormal rejection): PASS — unbounded-Hamiltonian starts: {unbounded}, trivial-costate rejections: {trivial}"
    );
    assert!(
        unbounded || trivial,
        "abnormal pass must fail by unboundedness or triviality: {err}"
    );
    // The report names the class explicitly.
    assert!(err.to_string().contains("nu=0"), "{err}");
}

#[test]
fn criterion_4_zero_port_reduction() {
    let params = bench_params();
    let classic = classic_problem(&params).unwrap();
    // The same problem padded with one inert port: A ≡ B ≡ 0, f ≡ f' ≡ 0,
    // cost unchanged.
    let padded_src = "\
[dims]
n = 2
l = 1
k = 1
t1 = 1
[dynamics]
q2
u1
[port_A]
0
0
[port_B]
0
0
[cost]
u1^2
[bounds]
-inf inf
[signals]
f1 = 0
fprime1 = 0
[boundary]
q0 = 0 1
terminal q1 = 1
terminal q2 = 0
";
    let padded: Problem64 = load_problem(padded_src).unwrap();
    let cfg = SolverConfig::default();
    let a = solve(&classic, &cfg, NuMode::Auto).unwrap();
    let b = solve(&padded, &cfg, NuMode::Auto).unwrap();
    let ta = &a.trajectory;
    let tb = &b.trajectory;
    let mut worst = 0.0f64;
    for i in 0..ta.times.len() {
        for c in 0..2 {
            worst = worst.max((ta.q_at(i)[c] - tb.q_at(i)[c]).abs());
            worst = worst.max((ta.lambda_at(i)[c] - tb.lambda_at(i)[c]).abs());
        }
        worst = worst.max((ta.u_at(i)[0] - tb.u_at(i)[0]).abs());
        worst = worst.max((ta.y[i] - tb.y[i]).abs());
        assert_eq!(tb.i_acc[i], 0.0, "port integral must stay zero");
    }
    println!("acceptance 4 (zero-port reduction): PASS — max per-node difference {worst:.2e}");
    assert!(worst < 1e-10, "trajectories differ by {worst}");
}

#[test]
fn criterion_5_direct_oracle_agreement() {
    let start = Instant::now();
    let cfg = SolverConfig::default();
    let params = bench_params();

    let classic = classic_problem(&params).unwrap();
    let ex_c = solve(&classic, &cfg, NuMode::Auto).unwrap();
    let ds_c = solve_direct(&classic, 50).unwrap();
    let rep_c = compare(&ex_c, &ds_c, &classic, 0.02);

    let port = PortParams {
        f: "0.1*t".into(),
        fprime: "0.1".into(),
        ..Default::default()
    };
    let ported = ported_problem(&params, &port).unwrap();
    let ex_p = solve(&ported, &cfg, NuMode::Auto).unwrap();
    let ds_p = solve_direct(&ported, 50).unwrap();
    let rep_p = compare(&ex_p, &ds_p, &ported, 0.02);

    let elapsed = start.elapsed();
    println!(
        "acceptance 5 (oracle agreement): PASS — classic gap {:.3e} (J_i={:.6}, J_d={:.6}), ported gap {:.3e} (J_i={:.6}, J_d={:.6}), {:.1} s",
        rep_c.rel_gap,
        rep_c.j_indirect,
        rep_c.j_direct,
        rep_p.rel_gap,
        rep_p.j_indirect,
        rep_p.j_direct,
        elapsed.as_secs_f64()
    );
    assert!(rep_c.pass, "classic: {rep_c}");
    assert!(rep_p.pass, "ported: {rep_p}");
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
}

#[test]
fn criterion_6_certificate_suite() {
    let cfg = SolverConfig::default();
    let mut cases: Vec<(String, Problem64)> = Vec::new();
    cases.push(("classic".into(), classic_problem(&bench_params()).unwrap()));
    let port = PortParams {
        f: "0.1*t".into(),
        fprime: "0.1".into(),
        ..Default::default()
    };
    cases.push((
        "ported".into(),
        ported_problem(&bench_params(), &port).unwrap(),
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..3 {
        let params = CheapestStopParams {
            x0: rng.random_range(-2.0..2.0),
            v0: rng.random_range(-2.0..2.0),
            x1: rng.random_range(-2.0..2.0),
            t1: rng.random_range(0.5..2.0),
        };
        cases.push((format!("random-{i}"), classic_problem(&params).unwrap()));
    }
    let mut lines = Vec::new();
    for (name, problem) in &cases {
        let ex = solve(problem, &cfg, NuMode::Auto)
            .unwrap_or_else(|e| panic!("{name} failed to solve: {e}"));
        let cert = check_certificate(&ex, problem, &cfg);
        assert!(cert.pass(), "{name} certificate failed:\n{cert}");
        if cert.autonomous {
            assert!(
                cert.hamiltonian_variation < 1e-4,
                "{name}: Hamiltonian varies by {}",
                cert.hamiltonian_variation
            );
        }
        lines.push(format!(
            "{name}: gap {:.1e}, defect {:.1e}, H-var {:.1e}",
            cert.maximality_gap, cert.refine_defect, cert.hamiltonian_variation
        ));
    }
    println!(
        "acceptance 6 (certificate suite): PASS — {}",
        lines.join("; ")
    );
}

// --- criterion 7 helpers: random smooth expressions with safe evaluation ---

struct ExprGen {
    rng: ChaCha8Rng,
}

impl ExprGen {
    fn gen_expr(&mut self, depth: usize, table: &Symbols) -> Expr<f64> {
        let leaf = depth == 0 || self.rng.random_range(0..10) < 2;
        if leaf {
            match self.rng.random_range(0..3) {
                0 => {
                    let c: f64 = self.rng.random_range(-2.0..2.0);
                    Expr::constant((c * 32.0).round() / 32.0)
                }
                1 => Expr::var("x", 0),
                _ => Expr::var("y", 1),
            }
        } else {
            let a = self.gen_expr(depth - 1, table);
            let b = self.gen_expr(depth - 1, table);
            let text = match self.rng.random_range(0..9) {
                0 => format!("({a}) + ({b})"),
                1 => format!("({a}) - ({b})"),
                2 => format!("({a}) * ({b})"),
                3 => format!("({a}) / ({b})"),
                4 => format!("({a})^{}", self.rng.random_range(2..4)),
                5 => format!("sin({a})"),
                6 => format!("cos({a})"),
                7 => format!("exp(({a})/4)"),
                _ => {
                    if self.rng.random_range(0..2) == 0 {
                        format!("log(({a})^2 + 0.5)")
                    } else {
                        format!("sqrt(({a})^2 + 0.25)")
                    }
                }
            };
            parse(&text, table).unwrap()
        }
    }
}

fn count_nontrivial(e: &Expr<f64>) -> bool {
    // At least one variable somewhere.
    match &e.kind {
        ExprKind::Const(_) => false,
        ExprKind::Var { .. } => true,
        ExprKind::Neg(a) => count_nontrivial(a),
        ExprKind::Bin(_, a, b) => count_nontrivial(a) || count_nontrivial(b),
        ExprKind::Call(_, args) => args.iter().any(count_nontrivial),
    }
}

#[test]
fn criterion_7_numerical_hygiene() {
    // (a) symbolic vs central finite differences on 1000 accepted pairs.
    let table = Symbols::new(["x", "y"]);
    let mut gen = ExprGen {
        rng: ChaCha8Rng::seed_from_u64(7),
    };
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    let mut worst_rel = 0.0f64;
    while accepted < 1000 {
        attempts += 1;
        assert!(attempts < 60_000, "generator rejecting too much");
        let e = gen.gen_expr(3, &table);
        if !count_nontrivial(&e) {
            continue;
        }
        let x: f64 = gen.rng.random_range(-2.0..2.0);
        let y: f64 = gen.rng.random_range(-2.0..2.0);
        let env = [x, y];
        // Reject pairs that stray toward domain boundaries or blow up:
        // the property is about smooth, finite samples.
        let probe = |env: &[f64; 2]| -> Option<f64> {
            match e.eval_slots(env) {
                Ok(v) if v.is_finite() && v.abs() < 1e6 => Some(v),
                _ => None,
            }
        };
        let mut ok = true;
        let mut pair_worst = 0.0f64;
        for slot in 0..2 {
            let h = 1e-6 * env[slot].abs().max(1.0);
            let fd_at = |step: f64| -> Option<f64> {
                let mut hi = env;
                let mut lo = env;
                hi[slot] += step;
                lo[slot] -= step;
                Some((probe(&hi)? - probe(&lo)?) / (2.0 * step))
            };
            let (fd, fd2) = match (fd_at(h), fd_at(2.0 * h), probe(&env)) {
                (Some(a), Some(b), Some(_)) => (a, b),
                _ => {
                    ok = false;
                    break;
                }
            };
            // Oracle validity: the difference quotient must agree with
            // itself across step sizes, otherwise the sample sits too close
            // to a pole or oscillation for the oracle to mean anything.
            if (fd - fd2).abs() > 1e-8 * (1.0 + fd.abs()) {
                ok = false;
                break;
            }
            let var = if slot == 0 { "x" } else { "y" };
            let sym = match e.diff(var).eval_slots(&env) {
                Ok(v) if v.is_finite() && v.abs() < 1e9 => v,
                _ => {
                    ok = false;
                    break;
                }
            };
            let rel = (sym - fd).abs() / (1.0 + fd.abs());
            pair_worst = pair_worst.max(rel);
        }
        if !ok {
            continue;
        }
        accepted += 1;
        worst_rel = worst_rel.max(pair_worst);
        assert!(
            pair_worst <= 1e-6,
            "pair {accepted} `{e}` at {env:?}: rel err {pair_worst}"
        );
    }

    // (b) RK4 order on the exponential problem.
    let run = |steps: usize| {
        rk4::<f64, Infallible, _, _>(
            |_t, z, dz| {
                dz[0] = z[0];
                Ok(())
            },
            &[1.0],
            0.0,
            1.0,
            steps,
            |_, _, _| {},
        )
        .unwrap()[0]
    };
    let e = std::f64::consts::E;
    let ratio = (run(50) - e).abs() / (run(100) - e).abs();
    println!(
        "acceptance 7 (numerical hygiene): PASS — worst FD rel err {:.2e} over 1000 pairs ({} attempts), RK4 order ratio {:.2}",
        worst_rel, attempts, ratio
    );
    assert!((12.0..=20.0).contains(&ratio), "order ratio {ratio}");
}

#[test]
fn criterion_8_argmax_scale_invariance() {
    let cfg = SolverConfig::default();
    // Box keeps every argmax on a discrete, λ-independent value set: the
    // sign branch for the abnormal class, the clamped boundary for the
    // normal class (stationary points |ξ2/2| >= 0.25 never enter the box).
    let boxed: Problem64 = load_problem(
        &portpmp::bench::classic_file(&bench_params()).replace("-inf inf", "-0.1 0.1"),
    )
    .unwrap();
    let maximizer = Maximizer::new(&boxed, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checks = 0usize;
    for _ in 0..100 {
        let l1: f64 = rng.random_range(-2.0..2.0);
        let mag: f64 = rng.random_range(0.5..2.0);
        let sign = if rng.random_range(0..2) == 0 {
            1.0
        } else {
            -1.0
        };
        let l2 = sign * mag;
        let q = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let t: f64 = rng.random_range(0.0..1.0);
        for nu in [0.0, -1.0] {
            let base = maximizer.maximize(&[l1, l2], &q, t, nu).unwrap();
            for c in [0.5, 3.0, 10.0] {
                let scaled = maximizer
                    .maximize(&[c * l1, c * l2], &q, t, c * nu)
                    .unwrap();
                assert_eq!(
                    base, scaled,
                    "argmax changed under c={c}, ν={nu}, λ=({l1},{l2})"
                );
                checks += 1;
            }
        }
    }
    // Closed-form interior path: scaling by a power of two is exact through
    // the whole floating-point evaluation.
    let unbounded = classic_problem(&bench_params()).unwrap();
    let m2 = Maximizer::new(&unbounded, &cfg);
    for _ in 0..100 {
        let lam = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let q = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let t: f64 = rng.random_range(0.0..1.0);
        let base = m2.maximize(&lam, &q, t, -1.0).unwrap();
        let scaled = m2
            .maximize(&[0.5 * lam[0], 0.5 * lam[1]], &q, t, -0.5)
            .unwrap();
        assert_eq!(base, scaled, "closed form not invariant at c=0.5");
        checks += 1;
    }
    println!("acceptance 8 (argmax scale invariance): PASS — {checks} exact-equality checks");
}
