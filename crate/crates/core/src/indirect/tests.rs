use super::*;
use crate::dynamics::Dynamics;
use crate::model::load_problem;

const CLASSIC: &str = "\
[dims]
n = 2
l = 1
k = 0
t1 = 1
[dynamics]
q2
u1
[cost]
u1^2
[bounds]
-inf inf
[boundary]
q0 = 0 1
terminal q1 = 1
terminal q2 = 0
";

fn classic() -> ControlProblem<f64> {
    load_problem(CLASSIC).unwrap()
}

fn boxed_linear() -> ControlProblem<f64> {
    // Same dynamics, box U = [-1, 1]; used with ν = 0 for the linear cases.
    load_problem(&CLASSIC.replace("-inf inf", "-1 1")).unwrap()
}

#[test]
fn maximize_normal_case_closed_form() {
    // Objective ξ1 x2 + ξ2 u - u²: stationary at u = ξ2/2.
    let p = classic();
    let cfg = SolverConfig::default();
    let m = Maximizer::new(&p, &cfg);
    let u = m.maximize(&[3.0, 5.0], &[0.2, -0.4], 0.0, -1.0).unwrap();
    assert_eq!(u, vec![2.5]);
    let u = m.maximize(&[0.0, -1.5], &[0.0, 0.0], 0.7, -1.0).unwrap();
    assert_eq!(u, vec![-0.75]);
}

#[test]
fn maximize_abnormal_linear_on_box() {
    let p = boxed_linear();
    let cfg = SolverConfig::default();
    let m = Maximizer::new(&p, &cfg);
    // Objective ξ2 u on [-1, 1]: u* = sign(ξ2).
    assert_eq!(
        m.maximize(&[0.0, 2.0], &[0.0, 0.0], 0.0, 0.0).unwrap(),
        vec![1.0]
    );
    assert_eq!(
        m.maximize(&[0.0, -0.3], &[0.0, 0.0], 0.0, 0.0).unwrap(),
        vec![-1.0]
    );
    // Tie (ξ2 = 0): smallest admissible control wins.
    assert_eq!(
        m.maximize(&[5.0, 0.0], &[0.0, 0.0], 0.0, 0.0).unwrap(),
        vec![-1.0]
    );
}

#[test]
fn maximize_unbounded_linear_errors_with_component() {
    let p = classic();
    let cfg = SolverConfig::default();
    let m = Maximizer::new(&p, &cfg);
    let err = m.maximize(&[0.0, 1.0], &[0.0, 0.0], 0.0, 0.0).unwrap_err();
    match err {
        MaximizeError::Unbounded { component, .. } => assert_eq!(component, 1),
        other => panic!("expected unbounded error, got {other}"),
    }
}

#[test]
fn maximize_concave_quadratic_clamps_to_box() {
    // Stationary point ξ2/2 = 5 escapes U = [-1, 1]; concave 1-D clamps.
    let p = boxed_linear();
    let cfg = SolverConfig::default();
    let m = Maximizer::new(&p, &cfg);
    assert_eq!(
        m.maximize(&[0.0, 10.0], &[0.0, 0.0], 0.0, -1.0).unwrap(),
        vec![1.0]
    );
    assert_eq!(
        m.maximize(&[0.0, -10.0], &[0.0, 0.0], 0.0, -1.0).unwrap(),
        vec![-1.0]
    );
}

#[test]
fn maximize_nonquadratic_uses_grid_and_golden() {
    // φ = u⁴ - u² is not quadratic; ν = -1 → objective ξ2 u - u⁴ + u².
    // At ξ2 = 0 the maxima of u² - u⁴ sit at u = ±1/√2; ties break low.
    let src = CLASSIC
        .replace("u1^2", "u1^4 - u1^2")
        .replace("-inf inf", "-2 2");
    let p = load_problem::<f64>(&src).unwrap();
    let cfg = SolverConfig::default();
    let m = Maximizer::new(&p, &cfg);
    let u = m.maximize(&[0.0, 0.0], &[0.0, 0.0], 0.0, -1.0).unwrap();
    let root = 1.0 / 2.0f64.sqrt();
    assert!(
        (u[0].abs() - root).abs() < 1e-4,
        "expected |u| ≈ {root}, got {}",
        u[0]
    );
}

#[test]
fn maximize_nonquadratic_on_unbounded_set_is_rejected() {
    let src = CLASSIC.replace("u1^2", "u1^4");
    let p = load_problem::<f64>(&src).unwrap();
    let cfg = SolverConfig::default();
    let m = Maximizer::new(&p, &cfg);
    let err = m.maximize(&[0.0, 1.0], &[0.0, 0.0], 0.0, -1.0).unwrap_err();
    assert!(
        matches!(err, MaximizeError::Unbounded { component: 1, .. }),
        "{err}"
    );
}

#[test]
fn argmax_invariant_under_joint_positive_scaling() {
    // Affine path (ν = 0): sign decisions are exactly scale-invariant.
    let p = boxed_linear();
    let cfg = SolverConfig::default();
    let m = Maximizer::new(&p, &cfg);
    for c in [0.5, 3.0, 10.0] {
        for lam in [[0.7, 1.3], [-0.2, -2.4], [4.0, 0.0]] {
            let scaled: Vec<f64> = lam.iter().map(|v| c * v).collect();
            let base = m.maximize(&lam, &[0.1, 0.2], 0.3, 0.0).unwrap();
            let s = m.maximize(&scaled, &[0.1, 0.2], 0.3, c * 0.0).unwrap();
            assert_eq!(base, s);
        }
    }
    // Closed-form path at c = 0.5: power-of-two scaling is exact in floating
    // point through the whole evaluation.
    let p = classic();
    let m = Maximizer::new(&p, &cfg);
    for lam in [[0.7, 1.3], [-0.2, -2.4], [4.0, 0.123456789]] {
        let scaled: Vec<f64> = lam.iter().map(|v| 0.5 * v).collect();
        let base = m.maximize(&lam, &[0.1, 0.2], 0.3, -1.0).unwrap();
        let s = m.maximize(&scaled, &[0.1, 0.2], 0.3, -0.5).unwrap();
        assert_eq!(base, s);
    }
}

#[test]
fn integrate_extremal_benchmark_costate() {
    // λ0 = (12, 4), ν = -1: ξ2(t) = 4 - 12t, u = ξ2/2 = -6t + 2,
    // steering (0,1) to (1,0).
    let p = classic();
    let cfg = SolverConfig::default();
    let d = Dynamics::new(&p);
    let m = Maximizer::new(&p, &cfg);
    let traj = integrate_extremal(&d, &m, &[12.0, 4.0], -1.0, 1000).unwrap();
    let qt = traj.terminal_q();
    assert!((qt[0] - 1.0).abs() < 1e-8);
    assert!(qt[1].abs() < 1e-8);
    for (i, &t) in traj.times.iter().enumerate() {
        let expected = -6.0 * t + 2.0;
        assert!(
            (traj.u_at(i)[0] - expected).abs() < 1e-9,
            "u({t}) = {} vs {expected}",
            traj.u_at(i)[0]
        );
    }
    assert!((traj.cost() - 4.0).abs() < 1e-9);
}

#[test]
fn integrate_extremal_zero_costate_is_stationary() {
    let p = classic();
    let cfg = SolverConfig::default();
    let d = Dynamics::new(&p);
    let m = Maximizer::new(&p, &cfg);
    let traj = integrate_extremal(&d, &m, &[0.0, 0.0], -1.0, 100).unwrap();
    assert!(traj.u.iter().all(|v| *v == 0.0));
    assert!(traj.lambda.iter().all(|v| *v == 0.0));
    assert_eq!(traj.cost(), 0.0);
}

#[test]
fn integrate_extremal_unbounded_abnormal_errors() {
    let p = classic();
    let cfg = SolverConfig::default();
    let d = Dynamics::new(&p);
    let m = Maximizer::new(&p, &cfg);
    let err = integrate_extremal(&d, &m, &[0.0, 1.0], 0.0, 100).unwrap_err();
    assert!(err.to_string().contains("no bounded maximum"), "{err}");
}

#[test]
fn shooting_residual_values() {
    let p = classic();
    let cfg = SolverConfig::default();
    let d = Dynamics::new(&p);
    let m = Maximizer::new(&p, &cfg);
    // Converged start: residual vanishes.
    let r = shooting_residual(&d, &m, &[12.0, 4.0], -1.0, 1000).unwrap();
    assert!(inf_norm(&r) < 1e-8, "residual {r:?}");
    // λ0 = 0 gives u ≡ 0: q(1) = (1, 1), residual (0, 1).
    let r = shooting_residual(&d, &m, &[0.0, 0.0], -1.0, 1000).unwrap();
    assert!(
        (r[0] - 0.0).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12,
        "{r:?}"
    );
}

#[test]
fn shooting_residual_empty_without_terminal_constraints() {
    let src = CLASSIC.replace("terminal q1 = 1\nterminal q2 = 0\n", "");
    let p = load_problem::<f64>(&src).unwrap();
    let cfg = SolverConfig::default();
    let d = Dynamics::new(&p);
    let m = Maximizer::new(&p, &cfg);
    let r = shooting_residual(&d, &m, &[1.0, 1.0], -1.0, 100).unwrap();
    assert!(r.is_empty());
}

#[test]
fn solve_benchmark_recovers_linear_control() {
    let p = classic();
    let ex = solve(&p, &SolverConfig::default(), NuMode::Auto).unwrap();
    assert_eq!(ex.nu, -1.0);
    assert!((ex.lambda0[0] - 12.0).abs() < 1e-6, "λ0 = {:?}", ex.lambda0);
    assert!((ex.lambda0[1] - 4.0).abs() < 1e-6);
    assert!((ex.cost - 4.0).abs() < 1e-6);
    assert!(ex.residual_norm() <= SolverConfig::<f64>::default().tol);
    assert!(ex.nontrivial);
}

#[test]
fn solve_zero_motion_is_trivial() {
    // Start at rest on the target: u ≡ 0, J = 0.
    let src = CLASSIC.replace("q0 = 0 1", "q0 = 1 0");
    let p = load_problem::<f64>(&src).unwrap();
    let ex = solve(&p, &SolverConfig::default(), NuMode::Auto).unwrap();
    assert_eq!(ex.cost, 0.0);
    assert!(ex.trajectory.u.iter().all(|v| *v == 0.0));
    assert!(!ex.nontrivial, "λ ≡ 0 for the resting extremal");
}

#[test]
fn solve_abnormal_on_benchmark_is_rejected() {
    let p = classic();
    let err = solve(&p, &SolverConfig::default(), NuMode::Abnormal).unwrap_err();
    // Every start either hits an unbounded Hamiltonian or produces the
    // trivial costate, which is rejected.
    assert!(
        err.has_unbounded_hamiltonian() || err.has_nontriviality_rejection(),
        "{err}"
    );
    let text = err.to_string();
    assert!(text.contains("nu=0"), "{text}");
}

#[test]
fn solve_unreachable_tolerance_reports_best_residuals() {
    // |u| <= 0.1 cannot brake the unit initial velocity to rest by t1 = 1,
    // so no start can meet the tolerance and the failure report carries the
    // best residual seen per start.
    let src = CLASSIC.replace("-inf inf", "-0.1 0.1");
    let p = load_problem::<f64>(&src).unwrap();
    let cfg = SolverConfig {
        steps: 100,
        ..SolverConfig::default()
    };
    let err = solve(&p, &cfg, NuMode::Normal).unwrap_err();
    match err {
        SolveError::Failed { ref attempts } => {
            assert!(attempts
                .iter()
                .any(|a| matches!(a.outcome, StartOutcome::NotConverged { .. })));
        }
        other => panic!("expected failure report, got {other}"),
    }
}

#[test]
fn certificate_passes_on_converged_benchmark() {
    let p = classic();
    let cfg = SolverConfig::default();
    let ex = solve(&p, &cfg, NuMode::Auto).unwrap();
    let cert = check_certificate(&ex, &p, &cfg);
    assert!(cert.pass(), "{cert}");
    assert!(cert.autonomous);
    assert!(
        cert.hamiltonian_variation < 1e-6,
        "variation {}",
        cert.hamiltonian_variation
    );
}

#[test]
fn certificate_detects_perturbed_control() {
    let p = classic();
    let cfg = SolverConfig::default();
    let ex = solve(&p, &cfg, NuMode::Auto).unwrap();
    let mut tampered = ex.clone();
    let mid = tampered.trajectory.u.len() / 2;
    tampered.trajectory.u[mid] += 0.5;
    let cert = check_certificate(&tampered, &p, &cfg);
    assert!(!cert.maximality_pass, "{cert}");
}

#[test]
fn certificate_invariant_under_costate_scaling() {
    // (λ, ν) scaled by 2 is the same extremal ray; all checks still pass.
    let p = classic();
    let cfg = SolverConfig::default();
    let ex = solve(&p, &cfg, NuMode::Auto).unwrap();
    let mut scaled = ex.clone();
    for v in scaled.trajectory.lambda.iter_mut() {
        *v *= 2.0;
    }
    for v in scaled.lambda0.iter_mut() {
        *v *= 2.0;
    }
    scaled.nu = -2.0;
    let cert = check_certificate(&scaled, &p, &cfg);
    assert!(
        cert.nontriviality_pass && cert.maximality_pass && cert.nu_sign_pass,
        "{cert}"
    );
}

#[test]
fn ldlt_and_gauss_agree_on_spd_systems() {
    let a: Vec<f64> = vec![4.0, 1.0, 1.0, 3.0];
    let b: Vec<f64> = vec![1.0, 2.0];
    let mut m = a.clone();
    let mut rhs = b.clone();
    assert!(ldlt_solve_in_place(&mut m, &mut rhs, 2));
    let g = gauss_solve(a, b).unwrap();
    for i in 0..2 {
        assert!((rhs[i] - g[i]).abs() < 1e-12);
    }
    // Not positive definite: LDLᵀ refuses.
    let mut m = vec![0.0, 1.0, 1.0, 0.0];
    let mut rhs = vec![1.0, 1.0];
    assert!(!ldlt_solve_in_place(&mut m, &mut rhs, 2));
}
