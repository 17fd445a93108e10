use super::*;
use proptest::prelude::*;
use std::collections::HashMap;

fn syms(names: &[&str]) -> Symbols {
    Symbols::new(names.iter().copied())
}

fn p(src: &str, names: &[&str]) -> Expr<f64> {
    parse(src, &syms(names)).unwrap()
}

fn env_of(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Central finite difference used as the independent oracle for `diff`.
fn central_fd(expr: &Expr<f64>, env: &[f64], slot: usize) -> f64 {
    let h = 1e-6 * env[slot].abs().max(1.0);
    let mut hi = env.to_vec();
    let mut lo = env.to_vec();
    hi[slot] += h;
    lo[slot] -= h;
    (expr.eval_slots(&hi).unwrap() - expr.eval_slots(&lo).unwrap()) / (2.0 * h)
}

#[test]
fn variable_parses_to_var_node() {
    let e = p("x2", &["x1", "x2"]);
    assert!(matches!(e.kind, ExprKind::Var { ref name, slot: 1 } if name.as_ref() == "x2"));
}

#[test]
fn cost_integrand_tree_shape() {
    // u1^2 + (e1 + e2)*f1
    let e = p("u1^2 + (e1 + e2)*f1", &["u1", "e1", "e2", "f1"]);
    match &e.kind {
        ExprKind::Bin(BinOp::Add, l, r) => {
            assert!(matches!(l.kind, ExprKind::Bin(BinOp::Pow, ..)));
            match &r.kind {
                ExprKind::Bin(BinOp::Mul, sum, f1) => {
                    assert!(matches!(sum.kind, ExprKind::Bin(BinOp::Add, ..)));
                    assert!(matches!(f1.kind, ExprKind::Var { .. }));
                }
                other => panic!("expected product, got {other:?}"),
            }
        }
        other => panic!("expected sum, got {other:?}"),
    }
}

#[test]
fn truncated_input_reports_offset_six() {
    let err = parse::<f64>("2*q1 -", &syms(&["q1"])).unwrap_err();
    assert_eq!(err.offset, 6);
}

#[test]
fn unknown_symbol_is_rejected() {
    let err = parse::<f64>("q3 + 1", &syms(&["q1", "q2"])).unwrap_err();
    assert_eq!(err.kind, ParseErrorKind::UnknownSymbol("q3".into()));
}

#[test]
fn unknown_function_and_arity() {
    let err = parse::<f64>("tan(q1)", &syms(&["q1"])).unwrap_err();
    assert!(matches!(err.kind, ParseErrorKind::UnknownFunction(_)));
    let err = parse::<f64>("min(q1)", &syms(&["q1"])).unwrap_err();
    assert!(matches!(err.kind, ParseErrorKind::ArityMismatch { .. }));
}

#[test]
fn eval_basics() {
    assert_eq!(
        p("x2", &["x1", "x2"])
            .eval(&env_of(&[("x2", 3.0)]))
            .unwrap(),
        3.0
    );
    assert_eq!(
        p("u1^2", &["u1"]).eval(&env_of(&[("u1", 2.0)])).unwrap(),
        4.0
    );
    // 1 + (2 + 3)*0.5 = 3.5, by hand
    let e = p("u1^2 + (e1+e2)*f1", &["u1", "e1", "e2", "f1"]);
    let v = e
        .eval(&env_of(&[
            ("u1", 1.0),
            ("e1", 2.0),
            ("e2", 3.0),
            ("f1", 0.5),
        ]))
        .unwrap();
    assert_eq!(v, 3.5);
}

#[test]
fn eval_unbound_variable_errors() {
    let e = p("x1 + x2", &["x1", "x2"]);
    let err = e.eval(&env_of(&[("x1", 1.0)])).unwrap_err();
    assert!(matches!(err, EvalError::UnboundVar { .. }));
}

#[test]
fn domain_errors_are_reported_not_nan() {
    let table = syms(&["x"]);
    let cases = [
        ("log(x)", -1.0),
        ("sqrt(x)", -4.0),
        ("1/(x - 1)", 1.0),
        ("x^0.5", -2.0),
        ("x^-1", 0.0),
    ];
    for (src, x) in cases {
        let e: Expr<f64> = parse(src, &table).unwrap();
        assert!(
            e.eval_slots(&[x]).is_err(),
            "{src} at {x} should be a domain error"
        );
        assert!(e.compile().eval(&[x]).is_err(), "{src} compiled at {x}");
    }
}

#[test]
fn precedence_and_associativity() {
    let table = syms(&["x"]);
    let e: Expr<f64> = parse("-x^2", &table).unwrap();
    assert_eq!(e.eval_slots(&[3.0]).unwrap(), -9.0);
    let e: Expr<f64> = parse("2^-2", &table).unwrap();
    assert_eq!(e.eval_slots(&[0.0]).unwrap(), 0.25);
    let e: Expr<f64> = parse("1 - 2 - 3", &table).unwrap();
    assert_eq!(e.eval_slots(&[0.0]).unwrap(), -4.0);
    let e: Expr<f64> = parse("6/2/3", &table).unwrap();
    assert_eq!(e.eval_slots(&[0.0]).unwrap(), 1.0);
    let e: Expr<f64> = parse("1 + 2*x", &table).unwrap();
    assert_eq!(e.eval_slots(&[10.0]).unwrap(), 21.0);
}

#[test]
fn exponent_must_be_constant() {
    let err = parse::<f64>("x^y", &syms(&["x", "y"])).unwrap_err();
    assert_eq!(err.kind, ParseErrorKind::NonConstantExponent);
    let err = parse::<f64>("x^(1+1)", &syms(&["x"])).unwrap_err();
    assert_eq!(err.kind, ParseErrorKind::NonConstantExponent);
    // Negated and parenthesized literals are fine.
    assert!(parse::<f64>("x^-2", &syms(&["x"])).is_ok());
    assert!(parse::<f64>("x^(3)", &syms(&["x"])).is_ok());
}

#[test]
fn diff_of_other_variable_is_zero() {
    let e = p("x2", &["x1", "x2"]);
    let d = e.diff("x1");
    assert_eq!(d, Expr::constant(0.0));
}

#[test]
fn diff_power_rule() {
    let e = p("u1^2", &["u1"]);
    let d = e.diff("u1");
    assert_eq!(d.eval_slots(&[3.0]).unwrap(), 6.0);
}

#[test]
fn diff_product_matches_fd() {
    let e = p("sin(q1)*q2", &["q1", "q2"]);
    let d = e.diff("q1");
    let env = [0.0, 2.0];
    let fd = central_fd(&e, &env, 0);
    let sym = d.eval_slots(&env).unwrap();
    assert!((sym - 2.0).abs() < 1e-12);
    assert!((sym - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
}

#[test]
fn diff_chain_quotient_fractional_pow() {
    let table = syms(&["x"]);
    let cases = [
        "exp(2*x)",
        "log(x + 3)",
        "sqrt(x + 2.5)",
        "(x + 2)^0.5",
        "x/(x^2 + 1)",
        "cos(x^3)",
    ];
    for src in cases {
        let e: Expr<f64> = parse(src, &table).unwrap();
        let d = e.diff("x");
        for x in [-1.3, -0.4, 0.2, 0.9, 1.7] {
            let env = [x];
            let fd = central_fd(&e, &env, 0);
            let sym = d.eval_slots(&env).unwrap();
            assert!(
                (sym - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                "{src} at {x}: sym={sym} fd={fd}"
            );
        }
    }
}

#[test]
fn abs_min_max_one_sided_conventions() {
    let table = syms(&["x", "y"]);
    // d/dx abs(x) at 0 is 0 by convention.
    let e: Expr<f64> = parse("abs(x)", &table).unwrap();
    let (d, warnings) = e.diff_with_warnings("x");
    assert_eq!(d.eval_slots(&[0.0, 0.0]).unwrap(), 0.0);
    assert_eq!(d.eval_slots(&[2.0, 0.0]).unwrap(), 1.0);
    assert_eq!(d.eval_slots(&[-2.0, 0.0]).unwrap(), -1.0);
    assert_eq!(warnings.len(), 1);
    assert_eq!(warnings[0].func, Func::Abs);

    // min/max pick the first argument on ties.
    let e: Expr<f64> = parse("min(2*x, y)", &table).unwrap();
    let (d, warnings) = e.diff_with_warnings("x");
    assert!(!warnings.is_empty());
    assert_eq!(d.eval_slots(&[1.0, 2.0]).unwrap(), 2.0); // 2x = y = 2: first arg
    assert_eq!(d.eval_slots(&[1.0, 5.0]).unwrap(), 2.0); // 2x < y
    assert_eq!(d.eval_slots(&[1.0, 1.0]).unwrap(), 0.0); // 2x > y

    let e: Expr<f64> = parse("max(2*x, y)", &table).unwrap();
    let d = e.diff("x");
    assert_eq!(d.eval_slots(&[1.0, 2.0]).unwrap(), 2.0); // tie: first arg
    assert_eq!(d.eval_slots(&[1.0, 5.0]).unwrap(), 0.0);
}

#[test]
fn substitute_replaces_all_occurrences() {
    let table = syms(&["x", "y"]);
    let e: Expr<f64> = parse("x^2 + x*y", &table).unwrap();
    let r: Expr<f64> = parse("y + 1", &table).unwrap();
    let s = e.substitute("x", &r);
    // (y+1)^2 + (y+1)*y at y=2: 9 + 6 = 15
    assert_eq!(s.eval_slots(&[0.0, 2.0]).unwrap(), 15.0);
}

#[test]
fn poly_degree_analysis() {
    let table = syms(&["u1", "u2", "q1"]);
    let mask_u = [true, true, false];
    let deg = |src: &str| parse::<f64>(src, &table).unwrap().poly_degree_in(&mask_u);
    assert_eq!(deg("q1 + 3"), Some(0));
    assert_eq!(deg("u1"), Some(1));
    assert_eq!(deg("u1^2 + q1*u2"), Some(2));
    assert_eq!(deg("u1*u2*u1"), Some(3));
    assert_eq!(deg("u1/q1"), Some(1));
    assert_eq!(deg("q1/u1"), None);
    assert_eq!(deg("sin(q1)*u1^2"), Some(2));
    assert_eq!(deg("sin(u1)"), None);
    assert_eq!(deg("u1^0.5"), None);
    assert_eq!(deg("(u1 + q1)^3"), Some(3));
}

#[test]
fn compiled_matches_tree_eval() {
    let table = syms(&["x", "y"]);
    let srcs = [
        "x^2 + y^2",
        "sin(x)*cos(y) - exp(x/5)",
        "min(x, y) + max(x, -y) + abs(x - y)",
        "sqrt(abs(x) + 1)/(y^2 + 1)",
        "2^-3 + x^0.5",
    ];
    for src in srcs {
        let e: Expr<f64> = parse(src, &table).unwrap();
        let c = e.compile();
        for env in [[1.3, -0.7], [0.0, 0.0], [2.0, 3.5]] {
            assert_eq!(
                e.eval_slots(&env).unwrap(),
                c.eval(&env).unwrap(),
                "{src} {env:?}"
            );
        }
    }
}

// Strategy for structurally random trees over a two-variable table.
fn arb_expr() -> impl Strategy<Value = Expr<f64>> {
    let leaf = prop_oneof![
        (-8.0..8.0f64).prop_map(|c| Expr::constant((c * 64.0).round() / 64.0)),
        Just(Expr::var("x", 0)),
        Just(Expr::var("y", 1)),
    ];
    leaf.prop_recursive(4, 48, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr {
                kind: ExprKind::Bin(BinOp::Add, Box::new(a), Box::new(b)),
                span: NO_SPAN
            }),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr {
                kind: ExprKind::Bin(BinOp::Sub, Box::new(a), Box::new(b)),
                span: NO_SPAN
            }),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr {
                kind: ExprKind::Bin(BinOp::Mul, Box::new(a), Box::new(b)),
                span: NO_SPAN
            }),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr {
                kind: ExprKind::Bin(BinOp::Div, Box::new(a), Box::new(b)),
                span: NO_SPAN
            }),
            (inner.clone(), 0u32..4).prop_map(|(a, p)| Expr {
                kind: ExprKind::Bin(BinOp::Pow, Box::new(a), Box::new(Expr::constant(p as f64)),),
                span: NO_SPAN
            }),
            // The parser folds a negated literal into the constant, so the
            // generator must too; `Neg(Const(_))` is not parser-reachable.
            inner.clone().prop_map(|a| match a.kind {
                ExprKind::Const(c) => Expr::constant(-c),
                _ => Expr {
                    kind: ExprKind::Neg(Box::new(a)),
                    span: NO_SPAN
                },
            }),
            inner.clone().prop_map(|a| Expr {
                kind: ExprKind::Call(Func::Sin, vec![a]),
                span: NO_SPAN
            }),
            inner.clone().prop_map(|a| Expr {
                kind: ExprKind::Call(Func::Abs, vec![a]),
                span: NO_SPAN
            }),
            (inner.clone(), inner).prop_map(|(a, b)| Expr {
                kind: ExprKind::Call(Func::Min, vec![a, b]),
                span: NO_SPAN
            }),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    // parse(print(e)) is structurally equal to e.
    #[test]
    fn printer_round_trips(e in arb_expr()) {
        let text = e.to_string();
        let table = syms(&["x", "y"]);
        let reparsed: Expr<f64> = parse(&text, &table)
            .unwrap_or_else(|err| panic!("`{text}` failed to reparse: {err}"));
        prop_assert_eq!(&reparsed, &e, "canonical text: {}", text);
    }

    // Compiled evaluation agrees with the tree walk (same Ok value or both Err).
    #[test]
    fn compiled_agrees_with_tree(e in arb_expr(), x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let env = [x, y];
        let tree = e.eval_slots(&env);
        let compiled = e.compile().eval(&env);
        match (tree, compiled) {
            (Ok(a), Ok(b)) => prop_assert!(a == b || (a.is_nan() && b.is_nan())),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "tree={a:?} compiled={b:?}"),
        }
    }
}
