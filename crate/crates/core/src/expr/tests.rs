use proptest::prelude::*;

use super::*;
use crate::sample::BoxDomain;
use crate::testing::{random_assignment, random_expr, ExprGenConfig};

fn assign(pairs: &[(&str, f64)]) -> Assignment {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn p(s: &str) -> Expr {
    parse(s).unwrap()
}

#[test]
fn parse_basic_tree() {
    let e = p("sin(z) + 2*xi1");
    let expected = Expr::var("z").sin() + Expr::constant(2.0) * Expr::var("xi1");
    assert_eq!(e, expected);
}

#[test]
fn parse_cbrt_power() {
    let e = p("cbrt(xi2)^4");
    assert_eq!(e, Expr::var("xi2").cbrt().pow(4));
}

#[test]
fn parse_rejects_fractional_exponent() {
    let err = parse("x^(0.5)").unwrap_err();
    assert!(err.message.contains("non-integer exponent"), "{err}");
    assert!(parse("x^y").is_err());
    assert!(parse("x^1.5").is_err());
}

#[test]
fn parse_negative_and_chained_exponents() {
    assert_eq!(p("x^(-2)"), Expr::var("x").pow(-2));
    assert_eq!(p("x^-2"), Expr::var("x").pow(-2));
    // right-associative: x^2^3 = x^(2^3)
    assert_eq!(p("x^2^3"), Expr::var("x").pow(8));
}

#[test]
fn parse_reports_byte_offset() {
    let err = parse("1 + @").unwrap_err();
    assert_eq!(err.offset, 4);
    let err = parse("sin(x").unwrap_err();
    assert_eq!(err.offset, 5);
}

#[test]
fn parse_unknown_function() {
    let err = parse("tan(x)").unwrap_err();
    assert!(err.message.contains("unknown function"), "{err}");
}

#[test]
fn eval_real_cube_root() {
    assert_eq!(eval(&Expr::var("xi2").cbrt(), &assign(&[("xi2", -8.0)])), Ok(-2.0));
}

#[test]
fn eval_examples() {
    let e = p("sin(z)+2*xi1");
    assert_eq!(eval(&e, &assign(&[("z", 0.0), ("xi1", 3.0)])), Ok(6.0));
    // drift of the shipped demo plant, first component, by direct arithmetic
    let e = p("-z - z^3 + xi1^2");
    assert_eq!(eval(&e, &assign(&[("z", 10.0), ("xi1", 3.0)])), Ok(-1001.0));
}

#[test]
fn eval_errors() {
    assert_eq!(
        eval(&p("x"), &Assignment::new()),
        Err(EvalError::UnboundVariable("x".into()))
    );
    assert_eq!(
        eval(&p("1/x"), &assign(&[("x", 0.0)])),
        Err(EvalError::DivisionByZero)
    );
    assert_eq!(
        eval(&p("x^(-1)"), &assign(&[("x", 0.0)])),
        Err(EvalError::DivisionByZero)
    );
    assert_eq!(
        eval(&p("exp(x)"), &assign(&[("x", 1e9)])),
        Err(EvalError::NonFinite)
    );
}

#[test]
fn diff_sin() {
    assert_eq!(diff(&Expr::var("z").sin(), "z"), Expr::var("z").cos());
}

#[test]
fn diff_linear_term() {
    assert_eq!(diff(&p("xi1 + xi2^2 + xi3"), "xi3"), Expr::one());
}

#[test]
fn diff_bare_cbrt_shape() {
    // d/dx cbrt(x) = 1/(3*cbrt(x)^2)
    let d = diff(&Expr::var("x").cbrt(), "x");
    assert_eq!(d, p("1/(3*cbrt(x)^2)"));
    // undefined at 0 by design
    assert_eq!(eval(&d, &assign(&[("x", 0.0)])), Err(EvalError::DivisionByZero));
}

#[test]
fn diff_cbrt_power_is_finite_at_zero() {
    // d/dx cbrt(x)^4 = (4/3)*cbrt(x), defined everywhere
    let d = diff(&p("cbrt(xi2)^4"), "xi2");
    assert_eq!(eval(&d, &assign(&[("xi2", 0.0)])), Ok(0.0));
    for x in [-8.0, 1.0, 27.0] {
        let got = eval(&d, &assign(&[("xi2", x)])).unwrap();
        let want = 4.0 / 3.0 * x.cbrt();
        assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "{got} vs {want}");
    }
}

#[test]
fn diff_cbrt_power_matches_central_differences() {
    // frozen finite-difference oracle, h = 1e-5
    let e = p("cbrt(xi2)^4");
    let d = diff(&e, "xi2");
    let h = 1e-5;
    for x in [-8.0, 1.0, 27.0] {
        let fd = (eval(&e, &assign(&[("xi2", x + h)])).unwrap()
            - eval(&e, &assign(&[("xi2", x - h)])).unwrap())
            / (2.0 * h);
        let got = eval(&d, &assign(&[("xi2", x)])).unwrap();
        assert!(
            (got - fd).abs() <= 1e-6 * (1.0 + got.abs()),
            "x={x}: analytic {got}, central {fd}"
        );
    }
}

#[test]
fn fold_examples() {
    assert_eq!(fold(&(Expr::constant(0.0) * Expr::var("z").sin())), Expr::zero());
    assert_eq!(fold(&(Expr::constant(2.0) + Expr::constant(3.0))), Expr::constant(5.0));
    assert_eq!(fold(&diff(&p("xi2^2"), "z")), Expr::zero());
    assert_eq!(fold(&p("x^1")), Expr::var("x"));
    assert_eq!(fold(&p("x + 0")), Expr::var("x"));
    assert_eq!(fold(&p("0 - x")), -Expr::var("x"));
}

#[test]
fn fold_keeps_division_errors() {
    // 1/0 must not fold away; the domain error is part of the semantics
    let e = p("1/0");
    assert_eq!(fold(&e), e);
}

#[test]
fn cbrt_round_trip() {
    for x in [-1000.0, -1.0, -1e-9, 0.0, 1e-9, 1.0, 1000.0_f64] {
        let e = Expr::constant(x).cbrt().pow(3);
        let v = eval(&e, &Assignment::new()).unwrap();
        assert!((v - x).abs() <= 1e-12 * (1.0 + x.abs()), "cbrt({x})^3 = {v}");
    }
}

#[test]
fn is_probably_zero_examples() {
    let opts = ZeroTestOptions { samples: 50, tol: 1e-9, seed: 7 };
    let domain = BoxDomain::symmetric(1.0, 1);
    let vars = vec!["xi3".to_string()];

    let z = fold(&(Expr::constant(0.0) * Expr::var("xi3")));
    assert!(is_probably_zero(&z, &vars, &domain, &opts).probably_zero);

    let v = is_probably_zero(&p("xi3"), &vars, &domain, &opts);
    assert!(!v.probably_zero);
    assert!(v.counterexample.is_some());

    // nonzero constant is rejected structurally even below the tolerance
    let tiny = Expr::constant(1e-300);
    let v = is_probably_zero(&tiny, &[], &BoxDomain::symmetric(1.0, 0), &opts);
    assert!(!v.probably_zero);
    assert_eq!(v.structural, Some(false));
}

#[test]
fn is_probably_zero_skips_domain_errors() {
    let opts = ZeroTestOptions { samples: 20, tol: 1e-9, seed: 3 };
    let domain = BoxDomain::new(vec![0.0], vec![0.0]); // pinned at the singularity
    let v = is_probably_zero(&p("1/x"), &["x".to_string()], &domain, &opts);
    assert_eq!(v.skipped, 20);
    assert!(!v.probably_zero, "all-skipped must not certify zero");
}

#[test]
fn substitute_is_simultaneous() {
    let e = p("x + y");
    let out = e.substitute(&[
        ("x".to_string(), Expr::var("y")),
        ("y".to_string(), Expr::var("x")),
    ]);
    assert_eq!(out, p("y + x"));
}

#[test]
fn compiled_matches_tree_eval() {
    let e = p("sin(x)*cbrt(y - 2)^4 + x/(y + 3) - exp(x*y)");
    let layout = SlotLayout::new(["x".to_string(), "y".to_string()]);
    let c = CompiledExpr::compile(&e, &layout).unwrap();
    for (x, y) in [(0.3, -1.7), (2.0, 5.0), (-4.0, 0.25)] {
        let tree = eval(&e, &assign(&[("x", x), ("y", y)])).unwrap();
        let fast = c.eval(&[x, y]).unwrap();
        assert_eq!(tree, fast);
    }
    assert_eq!(
        c.eval(&[1.0, -3.0]),
        Err(EvalError::DivisionByZero)
    );
}

// --- frozen seeded corpus: fold equivalence and derivative oracle ---------

#[test]
fn fold_is_evaluation_equivalent_on_corpus() {
    let mut rng = crate::sample::seeded_rng(0x0f01d);
    let vars = ["x".to_string(), "y".to_string(), "z".to_string()];
    let cfg = ExprGenConfig::default();
    for _ in 0..200 {
        let e = random_expr(&mut rng, &vars, 6, &cfg);
        let folded = fold(&e);
        for _ in 0..20 {
            let a = random_assignment(&mut rng, &vars, 2.0);
            match (eval(&e, &a), eval(&folded, &a)) {
                (Ok(v1), Ok(v2)) => assert_eq!(v1, v2, "expr {e} folded {folded}"),
                (Err(_), Err(_)) => {}
                // `0*x -> 0` may erase a domain error from x; nothing else may
                (Err(_), Ok(v2)) => assert_eq!(v2, 0.0, "fold lost an error: {e}"),
                (Ok(v1), Err(e2)) => panic!("fold introduced error {e2:?} on {e} (value {v1})"),
            }
        }
    }
}

#[test]
fn diff_matches_central_differences_on_corpus() {
    let mut rng = crate::sample::seeded_rng(0xd1ff);
    let vars = ["x".to_string(), "y".to_string()];
    let cfg = ExprGenConfig::default();
    let h = 1e-5;
    let mut checked = 0usize;
    for _ in 0..200 {
        let e = random_expr(&mut rng, &vars, 6, &cfg);
        let d = diff(&e, "x");
        for _ in 0..20 {
            let a = random_assignment(&mut rng, &vars, 2.0);
            let x0 = a["x"];
            let eval_at = |x: f64| {
                let mut b = a.clone();
                b.insert("x".to_string(), x);
                eval(&e, &b)
            };
            // smoothness/boundedness guards: the derivative bound comparison
            // only makes sense away from poles, kinks and overflow
            let (Ok(vm), Ok(v0), Ok(vp)) = (eval_at(x0 - h), eval_at(x0), eval_at(x0 + h)) else {
                continue;
            };
            let Ok(dv) = eval(&d, &a) else { continue };
            if [vm, v0, vp, dv].iter().any(|v| v.abs() > 1e6) {
                continue;
            }
            // second difference large relative to h => too curved for the
            // O(h^2) central estimate to be trustworthy at 1e-6
            let curb = (vp - 2.0 * v0 + vm).abs() / (h * h);
            if curb > 1e4 {
                continue;
            }
            let fd = (vp - vm) / (2.0 * h);
            assert!(
                (dv - fd).abs() <= 1e-6 * (1.0 + dv.abs()),
                "expr {e}\n d/dx {d}\n at {a:?}: analytic {dv}, central {fd}"
            );
            checked += 1;
        }
    }
    assert!(checked > 1500, "guards rejected too many points: {checked}");
}

// --- property tests -------------------------------------------------------

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-10.0..10.0f64).prop_map(Expr::constant),
        prop_oneof![Just("x"), Just("y"), Just("z")].prop_map(Expr::var),
    ];
    leaf.prop_recursive(4, 64, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a / b),
            inner.clone().prop_map(|a| -a),
            (inner.clone(), -4..=4i32).prop_map(|(a, k)| a.pow(k)),
            inner.clone().prop_map(Expr::sin),
            inner.clone().prop_map(Expr::cos),
            inner.clone().prop_map(Expr::exp),
            inner.clone().prop_map(Expr::cbrt),
        ]
    })
}

proptest! {
    // parse . print is a fixed point up to evaluation equivalence
    #[test]
    fn print_parse_round_trip(e in arb_expr(), xs in proptest::collection::vec(-3.0..3.0f64, 3)) {
        let printed = e.to_string();
        let reparsed = parse(&printed).unwrap_or_else(|err| panic!("reprint of {e:?} as `{printed}` failed: {err}"));
        let a: Assignment = ["x", "y", "z"]
            .iter()
            .zip(&xs)
            .map(|(n, v)| (n.to_string(), *v))
            .collect();
        match (eval(&e, &a), eval(&reparsed, &a)) {
            (Ok(v1), Ok(v2)) => prop_assert_eq!(v1, v2),
            (Err(_), Err(_)) => {}
            (r1, r2) => prop_assert!(false, "mismatch: {:?} vs {:?} for `{}`", r1, r2, printed),
        }
    }

    #[test]
    fn fold_preserves_value(e in arb_expr(), xs in proptest::collection::vec(-3.0..3.0f64, 3)) {
        let folded = fold(&e);
        let a: Assignment = ["x", "y", "z"]
            .iter()
            .zip(&xs)
            .map(|(n, v)| (n.to_string(), *v))
            .collect();
        match (eval(&e, &a), eval(&folded, &a)) {
            (Ok(v1), Ok(v2)) => prop_assert_eq!(v1, v2),
            (Err(_), Err(_)) => {}
            (Err(_), Ok(v2)) => prop_assert_eq!(v2, 0.0),
            (Ok(_), Err(err)) => prop_assert!(false, "fold introduced {:?}", err),
        }
    }
}
