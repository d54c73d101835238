use super::sample::{equal_on_samples_tol, sample_points};
use super::special::{self, ChiTilde};
use super::*;
use crate::scalar::cre;
use proptest::prelude::*;
use std::sync::Arc;

type E = SymExpr<f64>;

fn chart2() -> ChartSpec {
    ChartSpec::canonical(2)
}

fn chart1() -> ChartSpec {
    ChartSpec {
        base: vec!["x".into()],
        fiber: vec!["xi".into()],
        positive: vec![],
    }
}

fn box1() -> SampleBox<f64> {
    SampleBox::new(&[("x", -1.0, 1.0), ("xi", 0.5, 2.0)])
}

fn assert_same(a: &E, b: &E, bounds: &SampleBox<f64>, tol: f64) {
    let rep = equal_on_samples_tol(a, b, bounds, 100, 42, tol).unwrap();
    assert!(
        rep.equal,
        "expressions differ: {a} vs {b}, residual {} at {}",
        rep.max_residual, rep.worst_point
    );
}

#[test]
fn parse_product() {
    let e: E = parse("x*xi", &chart1()).unwrap();
    let direct = &E::var("x") * &E::var("xi");
    assert_same(&e, &direct, &box1(), 1e-12);
}

#[test]
fn parse_mixed_tree() {
    let chart = chart2();
    let e: E = parse("x2*xi2 + x1*xi1^2/xi2", &chart).unwrap();
    let manual = &(&E::var("x2") * &E::var("xi2"))
        + &E::div(
            &(&E::var("x1") * &E::powi(&E::var("xi1"), 2)),
            &E::var("xi2"),
        );
    let bounds = SampleBox::new(&[
        ("x1", -1.0, 1.0),
        ("x2", -1.0, 1.0),
        ("xi1", 0.5, 2.0),
        ("xi2", 0.5, 2.0),
    ]);
    assert_same(&e, &manual, &bounds, 1e-12);
}

#[test]
fn parse_error_has_position() {
    let err = parse::<f64>("x*(", &chart1()).unwrap_err();
    match err {
        ExprError::Syntax { offset, .. } => assert_eq!(offset, 3),
        other => panic!("expected syntax error, got {other}"),
    }
}

#[test]
fn parse_unknown_identifier() {
    let err = parse::<f64>("x*q", &chart1()).unwrap_err();
    match err {
        ExprError::UnknownIdentifier { name, offset } => {
            assert_eq!(name, "q");
            assert_eq!(offset, 2);
        }
        other => panic!("expected unknown identifier, got {other}"),
    }
}

#[test]
fn parse_imaginary_unit() {
    let e: E = parse("2*i + 1", &chart1()).unwrap();
    let v = e.eval(&[]).unwrap();
    assert_eq!(v, CNum::new(1.0, 2.0));
}

#[test]
fn print_parse_round_trip_is_stable() {
    let chart = chart2();
    let cases = [
        "x1*xi1",
        "x2*xi2 + x1*xi1^2/xi2",
        "(x1 + xi1)^2",
        "-x1 + 2/xi2^3",
        "exp(x1)*sin(xi1) - cos(x2)/xi2",
    ];
    for text in cases {
        let once: E = parse(text, &chart).unwrap();
        let printed = once.to_string();
        let twice: E = parse(&printed, &chart).unwrap();
        assert_eq!(printed, twice.to_string(), "unstable print for `{text}`");
    }
}

#[test]
fn derivative_of_product() {
    let e: E = parse("x*xi", &chart1()).unwrap();
    assert_same(&differentiate(&e, "x"), &E::var("xi"), &box1(), 1e-12);
}

#[test]
fn derivative_of_square() {
    let e: E = parse("xi^2", &chart1()).unwrap();
    let expect = &E::int(2) * &E::var("xi");
    assert_same(&differentiate(&e, "xi"), &expect, &box1(), 1e-12);
}

#[test]
fn cutoff_derivative_matches_rational_multiple_on_tail() {
    // On the tail segment the profile is exactly exp(-1/(T-t)), so its
    // derivative is r(t) * chi(t) with r(t) = -1/(T-t)^2.
    let profile = ChiTilde::new(0.2f64, 0.6, 1.0);
    let chi = E::apply1(Arc::new(profile), E::var("t"));
    let dchi = differentiate(&chi, "t");
    for &t in &[0.7f64, 0.8, 0.9, 0.95] {
        let env = [("t", cre(t))];
        let r = -1.0 / (1.0 - t).powi(2);
        let lhs = dchi.eval(&env).unwrap().re;
        let rhs = r * chi.eval(&env).unwrap().re;
        assert!(
            (lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()),
            "t={t}: {lhs} vs {rhs}"
        );
    }
}

#[test]
fn hamilton_field_of_radial_model() {
    let chart = chart1();
    let p: E = parse("x*xi", &chart).unwrap();
    let field = hamilton_field(&p, &chart).unwrap();
    assert_same(field.coeff("x").unwrap(), &E::var("x"), &box1(), 1e-12);
    assert_same(
        field.coeff("xi").unwrap(),
        &E::neg(&E::var("xi")),
        &box1(),
        1e-12,
    );
}

#[test]
fn hamilton_field_of_free_symbol() {
    let chart = chart1();
    let p: E = parse("xi^2", &chart).unwrap();
    let field = hamilton_field(&p, &chart).unwrap();
    let expect = &E::int(2) * &E::var("xi");
    assert_same(field.coeff("x").unwrap(), &expect, &box1(), 1e-12);
    assert_same(field.coeff("xi").unwrap(), &E::zero(), &box1(), 1e-12);
}

#[test]
fn hamilton_field_two_dims() {
    let chart = chart2();
    let p: E = parse("x2*xi2", &chart).unwrap();
    let field = hamilton_field(&p, &chart).unwrap();
    let bounds = SampleBox::new(&[
        ("x1", -1.0, 1.0),
        ("x2", -1.0, 1.0),
        ("xi1", 0.5, 2.0),
        ("xi2", 0.5, 2.0),
    ]);
    assert_same(field.coeff("x2").unwrap(), &E::var("x2"), &bounds, 1e-12);
    assert_same(
        field.coeff("xi2").unwrap(),
        &E::neg(&E::var("xi2")),
        &bounds,
        1e-12,
    );
    assert_same(field.coeff("x1").unwrap(), &E::zero(), &bounds, 1e-12);
    assert_same(field.coeff("xi1").unwrap(), &E::zero(), &bounds, 1e-12);
}

#[test]
fn hamilton_requires_canonical_chart() {
    let chart = ChartSpec {
        base: vec!["x".into()],
        fiber: vec![],
        positive: vec![],
    };
    assert!(matches!(
        hamilton_field(&E::var("x"), &chart),
        Err(ExprError::NonCanonicalChart)
    ));
}

#[test]
fn poisson_bracket_canonical_pair() {
    let chart = chart1();
    let b = poisson_bracket(&E::var("xi"), &E::var("x"), &chart).unwrap();
    assert_same(&b, &E::one(), &box1(), 1e-12);
}

#[test]
fn poisson_bracket_self_vanishes() {
    let chart = chart1();
    let p: E = parse("x^2*xi + xi^3/x", &chart).unwrap();
    let b = poisson_bracket(&p, &p, &chart).unwrap();
    let bounds = SampleBox::new(&[("x", 0.5, 1.5), ("xi", 0.5, 2.0)]);
    assert_same(&b, &E::zero(), &bounds, 1e-12);
}

#[test]
fn poisson_bracket_model_pair() {
    let chart = chart1();
    let b = poisson_bracket(
        &(&E::var("x") * &E::var("xi")),
        &E::var("x"),
        &chart,
    )
    .unwrap();
    assert_same(&b, &E::var("x"), &box1(), 1e-12);
}

#[test]
fn homogeneity_of_model_symbols() {
    let chart = chart2();
    let deg = |text: &str| {
        let e: E = parse(text, &chart).unwrap();
        homogeneity_degree(&e, &chart)
    };
    assert!((deg("x1*xi1").unwrap() - 1.0).abs() < 1e-6);
    assert!((deg("xi1^2/xi2").unwrap() - 1.0).abs() < 1e-6);
    assert!(deg("x1 + xi1").is_none());
}

#[test]
fn equality_detects_expansion() {
    let chart = chart1();
    let a: E = parse("(x + xi)^2", &chart).unwrap();
    let b: E = parse("x^2 + 2*x*xi + xi^2", &chart).unwrap();
    let rep = equal_on_samples(&a, &b, &box1(), 100, 7).unwrap();
    assert!(rep.equal && rep.max_residual < 1e-12, "{}", rep.max_residual);
}

#[test]
fn equality_detects_small_perturbation() {
    let chart = chart1();
    let a: E = parse("x*xi", &chart).unwrap();
    let b: E = parse("x*xi + 0.000001*xi", &chart).unwrap();
    let bounds = SampleBox::new(&[("x", -1.0, 1.0), ("xi", 1.0, 2.0)]);
    let rep = equal_on_samples(&a, &b, &bounds, 100, 7).unwrap();
    assert!(!rep.equal);
    assert!(
        rep.max_residual > 2e-7 && rep.max_residual < 5e-6,
        "residual {}",
        rep.max_residual
    );
}

#[test]
fn eval_reports_unbound_variable() {
    let e: E = E::var("zeta");
    assert!(matches!(
        e.eval(&[("x", cre(1.0))]),
        Err(ExprError::UnboundVariable(_))
    ));
}

#[test]
fn eval_real_rejects_complex_values() {
    let e: E = &E::imaginary() * &E::var("x");
    assert!(e.eval_real(&[("x", cre(2.0))]).is_err());
}

#[test]
fn hamilton_kills_its_own_symbol() {
    let chart = chart2();
    let bounds = SampleBox::new(&[
        ("x1", -1.0, 1.0),
        ("x2", -1.0, 1.0),
        ("xi1", 0.5, 2.0),
        ("xi2", 0.5, 2.0),
    ]);
    for text in ["x1*xi1 + x2*xi2", "xi1^2 + x1*x2*xi2", "x2^3*xi1"] {
        let p: E = parse(text, &chart).unwrap();
        let field = hamilton_field(&p, &chart).unwrap();
        assert_same(&field.apply(&p), &E::zero(), &bounds, 1e-11);
    }
}

#[test]
fn fiber_derivative_of_scale_is_one_degree_up() {
    // For p homogeneous of degree m, H_p applied to a degree-1 fiber scale
    // stays homogeneous of degree m.
    let chart = chart2();
    let p: E = parse("x2*xi2^2 + xi1^2*x1", &chart).unwrap(); // degree 2
    let field = hamilton_field(&p, &chart).unwrap();
    let zeta = E::var("xi2");
    let deg = homogeneity_degree(&field.apply(&zeta), &chart).unwrap();
    assert!((deg - 2.0).abs() < 1e-6, "degree {deg}");
}

#[test]
fn smoothstep_profile_shape() {
    let psi = |u: f64| {
        special::smoothstep(&E::var("u"))
            .eval(&[("u", cre(u))])
            .unwrap()
            .re
    };
    assert_eq!(psi(-0.5), 0.0);
    assert_eq!(psi(1.5), 1.0);
    assert!((psi(0.5) - 0.5).abs() < 1e-12); // symmetric transition
    for w in [0.1, 0.3, 0.7] {
        assert!(psi(w) < psi(w + 0.2));
    }
}

#[test]
fn cutoff_profile_shape() {
    let chi = ChiTilde::new(0.25f64, 0.5, 1.0);
    let e = E::apply1(Arc::new(chi), E::var("t"));
    let f = |t: f64| e.eval(&[("t", cre(t))]).unwrap().re;
    assert_eq!(f(0.0), 1.0);
    assert_eq!(f(0.25), 1.0);
    assert_eq!(f(1.0), 0.0);
    assert_eq!(f(2.0), 0.0);
    assert!((f(0.75) - (-1.0f64 / 0.25).exp()).abs() < 1e-15);
    let mut prev = 1.0;
    let mut t = 0.0;
    while t < 1.2 {
        let v = f(t);
        assert!(v <= prev + 1e-12, "profile must not increase, t={t}");
        assert!((0.0..=1.0).contains(&v));
        prev = v;
        t += 0.01;
    }
}

fn central_diff(e: &E, var: &str, names: &[&str], point: &[f64], h: f64) -> f64 {
    let eval_at = |shift: f64| {
        let env: Vec<(&str, CNum<f64>)> = names
            .iter()
            .zip(point)
            .map(|(n, v)| {
                let x = if *n == var { *v + shift } else { *v };
                (*n, cre(x))
            })
            .collect();
        e.eval(&env).unwrap().re
    };
    (eval_at(h) - eval_at(-h)) / (2.0 * h)
}

#[test]
fn derivative_matches_central_differences() {
    let chart = chart2();
    let bounds = SampleBox::new(&[
        ("x1", -1.0, 1.0),
        ("x2", -1.0, 1.0),
        ("xi1", 0.5, 2.0),
        ("xi2", 0.5, 2.0),
    ]);
    let names = ["x1", "x2", "xi1", "xi2"];
    let exprs: Vec<E> = [
        "x1^2*xi2 + x2*xi1",
        "exp(x1)*xi2^2",
        "sin(x2)*cos(xi1) + x1/xi2",
        "(x1 + xi1)^3/xi2",
    ]
    .iter()
    .map(|t| parse(t, &chart).unwrap())
    .collect();
    let h = 1e-4;
    let points = sample_points(&bounds, 100, 99);
    for e in &exprs {
        for var in names {
            let d = differentiate(e, var);
            for p in &points {
                let env: Vec<(&str, CNum<f64>)> =
                    names.iter().zip(p).map(|(n, v)| (*n, cre(*v))).collect();
                let exact = d.eval(&env).unwrap().re;
                let approx = central_diff(e, var, &names, p, h);
                let tol = 1e3 * h * h * (1.0 + exact.abs());
                assert!(
                    (exact - approx).abs() <= tol,
                    "d/d{var} {e}: {exact} vs {approx}"
                );
            }
        }
    }
}

fn poly_strategy() -> impl Strategy<Value = E> {
    // Random small polynomials over the canonical 2-d chart.
    let names = ["x1", "x2", "xi1", "xi2"];
    let monomial = (prop::sample::select(vec![0usize, 1, 2, 3]), -3i64..=3i64).prop_map(
        move |(var_idx, coeff)| {
            let v = E::var(names[var_idx]);
            &E::int(coeff) * &v
        },
    );
    let quadratic = (
        prop::sample::select(vec![0usize, 1, 2, 3]),
        prop::sample::select(vec![0usize, 1, 2, 3]),
        -2i64..=2i64,
    )
        .prop_map(move |(a, b, coeff)| {
            E::product([E::int(coeff), E::var(names[a]), E::var(names[b])])
        });
    prop::collection::vec(prop_oneof![monomial, quadratic], 1..5)
        .prop_map(E::sum)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn poisson_is_antisymmetric(a in poly_strategy(), b in poly_strategy()) {
        let chart = chart2();
        let bounds = SampleBox::new(&[
            ("x1", -1.0, 1.0),
            ("x2", -1.0, 1.0),
            ("xi1", 0.5, 2.0),
            ("xi2", 0.5, 2.0),
        ]);
        let ab = poisson_bracket(&a, &b, &chart).unwrap();
        let ba = poisson_bracket(&b, &a, &chart).unwrap();
        let rep = equal_on_samples(&ab, &E::neg(&ba), &bounds, 40, 5).unwrap();
        prop_assert!(rep.equal, "residual {}", rep.max_residual);
    }

    #[test]
    fn poisson_satisfies_jacobi(
        a in poly_strategy(),
        b in poly_strategy(),
        c in poly_strategy(),
    ) {
        let chart = chart2();
        let bounds = SampleBox::new(&[
            ("x1", -1.0, 1.0),
            ("x2", -1.0, 1.0),
            ("xi1", 0.5, 2.0),
            ("xi2", 0.5, 2.0),
        ]);
        let pb = |u: &E, v: &E| poisson_bracket(u, v, &chart).unwrap();
        let cyc = E::sum([
            pb(&a, &pb(&b, &c)),
            pb(&b, &pb(&c, &a)),
            pb(&c, &pb(&a, &b)),
        ]);
        let rep = equal_on_samples(&cyc, &E::zero(), &bounds, 40, 11).unwrap();
        prop_assert!(rep.max_residual < 1e-9, "residual {}", rep.max_residual);
    }

    #[test]
    fn print_parse_round_trip(e in poly_strategy()) {
        let chart = chart2();
        let printed = e.to_string();
        let reparsed: E = parse(&printed, &chart).unwrap();
        prop_assert_eq!(printed, reparsed.to_string());
    }
}

#[test]
fn works_in_single_precision() {
    let chart = chart1();
    let p: SymExpr<f32> = parse("x*xi", &chart).unwrap();
    let field = hamilton_field(&p, &chart).unwrap();
    let v = field
        .coeff("x")
        .unwrap()
        .eval(&[("x", CNum::new(0.5f32, 0.0)), ("xi", CNum::new(1.0, 0.0))])
        .unwrap();
    assert!((v.re - 0.5).abs() < 1e-6);
}
