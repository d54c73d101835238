use super::*;
use crate::expr::parse;
use crate::geometry::{build_normal_coordinates, LagrangianSpec};

type E = SymExpr<f64>;

fn chart1d() -> ChartSpec {
    ChartSpec {
        base: vec!["x".into()],
        fiber: vec!["xi".into()],
        positive: vec![],
    }
}

fn model_chart_2d(text: &str) -> RadialChart<f64> {
    let chart = ChartSpec::canonical(2);
    let p: E = parse(text, &chart).unwrap();
    build_normal_coordinates(&p, &LagrangianSpec::new(chart)).unwrap()
}

#[test]
fn hamilton_flow_of_radial_model() {
    let chart = chart1d();
    let p: E = parse("x*xi", &chart).unwrap();
    let traj = integrate_hamilton(&p, &chart, &[1.0, 1.0], 5.0, &FlowConfig::default()).unwrap();
    assert_eq!(traj.termination, Termination::Completed);
    let end = traj.last_state();
    let t = *traj.times.last().unwrap();
    assert!((end[0] - t.exp()).abs() < 1e-6 * t.exp());
    assert!((end[1] - (-t).exp()).abs() < 1e-8);
    let drift = traj.max_log("symbol-drift").unwrap();
    assert!(drift < 1e-8, "drift {drift}");
}

#[test]
fn hamilton_flow_of_free_symbol() {
    let chart = chart1d();
    let p: E = parse("xi^2", &chart).unwrap();
    let traj = integrate_hamilton(&p, &chart, &[0.0, 1.0], 3.0, &FlowConfig::default()).unwrap();
    let end = traj.last_state();
    assert!((end[0] - 6.0).abs() < 1e-9);
    assert!((end[1] - 1.0).abs() < 1e-12);
}

#[test]
fn hamilton_flow_reports_blowup_with_exit_time() {
    let chart = chart1d();
    let p: E = parse("x*xi", &chart).unwrap();
    let cfg = FlowConfig {
        max_time: 1e3,
        ..FlowConfig::default()
    };
    let traj = integrate_hamilton(&p, &chart, &[1.0, 1.0], 1e3, &cfg).unwrap();
    match traj.termination {
        Termination::BlowUp { time } => {
            // x = e^t crosses 1e6 near t = 13.8.
            assert!((time - 13.8).abs() < 0.5, "exit time {time}");
        }
        other => panic!("expected blow-up, got {other:?}"),
    }
}

#[test]
fn energy_is_conserved_along_hamilton_flows() {
    let chart = chart1d();
    for text in ["x*xi + xi^3", "x^2*xi", "xi^2 + x*xi"] {
        let p: E = parse(text, &chart).unwrap();
        let traj =
            integrate_hamilton(&p, &chart, &[0.5, 0.8], 2.0, &FlowConfig::default()).unwrap();
        let p0 = {
            let env = [("x", cre(0.5)), ("xi", cre(0.8))];
            p.eval(&env).unwrap().re
        };
        let drift = traj.max_log("symbol-drift").unwrap();
        assert!(
            drift < 1e-8 * (1.0 + p0.abs()),
            "{text}: drift {drift}"
        );
    }
}

#[test]
fn fiber_dilation_rescales_flows_homogeneously() {
    // Dilating the start fiber by c dilates the fiber path by c and
    // reparameterizes time by c^{m-1}.
    let chart = chart1d();
    let p1: E = parse("x*xi", &chart).unwrap(); // m = 1: same time scale
    let base = integrate_hamilton(&p1, &chart, &[1.0, 1.0], 2.0, &FlowConfig::default()).unwrap();
    for c in [2.0, 10.0] {
        let scaled =
            integrate_hamilton(&p1, &chart, &[1.0, c], 2.0, &FlowConfig::default()).unwrap();
        for frac in [0.25, 0.5, 0.75, 1.0] {
            let t = 2.0 * frac;
            let a = base.sample_at(t);
            let b = scaled.sample_at(t);
            assert!((b[0] - a[0]).abs() < 1e-6);
            assert!((b[1] - c * a[1]).abs() < 1e-6 * c);
        }
    }
    let p2: E = parse("xi^2", &chart).unwrap(); // m = 2: time rescales by c
    let base = integrate_hamilton(&p2, &chart, &[0.0, 1.0], 2.0, &FlowConfig::default()).unwrap();
    for c in [2.0, 10.0] {
        let scaled = integrate_hamilton(
            &p2,
            &chart,
            &[0.0, c],
            2.0 / c,
            &FlowConfig::default(),
        )
        .unwrap();
        for frac in [0.3, 0.6, 1.0] {
            let t = 2.0 * frac;
            let a = base.sample_at(t);
            let b = scaled.sample_at(t / c);
            assert!((b[0] - a[0]).abs() < 1e-6, "x: {} vs {}", b[0], a[0]);
            assert!((b[1] - c * a[1]).abs() < 1e-6 * c);
        }
    }
}

#[test]
fn rescaled_flow_of_linear_model() {
    // p = z zeta: alpha and x grow like e^t, beta is frozen.
    let rc = model_chart_2d("x2*xi2");
    let start = [0.1, 0.3, 0.05];
    let traj = integrate_rescaled(&rc, &start, 1.0, &FlowConfig::default()).unwrap();
    let end = traj.last_state();
    let e1 = 1.0f64.exp();
    assert!((end[0] - 0.1 * e1).abs() < 1e-7, "alpha {}", end[0]);
    assert!((end[1] - 0.3).abs() < 1e-9, "beta {}", end[1]);
    assert!((end[2] - 0.05 * e1).abs() < 1e-7, "x {}", end[2]);
    let resid = traj.max_log("rescale-residual").unwrap();
    assert!(resid < 1e-8, "rescale residual {resid}");
}

#[test]
fn rescaled_flow_checks_eigen_relation_for_curved_model() {
    let rc = model_chart_2d("x2*xi2 + x2^2*xi2");
    let traj =
        integrate_rescaled(&rc, &[0.05, 0.1, 0.02], 1.5, &FlowConfig::default()).unwrap();
    let resid = traj.max_log("rescale-residual").unwrap();
    assert!(resid < 1e-8, "rescale residual {resid}");
}

#[test]
fn fiber_scale_choice_only_reparameterizes_the_cosphere_flow() {
    // For an order-2 symbol the cosphere field picks up a constant factor
    // when the scale section moves (zeta = 1 vs zeta = 1/2); the paths must
    // agree after the matching time dilation.
    let rc = model_chart_2d("x2*xi2^2");
    let field1 = cosphere_field(&rc);
    let field_scaled = {
        // Scale choice zeta -> 2 zeta changes the degree-0 weight by
        // (2 zeta)^{1-m} / zeta^{1-m} = 2^{1-m}.
        let conic = &rc.conic;
        let zeta = SymExpr::var(&conic.zeta);
        let (zeta2, _) = rc.rescaled_zeta(&SymExpr::constant(2.0));
        let ratio = SymExpr::div(
            &SymExpr::powf(&zeta2, 1.0 - rc.m),
            &SymExpr::powf(&zeta, 1.0 - rc.m),
        );
        let sub = [(conic.zeta.as_str(), SymExpr::one())];
        let scaled = field1.scale(&ratio);
        VectorFieldSym::new(
            scaled.vars.clone(),
            scaled
                .coeffs
                .iter()
                .map(|c| substitute(c, &sub))
                .collect(),
        )
    };
    let cfg = FlowConfig::default();
    let start = [0.4, 0.2];
    let a = integrate(&field1, field1.vars.clone(), &start, 1.0, &cfg).unwrap();
    let b = integrate(&field_scaled, field_scaled.vars.clone(), &start, 2.0, &cfg).unwrap();
    let d = path_distance(&a.states, &b.states);
    assert!(d < 1e-6, "path distance {d}");
    // Endpoints agree under the matching time dilation t -> 2t.
    let end_a = a.sample_at(1.0);
    let end_b = b.sample_at(2.0);
    for (x, y) in end_a.iter().zip(&end_b) {
        assert!((x - y).abs() < 1e-7, "{x} vs {y}");
    }
}

#[test]
fn gamma_membership_on_the_source_model() {
    let rc = model_chart_2d("x2*xi2");
    let cfg = FlowConfig {
        max_time: 30.0,
        ..FlowConfig::default()
    };
    // On the stable line beta = 0 the backward flow reaches q = 0.
    match gamma_membership(&rc, &[0.0], &[0.1], &[0.0], &cfg).unwrap() {
        GammaResult::Member { direction } => assert_eq!(direction, FlowDirection::Backward),
        other => panic!("expected backward member, got {other:?}"),
    }
    // Off the stable line the flow converges to (0, 0.5) instead.
    match gamma_membership(&rc, &[0.0], &[0.1], &[0.5], &cfg).unwrap() {
        GammaResult::NonMember { final_distance } => {
            assert!((final_distance - 0.5).abs() < 1e-3)
        }
        other => panic!("expected non-member, got {other:?}"),
    }
    // Starting on the radial set is a precondition error.
    assert!(matches!(
        gamma_membership(&rc, &[0.0], &[0.0], &[0.3], &cfg),
        Err(DynamicsError::OnRadialSet)
    ));
}

#[test]
fn gamma_membership_is_inconclusive_on_a_small_budget() {
    let rc = model_chart_2d("x2*xi2");
    let cfg = FlowConfig {
        max_time: 0.1,
        ..FlowConfig::default()
    };
    match gamma_membership(&rc, &[0.0], &[0.5], &[0.0], &cfg).unwrap() {
        GammaResult::Inconclusive => {}
        other => panic!("expected inconclusive, got {other:?}"),
    }
}

#[test]
fn linearization_rate_matches_eigenvalue() {
    // Source: backward trajectory decays at rate lambda0 = 1.
    let rc = model_chart_2d("x2*xi2");
    let traj = integrate_rescaled(&rc, &[0.1, 0.0, 0.1], -6.0, &FlowConfig::default()).unwrap();
    let est = linearization_rate(&traj, 0.1).unwrap();
    assert!((est.rate - 1.0).abs() < 0.01, "rate {}", est.rate);

    // Sink: forward decay at rate lambda0 = -1.
    let rc = model_chart_2d("-x2*xi2");
    let traj = integrate_rescaled(&rc, &[0.1, 0.0, 0.1], 6.0, &FlowConfig::default()).unwrap();
    let est = linearization_rate(&traj, 0.1).unwrap();
    assert!((est.rate + 1.0).abs() < 0.01, "rate {}", est.rate);
}

#[test]
fn linearization_rate_converges_for_perturbed_model() {
    let rc = model_chart_2d("x2*xi2 + x2^2*xi2");
    let traj =
        integrate_rescaled(&rc, &[0.01, 0.0, 0.01], -5.0, &FlowConfig::default()).unwrap();
    let est = linearization_rate(&traj, 0.01).unwrap();
    assert!((est.rate - 1.0).abs() < 0.05, "rate {}", est.rate);
}

#[test]
fn linearization_needs_enough_tail() {
    let rc = model_chart_2d("x2*xi2");
    let traj = integrate_rescaled(&rc, &[0.5, 0.0, 0.1], 0.5, &FlowConfig::default()).unwrap();
    assert!(matches!(
        linearization_rate(&traj, 1e-6),
        Err(DynamicsError::TailTooShort(_))
    ));
}

#[test]
fn radial_distance_moves_monotonically_near_the_radial_set() {
    // Operational transversality: |alpha| crosses levels monotonically.
    let rc = model_chart_2d("x2*xi2 + x2^2*xi2");
    let traj = integrate_rescaled(&rc, &[0.2, 0.1, 0.05], -4.0, &FlowConfig::default()).unwrap();
    let mut prev = f64::INFINITY;
    for state in &traj.states {
        let r = state[0].abs();
        assert!(r <= prev + 1e-12, "|alpha| increased backward in time");
        prev = r;
    }
}

#[test]
fn interpolation_matches_closed_form_between_steps() {
    let chart = chart1d();
    let p: E = parse("x*xi", &chart).unwrap();
    let traj = integrate_hamilton(&p, &chart, &[1.0, 1.0], 2.0, &FlowConfig::default()).unwrap();
    for t in [0.37, 0.93, 1.51] {
        let s = traj.sample_at(t);
        assert!((s[0] - t.exp()).abs() < 1e-7);
        assert!((s[1] - (-t).exp()).abs() < 1e-7);
    }
}
