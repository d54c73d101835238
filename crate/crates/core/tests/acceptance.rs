//! Acceptance suite: quantitative end-to-end checks of the whole pipeline on
//! model problems with closed-form ground truth. Each criterion prints one
//! pass/fail line (visible with `cargo test --test acceptance -- --nocapture`).

use num_complex::Complex64;
use radialscope_core::commutant::{
    build_symbols, make_cutoffs, t_ladder, verify_commutator_identity, CommutantError,
    GridConfig, RegularizerSpec, SearchConfig,
};
use radialscope_core::dynamics::{
    gamma_membership, integrate_rescaled, linearization_rate, FlowConfig, FlowDirection,
    GammaResult,
};
use radialscope_core::expr::{
    differentiate, equal_on_samples_tol, hamilton_field, parse, sample::sample_points, ChartSpec,
    SampleBox, SymExpr, VectorFieldSym,
};
use radialscope_core::geometry::{
    blowup_lift, build_normal_coordinates, sink_source_classify, verify_eigen_relations,
    BlowupChart, ConicChart, FixedPointKind, LagrangianSpec, RadialChart,
};
use radialscope_core::probe::{
    estimate_model, threshold_experiment, GridSpec1D, ProbeModel,
};
use radialscope_core::threshold::{
    invariance_check, quadrature_adjoint_residual, subprincipal_difference, thresholds,
    OperatorSpec, SweepConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

type E = SymExpr<f64>;

fn report(criterion: u32, label: &str, failures: &[String], detail: &str) {
    let status = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!("acceptance criterion {criterion} ({label}): {status} {detail}");
    assert!(
        failures.is_empty(),
        "criterion {criterion} failed: {failures:?}"
    );
}

fn chart1d() -> ChartSpec {
    ChartSpec {
        base: vec!["x".into()],
        fiber: vec!["xi".into()],
        positive: vec![],
    }
}

fn op_xdx(c: Complex64) -> OperatorSpec<f64> {
    let chart = chart1d();
    let p: E = parse("x*xi", &chart).unwrap();
    OperatorSpec::new(chart, 1.0, p).with_term(0.0, E::neg(&E::cnum(c)))
}

fn model_chart_1d() -> RadialChart<f64> {
    let chart = chart1d();
    let p: E = parse("x*xi", &chart).unwrap();
    build_normal_coordinates(&p, &LagrangianSpec::new(chart)).unwrap()
}

fn model_chart_2d(text: &str) -> RadialChart<f64> {
    let chart = ChartSpec::canonical(2);
    let p: E = parse(text, &chart).unwrap();
    build_normal_coordinates(&p, &LagrangianSpec::new(chart)).unwrap()
}

#[test]
fn criterion_1_threshold_correctness_on_the_model_family() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let rc = model_chart_1d();
    let cfg = SweepConfig::default();
    let mut worst_pairing = 0.0f64;
    let mut worst_s0 = 0.0f64;
    for c in [
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.25),
        Complex64::new(0.0, -0.25),
        Complex64::new(0.3, 0.25),
    ] {
        let op = op_xdx(c);
        let pairing = quadrature_adjoint_residual(&op, 20, 0xACCE).unwrap();
        worst_pairing = worst_pairing.max(pairing.max_residual);
        if pairing.max_residual >= 1e-6 {
            failures.push(format!("pairing residual {} for c = {c}", pairing.max_residual));
        }
        let t = thresholds(&op, &rc, &[], &cfg).unwrap();
        if !t.homogeneous {
            failures.push(format!("c = {c}: pointwise formula not used"));
        }
        let expected = 0.5 - c.im;
        let err = (t.s0 - expected).abs();
        worst_s0 = worst_s0.max(err);
        if err >= 1e-9 {
            failures.push(format!("c = {c}: s0 = {}, expected {expected}", t.s0));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 5.0 {
        failures.push(format!("runtime {elapsed:.2} s exceeds 5 s"));
    }
    report(
        1,
        "model-family thresholds",
        &failures,
        &format!(
            "(max |s0 - (1/2 - Im c)| = {worst_s0:.2e}, pairing residual {worst_pairing:.2e}, {elapsed:.2} s)"
        ),
    );
}

#[test]
fn criterion_2_numerical_threshold_confirmation() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let grid = GridSpec1D::<f64>::new(1 << 20);
    let cs = [
        Complex64::new(0.0, 0.0),
        Complex64::new(0.0, 0.25),
        Complex64::new(0.0, -0.25),
    ];
    let table = threshold_experiment(&cs, &grid).unwrap();
    for row in &table.rows {
        if row.abs_diff > 0.1 {
            failures.push(format!(
                "c = {}+{}i: |s* - s0| = {}",
                row.c_re, row.c_im, row.abs_diff
            ));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    if elapsed >= 60.0 {
        failures.push(format!("runtime {elapsed:.2} s exceeds 60 s"));
    }
    report(
        2,
        "measured exponents vs predicted thresholds",
        &failures,
        &format!(
            "(max |s* - s0| = {:.3} on a 2^20 grid, {elapsed:.2} s)",
            table.max_abs_diff
        ),
    );
}

#[test]
fn criterion_3_commutator_identity_and_threshold_crossing() {
    let mut failures = Vec::new();
    let rc = model_chart_2d("x2*xi2");
    let chart2 = ChartSpec::canonical(2);
    let p2: E = parse("x2*xi2", &chart2).unwrap();
    let op = OperatorSpec::new(chart2, 1.0, p2); // real shift: s0 = s1 = 1/2
    let subpr = rc.conic.to_conic_expr(&subprincipal_difference(&op));
    let sign = sink_source_classify(&rc, &[0.0]).unwrap().lambda0.signum();
    let grid = GridConfig {
        per_dim: 17,
        zeta_points: 10,
        ..GridConfig::default()
    };
    let search = SearchConfig {
        grid: grid.clone(),
        ..SearchConfig::default()
    };
    let ladder = t_ladder::<f64>();
    let mut details = String::new();
    for (label, spec) in [
        ("below", RegularizerSpec::below(0.0, 1.0)),
        ("above", RegularizerSpec::above(1.0, 1.0, 0.5)),
    ] {
        let cutoffs = make_cutoffs(&rc, spec.case, &search, sign).unwrap();
        match build_symbols(&rc, spec, &cutoffs, &subpr, sign, &grid) {
            Ok(sym) => {
                let id = verify_commutator_identity(&sym, &ladder, false).unwrap();
                let points = id.per_t[0].grid_points;
                if points < 10_000 {
                    failures.push(format!("{label}: grid has only {points} points"));
                }
                if id.max_residual >= 1e-8 {
                    failures.push(format!("{label}: identity residual {}", id.max_residual));
                }
                details.push_str(&format!(
                    "[{label}: residual {:.1e} on {points} points] ",
                    id.max_residual
                ));
            }
            Err(e) => failures.push(format!("{label}: build failed: {e}")),
        }
    }
    // Crossing the threshold by 0.1 must be rejected as a sign violation.
    for (label, spec) in [
        ("below+0.1", RegularizerSpec::below(0.6, 1.0)),
        ("above-0.1", RegularizerSpec::above(0.4, 1.0, 0.5)),
    ] {
        let cutoffs = make_cutoffs(&rc, spec.case, &search, sign).unwrap();
        match build_symbols(&rc, spec, &cutoffs, &subpr, sign, &grid) {
            Err(CommutantError::SignViolation { .. }) => {}
            other => failures.push(format!(
                "{label}: expected sign violation, got {:?}",
                other.err()
            )),
        }
    }
    report(3, "commutator identity", &failures, &details);
}

/// Hand-derived conic form of the Hamilton field, used as the independent
/// oracle for the pushforward.
fn conic_display(p_conic: &E, chart: &ConicChart) -> VectorFieldSym<f64> {
    let zeta = E::var(&chart.zeta);
    let dz = differentiate(p_conic, &chart.z);
    let dzeta = differentiate(p_conic, &chart.zeta);
    let mut vars = Vec::new();
    let mut coeffs = Vec::new();
    for (i, y) in chart.y.iter().enumerate() {
        vars.push(y.clone());
        coeffs.push(E::div(&differentiate(p_conic, &chart.theta[i]), &zeta));
    }
    vars.push(chart.z.clone());
    let mut z_coeff = dzeta;
    for th in &chart.theta {
        z_coeff = E::sub(
            &z_coeff,
            &E::div(
                &E::product([E::var(th), differentiate(p_conic, th)]),
                &zeta,
            ),
        );
    }
    coeffs.push(z_coeff);
    for (i, th) in chart.theta.iter().enumerate() {
        vars.push(th.clone());
        let num = E::sub(
            &E::mul(&E::var(th), &dz),
            &differentiate(p_conic, &chart.y[i]),
        );
        coeffs.push(E::div(&num, &zeta));
    }
    vars.push(chart.zeta.clone());
    coeffs.push(E::neg(&dz));
    VectorFieldSym::new(vars, coeffs)
}

#[test]
fn criterion_4_normal_form_fidelity() {
    let mut failures = Vec::new();
    // Second-order vanishing of the flow relations on the radial set, for
    // the linear model and a perturbation with genuine quadratic remainders.
    let mut worst_eigen = 0.0f64;
    for text in ["x2*xi2", "x2*xi2 + x1*xi1^2/xi2"] {
        let rc = model_chart_2d(text);
        let rep = verify_eigen_relations(&rc, 1e-9, 50, 0xE1E).unwrap();
        for check in &rep.checks {
            worst_eigen = worst_eigen
                .max(check.max_value_residual)
                .max(check.max_derivative_residual);
        }
        if !rep.pass() {
            failures.push(format!("{text}: {:?}", rep.first_violation()));
        }
    }
    // The displayed conic form of the pushforward, against the generic
    // chain-rule transform, on 100 seeded samples per symbol.
    let chart = ChartSpec::canonical(2);
    let conic = ConicChart::new(&chart, true);
    let bounds = SampleBox::new(&[
        ("y1", -1.0, 1.0),
        ("z", -0.5, 0.5),
        ("th1", -0.5, 0.5),
        ("zeta", 0.5, 2.0),
    ]);
    let mut worst_push = 0.0f64;
    for text in [
        "x2*xi2",
        "x2*xi2 + x1*xi1^2/xi2",
        "x1*xi1 + x2^2*xi2",
        "xi1^2/xi2 + x1*x2*xi1",
    ] {
        let p: E = parse(text, &chart).unwrap();
        let pushed = conic.push_forward(&hamilton_field(&p, &chart).unwrap());
        let display = conic_display(&conic.to_conic_expr(&p), &conic);
        for (v, c) in pushed.vars.iter().zip(&pushed.coeffs) {
            let rep =
                equal_on_samples_tol(c, display.coeff(v).unwrap(), &bounds, 100, 0x5EED, 1e-9)
                    .unwrap();
            worst_push = worst_push.max(rep.max_residual);
            if !rep.equal {
                failures.push(format!(
                    "{text}: coefficient {v} residual {}",
                    rep.max_residual
                ));
            }
        }
    }
    report(
        4,
        "normal-form fidelity",
        &failures,
        &format!("(eigen residual {worst_eigen:.1e}, pushforward residual {worst_push:.1e})"),
    );
}

#[test]
fn criterion_5_dynamics_consistency() {
    let mut failures = Vec::new();
    let cfg = FlowConfig::default();
    let mut details = String::new();
    for (text, t_end) in [("x2*xi2", -6.0), ("-x2*xi2", 6.0)] {
        let rc = model_chart_2d(text);
        let lambda0 = sink_source_classify(&rc, &[0.0]).unwrap().lambda0;
        let traj = integrate_rescaled(&rc, &[0.1, 0.0, 0.1], t_end, &cfg).unwrap();
        let residual = traj.max_log("rescale-residual").unwrap();
        if residual >= 1e-8 {
            failures.push(format!("{text}: W_p x residual {residual}"));
        }
        let est = linearization_rate(&traj, 0.1).unwrap();
        if (est.rate - lambda0).abs() > 0.05 * lambda0.abs() {
            failures.push(format!(
                "{text}: rate {} vs lambda0 {lambda0}",
                est.rate
            ));
        }
        details.push_str(&format!("[{text}: rate {:.4}] ", est.rate));
    }
    // Seeded membership probes against the closed-form expectation: in the
    // linear model, the flow reaches q exactly from the beta = q line.
    let rc = model_chart_2d("x2*xi2");
    let gamma_cfg = FlowConfig {
        max_time: 40.0,
        ..FlowConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x6A77A);
    let mut agreements = 0;
    for k in 0..20 {
        let alpha = 0.05 + 0.25 * rng.gen::<f64>();
        let on_line = k % 2 == 0;
        let beta = if on_line {
            0.0
        } else {
            0.3 + 0.4 * rng.gen::<f64>()
        };
        let result = gamma_membership(&rc, &[0.0], &[alpha], &[beta], &gamma_cfg).unwrap();
        let agrees = matches!(
            (&result, on_line),
            (
                GammaResult::Member {
                    direction: FlowDirection::Backward,
                },
                true,
            ) | (GammaResult::NonMember { .. }, false)
        );
        if agrees {
            agreements += 1;
        } else {
            failures.push(format!("start {k}: {result:?} (on_line = {on_line})"));
        }
    }
    report(
        5,
        "dynamics consistency",
        &failures,
        &format!("{details}[membership: {agreements}/20 seeded starts]"),
    );
}

#[test]
fn criterion_6_invariance_suite() {
    let mut failures = Vec::new();
    let rc = model_chart_1d();
    let op = op_xdx(Complex64::new(0.0, 0.25));
    let report_inv = invariance_check(&op, &rc, &[], &SweepConfig::default(), 0x1415).unwrap();
    let mut zeta_cases = 0;
    let mut density_cases = 0;
    let mut worst = 0.0f64;
    for case in &report_inv.cases {
        if case.label.starts_with("zeta-rescale") {
            zeta_cases += 1;
            worst = worst.max(case.s0_delta);
            if case.s0_delta >= 1e-9 || !case.classification_stable {
                failures.push(format!("{}: delta {}", case.label, case.s0_delta));
            }
        }
        if case.label.starts_with("density") {
            density_cases += 1;
            worst = worst.max(case.s0_delta);
            if case.s0_delta >= 1e-9 || !case.classification_stable {
                failures.push(format!("{}: delta {}", case.label, case.s0_delta));
            }
        }
    }
    if zeta_cases != 10 {
        failures.push(format!("expected 10 scale rescalings, ran {zeta_cases}"));
    }
    if density_cases != 5 {
        failures.push(format!("expected 5 density changes, ran {density_cases}"));
    }
    report(
        6,
        "threshold invariance",
        &failures,
        &format!("(max |delta s0| = {worst:.2e} over {zeta_cases}+{density_cases} cases)"),
    );
}

#[test]
fn criterion_7_blowup_structure() {
    let mut failures = Vec::new();
    let mut details = String::new();
    for text in ["x2*xi2", "-x2*xi2", "x2*xi2 + x2^2*xi2", "x2*xi2 + x1*xi1^2/xi2"] {
        let rc = model_chart_2d(text);
        let lambda0 = sink_source_classify(&rc, &[0.0]).unwrap().lambda0;
        let field = rc.cosphere_field();
        let blow = BlowupChart::new(&["alpha1".to_string()], &["beta1".to_string()]);
        let lifted = match blowup_lift(&field, &blow) {
            Ok(l) => l,
            Err(e) => {
                failures.push(format!("{text}: lift failed: {e}"));
                continue;
            }
        };
        if !lifted.front_face_min.is_finite() {
            failures.push(format!("{text}: front face value not finite"));
        }
        // |r-component| stays above half the eigenvalue on 0 < r <= 1e-3.
        let mut min_abs = f64::INFINITY;
        for &r in &[1e-3, 1e-4, 1e-5, 1e-6] {
            for omega in [-1.0, 1.0] {
                for beta in [-0.5, -0.2, 0.0, 0.3, 0.5] {
                    let env = [
                        ("r", radialscope_core::scalar::cre(r)),
                        ("w1", radialscope_core::scalar::cre(omega)),
                        ("beta1", radialscope_core::scalar::cre(beta)),
                    ];
                    match lifted.r_component.eval_real(&env) {
                        Ok(v) => min_abs = min_abs.min(v.abs()),
                        Err(e) => failures.push(format!("{text}: eval failed: {e}")),
                    }
                }
            }
        }
        if min_abs < 0.5 * lambda0.abs() {
            failures.push(format!(
                "{text}: min |r-component| {min_abs} below 0.5 |lambda0| = {}",
                0.5 * lambda0.abs()
            ));
        }
        details.push_str(&format!("[{text}: min {min_abs:.3}] "));
    }
    report(7, "blow-up transversality", &failures, &details);
}

#[test]
fn criterion_8_probe_calibration() {
    let mut failures = Vec::new();
    let grid = GridSpec1D::<f64>::new(1 << 18);
    let heaviside = estimate_model(ProbeModel::Heaviside, &grid).unwrap();
    if (heaviside.s_star - 0.5).abs() > 0.05 {
        failures.push(format!("heaviside s* = {}", heaviside.s_star));
    }
    let delta = estimate_model(ProbeModel::Delta, &grid).unwrap();
    if (delta.s_star + 0.5).abs() > 0.05 {
        failures.push(format!("delta s* = {}", delta.s_star));
    }
    let gaussian = estimate_model(ProbeModel::Gaussian, &grid).unwrap();
    if !gaussian.smooth {
        failures.push("gaussian not flagged smooth".into());
    }
    // Stability invariants: window halving and grid doubling barely move the
    // estimates.
    let mut narrow = grid;
    narrow.window_width /= 2.0;
    let heaviside_narrow = estimate_model(ProbeModel::Heaviside, &narrow).unwrap();
    if (heaviside.s_star - heaviside_narrow.s_star).abs() >= 0.05 {
        failures.push(format!(
            "window sensitivity {}",
            (heaviside.s_star - heaviside_narrow.s_star).abs()
        ));
    }
    let fine = GridSpec1D::<f64>::new(1 << 19);
    let heaviside_fine = estimate_model(ProbeModel::Heaviside, &fine).unwrap();
    if (heaviside.s_star - heaviside_fine.s_star).abs() >= 0.03 {
        failures.push(format!(
            "grid sensitivity {}",
            (heaviside.s_star - heaviside_fine.s_star).abs()
        ));
    }
    report(
        8,
        "probe calibration",
        &failures,
        &format!(
            "(heaviside {:.3}, delta {:.3}, gaussian smooth; stability ok)",
            heaviside.s_star, delta.s_star
        ),
    );
}

/// Sanity check on the randomized sampler the seeded starts rely on.
#[test]
fn seeded_sampling_is_deterministic() {
    let bounds = SampleBox::<f64>::new(&[("u", 0.0, 1.0)]);
    let a = sample_points(&bounds, 5, 42);
    let b = sample_points(&bounds, 5, 42);
    assert_eq!(a, b);
    assert_ne!(a, sample_points(&bounds, 5, 43));
}

/// The classification pair used across the suite is the expected one.
#[test]
fn model_suite_classifications() {
    let source = model_chart_2d("x2*xi2");
    assert_eq!(
        sink_source_classify(&source, &[0.0]).unwrap().kind,
        FixedPointKind::Source
    );
    let sink = model_chart_2d("-x2*xi2");
    assert_eq!(
        sink_source_classify(&sink, &[0.0]).unwrap().kind,
        FixedPointKind::Sink
    );
}
