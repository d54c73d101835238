//! Analysis orchestration and report writing.
//!
//! Every analysis writes machine-readable JSON citing the config hash and
//! seed. Verification failures are results, not crashes: the reports are
//! still written and the run exits with the dedicated code.

use crate::config::RunConfig;
use anyhow::{anyhow, Context, Result};
use radialscope_core::commutant::{
    build_symbols, make_cutoffs, t_ladder, verify_commutator_identity, verify_factorization,
    verify_support_conditions, CommutantError, IdentityReport, RegularizerCase, RegularizerSpec,
    SearchConfig, SupportReport,
};
use radialscope_core::dynamics::{
    gamma_membership, integrate_hamilton, integrate_rescaled, linearization_rate, FlowConfig,
    GammaResult, Termination, Trajectory,
};
use radialscope_core::expr::ChartSpec;
use radialscope_core::geometry::{
    build_normal_coordinates, radiality_residual, sink_source_classify, verify_eigen_relations,
    RadialChart,
};
use radialscope_core::probe::{
    dyadic_shell_energies, sample_model_solution, threshold_experiment, GridSpec1D, ProbeModel,
};
use radialscope_core::threshold::{
    invariance_check, quadrature_adjoint_residual, thresholds, SweepConfig,
};
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub struct Runner {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Analyze,
    Flow,
    Commutant,
    Probe,
    Full,
}

impl Mode {
    fn name(&self) -> &'static str {
        match self {
            Mode::Analyze => "analyze",
            Mode::Flow => "flow",
            Mode::Commutant => "commutant",
            Mode::Probe => "probe",
            Mode::Full => "full",
        }
    }
}

/// Failed verifications collected across the run; empty means a clean pass.
#[derive(Debug, Default)]
pub struct RunSummary {
    pub failures: Vec<String>,
}

#[derive(Serialize)]
struct Report<'a, P: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    payload: P,
}

impl Runner {
    fn write_json<P: Serialize>(&self, name: &str, payload: P) -> Result<()> {
        let report = Report {
            config_hash: &self.config_hash,
            seed: self.seed,
            payload,
        };
        let text = serde_json::to_string_pretty(&report)?;
        fs::write(self.out_dir.join(name), text + "\n")
            .with_context(|| format!("writing {name}"))?;
        Ok(())
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        fs::write(self.out_dir.join(name), text).with_context(|| format!("writing {name}"))
    }

    fn write_meta(&self, mode: Mode) -> Result<()> {
        // Timestamps live here and only here, so every other report is
        // byte-reproducible for a fixed config and seed.
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let meta = serde_json::json!({
            "mode": mode.name(),
            "unix_time": stamp,
            "version": env!("CARGO_PKG_VERSION"),
        });
        self.write_text("run_meta.json", &(meta.to_string() + "\n"))
    }

    pub fn run(&self, mode: Mode) -> Result<RunSummary> {
        fs::create_dir_all(&self.out_dir)?;
        self.write_meta(mode)?;
        let mut summary = RunSummary::default();
        let op = self.cfg.operator()?;
        let chart = match build_normal_coordinates(op.principal(), &self.cfg.lagrangian()) {
            Ok(c) => c,
            Err(e) => {
                // A non-radial or degenerate operator is a scientific
                // finding; report it and stop.
                self.write_json(
                    "analyze.json",
                    serde_json::json!({ "radial": false, "reason": e.to_string() }),
                )?;
                summary.failures.push(format!("normal form: {e}"));
                return Ok(summary);
            }
        };
        match mode {
            Mode::Analyze => {
                self.analyze(&op, &chart, &mut summary)?;
            }
            Mode::Flow => self.flow(&chart, &mut summary)?,
            Mode::Commutant => {
                self.commutant(&op, &chart, &mut summary)?;
            }
            Mode::Probe => {
                self.probe(&mut summary)?;
            }
            Mode::Full => {
                let analyze = self.analyze(&op, &chart, &mut summary)?;
                self.flow(&chart, &mut summary)?;
                let commutant = self.commutant(&op, &chart, &mut summary)?;
                let probe = self.probe(&mut summary)?;
                let verdict = serde_json::json!({
                    "s0": analyze.s0,
                    "classification": analyze.classification,
                    "probe_rows": probe.as_ref().map(|t| &t.rows),
                    "probe_max_abs_diff": probe.as_ref().map(|t| t.max_abs_diff),
                    "identity_max_residual": commutant.identity_max_residual,
                    "commutant_pass": commutant.pass,
                    "overall_pass": summary.failures.is_empty(),
                    "failures": summary.failures,
                });
                self.write_json("verdict.json", verdict)?;
            }
        }
        Ok(summary)
    }

    fn analyze(
        &self,
        op: &radialscope_core::OperatorSpec,
        chart: &RadialChart<f64>,
        summary: &mut RunSummary,
    ) -> Result<AnalyzeOutcome> {
        let q = self.cfg.q_beta();
        let lag_chart = self.cfg.chart_spec();
        let max_radiality = max_radiality_on_radial_set(op.principal(), &lag_chart, chart)?;
        let eigen = verify_eigen_relations(chart, 1e-9, 50, self.seed)
            .map_err(|e| anyhow!("eigen relations: {e}"))?;
        if !eigen.pass() {
            summary.failures.push("eigen relations".into());
        }
        let classification =
            sink_source_classify(chart, &q).map_err(|e| anyhow!("classification: {e}"))?;
        let pairing = quadrature_adjoint_residual(op, 10, self.seed ^ 0xAD).ok();
        let t = thresholds(op, chart, &q, &SweepConfig::default())
            .map_err(|e| anyhow!("thresholds: {e}"))?;
        let invariance = invariance_check(op, chart, &q, &SweepConfig::default(), self.seed)
            .map_err(|e| anyhow!("invariance: {e}"))?;
        if !invariance.pass() {
            summary.failures.push("threshold invariance".into());
        }
        if let Some(p) = &pairing {
            if p.max_residual > 1e-6 {
                summary.failures.push("adjoint pairing".into());
            }
        }
        let payload = serde_json::json!({
            "radial": true,
            "max_radiality_residual": max_radiality,
            "eigen_pass": eigen.pass(),
            "classification": classification.kind.to_string(),
            "lambda0": classification.lambda0,
            "adjoint_pairing_residual": pairing.as_ref().map(|p| p.max_residual),
            "threshold": t.report(),
            "invariance": invariance,
        });
        self.write_json("analyze.json", payload)?;
        Ok(AnalyzeOutcome {
            s0: t.s0,
            classification: classification.kind.to_string(),
        })
    }

    fn flow(&self, chart: &RadialChart<f64>, summary: &mut RunSummary) -> Result<()> {
        let cfg = FlowConfig::default();
        let block = &self.cfg.flow;
        let q = self.cfg.q_beta();
        let classification =
            sink_source_classify(chart, &q).map_err(|e| anyhow!("classification: {e}"))?;
        let lambda0 = classification.lambda0;
        let d = chart.conic.theta.len();

        let mut rows = Vec::new();
        for (k, start) in block.canonical_starts.iter().enumerate() {
            let traj = integrate_hamilton(
                &self.cfg.operator()?.principal().clone(),
                &self.cfg.chart_spec(),
                start,
                block.t_end,
                &cfg,
            )
            .map_err(|e| anyhow!("hamilton flow: {e}"))?;
            let drift = traj.max_log("symbol-drift").unwrap_or(f64::NAN);
            let p0 = traj
                .log("symbol-value")
                .and_then(|v| v.first().copied())
                .unwrap_or(f64::NAN);
            if !(drift < 1e-8 * (1.0 + p0.abs())) {
                summary.failures.push(format!("energy drift on start {k}"));
            }
            self.write_text(
                &format!("flow_canonical_{k}.csv"),
                &trajectory_csv(&traj, "symbol-value", "p"),
            )?;
            rows.push(serde_json::json!({
                "kind": "canonical",
                "start": start,
                "termination": traj.termination,
                "symbol_drift": drift,
            }));
        }

        let mut cosphere_starts = block.cosphere_starts.clone();
        if cosphere_starts.is_empty() && d > 0 {
            // Default probe: approach the radial set in the contracting time
            // direction for the rate estimate.
            let mut s = vec![0.0; 2 * d + 1];
            s[0] = 0.1;
            s[2 * d] = 0.1;
            cosphere_starts.push(s);
        }
        for (k, start) in cosphere_starts.iter().enumerate() {
            let t_end = if lambda0 > 0.0 {
                -block.t_end
            } else {
                block.t_end
            };
            let traj = integrate_rescaled(chart, start, t_end, &cfg)
                .map_err(|e| anyhow!("rescaled flow: {e}"))?;
            let residual = traj.max_log("rescale-residual").unwrap_or(f64::NAN);
            if !(residual < 1e-8) {
                summary
                    .failures
                    .push(format!("rescaling residual on start {k}"));
            }
            let rate = linearization_rate(&traj, block.rate_radius).ok();
            if let Some(est) = &rate {
                if (est.rate - lambda0).abs() > 0.05 * lambda0.abs() {
                    summary.failures.push(format!(
                        "linearization rate {} vs lambda0 {lambda0}",
                        est.rate
                    ));
                }
            }
            self.write_text(
                &format!("flow_cosphere_{k}.csv"),
                &trajectory_csv(&traj, "rescale-residual", "wpx_residual"),
            )?;
            rows.push(serde_json::json!({
                "kind": "cosphere",
                "start": start,
                "termination": traj.termination,
                "rescale_residual": residual,
                "rate": rate,
                "lambda0": lambda0,
            }));
        }

        let mut gamma_rows = Vec::new();
        if d > 0 {
            for k in 0..block.gamma_probes {
                let on_stable = k % 2 == 0;
                let mut alpha = vec![0.0; d];
                alpha[0] = 0.05 + 0.01 * (k as f64) + 1e-4 * ((self.seed % 13) as f64);
                let mut beta = q.clone();
                if !on_stable {
                    beta[0] += 0.3 + 0.02 * (k as f64);
                }
                let result = gamma_membership(chart, &q, &alpha, &beta, &cfg)
                    .map_err(|e| anyhow!("limit-set probe: {e}"))?;
                let expected_member = on_stable;
                let agrees = matches!(
                    (&result, expected_member),
                    (GammaResult::Member { .. }, true) | (GammaResult::NonMember { .. }, false)
                );
                if !agrees {
                    summary
                        .failures
                        .push(format!("limit-set membership probe {k}"));
                }
                gamma_rows.push(serde_json::json!({
                    "alpha": alpha,
                    "beta": beta,
                    "result": result,
                    "expected_member": expected_member,
                }));
            }
        }

        self.write_json(
            "flow.json",
            serde_json::json!({ "trajectories": rows, "gamma": gamma_rows }),
        )?;
        Ok(())
    }

    fn commutant(
        &self,
        op: &radialscope_core::OperatorSpec,
        chart: &RadialChart<f64>,
        summary: &mut RunSummary,
    ) -> Result<CommutantOutcome> {
        let q = self.cfg.q_beta();
        let sign = sink_source_classify(chart, &q)
            .map_err(|e| anyhow!("classification: {e}"))?
            .lambda0
            .signum();
        let subpr = chart
            .conic
            .to_conic_expr(&radialscope_core::threshold::subprincipal_difference(op));
        let search = SearchConfig::default();
        let block = &self.cfg.commutant;
        let mut cases = Vec::new();
        let mut identity_max = 0.0f64;
        let mut pass = true;
        for (label, spec) in [
            (
                "below",
                RegularizerSpec::below(block.s_below, self.cfg.operator.m),
            ),
            (
                "above",
                RegularizerSpec::above(block.s_above, self.cfg.operator.m, block.s1),
            ),
        ] {
            let case = spec.case;
            let entry = match self.run_commutant_case(chart, case, spec, &subpr, sign, &search) {
                Ok((identity, support, factorization_residual)) => {
                    identity_max = identity_max.max(identity.max_residual);
                    let ok = identity.max_residual < 1e-8
                        && support.pass()
                        && factorization_residual < 1e-10;
                    if !ok {
                        pass = false;
                        summary.failures.push(format!("commutant {label} case"));
                    }
                    serde_json::json!({
                        "case": label,
                        "built": true,
                        "identity": identity,
                        "support": support,
                        "factorization_residual": factorization_residual,
                        "pass": ok,
                    })
                }
                Err(CommutantError::SignViolation { point, t, value }) => {
                    pass = false;
                    summary
                        .failures
                        .push(format!("commutant {label} case: sign violation"));
                    serde_json::json!({
                        "case": label,
                        "built": false,
                        "sign_violation": { "point": point, "t": t, "value": value },
                        "pass": false,
                    })
                }
                Err(e) => return Err(anyhow!("commutant {label} case: {e}")),
            };
            cases.push(entry);
        }
        self.write_json("commutant.json", serde_json::json!({ "cases": cases }))?;
        Ok(CommutantOutcome {
            identity_max_residual: identity_max,
            pass,
        })
    }

    fn run_commutant_case(
        &self,
        chart: &RadialChart<f64>,
        case: RegularizerCase,
        spec: RegularizerSpec<f64>,
        subpr: &radialscope_core::Expr,
        sign: f64,
        search: &SearchConfig<f64>,
    ) -> std::result::Result<(IdentityReport, SupportReport, f64), CommutantError> {
        let cutoffs = make_cutoffs(chart, case, search, sign)?;
        let sym = build_symbols(chart, spec, &cutoffs, subpr, sign, &search.grid)?;
        let identity = verify_commutator_identity(&sym, &t_ladder::<f64>(), false)?;
        let support = verify_support_conditions(&sym)?;
        let factorization = verify_factorization(&sym, &t_ladder::<f64>())?;
        Ok((identity, support, factorization.max_residual))
    }

    fn probe(
        &self,
        summary: &mut RunSummary,
    ) -> Result<Option<radialscope_core::probe::ComparisonTable>> {
        if self.cfg.operator.dim != 1 {
            self.write_json(
                "probe.json",
                serde_json::json!({ "skipped": "probe requires a 1-d operator" }),
            )?;
            return Ok(None);
        }
        let grid = GridSpec1D::<f64>::new(1usize << self.cfg.probe.grid_log2);
        let cs = self.cfg.probe_c_values()?;
        let table =
            threshold_experiment(&cs, &grid).map_err(|e| anyhow!("threshold probe: {e}"))?;
        if table.max_abs_diff > 0.1 {
            summary.failures.push(format!(
                "probe mismatch: max |s* - s0| = {}",
                table.max_abs_diff
            ));
        }
        // Calibration spectra as columnar plot data.
        for (name, model) in [
            ("heaviside", ProbeModel::<f64>::Heaviside),
            ("delta", ProbeModel::Delta),
            ("gaussian", ProbeModel::Gaussian),
        ] {
            let u = sample_model_solution(model, &grid)
                .map_err(|e| anyhow!("calibration model: {e}"))?;
            let spectrum =
                dyadic_shell_energies(&u, None).map_err(|e| anyhow!("shell energies: {e}"))?;
            self.write_text(&format!("shells_{name}.txt"), &spectrum.plot_lines())?;
        }
        for (k, c) in cs.iter().enumerate() {
            let a = num_complex::Complex64::new(0.0, 1.0) * c;
            let u = sample_model_solution(
                ProbeModel::XPlusPower(radialscope_core::CNum::new(a.re, a.im)),
                &grid,
            )
            .map_err(|e| anyhow!("solution model: {e}"))?;
            let spectrum =
                dyadic_shell_energies(&u, None).map_err(|e| anyhow!("shell energies: {e}"))?;
            self.write_text(&format!("shells_c{k}.txt"), &spectrum.plot_lines())?;
        }
        self.write_text("probe_table.txt", &table.plot_lines())?;
        self.write_json("probe.json", serde_json::json!({ "experiment": table }))?;
        Ok(Some(table))
    }
}

struct AnalyzeOutcome {
    s0: f64,
    classification: String,
}

struct CommutantOutcome {
    identity_max_residual: f64,
    pass: bool,
}

fn max_radiality_on_radial_set(
    p: &radialscope_core::Expr,
    chart: &ChartSpec,
    radial: &RadialChart<f64>,
) -> Result<f64> {
    let n = chart.dim();
    let mut worst = 0.0f64;
    for k in 0..16 {
        let mut x = vec![0.0; n];
        let mut xi = vec![0.0; n];
        for (i, slot) in x.iter_mut().enumerate().take(n - 1) {
            *slot = -0.9 + 0.12 * ((k + i) as f64 % 16.0);
        }
        xi[n - 1] = radial.conic.branch * (0.5 + 0.1 * k as f64);
        let r = radiality_residual(p, chart, &x, &xi).map_err(|e| anyhow!("radiality: {e}"))?;
        worst = worst.max(r);
    }
    Ok(worst)
}

fn trajectory_csv(traj: &Trajectory<f64>, log_name: &str, log_label: &str) -> String {
    let mut out = String::from("t");
    for name in &traj.var_names {
        let _ = write!(out, ",{name}");
    }
    let _ = writeln!(out, ",{log_label}");
    let log = traj.log(log_name).unwrap_or(&[]);
    for (i, (t, state)) in traj.times.iter().zip(&traj.states).enumerate() {
        let _ = write!(out, "{t}");
        for v in state {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{}", log.get(i).copied().unwrap_or(f64::NAN));
    }
    let _ = traj.termination == Termination::Completed;
    out
}

pub fn hash_config(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub fn out_dir_or_default(out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| Path::new("out").to_path_buf())
}
