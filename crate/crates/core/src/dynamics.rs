//! Numerical integration of the Hamilton flow and its fiber-rescaled
//! version, limit-set membership near the radial set, and linearization-rate
//! estimation.
//!
//! The integrator is an adaptive Dormand-Prince 5(4) pair with PI step
//! control and cubic Hermite interpolation between accepted steps; the
//! fields here are smooth and nonstiff, and the rate estimates need clean
//! exponentials more than long-time structure preservation.

use crate::expr::{hamilton_field, substitute, ChartSpec, ExprError, SymExpr, VectorFieldSym};
use crate::geometry::{GeometryError, RadialChart};
use crate::scalar::{cre, CNum, Scalar};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("start point is outside the chart domain: {0}")]
    StartOffChart(String),
    #[error("start point lies on the radial set")]
    OnRadialSet,
    #[error("trajectory tail inside the linearization radius is too short ({0} points)")]
    TailTooShort(usize),
    #[error("Newton inversion for the start point failed")]
    NewtonFailure,
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone)]
pub struct FlowConfig<T: Scalar> {
    pub rel_tol: T,
    pub abs_tol: T,
    pub max_time: T,
    pub min_step: T,
    pub max_step: T,
    pub max_steps: usize,
    pub blowup_threshold: T,
    /// Outer detection radius for limit-set membership.
    pub convergence_radius: T,
    /// Inner confirmation radius (must be below the outer one).
    pub confirm_radius: T,
}

impl<T: Scalar> Default for FlowConfig<T> {
    fn default() -> Self {
        Self {
            rel_tol: T::from_f(1e-10),
            abs_tol: T::from_f(1e-12),
            max_time: T::from_f(50.0),
            min_step: T::from_f(1e-12),
            max_step: T::from_f(1.0),
            max_steps: 200_000,
            blowup_threshold: T::from_f(1e6),
            convergence_radius: T::from_f(0.05),
            confirm_radius: T::from_f(1e-3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Termination {
    Completed,
    BlowUp { time: f64 },
    LeftChart { time: f64 },
    StepUnderflow { time: f64 },
}

#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    pub var_names: Vec<String>,
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    pub derivs: Vec<Vec<T>>,
    /// Named diagnostic logs sampled at the accepted steps (conserved symbol
    /// value along the Hamilton flow, rescaling residual along the rescaled
    /// flow).
    pub logs: Vec<(String, Vec<T>)>,
    pub termination: Termination,
}

impl<T: Scalar> Trajectory<T> {
    pub fn last_state(&self) -> &[T] {
        self.states.last().expect("trajectory has samples")
    }

    pub fn log(&self, name: &str) -> Option<&[T]> {
        self.logs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn max_log(&self, name: &str) -> Option<T> {
        self.log(name)?
            .iter()
            .copied()
            .fold(None, |acc: Option<T>, v| {
                Some(acc.map_or(v, |a| a.max(v)))
            })
    }

    /// Cubic Hermite interpolation between accepted steps.
    pub fn sample_at(&self, t: T) -> Vec<T> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let mut k = 1;
        while self.times[k] < t {
            k += 1;
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let h = t1 - t0;
        let u = (t - t0) / h;
        let u2 = u * u;
        let u3 = u2 * u;
        let h00 = T::from_f(2.0) * u3 - T::from_f(3.0) * u2 + T::one();
        let h10 = u3 - T::from_f(2.0) * u2 + u;
        let h01 = -T::from_f(2.0) * u3 + T::from_f(3.0) * u2;
        let h11 = u3 - u2;
        (0..self.states[0].len())
            .map(|i| {
                h00 * self.states[k - 1][i]
                    + h10 * h * self.derivs[k - 1][i]
                    + h01 * self.states[k][i]
                    + h11 * h * self.derivs[k][i]
            })
            .collect()
    }
}

/// Compiled evaluator for a symbolic vector field on a fixed variable order.
struct FieldEval<'a, T: Scalar> {
    names: Vec<&'a str>,
    coeffs: &'a [SymExpr<T>],
}

impl<'a, T: Scalar> FieldEval<'a, T> {
    fn new(field: &'a VectorFieldSym<T>) -> Self {
        Self {
            names: field.vars.iter().map(|s| s.as_str()).collect(),
            coeffs: &field.coeffs,
        }
    }

    fn eval_into(&self, state: &[T], out: &mut [T]) -> Result<(), ExprError> {
        let env: Vec<(&str, CNum<T>)> = self
            .names
            .iter()
            .zip(state)
            .map(|(n, v)| (*n, cre(*v)))
            .collect();
        for (slot, c) in out.iter_mut().zip(self.coeffs) {
            *slot = c.eval(&env)?.re;
        }
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn integrate<T: Scalar>(
    field: &VectorFieldSym<T>,
    var_names: Vec<String>,
    start: &[T],
    t_end: T,
    cfg: &FlowConfig<T>,
) -> Result<Trajectory<T>, DynamicsError> {
    let dim = start.len();
    assert_eq!(dim, field.coeffs.len());
    let rhs = FieldEval::new(field);
    let forward = t_end >= T::zero();
    let dir = if forward { T::one() } else { -T::one() };
    let t_final = t_end.abs();

    let mut t = T::zero();
    let mut y = start.to_vec();
    let mut k: Vec<Vec<T>> = vec![vec![T::zero(); dim]; 7];
    rhs.eval_into(&y, &mut k[0])?;
    if k[0].iter().any(|v| !v.is_finite()) {
        return Err(DynamicsError::StartOffChart(format!("{start:?}")));
    }

    let mut times = vec![T::zero()];
    let mut states = vec![y.clone()];
    let mut derivs = vec![k[0].iter().map(|v| dir * *v).collect::<Vec<T>>()];
    let mut h = (t_final / T::from_f(100.0))
        .min(cfg.max_step)
        .max(cfg.min_step);
    let mut termination = Termination::Completed;

    let mut ytmp = vec![T::zero(); dim];
    let mut y5 = vec![T::zero(); dim];
    for _ in 0..cfg.max_steps {
        if t >= t_final {
            break;
        }
        h = h.min(t_final - t);
        // Stage evaluations (first stage reused from the previous step).
        let mut stage_ok = true;
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = T::zero();
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = T::from_f(DP_A[s - 1][j]);
                    if a != T::zero() {
                        acc += a * kj[i];
                    }
                }
                ytmp[i] = y[i] + dir * h * acc;
            }
            let _ = DP_C[s];
            if rhs.eval_into(&ytmp, &mut k[s]).is_err()
                || k[s].iter().any(|v| !v.is_finite())
            {
                stage_ok = false;
                break;
            }
        }
        if !stage_ok {
            h *= T::from_f(0.25);
            if h < cfg.min_step {
                termination = Termination::StepUnderflow { time: t.to_f() };
                break;
            }
            rhs.eval_into(&y, &mut k[0])?;
            continue;
        }
        let mut err_norm = T::zero();
        for i in 0..dim {
            let mut v5 = T::zero();
            let mut v4 = T::zero();
            for (j, kj) in k.iter().enumerate() {
                v5 += T::from_f(DP_B5[j]) * kj[i];
                v4 += T::from_f(DP_B4[j]) * kj[i];
            }
            y5[i] = y[i] + dir * h * v5;
            let scale = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y5[i].abs());
            let e = h * (v5 - v4) / scale;
            err_norm += e * e;
        }
        err_norm = (err_norm / T::from_f(dim as f64)).sqrt();

        if err_norm <= T::one() || h <= cfg.min_step {
            t += h;
            y.copy_from_slice(&y5);
            // FSAL: the last stage is the derivative at the new point.
            let (head, tail) = k.split_at_mut(1);
            head[0].copy_from_slice(&tail[5]);
            times.push(dir * t);
            states.push(y.clone());
            derivs.push(k[0].iter().map(|v| dir * *v).collect());
            if y.iter().any(|v| v.abs() > cfg.blowup_threshold) {
                termination = Termination::BlowUp {
                    time: (dir * t).to_f(),
                };
                break;
            }
        }
        let factor = if err_norm == T::zero() {
            T::from_f(5.0)
        } else {
            (T::from_f(0.9) * err_norm.powf(T::from_f(-0.2)))
                .max(T::from_f(0.2))
                .min(T::from_f(5.0))
        };
        h = (h * factor).min(cfg.max_step).max(cfg.min_step);
        if h <= cfg.min_step && err_norm > T::one() {
            termination = Termination::StepUnderflow {
                time: (dir * t).to_f(),
            };
            break;
        }
    }
    if t < t_final
        && termination == Termination::Completed
    {
        // Step budget exhausted without reaching the horizon.
        termination = Termination::StepUnderflow {
            time: (dir * t).to_f(),
        };
    }

    Ok(Trajectory {
        var_names,
        times,
        states,
        derivs,
        logs: Vec::new(),
        termination,
    })
}

/// Integrate the Hamilton flow of `p` in a canonical chart from
/// `(x..., xi...)`. The conserved-symbol log records `|p - p(0)|`.
pub fn integrate_hamilton<T: Scalar>(
    p: &SymExpr<T>,
    chart: &ChartSpec,
    start: &[T],
    t_end: T,
    cfg: &FlowConfig<T>,
) -> Result<Trajectory<T>, DynamicsError> {
    let field = hamilton_field(p, chart)?;
    let mut traj = integrate(&field, field.vars.clone(), start, t_end, cfg)?;
    let names: Vec<&str> = traj.var_names.iter().map(|s| s.as_str()).collect();
    let p0 = {
        let env: Vec<(&str, CNum<T>)> = names
            .iter()
            .zip(start)
            .map(|(n, v)| (*n, cre(*v)))
            .collect();
        p.eval(&env)?.re
    };
    let mut values = Vec::with_capacity(traj.states.len());
    let mut drift = Vec::with_capacity(traj.states.len());
    for s in &traj.states {
        let env: Vec<(&str, CNum<T>)> =
            names.iter().zip(s).map(|(n, v)| (*n, cre(*v))).collect();
        let v = p.eval(&env)?.re;
        values.push(v);
        drift.push((v - p0).abs());
    }
    traj.logs.push(("symbol-value".to_string(), values));
    traj.logs.push(("symbol-drift".to_string(), drift));
    Ok(traj)
}

/// Solve `beta(y, theta) = target` for `y` by Newton with the symbolic
/// Jacobian (seeded at `y = target`, which is exact on the radial set).
fn invert_beta<T: Scalar>(
    chart: &RadialChart<T>,
    beta_target: &[T],
    theta: &[T],
) -> Result<Vec<T>, DynamicsError> {
    let ny = chart.conic.y.len();
    if ny == 0 {
        return Ok(Vec::new());
    }
    let mut y: Vec<T> = beta_target.to_vec();
    let jac: Vec<Vec<SymExpr<T>>> = chart
        .beta
        .iter()
        .map(|b| {
            chart
                .conic
                .y
                .iter()
                .map(|yv| crate::expr::differentiate(b, yv))
                .collect()
        })
        .collect();
    for _ in 0..50 {
        let mut env: Vec<(&str, CNum<T>)> = Vec::with_capacity(2 * ny);
        for (n, v) in chart.conic.y.iter().zip(&y) {
            env.push((n.as_str(), cre(*v)));
        }
        for (n, v) in chart.conic.theta.iter().zip(theta) {
            env.push((n.as_str(), cre(*v)));
        }
        let mut resid = vec![T::zero(); ny];
        let mut max_resid = T::zero();
        for (i, b) in chart.beta.iter().enumerate() {
            resid[i] = b.eval(&env)?.re - beta_target[i];
            max_resid = max_resid.max(resid[i].abs());
        }
        if max_resid < T::from_f(1e-13) {
            return Ok(y);
        }
        let mut a = vec![vec![T::zero(); ny]; ny];
        for i in 0..ny {
            for j in 0..ny {
                a[i][j] = jac[i][j].eval(&env)?.re;
            }
        }
        let delta = solve_linear(&mut a, &mut resid).ok_or(DynamicsError::NewtonFailure)?;
        for (yi, d) in y.iter_mut().zip(&delta) {
            *yi -= *d;
        }
    }
    Err(DynamicsError::NewtonFailure)
}

/// Gaussian elimination with partial pivoting for the small Newton systems.
fn solve_linear<T: Scalar>(a: &mut [Vec<T>], b: &mut [T]) -> Option<Vec<T>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|i, j| {
            a[*i][col]
                .abs()
                .partial_cmp(&a[*j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot][col].abs() < T::from_f(1e-14) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// The rescaled flow field in internal coordinates `(y, z, theta, x)` with
/// `x = 1/zeta`; all components are fiber-degree 0, so substituting
/// `zeta -> 1/x` eliminates the scale.
fn rescaled_field<T: Scalar>(chart: &RadialChart<T>) -> VectorFieldSym<T> {
    let conic = &chart.conic;
    let zeta = SymExpr::var(&conic.zeta);
    let weight = SymExpr::powf(&zeta, T::one() - chart.m);
    let inv_x = SymExpr::div(&SymExpr::one(), &SymExpr::var("x"));
    let sub = [(conic.zeta.as_str(), inv_x)];
    let mut vars = Vec::new();
    let mut coeffs = Vec::new();
    for name in conic
        .y
        .iter()
        .chain(std::iter::once(&conic.z))
        .chain(conic.theta.iter())
    {
        let coeff = SymExpr::mul(&weight, chart.hp.coeff(name).expect("conic coefficient"));
        vars.push(name.clone());
        coeffs.push(substitute(&coeff, &sub));
    }
    // x-direction: W_p x = zeta^{1-m} H_p (1/zeta).
    let x_coeff = SymExpr::mul(&weight, &chart.hp.apply(&SymExpr::div(&SymExpr::one(), &zeta)));
    vars.push("x".to_string());
    coeffs.push(substitute(&x_coeff, &sub));
    VectorFieldSym::new(vars, coeffs)
}

/// Integrate the rescaled flow from a cosphere start `(alpha..., beta..., x)`
/// on the characteristic set. The trajectory is reported in cosphere
/// coordinates; the log `rescale-residual` records `|W_p x - lambda0 x|`
/// along the path.
pub fn integrate_rescaled<T: Scalar>(
    chart: &RadialChart<T>,
    start_cosphere: &[T],
    t_end: T,
    cfg: &FlowConfig<T>,
) -> Result<Trajectory<T>, DynamicsError> {
    let conic = &chart.conic;
    let d = conic.theta.len();
    assert_eq!(start_cosphere.len(), 2 * d + 1);
    let (alpha0, rest) = start_cosphere.split_at(d);
    let (beta0, x0s) = rest.split_at(d);
    let x0 = x0s[0];
    if x0 <= T::zero() {
        return Err(DynamicsError::StartOffChart("x must be positive".into()));
    }
    let y0 = invert_beta(chart, beta0, alpha0)?;
    let mut env: Vec<(&str, CNum<T>)> = Vec::new();
    for (n, v) in conic.y.iter().zip(&y0) {
        env.push((n.as_str(), cre(*v)));
    }
    for (n, v) in conic.theta.iter().zip(alpha0) {
        env.push((n.as_str(), cre(*v)));
    }
    let z0 = chart.z_on_sigma.eval(&env)?.re;

    let mut start = y0.clone();
    start.push(z0);
    start.extend_from_slice(alpha0);
    start.push(x0);
    let field = rescaled_field(chart);
    let internal = integrate(&field, field.vars.clone(), &start, t_end, cfg)?;

    // Map to cosphere coordinates and log the eigen-relation residual.
    let mut names: Vec<String> = (1..=d).map(|i| format!("alpha{i}")).collect();
    names.extend((1..=d).map(|i| format!("beta{i}")));
    names.push("x".to_string());
    let internal_names: Vec<&str> = internal.var_names.iter().map(|s| s.as_str()).collect();
    let lambda0 = substitute(
        &chart.lambda0_expr(),
        &[(
            conic.zeta.as_str(),
            SymExpr::div(&SymExpr::one(), &SymExpr::var("x")),
        )],
    );
    let x_coeff = field.coeff("x").expect("x coefficient").clone();
    let mut states = Vec::with_capacity(internal.states.len());
    let mut residuals = Vec::with_capacity(internal.states.len());
    for s in &internal.states {
        let env: Vec<(&str, CNum<T>)> = internal_names
            .iter()
            .zip(s)
            .map(|(n, v)| (*n, cre(*v)))
            .collect();
        let mut row = Vec::with_capacity(2 * d + 1);
        for th in &conic.theta {
            row.push(
                env.iter()
                    .find(|(n, _)| n == &th.as_str())
                    .map(|(_, v)| v.re)
                    .unwrap(),
            );
        }
        for b in &chart.beta {
            row.push(b.eval(&env)?.re);
        }
        let x = env
            .iter()
            .find(|(n, _)| *n == "x")
            .map(|(_, v)| v.re)
            .unwrap();
        row.push(x);
        let wx = x_coeff.eval(&env)?.re;
        let l0 = lambda0.eval(&env)?.re;
        residuals.push((wx - l0 * x).abs());
        states.push(row);
    }
    Ok(Trajectory {
        var_names: names,
        times: internal.times,
        states,
        derivs: internal.derivs,
        logs: vec![("rescale-residual".to_string(), residuals)],
        termination: internal.termination,
    })
}

/// The cosphere flow restricted to the characteristic set, in internal
/// `(y, theta)` coordinates.
fn cosphere_field<T: Scalar>(chart: &RadialChart<T>) -> VectorFieldSym<T> {
    let conic = &chart.conic;
    let zeta = SymExpr::var(&conic.zeta);
    let weight = SymExpr::powf(&zeta, T::one() - chart.m);
    let sub = [
        (conic.z.as_str(), chart.z_on_sigma.clone()),
        (conic.zeta.as_str(), SymExpr::one()),
    ];
    let mut vars = Vec::new();
    let mut coeffs = Vec::new();
    for name in conic.y.iter().chain(conic.theta.iter()) {
        let coeff = SymExpr::mul(&weight, chart.hp.coeff(name).expect("conic coefficient"));
        vars.push(name.clone());
        coeffs.push(substitute(&coeff, &sub));
    }
    VectorFieldSym::new(vars, coeffs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FlowDirection {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Serialize)]
pub enum GammaResult {
    /// The flow reaches the point in the given time direction.
    Member { direction: FlowDirection },
    /// The flow settles on the radial set away from the point.
    NonMember { final_distance: f64 },
    /// Budget exhausted outside the detection radius.
    Inconclusive,
}

/// Decide whether the cosphere point `(alpha0, beta0)` flows into `q` (beta
/// coordinates on the radial set) in forward or backward time. Membership
/// needs the distance to enter the outer radius and decrease monotonically
/// below the inner one; convergence to the radial set elsewhere is a
/// definite non-member.
pub fn gamma_membership<T: Scalar>(
    chart: &RadialChart<T>,
    q_beta: &[T],
    alpha0: &[T],
    beta0: &[T],
    cfg: &FlowConfig<T>,
) -> Result<GammaResult, DynamicsError> {
    let d = chart.conic.theta.len();
    let alpha_norm0 = alpha0.iter().map(|v| *v * *v).sum::<T>().sqrt();
    if alpha_norm0 < T::from_f(1e-12) {
        return Err(DynamicsError::OnRadialSet);
    }
    let y0 = invert_beta(chart, beta0, alpha0)?;
    let mut start = y0;
    start.extend_from_slice(alpha0);
    let field = cosphere_field(chart);

    let distance = |state: &[T]| -> Result<(T, T), DynamicsError> {
        // Returns (distance to q in (alpha, beta), |alpha|).
        let env: Vec<(&str, CNum<T>)> = field
            .vars
            .iter()
            .map(|s| s.as_str())
            .zip(state.iter().copied().map(cre))
            .collect();
        let mut d2 = T::zero();
        let mut a2 = T::zero();
        for th in &chart.conic.theta {
            let v = env
                .iter()
                .find(|(n, _)| n == &th.as_str())
                .map(|(_, v)| v.re)
                .unwrap();
            d2 += v * v;
            a2 += v * v;
        }
        for (b, q) in chart.beta.iter().zip(q_beta) {
            let v = b.eval(&env)?.re - *q;
            d2 += v * v;
        }
        Ok((d2.sqrt(), a2.sqrt()))
    };

    let mut best_nonmember: Option<T> = None;
    for (direction, sign) in [
        (FlowDirection::Forward, T::one()),
        (FlowDirection::Backward, -T::one()),
    ] {
        let traj = integrate(
            &field,
            field.vars.clone(),
            &start,
            sign * cfg.max_time,
            cfg,
        )?;
        let mut entered = false;
        let mut monotone = true;
        let mut prev = T::infinity();
        let mut last_distance = T::infinity();
        let mut alpha_tail = T::infinity();
        for state in &traj.states {
            let (dist, anorm) = distance(state)?;
            if entered && dist > prev + T::from_f(1e-9) * (T::one() + prev) {
                monotone = false;
            }
            if dist < cfg.convergence_radius {
                entered = true;
            }
            prev = dist;
            last_distance = dist;
            alpha_tail = anorm;
        }
        if entered && monotone && last_distance < cfg.confirm_radius {
            return Ok(GammaResult::Member { direction });
        }
        // Settled on the radial set but away from q.
        if alpha_tail < cfg.confirm_radius && last_distance > cfg.convergence_radius {
            best_nonmember = Some(best_nonmember.map_or(last_distance, |b: T| b.min(last_distance)));
        }
        let _ = d;
    }
    if let Some(dist) = best_nonmember {
        return Ok(GammaResult::NonMember {
            final_distance: dist.to_f(),
        });
    }
    Ok(GammaResult::Inconclusive)
}

#[derive(Debug, Clone, Serialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub points: usize,
    pub residual: f64,
}

/// Least-squares slope of `log |alpha|` along a cosphere trajectory tail
/// inside the linearization radius; the slope estimates the nonzero
/// linearization eigenvalue.
pub fn linearization_rate<T: Scalar>(
    traj: &Trajectory<T>,
    radius: T,
) -> Result<RateEstimate, DynamicsError> {
    let d = traj
        .var_names
        .iter()
        .filter(|n| n.starts_with("alpha"))
        .count();
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for (t, state) in traj.times.iter().zip(&traj.states) {
        let a2: T = state[..d].iter().map(|v| *v * *v).sum();
        let a = a2.sqrt();
        if a > T::from_f(1e-14) && a <= radius {
            ts.push(*t);
            logs.push(a.ln());
        }
    }
    if ts.len() < 5 {
        return Err(DynamicsError::TailTooShort(ts.len()));
    }
    let n = T::from_f(ts.len() as f64);
    let mean_t = ts.iter().copied().fold(T::zero(), |a, b| a + b) / n;
    let mean_l = logs.iter().copied().fold(T::zero(), |a, b| a + b) / n;
    let mut num = T::zero();
    let mut den = T::zero();
    for (t, l) in ts.iter().zip(&logs) {
        num += (*t - mean_t) * (*l - mean_l);
        den += (*t - mean_t) * (*t - mean_t);
    }
    let slope = num / den;
    let mut ss = T::zero();
    for (t, l) in ts.iter().zip(&logs) {
        let fit = mean_l + slope * (*t - mean_t);
        ss += (*l - fit) * (*l - fit);
    }
    Ok(RateEstimate {
        rate: slope.to_f(),
        points: ts.len(),
        residual: (ss / n).sqrt().to_f(),
    })
}

/// Discrete symmetric Hausdorff-style distance between two polylines.
pub fn path_distance<T: Scalar>(a: &[Vec<T>], b: &[Vec<T>]) -> T {
    let one_sided = |p: &[Vec<T>], q: &[Vec<T>]| -> T {
        let mut worst = T::zero();
        for point in p {
            let mut best = T::infinity();
            for w in q.windows(2) {
                best = best.min(point_segment_distance(point, &w[0], &w[1]));
            }
            if q.len() == 1 {
                best = dist(point, &q[0]);
            }
            worst = worst.max(best);
        }
        worst
    };
    one_sided(a, b).max(one_sided(b, a))
}

fn dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum::<T>()
        .sqrt()
}

fn point_segment_distance<T: Scalar>(p: &[T], a: &[T], b: &[T]) -> T {
    let mut ab2 = T::zero();
    let mut ap_ab = T::zero();
    for i in 0..p.len() {
        let d = b[i] - a[i];
        ab2 += d * d;
        ap_ab += (p[i] - a[i]) * d;
    }
    let t = if ab2 == T::zero() {
        T::zero()
    } else {
        (ap_ab / ab2).max(T::zero()).min(T::one())
    };
    let proj: Vec<T> = a
        .iter()
        .zip(b)
        .map(|(x, y)| *x + t * (*y - *x))
        .collect();
    dist(p, &proj)
}

#[cfg(test)]
#[path = "dynamics_tests.rs"]
mod tests;
