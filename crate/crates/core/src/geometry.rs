//! Charts and normal forms around a radial Lagrangian.
//!
//! The working setup: a canonical chart `(x, xi)` in which the Lagrangian is
//! the conormal model `{x_n = 0, xi' = 0}` on a fiber branch, a conic chart
//! `(y, z, theta, zeta)` obtained by dividing out the fiber scale, and on top
//! of that the normal coordinates `(eta0, alpha, beta, zeta)` in which the
//! characteristic set, the Lagrangian and the flow eigenstructure are in
//! model position. The polar blow-up of the radial set lives at the end of
//! the file.

use crate::expr::{
    differentiate, hamilton_field, homogeneity_degree, sample::equal_on_samples_tol,
    sample::sample_points, sample_point_string, substitute, ChartSpec, ExprError, SampleBox,
    SpecialFn, SymExpr, VectorFieldSym,
};
use crate::scalar::{cre, CNum, Scalar};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("symbol is not fiber-homogeneous; cannot determine its order")]
    NotHomogeneous,
    #[error("symbol does not vanish on the Lagrangian at {point} (value {value})")]
    NotVanishing { point: String, value: f64 },
    #[error("degenerate normal direction: d_z p vanishes on the Lagrangian at {point}")]
    Degenerate { point: String },
    #[error("Hamilton field is not radial on the Lagrangian at {point} (residual {residual})")]
    NotRadial { point: String, residual: f64 },
    #[error("zero fiber direction")]
    ZeroFiber,
    #[error("region touches the excluded fiber branch (need {0} > 0)")]
    WrongBranch(String),
    #[error("degenerate radial point: |lambda0| = {0} below tolerance")]
    DegenerateRadialPoint(f64),
    #[error("eigen relation {relation} violated at {point} (residual {residual})")]
    EigenViolation {
        relation: String,
        point: String,
        residual: f64,
    },
    #[error("field does not vanish on the radial set: coefficient {index} at {point}")]
    NotVanishingOnCenter { index: usize, point: String },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("{0}")]
    Invalid(String),
}

/// Conic chart `(y, z, theta, zeta)` over a canonical chart: base split into
/// tangential `y` and normal `z = x_n`, fiber reduced to the degree-0 ratios
/// `theta_i = xi_i / xi_n` and the degree-1 scale `zeta = +-xi_n`.
#[derive(Debug, Clone)]
pub struct ConicChart {
    pub canonical: ChartSpec,
    pub y: Vec<String>,
    pub z: String,
    pub theta: Vec<String>,
    pub zeta: String,
    /// Branch sign: `zeta = branch * xi_n`, positive on the working region.
    pub branch: f64,
}

impl ConicChart {
    pub fn new(canonical: &ChartSpec, positive_branch: bool) -> Self {
        let n = canonical.dim();
        assert!(n >= 1, "need at least one base dimension");
        Self {
            canonical: canonical.clone(),
            y: (1..n).map(|i| format!("y{i}")).collect(),
            z: "z".to_string(),
            theta: (1..n).map(|i| format!("th{i}")).collect(),
            zeta: "zeta".to_string(),
            branch: if positive_branch { 1.0 } else { -1.0 },
        }
    }

    pub fn dim(&self) -> usize {
        self.y.len() + 1
    }

    /// Conic variables in canonical order: y..., z, theta..., zeta.
    pub fn vars(&self) -> Vec<String> {
        let mut v = self.y.clone();
        v.push(self.z.clone());
        v.extend(self.theta.iter().cloned());
        v.push(self.zeta.clone());
        v
    }

    fn branch_const<T: Scalar>(&self) -> SymExpr<T> {
        SymExpr::constant(T::from_f(self.branch))
    }

    /// Old canonical variables expressed in conic variables
    /// (`x_i -> y_i`, `x_n -> z`, `xi_i -> theta_i * (b zeta)`, `xi_n -> b zeta`).
    fn inverse_substitution<T: Scalar>(&self) -> Vec<(&str, SymExpr<T>)> {
        let n = self.dim();
        let mut map: Vec<(&str, SymExpr<T>)> = Vec::with_capacity(2 * n);
        for (i, y) in self.y.iter().enumerate() {
            map.push((self.canonical.base[i].as_str(), SymExpr::var(y)));
        }
        map.push((self.canonical.base[n - 1].as_str(), SymExpr::var(&self.z)));
        let signed_zeta = SymExpr::mul(&self.branch_const(), &SymExpr::var(&self.zeta));
        for (i, th) in self.theta.iter().enumerate() {
            map.push((
                self.canonical.fiber[i].as_str(),
                SymExpr::mul(&SymExpr::var(th), &signed_zeta),
            ));
        }
        map.push((self.canonical.fiber[n - 1].as_str(), signed_zeta));
        map
    }

    /// Conic coordinates as expressions in the canonical variables.
    fn forward_exprs<T: Scalar>(&self) -> Vec<(String, SymExpr<T>)> {
        let n = self.dim();
        let xin = SymExpr::var(&self.canonical.fiber[n - 1]);
        let mut out = Vec::with_capacity(2 * n);
        for (i, y) in self.y.iter().enumerate() {
            out.push((y.clone(), SymExpr::var(&self.canonical.base[i])));
        }
        out.push((self.z.clone(), SymExpr::var(&self.canonical.base[n - 1])));
        for (i, th) in self.theta.iter().enumerate() {
            out.push((
                th.clone(),
                SymExpr::div(&SymExpr::var(&self.canonical.fiber[i]), &xin),
            ));
        }
        out.push((self.zeta.clone(), SymExpr::mul(&self.branch_const(), &xin)));
        out
    }

    /// Transform a function on the canonical chart to its conic representative.
    pub fn to_conic_expr<T: Scalar>(&self, e: &SymExpr<T>) -> SymExpr<T> {
        substitute(e, &self.inverse_substitution())
    }

    /// Push a vector field forward through the chart change (chain rule on
    /// each new coordinate, then rewrite in the new variables).
    pub fn push_forward<T: Scalar>(&self, field: &VectorFieldSym<T>) -> VectorFieldSym<T> {
        let inverse = self.inverse_substitution();
        let mut vars = Vec::new();
        let mut coeffs = Vec::new();
        for (name, expr) in self.forward_exprs::<T>() {
            vars.push(name);
            coeffs.push(substitute(&field.apply(&expr), &inverse));
        }
        VectorFieldSym::new(vars, coeffs)
    }

    /// Map a canonical point to conic coordinates. Fails off the branch.
    pub fn point_to_conic<T: Scalar>(&self, x: &[T], xi: &[T]) -> Result<Vec<T>, GeometryError> {
        let n = self.dim();
        assert_eq!(x.len(), n);
        assert_eq!(xi.len(), n);
        let signed = T::from_f(self.branch) * xi[n - 1];
        if signed <= T::zero() {
            return Err(GeometryError::WrongBranch(format!(
                "{} * {}",
                self.branch,
                self.canonical.fiber[n - 1]
            )));
        }
        let mut out = Vec::with_capacity(2 * n);
        out.extend_from_slice(&x[..n - 1]);
        out.push(x[n - 1]);
        for i in 0..n - 1 {
            out.push(xi[i] / xi[n - 1]);
        }
        out.push(signed);
        Ok(out)
    }
}

/// Lagrangian in conormal model position `{x_n = 0, xi' = 0}` on one fiber
/// branch of the declared canonical chart.
#[derive(Debug, Clone)]
pub struct LagrangianSpec {
    pub chart: ChartSpec,
    pub positive_branch: bool,
}

impl LagrangianSpec {
    pub fn new(chart: ChartSpec) -> Self {
        Self {
            chart,
            positive_branch: true,
        }
    }

    pub fn negative_branch(mut self) -> Self {
        self.positive_branch = false;
        self
    }
}

/// Solves `p(y, z, theta) = 0` for `z` by damped Newton from `z = 0`.
/// Partial derivatives come from the implicit function theorem, so the node
/// differentiates exactly even without a closed form.
pub struct ImplicitZ<T: Scalar> {
    /// Degree-0 reduction of the symbol (`zeta` set to 1).
    p: SymExpr<T>,
    dp_dz: SymExpr<T>,
    z: String,
    args: Vec<String>,
    tol: T,
}

impl<T: Scalar> ImplicitZ<T> {
    fn solve(&self, vals: &[CNum<T>]) -> T {
        let mut env: Vec<(&str, CNum<T>)> = self
            .args
            .iter()
            .map(|n| n.as_str())
            .zip(vals.iter().copied())
            .collect();
        env.push((self.z.as_str(), cre(T::zero())));
        let zslot = env.len() - 1;
        let mut z = T::zero();
        let mut residual = match self.p.eval(&env) {
            Ok(v) => v.re,
            Err(_) => return T::nan(),
        };
        for _ in 0..60 {
            if residual.abs() <= self.tol {
                return z;
            }
            let slope = match self.dp_dz.eval(&env) {
                Ok(v) => v.re,
                Err(_) => return T::nan(),
            };
            if slope.abs() < T::from_f(1e-14) {
                return T::nan();
            }
            let mut step = residual / slope;
            // Damped update: halve the step until the residual shrinks.
            for _ in 0..40 {
                env[zslot].1 = cre(z - step);
                let next = match self.p.eval(&env) {
                    Ok(v) => v.re,
                    Err(_) => return T::nan(),
                };
                if next.abs() < residual.abs() || step.abs() < self.tol {
                    z -= step;
                    residual = next;
                    break;
                }
                step /= T::from_f(2.0);
            }
        }
        if residual.abs() <= T::from_f(1e3) * self.tol {
            z
        } else {
            T::nan()
        }
    }
}

impl<T: Scalar> SpecialFn<T> for ImplicitZ<T> {
    fn name(&self) -> &str {
        "implicit_z"
    }
    fn arity(&self) -> usize {
        self.args.len()
    }
    fn eval(&self, args: &[CNum<T>]) -> CNum<T> {
        cre(self.solve(args))
    }
    fn partial(&self, args: &[SymExpr<T>], k: usize) -> SymExpr<T> {
        // dz/dv_k = -(d_v_k p / d_z p) at the solved root.
        let ratio = SymExpr::neg(&SymExpr::div(
            &differentiate(&self.p, &self.args[k]),
            &self.dp_dz,
        ));
        let mut map: Vec<(&str, SymExpr<T>)> = self
            .args
            .iter()
            .map(|n| n.as_str())
            .zip(args.iter().cloned())
            .collect();
        let z_node = SymExpr::apply(
            Arc::new(Self {
                p: self.p.clone(),
                dp_dz: self.dp_dz.clone(),
                z: self.z.clone(),
                args: self.args.clone(),
                tol: self.tol,
            }),
            args.to_vec(),
        );
        map.push((self.z.as_str(), z_node));
        substitute(&ratio, &map)
    }
}

/// Normal coordinates around the radial set: `eta0` cuts out the
/// characteristic set, `alpha` the Lagrangian inside it, `beta` parameterizes
/// the Lagrangian, `zeta` is the fiber scale, and `lambda = -H_p zeta` is the
/// elliptic eigenvalue factor.
#[derive(Debug, Clone)]
pub struct RadialChart<T: Scalar> {
    pub conic: ConicChart,
    pub m: T,
    pub p_conic: SymExpr<T>,
    pub eta0: SymExpr<T>,
    pub alpha: Vec<SymExpr<T>>,
    pub beta: Vec<SymExpr<T>>,
    pub lambda: SymExpr<T>,
    /// Pushforward of the Hamilton field to the conic chart.
    pub hp: VectorFieldSym<T>,
    /// `z` restricted to the characteristic set, as a function of `(y, theta)`.
    pub z_on_sigma: SymExpr<T>,
}

const LAGRANGIAN_SAMPLES: usize = 24;
const VALIDATE_TOL: f64 = 1e-9;

fn lagrangian_env<'a, T: Scalar>(
    conic: &'a ConicChart,
    y: &[T],
    zeta: T,
) -> Vec<(&'a str, CNum<T>)> {
    let mut env: Vec<(&str, CNum<T>)> = Vec::new();
    for (name, v) in conic.y.iter().zip(y) {
        env.push((name.as_str(), cre(*v)));
    }
    env.push((conic.z.as_str(), cre(T::zero())));
    for name in &conic.theta {
        env.push((name.as_str(), cre(T::zero())));
    }
    env.push((conic.zeta.as_str(), cre(zeta)));
    env
}

fn lagrangian_samples<T: Scalar>(n_y: usize, count: usize, seed: u64) -> Vec<(Vec<T>, T)> {
    let names: Vec<String> = (0..n_y).map(|i| format!("s{i}")).collect();
    let mut ranges: Vec<(&str, f64, f64)> =
        names.iter().map(|n| (n.as_str(), -1.0, 1.0)).collect();
    ranges.push(("scale", 0.5, 2.0));
    let bounds = SampleBox::new(&ranges);
    sample_points(&bounds, count, seed)
        .into_iter()
        .map(|mut p| {
            let zeta = p.pop().unwrap();
            (p, zeta)
        })
        .collect()
}

/// Residual of `H_p` being radial at a canonical point: fiber gradient plus
/// the part of the base gradient transverse to the fiber direction.
pub fn radiality_residual<T: Scalar>(
    p: &SymExpr<T>,
    chart: &ChartSpec,
    x: &[T],
    xi: &[T],
) -> Result<T, GeometryError> {
    let n = chart.dim();
    assert_eq!(x.len(), n);
    assert_eq!(xi.len(), n);
    let norm2: T = xi.iter().map(|v| *v * *v).sum();
    if norm2 == T::zero() {
        return Err(GeometryError::ZeroFiber);
    }
    let mut env: Vec<(&str, CNum<T>)> = Vec::with_capacity(2 * n);
    for (name, v) in chart.base.iter().zip(x) {
        env.push((name.as_str(), cre(*v)));
    }
    for (name, v) in chart.fiber.iter().zip(xi) {
        env.push((name.as_str(), cre(*v)));
    }
    let mut dxi = Vec::with_capacity(n);
    let mut dx = Vec::with_capacity(n);
    for i in 0..n {
        dxi.push(differentiate(p, &chart.fiber[i]).eval_real(&env)?);
        dx.push(differentiate(p, &chart.base[i]).eval_real(&env)?);
    }
    let fiber_norm = dxi.iter().map(|v| *v * *v).sum::<T>().sqrt();
    let proj: T = dx.iter().zip(xi).map(|(a, b)| *a * *b).sum::<T>() / norm2;
    let transverse = dx
        .iter()
        .zip(xi)
        .map(|(a, b)| {
            let r = *a - proj * *b;
            r * r
        })
        .sum::<T>()
        .sqrt();
    Ok(fiber_norm + transverse)
}

/// Build the normal coordinates for a homogeneous symbol vanishing on the
/// model Lagrangian. Validates the preconditions (vanishing, nondegeneracy,
/// radiality) on seeded samples and verifies the eigen relations before
/// returning.
pub fn build_normal_coordinates<T: Scalar>(
    p: &SymExpr<T>,
    lag: &LagrangianSpec,
) -> Result<RadialChart<T>, GeometryError> {
    let m = homogeneity_degree(p, &lag.chart).ok_or(GeometryError::NotHomogeneous)?;
    let conic = ConicChart::new(&lag.chart, lag.positive_branch);
    let p_conic = conic.to_conic_expr(p);
    let dp_dz = differentiate(&p_conic, &conic.z);

    // Precondition sweep on the Lagrangian.
    let samples = lagrangian_samples::<T>(conic.y.len(), LAGRANGIAN_SAMPLES, 0xA11A);
    for (y, zeta) in &samples {
        let env = lagrangian_env(&conic, y, *zeta);
        let value = p_conic.eval_real(&env)?;
        let scale = T::one() + zeta.powf(m).abs();
        if value.abs() > T::from_f(VALIDATE_TOL) * scale {
            return Err(GeometryError::NotVanishing {
                point: sample_point_string(&env),
                value: value.to_f(),
            });
        }
        let slope = dp_dz.eval_real(&env)?;
        if slope.abs() <= T::from_f(1e-8) * scale {
            return Err(GeometryError::Degenerate {
                point: sample_point_string(&env),
            });
        }
        // Radiality in the canonical chart at the matching point.
        let n = conic.dim();
        let mut x = vec![T::zero(); n];
        let mut xi = vec![T::zero(); n];
        for (i, v) in y.iter().enumerate() {
            x[i] = *v;
        }
        xi[n - 1] = T::from_f(conic.branch) * *zeta;
        let residual = radiality_residual(p, &lag.chart, &x, &xi)?;
        if residual > T::from_f(VALIDATE_TOL) * scale {
            return Err(GeometryError::NotRadial {
                point: sample_point_string(&env),
                residual: residual.to_f(),
            });
        }
    }

    let hp_canonical = hamilton_field(p, &lag.chart)?;
    let hp = conic.push_forward(&hp_canonical);
    // lambda = -H_p zeta; with zeta = b xi_n this is b d_z p in conic form.
    let lambda = SymExpr::mul(&conic.branch_const(), &dp_dz);
    let zeta_var = SymExpr::var(&conic.zeta);
    let eta0 = SymExpr::div(&p_conic, &SymExpr::powf(&zeta_var, m));
    let alpha: Vec<SymExpr<T>> = conic.theta.iter().map(|n| SymExpr::var(n)).collect();

    // z on the characteristic set: closed form when the symbol is affine in
    // z, Newton-backed node otherwise.
    let p_deg0 = substitute(&p_conic, &[(conic.zeta.as_str(), SymExpr::one())]);
    let dp_dz_deg0 = differentiate(&p_deg0, &conic.z);
    let d2 = differentiate(&dp_dz_deg0, &conic.z);
    let mut arg_names = conic.y.clone();
    arg_names.extend(conic.theta.iter().cloned());
    let affine = {
        let mut ranges: Vec<(&str, f64, f64)> = arg_names
            .iter()
            .map(|n| (n.as_str(), -0.8, 0.8))
            .collect();
        ranges.push((conic.z.as_str(), -0.8, 0.8));
        let bounds = SampleBox::new(&ranges);
        equal_on_samples_tol(&d2, &SymExpr::zero(), &bounds, 30, 3, T::from_f(1e-10))
            .map(|r| r.equal)
            .unwrap_or(false)
    };
    let z_on_sigma = if affine {
        let at_zero = |e: &SymExpr<T>| substitute(e, &[(conic.z.as_str(), SymExpr::zero())]);
        SymExpr::neg(&SymExpr::div(&at_zero(&p_deg0), &at_zero(&dp_dz_deg0)))
    } else {
        let node = ImplicitZ {
            p: p_deg0.clone(),
            dp_dz: dp_dz_deg0.clone(),
            z: conic.z.clone(),
            args: arg_names.clone(),
            tol: T::from_f(1e-12),
        };
        SymExpr::apply(
            Arc::new(node),
            arg_names.iter().map(|n| SymExpr::var(n)).collect(),
        )
    };

    // beta_i = y_i - (d_theta_i p / d_z p) evaluated on the characteristic set.
    let on_sigma: Vec<(&str, SymExpr<T>)> = vec![
        (conic.z.as_str(), z_on_sigma.clone()),
        (conic.zeta.as_str(), SymExpr::one()),
    ];
    let mut beta = Vec::with_capacity(conic.y.len());
    for (i, y) in conic.y.iter().enumerate() {
        let ratio = SymExpr::div(&differentiate(&p_conic, &conic.theta[i]), &dp_dz);
        beta.push(SymExpr::sub(
            &SymExpr::var(y),
            &substitute(&ratio, &on_sigma),
        ));
    }

    let chart = RadialChart {
        conic,
        m,
        p_conic,
        eta0,
        alpha,
        beta,
        lambda,
        hp,
        z_on_sigma,
    };
    verify_eigen_relations(&chart, T::from_f(VALIDATE_TOL), 16, 0xE16E)?.into_result()?;
    Ok(chart)
}

#[derive(Debug, Clone)]
pub struct EigenRelationCheck {
    pub relation: String,
    pub max_value_residual: f64,
    pub max_derivative_residual: f64,
    pub worst_point: String,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct EigenReport {
    pub checks: Vec<EigenRelationCheck>,
    pub tolerance: f64,
}

impl EigenReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn first_violation(&self) -> Option<&EigenRelationCheck> {
        self.checks.iter().find(|c| !c.pass)
    }

    pub fn into_result(self) -> Result<Self, GeometryError> {
        match self.first_violation() {
            None => Ok(self),
            Some(v) => Err(GeometryError::EigenViolation {
                relation: v.relation.clone(),
                point: v.worst_point.clone(),
                residual: v.max_value_residual.max(v.max_derivative_residual),
            }),
        }
    }
}

/// Check second-order vanishing of the flow relations on the Lagrangian:
/// restricted to the characteristic set, `H_p alpha_i - (lambda/zeta) alpha_i`
/// and `H_p beta_i` must vanish together with their first transverse
/// derivatives at sampled Lagrangian points.
pub fn verify_eigen_relations<T: Scalar>(
    chart: &RadialChart<T>,
    tol: T,
    n_samples: usize,
    seed: u64,
) -> Result<EigenReport, GeometryError> {
    let conic = &chart.conic;
    let rate = SymExpr::div(&chart.lambda, &SymExpr::var(&conic.zeta));
    let mut relations: Vec<(String, SymExpr<T>)> = Vec::new();
    for (i, a) in chart.alpha.iter().enumerate() {
        let rel = SymExpr::sub(&chart.hp.apply(a), &SymExpr::mul(&rate, a));
        relations.push((format!("alpha{}", i + 1), rel));
    }
    for (i, b) in chart.beta.iter().enumerate() {
        relations.push((format!("beta{}", i + 1), chart.hp.apply(b)));
    }

    let on_sigma = [(conic.z.as_str(), chart.z_on_sigma.clone())];
    let samples = lagrangian_samples::<T>(conic.y.len(), n_samples, seed);
    let mut checks = Vec::new();
    for (name, rel) in &relations {
        let restricted = substitute(rel, &on_sigma);
        let transverse: Vec<SymExpr<T>> = conic
            .theta
            .iter()
            .map(|th| differentiate(&restricted, th))
            .collect();
        let mut max_value = T::zero();
        let mut max_deriv = T::zero();
        let mut worst = String::from("(none)");
        for (y, zeta) in &samples {
            let mut env = lagrangian_env(conic, y, *zeta);
            env.retain(|(n, _)| *n != conic.z.as_str());
            let scale = T::one() + zeta.powf(chart.m - T::one()).abs();
            let value = restricted.eval(&env)?.norm() / scale;
            if value > max_value {
                max_value = value;
                worst = sample_point_string(&env);
            }
            for d in &transverse {
                let dv = d.eval(&env)?.norm() / scale;
                if dv > max_deriv {
                    max_deriv = dv;
                    worst = sample_point_string(&env);
                }
            }
        }
        checks.push(EigenRelationCheck {
            relation: name.clone(),
            max_value_residual: max_value.to_f(),
            max_derivative_residual: max_deriv.to_f(),
            worst_point: worst,
            pass: max_value <= tol && max_deriv <= tol,
        });
    }
    Ok(EigenReport {
        checks,
        tolerance: tol.to_f(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPointKind {
    Sink,
    Source,
}

impl std::fmt::Display for FixedPointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FixedPointKind::Sink => write!(f, "sink"),
            FixedPointKind::Source => write!(f, "source"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Classification<T: Scalar> {
    pub kind: FixedPointKind,
    pub lambda0: T,
}

impl<T: Scalar> RadialChart<T> {
    pub fn n(&self) -> usize {
        self.conic.dim()
    }

    /// `lambda0 = lambda / zeta^m`, the degree-0 eigenvalue function.
    pub fn lambda0_expr(&self) -> SymExpr<T> {
        SymExpr::div(
            &self.lambda,
            &SymExpr::powf(&SymExpr::var(&self.conic.zeta), self.m),
        )
    }

    /// Environment for a representative of a Lagrangian point with the given
    /// `beta` coordinates (on the Lagrangian `beta = y`, `z = 0`, `theta = 0`).
    pub fn radial_point_env<'a>(&'a self, q_beta: &[T], zeta: T) -> Vec<(&'a str, CNum<T>)> {
        assert_eq!(q_beta.len(), self.conic.y.len());
        lagrangian_env(&self.conic, q_beta, zeta)
    }

    /// Fiber rescaling `zeta -> g * zeta` for a positive degree-0 factor `g`:
    /// returns the new scale and the matching eigenvalue factor
    /// `-H_p(g zeta)` as expressions on the original chart.
    pub fn rescaled_zeta(&self, g: &SymExpr<T>) -> (SymExpr<T>, SymExpr<T>) {
        let zeta = SymExpr::var(&self.conic.zeta);
        let zeta1 = SymExpr::mul(g, &zeta);
        let lambda1 = SymExpr::neg(&self.hp.apply(&zeta1));
        (zeta1, lambda1)
    }

    /// The cosphere restriction of the rescaled flow as a field in the
    /// normal coordinates `(alpha1.., beta1..)`. The internal `(y, theta)`
    /// representation is rewritten through a Newton-backed inverse of the
    /// `beta` map, so the result is valid beyond the radial set.
    pub fn cosphere_field(&self) -> VectorFieldSym<T> {
        let conic = &self.conic;
        let d = conic.theta.len();
        let zeta = SymExpr::var(&conic.zeta);
        let weight = SymExpr::powf(&zeta, T::one() - self.m);
        let on_sigma = [
            (conic.z.as_str(), self.z_on_sigma.clone()),
            (conic.zeta.as_str(), SymExpr::one()),
        ];
        let alpha_names: Vec<String> = (1..=d).map(|i| format!("alpha{i}")).collect();
        let beta_names: Vec<String> = (1..=d).map(|i| format!("beta{i}")).collect();

        // y_j as a function of (alpha, beta).
        let inverse = std::sync::Arc::new(BetaInverse {
            beta_exprs: self
                .beta
                .iter()
                .map(|b| substitute(b, &[(conic.zeta.as_str(), SymExpr::one())]))
                .collect(),
            y_names: conic.y.clone(),
            theta_names: conic.theta.clone(),
        });
        let mut args: Vec<SymExpr<T>> = alpha_names.iter().map(|n| SymExpr::var(n)).collect();
        args.extend(beta_names.iter().map(|n| SymExpr::var(n)));
        let mut rewrite: Vec<(&str, SymExpr<T>)> = Vec::new();
        for (j, th) in conic.theta.iter().enumerate() {
            rewrite.push((th.as_str(), SymExpr::var(&alpha_names[j])));
        }
        for (j, yv) in conic.y.iter().enumerate() {
            rewrite.push((
                yv.as_str(),
                SymExpr::apply(
                    std::sync::Arc::new(ComponentOf {
                        inner: inverse.clone(),
                        index: j,
                    }),
                    args.clone(),
                ),
            ));
        }

        let mut vars = Vec::with_capacity(2 * d);
        let mut coeffs = Vec::with_capacity(2 * d);
        for (i, a) in self.alpha.iter().enumerate() {
            let w_alpha = substitute(
                &SymExpr::mul(&weight, &self.hp.apply(a)),
                &on_sigma,
            );
            vars.push(alpha_names[i].clone());
            coeffs.push(substitute(&w_alpha, &rewrite));
        }
        for (i, b) in self.beta.iter().enumerate() {
            let w_beta = substitute(
                &SymExpr::mul(&weight, &self.hp.apply(b)),
                &on_sigma,
            );
            vars.push(beta_names[i].clone());
            coeffs.push(substitute(&w_beta, &rewrite));
        }
        VectorFieldSym::new(vars, coeffs)
    }
}

/// Newton-solved inverse of the `beta(y, theta)` coordinate map. Arguments
/// are `(alpha..., beta...)`; the solve is shared across components through
/// [`ComponentOf`].
struct BetaInverse<T: Scalar> {
    beta_exprs: Vec<SymExpr<T>>,
    y_names: Vec<String>,
    theta_names: Vec<String>,
}

impl<T: Scalar> BetaInverse<T> {
    fn solve(&self, args: &[CNum<T>]) -> Option<Vec<T>> {
        let d = self.y_names.len();
        let theta = &args[..d];
        let target = &args[d..];
        let mut y: Vec<T> = target.iter().map(|v| v.re).collect();
        for _ in 0..50 {
            let mut env: Vec<(&str, CNum<T>)> = Vec::with_capacity(2 * d);
            for (n, v) in self.y_names.iter().zip(&y) {
                env.push((n.as_str(), cre(*v)));
            }
            for (n, v) in self.theta_names.iter().zip(theta) {
                env.push((n.as_str(), *v));
            }
            let mut resid = vec![T::zero(); d];
            let mut worst = T::zero();
            for (i, b) in self.beta_exprs.iter().enumerate() {
                resid[i] = b.eval(&env).ok()?.re - target[i].re;
                worst = worst.max(resid[i].abs());
            }
            if worst < T::from_f(1e-13) {
                return Some(y);
            }
            let mut jac = vec![vec![T::zero(); d]; d];
            for (i, b) in self.beta_exprs.iter().enumerate() {
                for (j, yv) in self.y_names.iter().enumerate() {
                    jac[i][j] = differentiate(b, yv).eval(&env).ok()?.re;
                }
            }
            let delta = solve_small(&mut jac, &mut resid)?;
            for (yi, dl) in y.iter_mut().zip(&delta) {
                *yi -= *dl;
            }
        }
        None
    }
}

/// One component of a vector-valued special function.
struct ComponentOf<T: Scalar> {
    inner: std::sync::Arc<BetaInverse<T>>,
    index: usize,
}

impl<T: Scalar> SpecialFn<T> for ComponentOf<T> {
    fn name(&self) -> &str {
        "beta_inverse"
    }
    fn arity(&self) -> usize {
        2 * self.inner.y_names.len()
    }
    fn eval(&self, args: &[CNum<T>]) -> CNum<T> {
        match self.inner.solve(args) {
            Some(y) => cre(y[self.index]),
            None => CNum::new(T::nan(), T::zero()),
        }
    }
    fn partial(&self, args: &[SymExpr<T>], k: usize) -> SymExpr<T> {
        // Central difference in the k-th argument; the blow-up verifications
        // only evaluate these nodes, so a numeric rule is sufficient.
        let h = T::from_f(1e-6);
        let shift = |sgn: T| {
            let mut shifted = args.to_vec();
            shifted[k] = SymExpr::add(&shifted[k], &SymExpr::constant(sgn * h));
            SymExpr::apply(
                std::sync::Arc::new(Self {
                    inner: self.inner.clone(),
                    index: self.index,
                }),
                shifted,
            )
        };
        SymExpr::div(
            &SymExpr::sub(&shift(T::one()), &shift(-T::one())),
            &SymExpr::constant(T::from_f(2.0) * h),
        )
    }
}

/// Gaussian elimination with partial pivoting for small dense systems.
fn solve_small<T: Scalar>(a: &mut [Vec<T>], b: &mut [T]) -> Option<Vec<T>> {
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

/// Classify the radial set at `q` through the sign of `lambda0`.
pub fn sink_source_classify<T: Scalar>(
    chart: &RadialChart<T>,
    q_beta: &[T],
) -> Result<Classification<T>, GeometryError> {
    let env = chart.radial_point_env(q_beta, T::one());
    let lambda0 = chart.lambda0_expr().eval_real(&env)?;
    if lambda0.abs() < T::from_f(1e-8) {
        return Err(GeometryError::DegenerateRadialPoint(lambda0.to_f()));
    }
    Ok(Classification {
        kind: if lambda0 < T::zero() {
            FixedPointKind::Sink
        } else {
            FixedPointKind::Source
        },
        lambda0,
    })
}

/// Polar blow-up of `{alpha = 0}`: coordinates `(r, omega, beta)` with the
/// blowdown `(r, omega, beta) -> (r omega, beta)`. `omega` is kept as an
/// ambient unit vector; evaluation grids sample it on the sphere directly,
/// which avoids polar-angle singularities.
#[derive(Debug, Clone)]
pub struct BlowupChart {
    pub alpha: Vec<String>,
    pub beta: Vec<String>,
    pub r: String,
    pub omega: Vec<String>,
}

impl BlowupChart {
    pub fn new(alpha: &[String], beta: &[String]) -> Self {
        Self {
            alpha: alpha.to_vec(),
            beta: beta.to_vec(),
            r: "r".to_string(),
            omega: (1..=alpha.len()).map(|i| format!("w{i}")).collect(),
        }
    }

    fn blowdown_substitution<T: Scalar>(&self) -> Vec<(&str, SymExpr<T>)> {
        let r = SymExpr::var(&self.r);
        self.alpha
            .iter()
            .zip(&self.omega)
            .map(|(a, w)| (a.as_str(), SymExpr::mul(&r, &SymExpr::var(w))))
            .collect()
    }
}

/// The lifted field divided by the boundary-defining function `r`.
pub struct LiftedField<T: Scalar> {
    pub chart: BlowupChart,
    /// Radial component of the transversal factor.
    pub r_component: SymExpr<T>,
    /// Ambient tangential components along the sphere directions.
    pub omega_components: Vec<SymExpr<T>>,
    pub beta_components: Vec<SymExpr<T>>,
    /// Minimum of `|r_component|` sampled on the front face.
    pub front_face_min: T,
}

/// Deterministic unit-sphere samples in dimension `d` (two points for d = 1).
pub fn sphere_samples<T: Scalar>(d: usize, count: usize, seed: u64) -> Vec<Vec<T>> {
    if d == 1 {
        return vec![vec![T::one()], vec![-T::one()]];
    }
    let names: Vec<String> = (0..d).map(|i| format!("g{i}")).collect();
    let ranges: Vec<(&str, f64, f64)> = names.iter().map(|n| (n.as_str(), -1.0, 1.0)).collect();
    let bounds = SampleBox::new(&ranges);
    sample_points(&bounds, 3 * count, seed)
        .into_iter()
        .filter_map(|v: Vec<T>| {
            let norm = v.iter().map(|x| *x * *x).sum::<T>().sqrt();
            if norm < T::from_f(0.2) {
                None
            } else {
                Some(v.into_iter().map(|x| x / norm).collect())
            }
        })
        .take(count)
        .collect()
}

/// Lift a field vanishing on `{alpha = 0}` through the blow-up and divide by
/// `r`. Fails structurally if a coefficient does not vanish on the center.
pub fn blowup_lift<T: Scalar>(
    field: &VectorFieldSym<T>,
    chart: &BlowupChart,
) -> Result<LiftedField<T>, GeometryError> {
    let d = chart.alpha.len();
    assert!(d >= 1, "blow-up needs at least one alpha direction");

    // Linear-vanishing precondition, tested on the center.
    let beta_ranges: Vec<(&str, f64, f64)> = chart
        .beta
        .iter()
        .map(|b| (b.as_str(), -1.0, 1.0))
        .collect();
    let center_betas: Vec<Vec<T>> = if beta_ranges.is_empty() {
        vec![Vec::new()]
    } else {
        sample_points(&SampleBox::new(&beta_ranges), 16, 0xB10)
    };
    for (idx, coeff) in field.coeffs.iter().enumerate() {
        for betas in &center_betas {
            let mut env: Vec<(&str, CNum<T>)> = chart
                .alpha
                .iter()
                .map(|a| (a.as_str(), cre(T::zero())))
                .collect();
            for (b, v) in chart.beta.iter().zip(betas) {
                env.push((b.as_str(), cre(*v)));
            }
            let v = coeff.eval(&env)?;
            if v.norm() > T::from_f(1e-10) {
                return Err(GeometryError::NotVanishingOnCenter {
                    index: idx,
                    point: sample_point_string(&env),
                });
            }
        }
    }

    let sub = chart.blowdown_substitution::<T>();
    let r = SymExpr::var(&chart.r);
    let alpha_coeffs: Vec<SymExpr<T>> = chart
        .alpha
        .iter()
        .map(|a| substitute(field.coeff(a).expect("alpha coefficient"), &sub))
        .collect();
    let radial_numerator = SymExpr::sum(
        alpha_coeffs
            .iter()
            .zip(&chart.omega)
            .map(|(c, w)| SymExpr::mul(&SymExpr::var(w), c)),
    );
    let r_component = SymExpr::div(&radial_numerator, &r);
    let omega_components: Vec<SymExpr<T>> = alpha_coeffs
        .iter()
        .zip(&chart.omega)
        .map(|(c, w)| {
            let tangential = SymExpr::sub(c, &SymExpr::mul(&SymExpr::var(w), &radial_numerator));
            SymExpr::div(&tangential, &SymExpr::powi(&r, 2))
        })
        .collect();
    let beta_components: Vec<SymExpr<T>> = chart
        .beta
        .iter()
        .map(|b| {
            SymExpr::div(
                &substitute(field.coeff(b).expect("beta coefficient"), &sub),
                &r,
            )
        })
        .collect();

    // Front-face sample of |r-component| at r just off the face.
    let r_eval = T::from_f(1e-8);
    let mut front_face_min = T::infinity();
    for omega in sphere_samples::<T>(d, 24, 0x5EED) {
        for betas in &center_betas {
            let mut env: Vec<(&str, CNum<T>)> = vec![(chart.r.as_str(), cre(r_eval))];
            for (w, v) in chart.omega.iter().zip(&omega) {
                env.push((w.as_str(), cre(*v)));
            }
            for (b, v) in chart.beta.iter().zip(betas) {
                env.push((b.as_str(), cre(*v)));
            }
            let v = r_component.eval_real(&env)?.abs();
            if v < front_face_min {
                front_face_min = v;
            }
        }
    }

    Ok(LiftedField {
        chart: chart.clone(),
        r_component,
        omega_components,
        beta_components,
        front_face_min,
    })
}
