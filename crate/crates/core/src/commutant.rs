//! Escape-symbol families for the positive-commutator estimate.
//!
//! Given the normal-form chart, a regularizer family `rho_t` and cutoffs
//! built from `eta0, eta1 = |beta|^2 + C|alpha|^2, eta2 = |alpha|^2`, this
//! module assembles the families `b_t, g1_t, g2_t, e_t, h_t` satisfying
//!
//! `1/2 H_p b_t^2 + a b_t^2 = sign * (g1_t^2 + g2_t^2) + e_t`
//!
//! with `a` the subprincipal difference, `sign = sgn(lambda)` in the
//! below-threshold case and `-sgn(lambda)` above. `e_t` is the exact
//! product-rule remainder (spelled out term by term), so the identity holds
//! by algebra and the verification grid checks the implementation, while the
//! support checks confirm the remainder lives away from the radial set
//! (below) or the characteristic set (above), up to the compactly supported
//! fiber transition zone.
//!
//! Realness of `g1_t, g2_t` on their supports is the operational threshold
//! condition: the `g2` radicand changes sign exactly when `s` crosses the
//! threshold, and the builder reports that as a sign violation naming the
//! offending grid point.

use crate::expr::{special::ChiHat, special::SmoothStep, substitute, ExprError, SymExpr};
use crate::geometry::{GeometryError, RadialChart};
use crate::grid::Grid;
use crate::scalar::{cre, CNum, Scalar};
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CommutantError {
    #[error("above-threshold regularizer requires the a-priori order s1")]
    MissingS1,
    #[error("family parameter t must lie in [0, 1], got {0}")]
    BadFamilyParameter(f64),
    #[error("cutoff search exhausted: no (C, T) in the configured ranges satisfies the sign test")]
    SearchExhausted,
    #[error("sign violation at {point} (t = {t}): radicand {value} on the symbol support")]
    SignViolation { point: String, t: f64, value: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RegularizerCase {
    /// Low-regularity case: `s` below the threshold, compactly supported
    /// regularizers, cutoff constant `C < 0`.
    BelowS0,
    /// High-regularity case: `s` above the a-priori order `s1`, regularizers
    /// of order `s1` for `t > 0`, cutoff constant `C > 0`.
    AboveS1,
}

#[derive(Debug, Clone, Copy)]
pub struct RegularizerSpec<T: Scalar> {
    pub case: RegularizerCase,
    pub s: T,
    pub m: T,
    pub s1: Option<T>,
}

impl<T: Scalar> RegularizerSpec<T> {
    pub fn below(s: T, m: T) -> Self {
        Self {
            case: RegularizerCase::BelowS0,
            s,
            m,
            s1: None,
        }
    }

    pub fn above(s: T, m: T, s1: T) -> Self {
        Self {
            case: RegularizerCase::AboveS1,
            s,
            m,
            s1: Some(s1),
        }
    }

    /// Order of the `t = 0` symbol: `(2s - m + 1)/2`.
    pub fn base_order(&self) -> T {
        (T::from_f(2.0) * self.s - self.m + T::one()) / T::from_f(2.0)
    }

    pub fn validate(&self) -> Result<(), CommutantError> {
        if self.case == RegularizerCase::AboveS1 && self.s1.is_none() {
            return Err(CommutantError::MissingS1);
        }
        // The relations of s to the thresholds themselves are not checked
        // here: their operational meaning is the radicand sign test in the
        // symbol builder.
        Ok(())
    }
}

/// Regularizer family in the fiber scale.
#[derive(Debug, Clone)]
pub struct RhoFamily<T: Scalar> {
    pub spec: RegularizerSpec<T>,
    pub zeta: String,
}

/// Build the regularizer family for the given case.
pub fn make_rho<T: Scalar>(
    spec: RegularizerSpec<T>,
    zeta: &str,
) -> Result<RhoFamily<T>, CommutantError> {
    spec.validate()?;
    Ok(RhoFamily {
        spec,
        zeta: zeta.to_string(),
    })
}

impl<T: Scalar> RhoFamily<T> {
    pub fn at(&self, t: T) -> Result<SymExpr<T>, CommutantError> {
        if t < T::zero() || t > T::one() {
            return Err(CommutantError::BadFamilyParameter(t.to_f()));
        }
        let zeta = SymExpr::var(&self.zeta);
        let base = SymExpr::powf(&zeta, self.spec.base_order());
        if t == T::zero() {
            return Ok(base);
        }
        match self.spec.case {
            RegularizerCase::BelowS0 => {
                let damp = SymExpr::apply1(
                    Arc::new(ChiHat::default()),
                    SymExpr::mul(&SymExpr::constant(t), &zeta),
                );
                Ok(SymExpr::mul(&base, &damp))
            }
            RegularizerCase::AboveS1 => {
                let s1 = self.spec.s1.expect("validated");
                let decay = SymExpr::pow(
                    &SymExpr::add(
                        &SymExpr::one(),
                        &SymExpr::mul(&SymExpr::constant(t), &zeta),
                    ),
                    &SymExpr::constant(s1 - self.spec.s),
                );
                Ok(SymExpr::mul(&base, &decay))
            }
        }
    }

    /// Log2 slope of the family at large fiber scale (asymptotic order).
    pub fn asymptotic_order(&self, t: T, zeta_probe: T) -> Result<T, CommutantError> {
        let rho = self.at(t)?;
        let value = |z: T| -> T {
            rho.eval(&[(self.zeta.as_str(), cre(z))])
                .map(|v| v.norm())
                .unwrap_or(T::nan())
        };
        let lo = value(zeta_probe);
        let hi = value(zeta_probe * T::from_f(2.0));
        Ok((hi / lo).ln() / T::from_f(std::f64::consts::LN_2))
    }
}

/// Concrete cutoff data: the constant `C`, the profile knee `T` (with
/// plateau end `eps`), and the fiber transition start `zeta0`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CutoffSpec<T: Scalar> {
    pub c_const: T,
    pub t_cap: T,
    pub eps: T,
    pub zeta0: T,
}

#[derive(Debug, Clone)]
pub struct SearchConfig<T: Scalar> {
    /// Magnitude range for `C` (sign is fixed by the case).
    pub c_min: T,
    pub c_max: T,
    pub c_steps: usize,
    /// Profile knee candidates, tried from the largest down.
    pub t_max: T,
    pub t_steps: usize,
    pub zeta0: T,
    /// Relative margin for the sign test, in units of `|alpha|^2 |lambda| / zeta`.
    pub margin: T,
    pub grid: GridConfig<T>,
}

#[derive(Debug, Clone)]
pub struct GridConfig<T: Scalar> {
    pub per_dim: usize,
    pub zeta_points: usize,
    pub zeta_hi_factor: T,
    pub box_half_width: T,
}

impl<T: Scalar> Default for SearchConfig<T> {
    fn default() -> Self {
        Self {
            c_min: T::from_f(0.05),
            c_max: T::from_f(16.0),
            c_steps: 9,
            t_max: T::from_f(0.25),
            t_steps: 6,
            zeta0: T::from_f(8.0),
            margin: T::from_f(1e-4),
            grid: GridConfig::default(),
        }
    }
}

impl<T: Scalar> Default for GridConfig<T> {
    fn default() -> Self {
        Self {
            per_dim: 9,
            zeta_points: 7,
            zeta_hi_factor: T::from_f(4.0),
            box_half_width: T::from_f(1.2),
        }
    }
}

/// The cutoff functions and the quadratic gauges they are built from.
#[derive(Debug, Clone)]
pub struct CutoffBundle<T: Scalar> {
    pub spec: CutoffSpec<T>,
    pub eta0: SymExpr<T>,
    pub eta1: SymExpr<T>,
    pub eta2: SymExpr<T>,
    pub chi0: SymExpr<T>,
    pub chi1: SymExpr<T>,
    /// Present only in the below-threshold case.
    pub chi2: Option<SymExpr<T>>,
    pub rho_hat: SymExpr<T>,
}

fn chi_profile<T: Scalar>(eps: T, t_cap: T, arg: &SymExpr<T>) -> SymExpr<T> {
    let t_splice = eps + (t_cap - eps) * T::from_f(0.6);
    SymExpr::apply1(
        Arc::new(crate::expr::special::ChiTilde::new(eps, t_splice, t_cap)),
        arg.clone(),
    )
}

fn sum_of_squares<T: Scalar>(parts: &[SymExpr<T>]) -> SymExpr<T> {
    SymExpr::sum(parts.iter().map(|e| SymExpr::powi(e, 2)))
}

struct SupportPoint<T: Scalar> {
    values: Vec<T>,
    alpha_sq: T,
}

/// Gauge-derived half-widths of the joint cutoff support in the `(y, z,
/// theta)` directions, slightly padded so the grid sees the support edge.
fn support_extents<T: Scalar>(case: RegularizerCase, cap: T, c_const: T) -> (T, T, T) {
    let pad = T::from_f(1.05);
    let root = cap.sqrt();
    match case {
        // eta2 <= cap bounds theta; eta1 <= cap then bounds beta by
        // cap (1 + |C|).
        RegularizerCase::BelowS0 => (
            (cap * (T::one() + c_const.abs())).sqrt() * pad,
            root * T::from_f(1.5),
            root * pad,
        ),
        // eta1 <= cap with C > 0 bounds both beta and sqrt(C) theta.
        RegularizerCase::AboveS1 => (
            root * pad,
            root * T::from_f(1.5),
            (cap / c_const.max(T::from_f(1e-12))).sqrt() * pad,
        ),
    }
}

/// Enumerate conic-chart grid points inside the joint cutoff support
/// `{eta1 < cap, eta2 < cap, eta0^2 < cap}` within the given fiber band.
#[allow(clippy::too_many_arguments)]
fn support_points<T: Scalar>(
    chart: &RadialChart<T>,
    eta0: &SymExpr<T>,
    eta1: &SymExpr<T>,
    eta2: Option<&SymExpr<T>>,
    cap: T,
    extents: (T, T, T),
    zeta_lo: T,
    zeta_hi: T,
    grid_cfg: &GridConfig<T>,
) -> Result<(Vec<String>, Vec<SupportPoint<T>>), CommutantError> {
    let conic = &chart.conic;
    let (y_ext, z_ext, th_ext) = extents;
    let mut grid = Grid::new();
    for name in &conic.y {
        grid = grid.linear_axis(name, -y_ext, y_ext, grid_cfg.per_dim);
    }
    grid = grid.linear_axis(&conic.z, -z_ext, z_ext, grid_cfg.per_dim);
    for name in &conic.theta {
        grid = grid.linear_axis(name, -th_ext, th_ext, grid_cfg.per_dim);
    }
    grid = grid.geometric_axis(&conic.zeta, zeta_lo, zeta_hi, grid_cfg.zeta_points);
    let names: Vec<String> = grid.names().iter().map(|s| s.to_string()).collect();
    let mut kept = Vec::new();
    let mut env: Vec<(&str, CNum<T>)> = Vec::with_capacity(names.len());
    for point in grid.points() {
        env.clear();
        for (n, v) in names.iter().zip(&point) {
            env.push((n.as_str(), cre(*v)));
        }
        let e1 = eta1.eval_real(&env)?;
        if e1 >= cap {
            continue;
        }
        let mut alpha_sq = T::zero();
        if let Some(e2) = eta2 {
            let v2 = e2.eval_real(&env)?;
            alpha_sq = v2;
            if v2 >= cap {
                continue;
            }
        } else {
            // Above-threshold case has no eta2 cutoff, but the alpha scale
            // is still what the sign margin is measured against.
            for th in &conic.theta {
                let v = env
                    .iter()
                    .find(|(n, _)| *n == th.as_str())
                    .map(|(_, v)| v.re)
                    .unwrap_or(T::zero());
                alpha_sq += v * v;
            }
        }
        let e0 = eta0.eval_real(&env)?;
        if e0 * e0 >= cap {
            continue;
        }
        kept.push(SupportPoint {
            values: point,
            alpha_sq,
        });
    }
    Ok((names, kept))
}

/// Search for the cutoff constant `C` and profile knee `T` making the flow
/// derivative of `eta1` sign-definite against `lambda` on the joint cutoff
/// support, with a quantitative margin. Returns the cutoff bundle.
pub fn make_cutoffs<T: Scalar>(
    chart: &RadialChart<T>,
    case: RegularizerCase,
    cfg: &SearchConfig<T>,
    lambda_sign: T,
) -> Result<CutoffBundle<T>, CommutantError> {
    let conic = &chart.conic;
    let alpha_sq = sum_of_squares(&chart.alpha);
    let beta_sq = sum_of_squares(&chart.beta);
    let c_sign = match case {
        RegularizerCase::BelowS0 => -T::one(),
        RegularizerCase::AboveS1 => T::one(),
    };
    // Required sign of H_p eta1: opposite to lambda below, equal above.
    let required = match case {
        RegularizerCase::BelowS0 => -lambda_sign,
        RegularizerCase::AboveS1 => lambda_sign,
    };

    let c_values: Vec<T> = if cfg.c_steps <= 1 {
        vec![cfg.c_max]
    } else {
        (0..cfg.c_steps)
            .map(|i| {
                let f = T::from_f(i as f64 / (cfg.c_steps - 1) as f64);
                cfg.c_min * (cfg.c_max / cfg.c_min).powf(f)
            })
            .collect()
    };
    let t_values: Vec<T> = (0..cfg.t_steps)
        .map(|i| cfg.t_max * T::from_f(0.5).powi(i as i32))
        .collect();

    let zeta_lo = cfg.zeta0 * T::from_f(1.01);
    let zeta_hi = cfg.zeta0 * cfg.grid.zeta_hi_factor;
    let lambda_over_zeta = SymExpr::div(&chart.lambda, &SymExpr::var(&conic.zeta));

    for &c_mag in &c_values {
        let c_const = c_sign * c_mag;
        let eta1 = SymExpr::add(
            &beta_sq,
            &SymExpr::mul(&SymExpr::constant(c_const), &alpha_sq),
        );
        let flow_eta1 = chart.hp.apply(&eta1);
        for &t_cap in &t_values {
            // The cutoff support must stay well inside the working box; this
            // is the compactness half of the acceptance test.
            let extents = support_extents(case, t_cap, c_const);
            let budget = cfg.grid.box_half_width * T::from_f(0.8);
            if extents.0 > budget || extents.2 > budget {
                continue;
            }
            let (names, points) = support_points(
                chart,
                &chart.eta0,
                &eta1,
                Some(&alpha_sq),
                t_cap,
                extents,
                zeta_lo,
                zeta_hi,
                &cfg.grid,
            )?;
            if points.is_empty() {
                continue;
            }
            let mut ok = true;
            let mut env: Vec<(&str, CNum<T>)> = Vec::with_capacity(names.len());
            for pt in &points {
                env.clear();
                for (n, v) in names.iter().zip(&pt.values) {
                    env.push((n.as_str(), cre(*v)));
                }
                let v = required * flow_eta1.eval_real(&env)?;
                let rate = lambda_over_zeta.eval_real(&env)?.abs();
                let scale = pt.alpha_sq * rate;
                if scale > T::from_f(1e-14) {
                    if v < cfg.margin * scale {
                        ok = false;
                        break;
                    }
                } else if v.abs() > T::from_f(1e-12) * (T::one() + rate) {
                    ok = false;
                    break;
                }
            }
            if ok {
                let eps = t_cap * T::from_f(0.3);
                let spec = CutoffSpec {
                    c_const,
                    t_cap,
                    eps,
                    zeta0: cfg.zeta0,
                };
                let eta2 = alpha_sq.clone();
                let chi0 = chi_profile(eps, t_cap, &SymExpr::powi(&chart.eta0, 2));
                let chi1 = chi_profile(eps, t_cap, &eta1);
                let chi2 = match case {
                    RegularizerCase::BelowS0 => Some(chi_profile(eps, t_cap, &eta2)),
                    RegularizerCase::AboveS1 => None,
                };
                let rho_hat = SymExpr::apply1(
                    Arc::new(SmoothStep { deriv: 0 }),
                    SymExpr::sub(
                        &SymExpr::var(&conic.zeta),
                        &SymExpr::constant(cfg.zeta0),
                    ),
                );
                return Ok(CutoffBundle {
                    spec,
                    eta0: chart.eta0.clone(),
                    eta1,
                    eta2,
                    chi0,
                    chi1,
                    chi2,
                    rho_hat,
                });
            }
        }
    }
    Err(CommutantError::SearchExhausted)
}

/// The assembled symbol family.
#[derive(Clone)]
pub struct CommutantSymbols<T: Scalar> {
    pub case: RegularizerCase,
    pub lambda_sign: T,
    pub chart: RadialChart<T>,
    pub cutoffs: CutoffBundle<T>,
    pub rho: RhoFamily<T>,
    pub subprincipal: SymExpr<T>,
    grid_cfg: GridConfig<T>,
}

/// Symbols at one family parameter.
#[derive(Debug, Clone)]
pub struct SymbolSet<T: Scalar> {
    pub t: T,
    pub b: SymExpr<T>,
    pub g1: SymExpr<T>,
    pub g2: SymExpr<T>,
    pub e: SymExpr<T>,
    pub h: SymExpr<T>,
    /// `sign * (g1^2 + g2^2)` carries this sign on the identity right side.
    pub identity_sign: T,
}

impl<T: Scalar> CommutantSymbols<T> {
    /// Sign in front of `(g1^2 + g2^2)`.
    pub fn identity_sign(&self) -> T {
        match self.case {
            RegularizerCase::BelowS0 => self.lambda_sign,
            RegularizerCase::AboveS1 => -self.lambda_sign,
        }
    }

    /// Radicand of `g2`: `sign (rho_t H_p rho_t + a rho_t^2)`.
    pub fn g2_radicand(&self, t: T) -> Result<SymExpr<T>, CommutantError> {
        let rho = self.rho.at(t)?;
        let flow = self.chart.hp.apply(&rho);
        let inner = SymExpr::add(
            &SymExpr::mul(&rho, &flow),
            &SymExpr::mul(&self.subprincipal, &SymExpr::powi(&rho, 2)),
        );
        Ok(SymExpr::mul(
            &SymExpr::constant(self.identity_sign()),
            &inner,
        ))
    }

    /// Radicand of `g1`: `sign chi1 H_p chi1`.
    pub fn g1_radicand(&self) -> SymExpr<T> {
        let flow = self.chart.hp.apply(&self.cutoffs.chi1);
        SymExpr::product([
            SymExpr::constant(self.identity_sign()),
            self.cutoffs.chi1.clone(),
            flow,
        ])
    }

    pub fn symbols_at(&self, t: T) -> Result<SymbolSet<T>, CommutantError> {
        let cut = &self.cutoffs;
        let rho = self.rho.at(t)?;
        let rho_sq = SymExpr::powi(&rho, 2);
        let hp = &self.chart.hp;
        let sign = self.identity_sign();
        let chi0 = &cut.chi0;
        let chi1 = &cut.chi1;
        let rho_hat = &cut.rho_hat;
        let g2_rad = self.g2_radicand(t)?;
        let g1_rad = self.g1_radicand();
        let sq = |e: &SymExpr<T>| SymExpr::powi(e, 2);

        match self.case {
            RegularizerCase::BelowS0 => {
                let chi2 = cut.chi2.as_ref().expect("below case has chi2");
                let b = SymExpr::product([
                    rho_hat.clone(),
                    chi0.clone(),
                    chi1.clone(),
                    chi2.clone(),
                    rho.clone(),
                ]);
                let g2 = SymExpr::product([
                    rho_hat.clone(),
                    chi0.clone(),
                    chi1.clone(),
                    chi2.clone(),
                    SymExpr::sqrt(&g2_rad),
                ]);
                let g1 = SymExpr::product([
                    rho_hat.clone(),
                    chi0.clone(),
                    chi2.clone(),
                    rho.clone(),
                    SymExpr::sqrt(&g1_rad),
                ]);
                // Exact product-rule remainder: transition, off-characteristic
                // and off-Lagrangian derivative terms.
                let e = SymExpr::sum([
                    SymExpr::product([
                        rho_hat.clone(),
                        sq(chi0),
                        sq(chi1),
                        sq(chi2),
                        rho_sq.clone(),
                        hp.apply(rho_hat),
                    ]),
                    SymExpr::product([
                        sq(rho_hat),
                        chi0.clone(),
                        sq(chi1),
                        sq(chi2),
                        rho_sq.clone(),
                        hp.apply(chi0),
                    ]),
                    SymExpr::product([
                        sq(rho_hat),
                        sq(chi0),
                        sq(chi1),
                        chi2.clone(),
                        rho_sq.clone(),
                        hp.apply(chi2),
                    ]),
                ]);
                let h = SymExpr::div(&sq(&b), &g2);
                Ok(SymbolSet {
                    t,
                    b,
                    g1,
                    g2,
                    e,
                    h,
                    identity_sign: sign,
                })
            }
            RegularizerCase::AboveS1 => {
                let b = SymExpr::product([
                    rho_hat.clone(),
                    chi0.clone(),
                    chi1.clone(),
                    rho.clone(),
                ]);
                let g2 = SymExpr::product([
                    rho_hat.clone(),
                    chi0.clone(),
                    chi1.clone(),
                    SymExpr::sqrt(&g2_rad),
                ]);
                let g1 = SymExpr::product([
                    rho_hat.clone(),
                    chi0.clone(),
                    rho.clone(),
                    SymExpr::sqrt(&g1_rad),
                ]);
                let e = SymExpr::sum([
                    SymExpr::product([
                        rho_hat.clone(),
                        sq(chi0),
                        sq(chi1),
                        rho_sq.clone(),
                        hp.apply(rho_hat),
                    ]),
                    SymExpr::product([
                        sq(rho_hat),
                        chi0.clone(),
                        sq(chi1),
                        rho_sq.clone(),
                        hp.apply(chi0),
                    ]),
                ]);
                let h = SymExpr::div(&sq(&b), &g2);
                Ok(SymbolSet {
                    t,
                    b,
                    g1,
                    g2,
                    e,
                    h,
                    identity_sign: sign,
                })
            }
        }
    }

    fn support_grid(
        &self,
        zeta_lo: T,
        zeta_hi: T,
    ) -> Result<(Vec<String>, Vec<SupportPoint<T>>), CommutantError> {
        let extents =
            support_extents(self.case, self.cutoffs.spec.t_cap, self.cutoffs.spec.c_const);
        support_points(
            &self.chart,
            &self.cutoffs.eta0,
            &self.cutoffs.eta1,
            match self.case {
                RegularizerCase::BelowS0 => Some(&self.cutoffs.eta2),
                RegularizerCase::AboveS1 => None,
            },
            self.cutoffs.spec.t_cap,
            extents,
            zeta_lo,
            zeta_hi,
            &self.grid_cfg,
        )
    }
}

/// Standard family ladder `t = 0, 0.1, ..., 1`.
pub fn t_ladder<T: Scalar>() -> Vec<T> {
    (0..=10).map(|k| T::from_f(k as f64 / 10.0)).collect()
}

/// Build the symbol family, verifying the radicand signs on the symbol
/// support for every `t` in the ladder. A radicand that goes negative is the
/// operational statement that `s` crossed the threshold, and is reported as
/// a sign violation naming the grid point.
pub fn build_symbols<T: Scalar>(
    chart: &RadialChart<T>,
    spec: RegularizerSpec<T>,
    cutoffs: &CutoffBundle<T>,
    subprincipal_conic: &SymExpr<T>,
    lambda_sign: T,
    grid_cfg: &GridConfig<T>,
) -> Result<CommutantSymbols<T>, CommutantError> {
    spec.validate()?;
    let rho = make_rho(spec, &chart.conic.zeta)?;
    let symbols = CommutantSymbols {
        case: spec.case,
        lambda_sign,
        chart: chart.clone(),
        cutoffs: cutoffs.clone(),
        rho,
        subprincipal: subprincipal_conic.clone(),
        grid_cfg: grid_cfg.clone(),
    };

    let zeta0 = cutoffs.spec.zeta0;
    let zeta_lo = zeta0 * T::from_f(1.01);
    let zeta_hi = zeta0 * grid_cfg.zeta_hi_factor;
    let (names, points) = symbols.support_grid(zeta_lo, zeta_hi)?;
    let mut env: Vec<(&str, CNum<T>)> = Vec::with_capacity(names.len());
    for &t in &t_ladder::<T>() {
        let radicands = [symbols.g2_radicand(t)?, symbols.g1_radicand()];
        // Scale by the individual magnitudes so the test reads as a relative
        // sign check at every fiber scale.
        let rho_t = symbols.rho.at(t)?;
        let scale_parts = [
            SymExpr::mul(&rho_t, &symbols.chart.hp.apply(&rho_t)),
            SymExpr::mul(&symbols.subprincipal, &SymExpr::powi(&rho_t, 2)),
        ];
        for pt in &points {
            env.clear();
            for (n, v) in names.iter().zip(&pt.values) {
                env.push((n.as_str(), cre(*v)));
            }
            let scale = scale_parts
                .iter()
                .map(|e| e.eval(&env).map(|v| v.norm()).unwrap_or(T::zero()))
                .fold(T::zero(), |a, b| a + b)
                + T::from_f(1e-30);
            let v2 = radicands[0].eval_real(&env)?;
            if v2 < -T::from_f(1e-12) * scale {
                return Err(CommutantError::SignViolation {
                    point: crate::expr::sample_point_string(&env),
                    t: t.to_f(),
                    value: v2.to_f(),
                });
            }
            let v1 = radicands[1].eval_real(&env)?;
            if v1 < -T::from_f(1e-12) * (T::one() + v1.abs()) {
                return Err(CommutantError::SignViolation {
                    point: crate::expr::sample_point_string(&env),
                    t: t.to_f(),
                    value: v1.to_f(),
                });
            }
        }
    }
    Ok(symbols)
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityResidual {
    pub t: f64,
    pub max_residual: f64,
    pub transition_residual: f64,
    pub grid_points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub per_t: Vec<IdentityResidual>,
    pub max_residual: f64,
}

/// Evaluate the commutator identity
/// `1/2 H_p b^2 + a b^2 = sign (g1^2 + g2^2) + e` on a dense support grid in
/// the region where the fiber transition is complete, and separately on the
/// transition zone. The left side is differentiated independently of the
/// assembled right side, so this checks the algebra end to end.
pub fn verify_commutator_identity<T: Scalar>(
    sym: &CommutantSymbols<T>,
    ts: &[T],
    flip_sign_control: bool,
) -> Result<IdentityReport, CommutantError> {
    let zeta0 = sym.cutoffs.spec.zeta0;
    let hi = zeta0 * sym.grid_cfg.zeta_hi_factor;
    let (names, main) = sym.support_grid(zeta0 + T::from_f(1.05), hi)?;
    let (tnames, transition) =
        sym.support_grid(zeta0 * T::from_f(1.001), zeta0 + T::one())?;
    let mut per_t = Vec::new();
    let mut overall = 0.0f64;
    for &t in ts {
        let set = sym.symbols_at(t)?;
        let sign = if flip_sign_control {
            -set.identity_sign
        } else {
            set.identity_sign
        };
        let b_sq = SymExpr::powi(&set.b, 2);
        let lhs = SymExpr::add(
            &SymExpr::mul(&SymExpr::constant(T::from_f(0.5)), &sym.chart.hp.apply(&b_sq)),
            &SymExpr::mul(&sym.subprincipal, &b_sq),
        );
        let rhs = SymExpr::add(
            &SymExpr::product([
                SymExpr::constant(sign),
                SymExpr::add(&SymExpr::powi(&set.g1, 2), &SymExpr::powi(&set.g2, 2)),
            ]),
            &set.e,
        );
        let eval_max = |names: &[String],
                        points: &[SupportPoint<T>]|
         -> Result<T, CommutantError> {
            let worst = points
                .par_iter()
                .map(|pt| -> Result<T, CommutantError> {
                    let env: Vec<(&str, CNum<T>)> = names
                        .iter()
                        .zip(&pt.values)
                        .map(|(n, v)| (n.as_str(), cre(*v)))
                        .collect();
                    let l = lhs.eval(&env)?;
                    let r = rhs.eval(&env)?;
                    Ok((l - r).norm() / (T::one() + l.norm().max(r.norm())))
                })
                .try_reduce(T::zero, |a, b| Ok(a.max(b)))?;
            Ok(worst)
        };
        let max_residual = eval_max(&names, &main)?.to_f();
        let transition_residual = eval_max(&tnames, &transition)?.to_f();
        overall = overall.max(max_residual);
        per_t.push(IdentityResidual {
            t: t.to_f(),
            max_residual,
            transition_residual,
            grid_points: main.len(),
        });
    }
    Ok(IdentityReport {
        per_t,
        max_residual: overall,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SupportCondition {
    pub name: String,
    pub pass: bool,
    pub max_abs: f64,
    pub witness: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SupportReport {
    pub conditions: Vec<SupportCondition>,
}

impl SupportReport {
    pub fn pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }
}

const SUPPORT_TOL: f64 = 1e-12;

/// Grid checks of the support/disjointness requirements: the cutoff product
/// stays inside the working box, flow derivatives of the outer cutoffs stay
/// off the sets they must avoid, and the remainder `e_t` vanishes on the
/// radial set (below case) or the characteristic set (above case) once the
/// fiber transition is complete.
pub fn verify_support_conditions<T: Scalar>(
    sym: &CommutantSymbols<T>,
) -> Result<SupportReport, CommutantError> {
    let conic = &sym.chart.conic;
    let cut = &sym.cutoffs;
    let zeta0 = cut.spec.zeta0;
    let zeta_lo = zeta0 + T::from_f(1.05);
    let zeta_hi = zeta0 * sym.grid_cfg.zeta_hi_factor;
    let mut conditions = Vec::new();

    // 1. The cutoff product is compactly supported inside the working box.
    {
        let b = sym.grid_cfg.box_half_width;
        let mut grid = Grid::new();
        for name in conic.y.iter().chain(std::iter::once(&conic.z)) {
            grid = grid.linear_axis(name, -b, b, sym.grid_cfg.per_dim);
        }
        for name in &conic.theta {
            grid = grid.linear_axis(name, -b, b, sym.grid_cfg.per_dim);
        }
        grid = grid.geometric_axis(&conic.zeta, zeta_lo, zeta_hi, 3);
        let names: Vec<String> = grid.names().iter().map(|s| s.to_string()).collect();
        let product = match &cut.chi2 {
            Some(chi2) => SymExpr::product([cut.chi0.clone(), cut.chi1.clone(), chi2.clone()]),
            None => SymExpr::mul(&cut.chi0, &cut.chi1),
        };
        let mut worst = T::zero();
        let mut witness = String::from("(none)");
        let mut env: Vec<(&str, CNum<T>)> = Vec::new();
        for point in grid.points() {
            // Only look at the boundary shell of the base/angle box.
            let on_boundary = point
                .iter()
                .take(names.len() - 1)
                .any(|v| (v.abs() - b).abs() < T::from_f(1e-9));
            if !on_boundary {
                continue;
            }
            env.clear();
            for (n, v) in names.iter().zip(&point) {
                env.push((n.as_str(), cre(*v)));
            }
            let v = product.eval_real(&env)?.abs();
            if v > worst {
                worst = v;
                witness = crate::expr::sample_point_string(&env);
            }
        }
        conditions.push(SupportCondition {
            name: "cutoff-support-compact-in-box".into(),
            pass: worst.to_f() < SUPPORT_TOL,
            max_abs: worst.to_f(),
            witness,
        });
    }

    // Lagrangian grid: theta = 0, z on the characteristic set, beta-box.
    let lagrangian_grid = |symc: &CommutantSymbols<T>| -> (Vec<String>, Vec<Vec<T>>) {
        let b = symc.grid_cfg.box_half_width;
        let mut grid = Grid::new();
        for name in &conic.y {
            grid = grid.linear_axis(name, -b, b, symc.grid_cfg.per_dim);
        }
        grid = grid.geometric_axis(&conic.zeta, zeta_lo, zeta_hi, sym.grid_cfg.zeta_points);
        let names: Vec<String> = grid.names().iter().map(|s| s.to_string()).collect();
        (names, grid.points().collect())
    };
    // Characteristic-set grid: z solved, (y, theta, zeta) boxed.
    let sigma_grid = |symc: &CommutantSymbols<T>| -> (Vec<String>, Vec<Vec<T>>) {
        let b = symc.grid_cfg.box_half_width;
        let mut grid = Grid::new();
        for name in &conic.y {
            grid = grid.linear_axis(name, -b, b, symc.grid_cfg.per_dim);
        }
        for name in &conic.theta {
            grid = grid.linear_axis(name, -b, b, symc.grid_cfg.per_dim);
        }
        grid = grid.geometric_axis(&conic.zeta, zeta_lo, zeta_hi, sym.grid_cfg.zeta_points);
        let names: Vec<String> = grid.names().iter().map(|s| s.to_string()).collect();
        (names, grid.points().collect())
    };

    let eval_on = |expr: &SymExpr<T>,
                   names: &[String],
                   points: &[Vec<T>],
                   extra: &[(&str, SymExpr<T>)]|
     -> Result<(T, String), CommutantError> {
        let reduced = substitute(expr, extra);
        let mut worst = T::zero();
        let mut witness = String::from("(none)");
        let mut env: Vec<(&str, CNum<T>)> = Vec::new();
        for point in points {
            env.clear();
            for (n, v) in names.iter().zip(point) {
                env.push((n.as_str(), cre(*v)));
            }
            let v = reduced.eval(&env)?.norm();
            if v > worst {
                worst = v;
                witness = crate::expr::sample_point_string(&env);
            }
        }
        Ok((worst, witness))
    };

    let theta_zero: Vec<(&str, SymExpr<T>)> = conic
        .theta
        .iter()
        .map(|th| (th.as_str(), SymExpr::zero()))
        .chain(std::iter::once((conic.z.as_str(), SymExpr::zero())))
        .collect();
    let z_on_sigma: Vec<(&str, SymExpr<T>)> =
        vec![(conic.z.as_str(), sym.chart.z_on_sigma.clone())];

    // 2. supp(chi1 [chi2] H_p chi0) stays off the characteristic set.
    {
        let mut factors = vec![cut.chi1.clone()];
        if let Some(chi2) = &cut.chi2 {
            factors.push(chi2.clone());
        }
        factors.push(sym.chart.hp.apply(&cut.chi0));
        let product = SymExpr::product(factors);
        let (names, points) = sigma_grid(sym);
        let (worst, witness) = eval_on(&product, &names, &points, &z_on_sigma)?;
        conditions.push(SupportCondition {
            name: "chi0-flow-term-off-characteristic-set".into(),
            pass: worst.to_f() < SUPPORT_TOL,
            max_abs: worst.to_f(),
            witness,
        });
    }

    // 3. Below case: supp(chi0 chi1 H_p chi2) stays off the radial set.
    if let Some(chi2) = &cut.chi2 {
        let product = SymExpr::product([
            cut.chi0.clone(),
            cut.chi1.clone(),
            sym.chart.hp.apply(chi2),
        ]);
        let (names, points) = lagrangian_grid(sym);
        let (worst, witness) = eval_on(&product, &names, &points, &theta_zero)?;
        conditions.push(SupportCondition {
            name: "chi2-flow-term-off-radial-set".into(),
            pass: worst.to_f() < SUPPORT_TOL,
            max_abs: worst.to_f(),
            witness,
        });
    }

    // 4. Remainder support, checked for the whole ladder.
    {
        let mut worst = T::zero();
        let mut witness = String::from("(none)");
        for &t in &t_ladder::<T>() {
            let set = sym.symbols_at(t)?;
            let (w, wit) = match sym.case {
                RegularizerCase::BelowS0 => {
                    let (names, points) = lagrangian_grid(sym);
                    eval_on(&set.e, &names, &points, &theta_zero)?
                }
                RegularizerCase::AboveS1 => {
                    let (names, points) = sigma_grid(sym);
                    eval_on(&set.e, &names, &points, &z_on_sigma)?
                }
            };
            if w > worst {
                worst = w;
                witness = wit;
            }
        }
        // The remainder grows like the squared regularizer; normalize by the
        // symbol scale at the far end of the grid so the check is relative.
        let rho0 = sym.rho.at(T::zero())?;
        let scale = rho0
            .eval(&[(conic.zeta.as_str(), cre(zeta_hi))])?
            .norm()
            .powi(2)
            + T::one();
        let name = match sym.case {
            RegularizerCase::BelowS0 => "remainder-off-radial-set",
            RegularizerCase::AboveS1 => "remainder-off-characteristic-set",
        };
        conditions.push(SupportCondition {
            name: name.into(),
            pass: (worst / scale).to_f() < SUPPORT_TOL,
            max_abs: worst.to_f(),
            witness,
        });
    }

    Ok(SupportReport { conditions })
}

#[derive(Debug, Clone, Serialize)]
pub struct FactorizationReport {
    pub max_residual: f64,
    pub checked_points: usize,
}

/// Check `b^2 = g2 h` wherever `g2` is bounded away from zero.
pub fn verify_factorization<T: Scalar>(
    sym: &CommutantSymbols<T>,
    ts: &[T],
) -> Result<FactorizationReport, CommutantError> {
    let zeta0 = sym.cutoffs.spec.zeta0;
    let (names, points) = sym.support_grid(
        zeta0 + T::from_f(1.05),
        zeta0 * sym.grid_cfg.zeta_hi_factor,
    )?;
    let mut worst = T::zero();
    let mut checked = 0usize;
    for &t in ts {
        let set = sym.symbols_at(t)?;
        let b_sq = SymExpr::powi(&set.b, 2);
        let mut env: Vec<(&str, CNum<T>)> = Vec::new();
        for pt in &points {
            env.clear();
            for (n, v) in names.iter().zip(&pt.values) {
                env.push((n.as_str(), cre(*v)));
            }
            let g2 = set.g2.eval(&env)?;
            let b2 = b_sq.eval(&env)?;
            if g2.norm() < T::from_f(1e-8) * (T::one() + b2.norm()) {
                continue;
            }
            let h = set.h.eval(&env)?;
            let resid = (b2 - g2 * h).norm() / (T::one() + b2.norm());
            checked += 1;
            if resid > worst {
                worst = resid;
            }
        }
    }
    Ok(FactorizationReport {
        max_residual: worst.to_f(),
        checked_points: checked,
    })
}

#[cfg(test)]
#[path = "commutant_tests.rs"]
mod tests;
