//! Analysis toolkit for model operators whose Hamilton flow is radial on a
//! Lagrangian submanifold.
//!
//! The crate is organized around the pipeline used by the `radialscope`
//! command-line tool:
//!
//! * [`expr`] — expression-tree symbolic engine (parsing, differentiation,
//!   Poisson brackets, Hamilton fields, randomized identity testing);
//! * [`geometry`] — conic charts, the radial normal form, sink/source
//!   classification and the polar blow-up of the radial set;
//! * [`threshold`] — subprincipal data and the regularity thresholds
//!   `s0`/`s1`, with a quadrature oracle pinning the adjoint convention;
//! * [`commutant`] — regularizer families, cutoff construction, the escape
//!   symbol families and their verification;
//! * [`dynamics`] — adaptive integration of the Hamilton flow and its
//!   fiber-rescaled version, limit-set membership and linearization rates;
//! * [`probe`] — dyadic-shell Sobolev regularity estimation for sampled model
//!   solutions.
//!
//! All numeric kernels are generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix `f64`, which is what the CLI and the verification suites use.

pub mod commutant;
pub mod dynamics;
pub mod expr;
pub mod geometry;
pub mod grid;
pub mod probe;
pub mod scalar;
pub mod threshold;

pub use scalar::{CNum, Scalar};

/// `f64` expression tree.
pub type Expr = expr::SymExpr<f64>;
/// `f32` expression tree.
pub type Expr32 = expr::SymExpr<f32>;
/// `f64` symbolic vector field.
pub type VectorField = expr::VectorFieldSym<f64>;
/// `f64` radial normal-form chart.
pub type RadialChart = geometry::RadialChart<f64>;
/// `f64` operator description.
pub type OperatorSpec = threshold::OperatorSpec<f64>;
/// `f64` escape-symbol family.
pub type CommutantSymbols = commutant::CommutantSymbols<f64>;
/// `f64` trajectory.
pub type Trajectory = dynamics::Trajectory<f64>;
/// `f64` regularity estimate from the dyadic probe.
pub type RegularityEstimate = probe::RegularityEstimate<f64>;
