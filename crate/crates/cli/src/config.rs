//! Run configuration: TOML on disk, validated into core types.

use anyhow::{anyhow, bail, Context, Result};
use num_complex::Complex64;
use radialscope_core::expr::{parse, ChartSpec};
use radialscope_core::geometry::LagrangianSpec;
use radialscope_core::threshold::OperatorSpec;
use radialscope_core::Expr;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub operator: OperatorBlock,
    #[serde(default)]
    pub chart: ChartBlock,
    pub numerics: NumericsBlock,
    #[serde(default)]
    pub analyze: AnalyzeBlock,
    #[serde(default)]
    pub flow: FlowBlock,
    #[serde(default)]
    pub commutant: CommutantBlock,
    #[serde(default)]
    pub probe: ProbeBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorBlock {
    /// Base dimension; the canonical chart variables are `x1..xn, xi1..xin`.
    pub dim: usize,
    pub m: f64,
    pub terms: Vec<TermBlock>,
    /// Positive density weight in the base variables.
    #[serde(default)]
    pub density: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermBlock {
    pub order: f64,
    pub expr: String,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChartBlock {
    /// Fiber branch of the model Lagrangian: "positive" (default) or
    /// "negative".
    #[serde(default)]
    pub branch: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsBlock {
    /// Mandatory: every randomized check derives from this seed.
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeBlock {
    /// Radial point, as beta coordinates on the radial set (n-1 entries).
    #[serde(default)]
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowBlock {
    /// Canonical-chart starts `(x..., xi...)` for the Hamilton flow.
    #[serde(default)]
    pub canonical_starts: Vec<Vec<f64>>,
    /// Cosphere starts `(alpha..., beta..., x)` for the rescaled flow.
    #[serde(default)]
    pub cosphere_starts: Vec<Vec<f64>>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_rate_radius")]
    pub rate_radius: f64,
    /// Number of seeded limit-set membership probes.
    #[serde(default = "default_gamma_probes")]
    pub gamma_probes: usize,
}

fn default_t_end() -> f64 {
    6.0
}
fn default_rate_radius() -> f64 {
    0.1
}
fn default_gamma_probes() -> usize {
    8
}

impl Default for FlowBlock {
    fn default() -> Self {
        Self {
            canonical_starts: Vec::new(),
            cosphere_starts: Vec::new(),
            t_end: default_t_end(),
            rate_radius: default_rate_radius(),
            gamma_probes: default_gamma_probes(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommutantBlock {
    #[serde(default = "default_s_below")]
    pub s_below: f64,
    #[serde(default = "default_s_above")]
    pub s_above: f64,
    #[serde(default = "default_s1")]
    pub s1: f64,
}

fn default_s_below() -> f64 {
    0.0
}
fn default_s_above() -> f64 {
    1.0
}
fn default_s1() -> f64 {
    0.5
}

impl Default for CommutantBlock {
    fn default() -> Self {
        Self {
            s_below: default_s_below(),
            s_above: default_s_above(),
            s1: default_s1(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeBlock {
    #[serde(default = "default_grid_log2")]
    pub grid_log2: u32,
    #[serde(default = "default_c_values")]
    pub c_values: Vec<String>,
}

fn default_grid_log2() -> u32 {
    17
}
fn default_c_values() -> Vec<String> {
    vec!["0".into(), "0.25i".into(), "-0.25i".into()]
}

impl Default for ProbeBlock {
    fn default() -> Self {
        Self {
            grid_log2: default_grid_log2(),
            c_values: default_c_values(),
        }
    }
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("config does not parse")?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.operator.dim == 0 {
            bail!("operator.dim must be at least 1");
        }
        if self.operator.terms.is_empty() {
            bail!("operator.terms must contain the principal symbol");
        }
        if self.analyze.q.len() + 1 != self.operator.dim && !self.analyze.q.is_empty() {
            bail!(
                "analyze.q must have dim - 1 = {} entries",
                self.operator.dim - 1
            );
        }
        if let Some(branch) = &self.chart.branch {
            if branch != "positive" && branch != "negative" {
                bail!("chart.branch must be \"positive\" or \"negative\"");
            }
        }
        if self.commutant.s_above <= self.commutant.s1 {
            bail!("commutant.s_above must exceed commutant.s1 (the a-priori order)");
        }
        for c in &self.probe.c_values {
            parse_complex(c)?;
        }
        Ok(())
    }

    pub fn chart_spec(&self) -> ChartSpec {
        ChartSpec::canonical(self.operator.dim)
    }

    pub fn lagrangian(&self) -> LagrangianSpec {
        let lag = LagrangianSpec::new(self.chart_spec());
        match self.chart.branch.as_deref() {
            Some("negative") => lag.negative_branch(),
            _ => lag,
        }
    }

    /// Build and validate the operator from the config expressions.
    pub fn operator(&self) -> Result<OperatorSpec<f64>> {
        let chart = self.chart_spec();
        let mut terms = self.operator.terms.iter();
        let first = terms.next().expect("checked nonempty");
        if (first.order - self.operator.m).abs() > 1e-12 {
            bail!("the first operator term must have order m = {}", self.operator.m);
        }
        let principal: Expr = parse(&first.expr, &chart)
            .map_err(|e| anyhow!("operator term `{}`: {e}", first.expr))?;
        let mut op = OperatorSpec::new(chart.clone(), self.operator.m, principal);
        for term in terms {
            let expr: Expr = parse(&term.expr, &chart)
                .map_err(|e| anyhow!("operator term `{}`: {e}", term.expr))?;
            op = op.with_term(term.order, expr);
        }
        if let Some(density) = &self.operator.density {
            let base_only = ChartSpec {
                base: chart.base.clone(),
                fiber: Vec::new(),
                positive: Vec::new(),
            };
            let w: Expr = parse(density, &base_only)
                .map_err(|e| anyhow!("density `{density}`: {e}"))?;
            op = op.with_density(w);
        }
        op.validate()
            .map_err(|e| anyhow!("operator validation: {e}"))?;
        Ok(op)
    }

    pub fn q_beta(&self) -> Vec<f64> {
        if self.analyze.q.is_empty() {
            vec![0.0; self.operator.dim - 1]
        } else {
            self.analyze.q.clone()
        }
    }

    pub fn probe_c_values(&self) -> Result<Vec<Complex64>> {
        self.probe
            .c_values
            .iter()
            .map(|s| parse_complex(s))
            .collect()
    }
}

/// Parse a complex literal like `0.25`, `-0.25i`, `0.3+0.25i`.
pub fn parse_complex(text: &str) -> Result<Complex64> {
    let chart = ChartSpec {
        base: Vec::new(),
        fiber: Vec::new(),
        positive: Vec::new(),
    };
    let e: Expr = parse(text, &chart).map_err(|e| anyhow!("complex literal `{text}`: {e}"))?;
    let v = e
        .eval(&[])
        .map_err(|e| anyhow!("complex literal `{text}`: {e}"))?;
    Ok(Complex64::new(v.re, v.im))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_complex_literals() {
        assert_eq!(parse_complex("0.25").unwrap(), Complex64::new(0.25, 0.0));
        assert_eq!(parse_complex("-0.25i").unwrap(), Complex64::new(0.0, -0.25));
        assert_eq!(
            parse_complex("0.3+0.25i").unwrap(),
            Complex64::new(0.3, 0.25)
        );
    }

    #[test]
    fn rejects_missing_seed() {
        let text = r#"
[operator]
dim = 1
m = 1.0
terms = [{ order = 1.0, expr = "x1*xi1" }]
"#;
        assert!(RunConfig::from_str(text).is_err());
    }
}
