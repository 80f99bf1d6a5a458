//! Sparsity penalties: the minimax concave penalty and the lasso.
//!
//! MCP with level `lambda` and concavity `gamma > 1`:
//!
//! ```text
//! phi(t) = lambda |t| - t^2 / (2 gamma)   for |t| <= gamma lambda
//!        = gamma lambda^2 / 2             otherwise
//! ```
//!
//! It applies the full lasso rate near zero and no shrinkage at all beyond
//! `gamma lambda`, which keeps large coefficients unbiased. The coordinate
//! solver replaces `phi` near an anchor `t_s != 0` with the quadratic
//! `phi(t_s) + phi'(|t_s|) (t^2 - t_s^2) / (2 |t_s|)`; concavity of
//! `phi(sqrt(u))` in `u` makes that an upper bound that touches at the
//! anchor, so minimizing it cannot increase the penalized objective.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PenaltyError {
    #[error("penalty level {0} must be finite and nonnegative")]
    BadLambda(f64),
    #[error("concavity {0} must be finite and greater than 1")]
    BadGamma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    Mcp,
    Lasso,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub lambda: f64,
    /// Concavity parameter; meaningful for MCP only.
    pub gamma: f64,
}

impl PenaltySpec {
    pub const DEFAULT_GAMMA: f64 = 6.0;

    pub fn mcp(lambda: f64, gamma: f64) -> Result<Self, PenaltyError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(PenaltyError::BadLambda(lambda));
        }
        if !(gamma.is_finite() && gamma > 1.0) {
            return Err(PenaltyError::BadGamma(gamma));
        }
        Ok(PenaltySpec { kind: PenaltyKind::Mcp, lambda, gamma })
    }

    pub fn lasso(lambda: f64) -> Result<Self, PenaltyError> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(PenaltyError::BadLambda(lambda));
        }
        Ok(PenaltySpec { kind: PenaltyKind::Lasso, lambda, gamma: PenaltySpec::DEFAULT_GAMMA })
    }

    /// Same penalty shape at a different level.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        PenaltySpec { lambda, ..*self }
    }
}

/// Penalty value at coefficient `t`.
pub fn penalty_value(spec: &PenaltySpec, t: f64) -> f64 {
    let a = t.abs();
    match spec.kind {
        PenaltyKind::Lasso => spec.lambda * a,
        PenaltyKind::Mcp => {
            if a <= spec.gamma * spec.lambda {
                spec.lambda * a - t * t / (2.0 * spec.gamma)
            } else {
                spec.gamma * spec.lambda * spec.lambda / 2.0
            }
        }
    }
}

/// Derivative of the penalty with respect to the coefficient magnitude,
/// evaluated at `|t|`. At zero this is the subgradient bound `lambda` for
/// both penalties.
pub fn penalty_derivative(spec: &PenaltySpec, t: f64) -> f64 {
    let a = t.abs();
    match spec.kind {
        PenaltyKind::Lasso => spec.lambda,
        PenaltyKind::Mcp => (spec.lambda - a / spec.gamma).max(0.0),
    }
}

/// Curvature of the local quadratic model of the penalty around a nonzero
/// anchor: the model is `const + coefficient * t^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuadCoefficient {
    /// Anchor magnitude below the zero threshold; a quadratic built there
    /// would have unbounded curvature, so the coordinate is handled by the
    /// subgradient path instead.
    Frozen,
    Active(f64),
}

/// The coefficient `phi'(|t_s|) / |t_s|` of the quadratic penalty model at
/// anchor `t_s`, or [`QuadCoefficient::Frozen`] when `|t_s| < eps_zero`.
pub fn local_quadratic_coefficient(
    spec: &PenaltySpec,
    t_anchor: f64,
    eps_zero: f64,
) -> QuadCoefficient {
    let a = t_anchor.abs();
    if a < eps_zero {
        QuadCoefficient::Frozen
    } else {
        QuadCoefficient::Active(penalty_derivative(spec, a) / a)
    }
}
