//! Domain types shared by every module: complex values, rate sequences,
//! bias kinds and the estimate records produced by the engine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Complex scalar. All products use the plain bilinear convention (no conjugation).
pub type ComplexValue = num_complex::Complex64;

/// Bilinear product of two complex values.
#[inline]
pub fn bilinear(a: ComplexValue, b: ComplexValue) -> ComplexValue {
    a * b
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("function `{function}` is not admissible for model `{model}`: {reason}")]
    Inadmissible {
        model: String,
        function: String,
        reason: String,
    },
    #[error("parse error at {position} in `{input}`: {message}")]
    Parse {
        input: String,
        position: usize,
        message: String,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Scaling sequence αₙ applied to the weak error functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateSequence {
    /// αₙ = c·nᵖ
    Power { c: f64, p: f64 },
    /// ε = scale/n and α = 1/ε.
    ReciprocalEpsilon { scale: f64 },
    /// Linked indices n = m + k(m), k(m) = ⌈θ√m⌉, α(m) = m/k(m).
    Mutual { theta: f64 },
    /// αₙ = baseⁿ, used for digit expansions.
    Geometric { base: f64 },
    /// αₙ = 1
    Constant,
}

impl RateSequence {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| Error::Config(format!("rate parameter {name}={v} must be positive and finite"));
        match *self {
            RateSequence::Power { c, p } => {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(bad("c", c));
                }
                if !p.is_finite() {
                    return Err(Error::Config(format!("rate exponent p={p} must be finite")));
                }
            }
            RateSequence::ReciprocalEpsilon { scale } => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(bad("scale", scale));
                }
            }
            RateSequence::Mutual { theta } => {
                if !(theta > 0.0 && theta <= 1.0) {
                    return Err(Error::Config(format!("mutual rate theta={theta} must lie in (0, 1]")));
                }
            }
            RateSequence::Geometric { base } => {
                if !(base > 1.0 && base.is_finite()) {
                    return Err(Error::Config(format!("geometric rate base={base} must exceed 1")));
                }
            }
            RateSequence::Constant => {}
        }
        Ok(())
    }

    /// αₙ for index `n`.
    pub fn alpha(&self, n: u64) -> Result<f64> {
        self.validate()?;
        if n == 0 {
            return Err(Error::Usage("rate index must be at least 1".into()));
        }
        let x = n as f64;
        let a = match *self {
            RateSequence::Power { c, p } => c * x.powf(p),
            RateSequence::ReciprocalEpsilon { scale } => x / scale,
            RateSequence::Mutual { theta } => x / mutual_gap(theta, n) as f64,
            RateSequence::Geometric { base } => base.powf(x),
            RateSequence::Constant => 1.0,
        };
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Config(format!("rate evaluates to {a} at n={n}")));
        }
        Ok(a)
    }

    /// Effective sample index used as the abscissa of limit fits: the index itself,
    /// except for geometric rates where the precision grows like αₙ.
    pub fn resolution(&self, n: u64) -> f64 {
        match *self {
            RateSequence::Geometric { base } => base.powf(n as f64),
            _ => n as f64,
        }
    }
}

/// Gap k(m) = ⌈θ√m⌉ of a mutual approximation.
pub fn mutual_gap(theta: f64, m: u64) -> u64 {
    let k = (theta * (m as f64).sqrt() - 1e-12).ceil();
    (k as u64).max(1)
}

/// Free-function form of [`RateSequence::alpha`].
pub fn rate_eval(rate: &RateSequence, n: u64) -> Result<f64> {
    rate.alpha(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    Theoretical,
    Practical,
    Symmetric,
    Singular,
    QuarticDiagnostic,
    TheoreticalVariance,
    PracticalVariance,
    SquareFieldPaired,
}

impl BiasKind {
    pub const ALL: [BiasKind; 8] = [
        BiasKind::Theoretical,
        BiasKind::Practical,
        BiasKind::Symmetric,
        BiasKind::Singular,
        BiasKind::QuarticDiagnostic,
        BiasKind::TheoreticalVariance,
        BiasKind::PracticalVariance,
        BiasKind::SquareFieldPaired,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BiasKind::Theoretical => "theoretical",
            BiasKind::Practical => "practical",
            BiasKind::Symmetric => "symmetric",
            BiasKind::Singular => "singular",
            BiasKind::QuarticDiagnostic => "quartic_diagnostic",
            BiasKind::TheoreticalVariance => "theoretical_variance",
            BiasKind::PracticalVariance => "practical_variance",
            BiasKind::SquareFieldPaired => "square_field_paired",
        }
    }

    pub fn uses_third_function(self) -> bool {
        matches!(self, BiasKind::TheoreticalVariance | BiasKind::PracticalVariance)
    }
}

impl fmt::Display for BiasKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BiasKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        BiasKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == key || (key == "quartic" && *k == BiasKind::QuarticDiagnostic))
            .ok_or_else(|| Error::Usage(format!("unknown bias kind `{s}`")))
    }
}

/// Monte Carlo estimate of one functional at one index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub n: u64,
    pub alpha: f64,
    /// Abscissa for limit fits, see [`RateSequence::resolution`].
    pub resolution: f64,
    pub mean: ComplexValue,
    /// Component-wise maximum standard error.
    pub stderr: f64,
    pub samples: u64,
    pub seed: u64,
}

/// Combine theoretical and practical estimates into the singular part (Ā − A̲)/2.
pub fn singular_combine(th: &BiasEstimate, pr: &BiasEstimate) -> Result<BiasEstimate> {
    if th.n != pr.n {
        return Err(Error::Usage(format!(
            "singular_combine needs matching indices, got {} and {}",
            th.n, pr.n
        )));
    }
    Ok(BiasEstimate {
        mean: (th.mean - pr.mean) * 0.5,
        stderr: 0.5 * th.stderr.hypot(pr.stderr),
        samples: th.samples.min(pr.samples),
        ..th.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// c₀
    Constant,
    /// c₀ + c₁h^{1/2}
    SqrtLinear,
    /// c₀ + c₁h^{1/2} + c₂h
    SqrtQuadratic,
}

impl FitModel {
    /// Two-term fit, upgraded to three terms when at least four points exist.
    pub fn default_for(points: usize) -> FitModel {
        if points >= 4 {
            FitModel::SqrtQuadratic
        } else {
            FitModel::SqrtLinear
        }
    }

    pub fn parameters(self) -> usize {
        match self {
            FitModel::Constant => 1,
            FitModel::SqrtLinear => 2,
            FitModel::SqrtQuadratic => 3,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            FitModel::Constant => "c0",
            FitModel::SqrtLinear => "c0 + c1*n^-1/2",
            FitModel::SqrtQuadratic => "c0 + c1*n^-1/2 + c2*n^-1",
        }
    }
}

impl FromStr for FitModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "constant" | "c0" => Ok(FitModel::Constant),
            "sqrt_linear" | "two_term" | "linear" => Ok(FitModel::SqrtLinear),
            "sqrt_quadratic" | "three_term" | "quadratic" => Ok(FitModel::SqrtQuadratic),
            other => Err(Error::Usage(format!("unknown fit model `{other}`"))),
        }
    }
}

/// Extrapolated n → ∞ limit of a bias functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitEstimate {
    pub value: ComplexValue,
    pub uncertainty: f64,
    pub fit_model: FitModel,
    /// Root mean square fit residual, maximised over components.
    pub residual: f64,
    pub points_used: Vec<BiasEstimate>,
}

impl LimitEstimate {
    /// Distance to a reference in units of the limit uncertainty (component-wise max).
    pub fn z_score(&self, reference: ComplexValue) -> f64 {
        let d = self.value - reference;
        let m = d.re.abs().max(d.im.abs());
        if self.uncertainty > 0.0 {
            m / self.uncertainty
        } else if m == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// Pass rule for comparisons: every component within three uncertainties.
    pub fn agrees_with(&self, reference: ComplexValue) -> bool {
        self.z_score(reference) <= 3.0
    }
}

/// Model capability flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFlags {
    pub asymptotically_symmetric: bool,
    pub expected_local: bool,
    pub deterministic_u: bool,
}
