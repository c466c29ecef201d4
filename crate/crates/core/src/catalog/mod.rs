//! Catalog of coupled approximation schemes with closed-form reference operators.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::algebra::{Integrand, Observable};
use crate::rng::SampleRng;
use crate::state::{CoupledSample, Evaluator, Side, SideContext, StateSpace};
use crate::types::{BiasKind, ComplexValue, Error, ModelFlags, RateSequence, Result};

pub mod forms;
mod gaussian;
mod mutual;
mod paths;
mod scalar;

pub use gaussian::{CondGaussianMean, GaussianPerturbation, OrthogonalMeasure, PoissonPoint};
pub use mutual::{CltMutual, DonskerMutual, EmpiricalBridge, ErroneousEmpirical, ErroneousWalk, IncrementLaw};
pub use paths::{EulerSde, OdeEuler, StochasticIntegral};
pub use scalar::{DecimalTruncation, GlivenkoCantelli, IndependentSeries, MixingShift, PolyaUrn};

type C = ComplexValue;

/// Identifiers of every catalog model, in listing order.
pub const MODEL_IDS: [&str; 17] = [
    "glivenko_cantelli",
    "gaussian_perturbation",
    "independent_series",
    "polya_urn",
    "cond_gaussian_mean",
    "clt_mutual",
    "donsker_mutual",
    "empirical_bridge",
    "erroneous_empirical",
    "erroneous_walk",
    "orthogonal_measure",
    "poisson_point",
    "stochastic_integral",
    "euler_sde",
    "ode_euler",
    "mixing_shift",
    "decimal_truncation",
];

/// A coupled sampler of (Y, Yₙ) with its rate sequence and optional closed forms.
pub trait ApproximationModel: Send + Sync {
    fn id(&self) -> &'static str;
    /// Short description of the scheme family.
    fn label(&self) -> &'static str;
    fn rate(&self) -> RateSequence;
    fn state_space(&self) -> StateSpace;
    fn flags(&self) -> ModelFlags;
    fn default_grid(&self) -> Vec<u64>;
    /// Resolved parameter values.
    fn parameters(&self) -> BTreeMap<String, Value>;

    /// Allocates a sample buffer sized for index `n`.
    fn new_sample(&self, n: u64) -> CoupledSample;
    /// Overwrites `out` with a fresh draw. Pure in (n, rng state).
    fn sample_into(&self, n: u64, rng: &mut SampleRng, out: &mut CoupledSample);

    /// Reference value of a bias functional, `None` when no closed form is known.
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C>;

    /// Kinds for which `closed_form` can return a value.
    fn closed_form_kinds(&self) -> Vec<BiasKind>;

    /// Competing reference values when the literature is ambiguous about a constant.
    fn reference_candidates(&self, _kind: BiasKind, _phi: &Observable, _chi: &Observable) -> Vec<(String, C)> {
        Vec::new()
    }

    /// Test functions used by the verification suites.
    fn default_functions(&self) -> Vec<Observable>;

    /// Smallest admissible index.
    fn min_index(&self) -> u64 {
        1
    }

    /// Grid (dt, cells) of path states on each side.
    fn path_grid(&self, _n: u64, _side: Side) -> Option<(f64, usize)> {
        None
    }

    /// Centering E f(V) used by empirical states on each side.
    fn empirical_center(&self, _n: u64, _side: Side, f: &Integrand) -> f64 {
        f.integral(0.0, 1.0)
    }

    /// CDF of the scalar limit law, where known.
    fn limit_cdf(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        None
    }

    fn alpha(&self, n: u64) -> Result<f64> {
        self.rate().alpha(n)
    }

    fn check_index(&self, n: u64) -> Result<()> {
        if n < self.min_index() {
            return Err(Error::Usage(format!("{} needs n >= {}, got {n}", self.id(), self.min_index())));
        }
        Ok(())
    }

    fn admit(&self, o: &Observable) -> Result<()> {
        o.validate()?;
        self.state_space().admits(o).map_err(|reason| Error::Inadmissible {
            model: self.id().to_string(),
            function: o.to_string(),
            reason,
        })
    }

    /// Compiles an observable for the (approx, limit) sides at index `n`.
    fn prepare(&self, n: u64, o: &Observable) -> Result<(Evaluator, Evaluator)> {
        self.admit(o)?;
        let approx_center = |f: &Integrand| self.empirical_center(n, Side::Approx, f);
        let limit_center = |f: &Integrand| self.empirical_center(n, Side::Limit, f);
        let approx = Evaluator::compile(o, &SideContext { grid: self.path_grid(n, Side::Approx), center: &approx_center })?;
        let limit = Evaluator::compile(o, &SideContext { grid: self.path_grid(n, Side::Limit), center: &limit_center })?;
        Ok((approx, limit))
    }
}

pub type Model = Arc<dyn ApproximationModel>;

/// Model identifier plus raw parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    #[serde(default)]
    pub params: serde_json::Map<String, Value>,
}

impl ModelSpec {
    pub fn new(id: &str) -> Self {
        ModelSpec { id: id.to_string(), params: serde_json::Map::new() }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}

/// Typed access to model parameters with unknown-key detection.
pub struct Params<'a> {
    model: &'a str,
    map: &'a serde_json::Map<String, Value>,
}

impl<'a> Params<'a> {
    pub fn new(model: &'a str, map: &'a serde_json::Map<String, Value>, allowed: &[&str]) -> Result<Self> {
        if let Some(bad) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "model `{model}` has no parameter `{bad}` (allowed: {})",
                allowed.join(", ")
            )));
        }
        Ok(Params { model, map })
    }

    fn bad(&self, key: &str, why: &str) -> Error {
        Error::Config(format!("model `{}` parameter `{key}`: {why}", self.model))
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| self.bad(key, "expected a finite number")),
        }
    }

    pub fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let x = self.f64(key, default)?;
        if x > 0.0 {
            Ok(x)
        } else {
            Err(self.bad(key, &format!("must be positive, got {x}")))
        }
    }

    pub fn nonnegative(&self, key: &str, default: f64) -> Result<f64> {
        let x = self.f64(key, default)?;
        if x >= 0.0 {
            Ok(x)
        } else {
            Err(self.bad(key, &format!("must be nonnegative, got {x}")))
        }
    }

    pub fn u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.as_u64().ok_or_else(|| self.bad(key, "expected a nonnegative integer")),
        }
    }

    pub fn bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.as_bool().ok_or_else(|| self.bad(key, "expected a boolean")),
        }
    }

    pub fn choice(&self, key: &str, default: &str, options: &[&str]) -> Result<String> {
        let v = match self.map.get(key) {
            None => default.to_string(),
            Some(v) => v.as_str().ok_or_else(|| self.bad(key, "expected a string"))?.to_string(),
        };
        if options.contains(&v.as_str()) {
            Ok(v)
        } else {
            Err(self.bad(key, &format!("`{v}` is not one of {}", options.join(", "))))
        }
    }

    pub fn list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(xs)) => xs
                .iter()
                .map(|x| x.as_f64().filter(|v| v.is_finite()).ok_or_else(|| self.bad(key, "expected numbers")))
                .collect(),
            Some(_) => Err(self.bad(key, "expected an array of numbers")),
        }
    }
}

/// Builds a catalog model from its identifier and parameters.
pub fn build_model(spec: &ModelSpec) -> Result<Model> {
    let p = &spec.params;
    let model: Model = match spec.id.as_str() {
        "glivenko_cantelli" => Arc::new(GlivenkoCantelli::build(p)?),
        "gaussian_perturbation" => Arc::new(GaussianPerturbation::build(p)?),
        "independent_series" => Arc::new(IndependentSeries::build(p)?),
        "polya_urn" => Arc::new(PolyaUrn::build(p)?),
        "cond_gaussian_mean" => Arc::new(CondGaussianMean::build(p)?),
        "clt_mutual" => Arc::new(CltMutual::build(p)?),
        "donsker_mutual" => Arc::new(DonskerMutual::build(p)?),
        "empirical_bridge" => Arc::new(EmpiricalBridge::build(p)?),
        "erroneous_empirical" => Arc::new(ErroneousEmpirical::build(p)?),
        "erroneous_walk" => Arc::new(ErroneousWalk::build(p)?),
        "orthogonal_measure" => Arc::new(OrthogonalMeasure::build(p)?),
        "poisson_point" => Arc::new(PoissonPoint::build(p)?),
        "stochastic_integral" => Arc::new(StochasticIntegral::build(p)?),
        "euler_sde" => Arc::new(EulerSde::build(p)?),
        "ode_euler" => Arc::new(OdeEuler::build(p)?),
        "mixing_shift" => Arc::new(MixingShift::build(p)?),
        "decimal_truncation" => Arc::new(DecimalTruncation::build(p)?),
        other => {
            return Err(Error::Config(format!(
                "unknown model `{other}` (known: {})",
                MODEL_IDS.join(", ")
            )))
        }
    };
    Ok(model)
}

/// Builds a model with default parameters.
pub fn default_model(id: &str) -> Result<Model> {
    build_model(&ModelSpec::new(id))
}

/// Every catalog model with default parameters.
pub fn all_models() -> Vec<Model> {
    MODEL_IDS.iter().map(|id| default_model(id).expect("default parameters are valid")).collect()
}
