//! Gaussian perturbation schemes: scalar, conditional means, vectors and point measures.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde_json::{json, Value};

use super::forms::{DiffusionForm, GaussianVectorForm};
use super::{ApproximationModel, Params};
use crate::algebra::{CylindricalFunction, Observable, TestFunction};
use crate::quadrature::{gaussian_expect, ScalarLaw};
use crate::rng::SampleRng;
use crate::state::{CoupledSample, State, StateSpace};
use crate::types::{BiasKind, ComplexValue, Error, ModelFlags, RateSequence, Result};

type C = ComplexValue;

fn normal(rng: &mut SampleRng) -> f64 {
    StandardNormal.sample(rng)
}

fn iexp_defaults() -> Vec<Observable> {
    vec![Observable::iexp(&[1.0]), Observable::iexp(&[-1.0]), Observable::iexp(&[0.5])]
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BaseLaw {
    Uniform,
    Gaussian,
}

/// Y from a base law and Y_ε = Y + ε·z + √(ε θ(Y))·G, ε = scale/n.
pub struct GaussianPerturbation {
    base: BaseLaw,
    drift: f64,
    theta0: f64,
    theta1: f64,
    scale: f64,
    form: DiffusionForm,
}

impl GaussianPerturbation {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        let p = Params::new("gaussian_perturbation", p, &["base", "drift", "theta0", "theta1", "scale"])?;
        let base = match p.choice("base", "gaussian", &["gaussian", "uniform"])?.as_str() {
            "uniform" => BaseLaw::Uniform,
            _ => BaseLaw::Gaussian,
        };
        let drift = p.f64("drift", 0.5)?;
        let theta0 = p.positive("theta0", 0.5)?;
        let theta1 = p.nonnegative("theta1", 1.0)?;
        let scale = p.positive("scale", 1.0)?;
        let theta = Self::theta_fn(base, theta0, theta1);
        let th = theta.clone();
        let form = DiffusionForm {
            law: match base {
                BaseLaw::Uniform => ScalarLaw::unit_uniform(),
                BaseLaw::Gaussian => ScalarLaw::standard_gaussian(),
            },
            theoretical: Some(Arc::new(move |y| (0.5 * th(y), drift))),
            practical: None,
            gamma: Arc::new(move |y| theta(y)),
            first_order_singular: true,
        };
        Ok(GaussianPerturbation { base, drift, theta0, theta1, scale, form })
    }

    /// Conditional variance θ(y) = E[T²|Y=y].
    fn theta_fn(base: BaseLaw, t0: f64, t1: f64) -> Arc<dyn Fn(f64) -> f64 + Send + Sync> {
        match base {
            BaseLaw::Gaussian => Arc::new(move |y: f64| t0 + t1 * (-0.5 * y * y).exp()),
            BaseLaw::Uniform => Arc::new(move |y: f64| t0 + t1 * y * (1.0 - y)),
        }
    }

    fn theta(&self, y: f64) -> f64 {
        match self.base {
            BaseLaw::Gaussian => self.theta0 + self.theta1 * (-0.5 * y * y).exp(),
            BaseLaw::Uniform => self.theta0 + self.theta1 * y * (1.0 - y),
        }
    }
}

impl ApproximationModel for GaussianPerturbation {
    fn id(&self) -> &'static str {
        "gaussian_perturbation"
    }
    fn label(&self) -> &'static str {
        "small Gaussian perturbation with drift and state-dependent variance"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::ReciprocalEpsilon { scale: self.scale }
    }
    fn state_space(&self) -> StateSpace {
        match self.base {
            BaseLaw::Uniform => StateSpace::Interval { lo: 0.0, hi: 1.0 },
            BaseLaw::Gaussian => StateSpace::RealLine,
        }
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: false, expected_local: true, deterministic_u: false }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![64, 256, 1024]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("base".into(), json!(if self.base == BaseLaw::Uniform { "uniform" } else { "gaussian" })),
            ("drift".into(), json!(self.drift)),
            ("theta0".into(), json!(self.theta0)),
            ("theta1".into(), json!(self.theta1)),
            ("scale".into(), json!(self.scale)),
        ])
    }
    fn new_sample(&self, _n: u64) -> CoupledSample {
        CoupledSample::scalars()
    }
    fn sample_into(&self, n: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let eps = self.scale / n as f64;
        let y = match self.base {
            BaseLaw::Uniform => rng.random::<f64>(),
            BaseLaw::Gaussian => normal(rng),
        };
        let g = normal(rng);
        out.limit = State::Scalar(y);
        out.approx = State::Scalar(y + eps * self.drift + (eps * self.theta(y)).sqrt() * g);
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C> {
        self.form.closed_form(kind, phi, chi, psi)
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        self.form.kinds()
    }
    fn default_functions(&self) -> Vec<Observable> {
        match self.base {
            BaseLaw::Uniform => vec![Observable::fourier(1), Observable::fourier(-1), Observable::fourier(2)],
            BaseLaw::Gaussian => iexp_defaults(),
        }
    }
    fn limit_cdf(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        let law = self.form.law;
        Some(Box::new(move |x| law.cdf(x)))
    }
}

/// Standard deviation a(y) = a0 + a1·e^{−y²/2} with its derivative.
#[derive(Debug, Clone, Copy)]
struct Spread {
    a0: f64,
    a1: f64,
}

impl Spread {
    fn from_params(p: &Params<'_>) -> Result<Self> {
        let a0 = p.positive("a0", 0.5)?;
        let a1 = p.nonnegative("a1", 0.5)?;
        Ok(Spread { a0, a1 })
    }

    fn a(&self, y: f64) -> f64 {
        self.a0 + self.a1 * (-0.5 * y * y).exp()
    }

    fn da(&self, y: f64) -> f64 {
        -self.a1 * y * (-0.5 * y * y).exp()
    }

    fn var(&self, y: f64) -> f64 {
        self.a(y).powi(2)
    }

    fn dvar(&self, y: f64) -> f64 {
        2.0 * self.a(y) * self.da(y)
    }
}

/// Y standard Gaussian and Yₙ the mean of n conditionally independent N(Y, a(Y)²) draws.
pub struct CondGaussianMean {
    spread: Spread,
    form: DiffusionForm,
}

impl CondGaussianMean {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        let p = Params::new("cond_gaussian_mean", p, &["a0", "a1"])?;
        let s = Spread::from_params(&p)?;
        let form = DiffusionForm {
            law: ScalarLaw::standard_gaussian(),
            theoretical: Some(Arc::new(move |y| (0.5 * s.var(y), 0.0))),
            practical: Some(Arc::new(move |y| (0.5 * s.var(y), s.dvar(y) - y * s.var(y)))),
            gamma: Arc::new(move |y| s.var(y)),
            first_order_singular: true,
        };
        Ok(CondGaussianMean { spread: s, form })
    }
}

impl ApproximationModel for CondGaussianMean {
    fn id(&self) -> &'static str {
        "cond_gaussian_mean"
    }
    fn label(&self) -> &'static str {
        "sample mean of conditionally Gaussian observations"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::Power { c: 1.0, p: 1.0 }
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::RealLine
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: false, expected_local: true, deterministic_u: false }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![64, 256, 1024]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([("a0".into(), json!(self.spread.a0)), ("a1".into(), json!(self.spread.a1))])
    }
    fn new_sample(&self, _n: u64) -> CoupledSample {
        CoupledSample::scalars()
    }
    fn sample_into(&self, n: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let y = normal(rng);
        // the mean of n draws is exactly N(Y, a²/n)
        let yn = y + self.spread.a(y) * normal(rng) / (n as f64).sqrt();
        out.limit = State::Scalar(y);
        out.approx = State::Scalar(yn);
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C> {
        self.form.closed_form(kind, phi, chi, psi)
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        self.form.kinds()
    }
    fn default_functions(&self) -> Vec<Observable> {
        iexp_defaults()
    }
    fn limit_cdf(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        Some(Box::new(|x| ScalarLaw::standard_gaussian().cdf(x)))
    }
}

/// Coordinates X_q = J(ξ_q) of a Gaussian orthogonal measure on a finite basis, each
/// perturbed by an independent N(0, λ a_q / n) error.
pub struct OrthogonalMeasure {
    form: GaussianVectorForm,
}

impl OrthogonalMeasure {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        let p = Params::new("orthogonal_measure", p, &["lambda", "speeds"])?;
        let lambda = p.positive("lambda", 1.0)?;
        let speeds = p.list("speeds", &[1.0, 1.0, 1.0])?;
        if speeds.is_empty() || speeds.iter().any(|a| *a <= 0.0) {
            return Err(Error::Config("orthogonal_measure: speeds must be a nonempty list of positive numbers".into()));
        }
        Ok(OrthogonalMeasure { form: GaussianVectorForm { lambda, speeds } })
    }

    fn dim(&self) -> usize {
        self.form.speeds.len()
    }
}

impl ApproximationModel for OrthogonalMeasure {
    fn id(&self) -> &'static str {
        "orthogonal_measure"
    }
    fn label(&self) -> &'static str {
        "Wiener integral on a finite orthonormal basis with coordinate errors"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::Power { c: 1.0, p: 1.0 }
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::Vector(self.dim())
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: false, expected_local: true, deterministic_u: false }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![64, 256, 1024]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([("lambda".into(), json!(self.form.lambda)), ("speeds".into(), json!(self.form.speeds))])
    }
    fn new_sample(&self, _n: u64) -> CoupledSample {
        CoupledSample { limit: State::Vector(vec![0.0; self.dim()]), approx: State::Vector(vec![0.0; self.dim()]) }
    }
    fn sample_into(&self, n: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let (State::Vector(x), State::Vector(xn)) = (&mut out.limit, &mut out.approx) else {
            *out = self.new_sample(n);
            return self.sample_into(n, rng, out);
        };
        for (q, a) in self.form.speeds.iter().enumerate() {
            let xq = normal(rng);
            x[q] = xq;
            xn[q] = xq + (self.form.lambda * a / n as f64).sqrt() * normal(rng);
        }
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C> {
        self.form.closed_form(kind, phi, chi, psi)
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        BiasKind::ALL.to_vec()
    }
    fn default_functions(&self) -> Vec<Observable> {
        let d = self.dim();
        let mode = |f: &dyn Fn(usize) -> f64| Observable::iexp(&(0..d).map(f).collect::<Vec<_>>());
        vec![
            mode(&|q| if q == 0 { 0.7 } else { 0.0 }),
            mode(&|q| 0.3 * (q as f64 + 1.0) / d as f64),
            mode(&|q| if q % 2 == 0 { -0.4 } else { 0.5 }),
        ]
    }
}

/// Poisson configuration of Gaussian marks, each mark perturbed as in the
/// conditional-mean scheme: x ↦ x + a(x)G/√n.
pub struct PoissonPoint {
    intensity: f64,
    spread: Spread,
}

impl PoissonPoint {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        let p = Params::new("poisson_point", p, &["intensity", "a0", "a1"])?;
        let intensity = p.positive("intensity", 2.0)?;
        Ok(PoissonPoint { intensity, spread: Spread::from_params(&p)? })
    }

    fn point_fn(o: &Observable) -> Option<&TestFunction> {
        match o {
            Observable::Cylinder(CylindricalFunction::PointExp(f)) => Some(f),
            _ => None,
        }
    }

    /// E e^{iΣ h(x_j)} = exp(−∫(1 − e^{ih}) dμ)
    fn laplace(&self, h: &dyn Fn(f64) -> f64) -> C {
        let m = gaussian_expect(|x| C::new(1.0, 0.0) - C::new(0.0, h(x)).exp()) * self.intensity;
        (-m).exp()
    }

    /// Limit of nE[(e^{iΦₙ} − e^{iΦ})(e^{iXₙ} − e^{iX})], i.e. E[e^{i(Φ+X)} ∫γ[φ,χ] dN].
    fn displayed(&self, f: &TestFunction, g: &TestFunction) -> C {
        let h = |x: f64| f.eval1(x).re + g.eval1(x).re;
        let weight = gaussian_expect(|x| {
            C::new(0.0, h(x)).exp() * (f.deriv1(x).re * g.deriv1(x).re * self.spread.var(x))
        }) * self.intensity;
        -self.laplace(&h) * weight
    }

    /// Limit of nE[(e^{iΦₙ} − e^{iΦ}) e^{iX}].
    fn theoretical(&self, f: &TestFunction, g: &TestFunction) -> C {
        let h = |x: f64| f.eval1(x).re + g.eval1(x).re;
        let weight = gaussian_expect(|x| {
            let (_, d1, d2) = f.jet1(x);
            let inner = C::new(-0.5 * d1.re * d1.re, 0.5 * d2.re) * self.spread.var(x);
            C::new(0.0, h(x)).exp() * inner
        }) * self.intensity;
        self.laplace(&h) * weight
    }
}

impl ApproximationModel for PoissonPoint {
    fn id(&self) -> &'static str {
        "poisson_point"
    }
    fn label(&self) -> &'static str {
        "Poisson point measure with perturbed marks (white form)"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::Power { c: 1.0, p: 1.0 }
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::PointMeasure
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: false, expected_local: true, deterministic_u: false }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![64, 256, 1024]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("intensity".into(), json!(self.intensity)),
            ("a0".into(), json!(self.spread.a0)),
            ("a1".into(), json!(self.spread.a1)),
        ])
    }
    fn new_sample(&self, _n: u64) -> CoupledSample {
        CoupledSample { limit: State::Points(Vec::new()), approx: State::Points(Vec::new()) }
    }
    fn sample_into(&self, n: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let (State::Points(x), State::Points(xn)) = (&mut out.limit, &mut out.approx) else {
            *out = self.new_sample(n);
            return self.sample_into(n, rng, out);
        };
        x.clear();
        xn.clear();
        let count = Poisson::new(self.intensity).expect("positive intensity").sample(rng) as usize;
        let root = (n as f64).sqrt();
        for _ in 0..count {
            let mark = normal(rng);
            x.push(mark);
            xn.push(mark + self.spread.a(mark) * normal(rng) / root);
        }
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, _psi: Option<&Observable>) -> Option<C> {
        let (f, g) = (Self::point_fn(phi)?, Self::point_fn(chi)?);
        match kind {
            BiasKind::Theoretical => Some(self.theoretical(f, g)),
            BiasKind::QuarticDiagnostic => Some(C::new(0.0, 0.0)),
            _ => None,
        }
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        vec![BiasKind::Theoretical, BiasKind::QuarticDiagnostic]
    }
    fn reference_candidates(&self, kind: BiasKind, phi: &Observable, chi: &Observable) -> Vec<(String, C)> {
        let (Some(f), Some(g)) = (Self::point_fn(phi), Self::point_fn(chi)) else { return Vec::new() };
        if kind != BiasKind::Symmetric {
            return Vec::new();
        }
        let d = self.displayed(f, g);
        vec![("displayed".into(), d), ("white form".into(), d * 0.5)]
    }
    fn default_functions(&self) -> Vec<Observable> {
        let mark = |c: f64, u: f64, imag: bool| {
            let e = TestFunction::iexp(&[u]);
            let part = if imag { e.im() } else { e.re() };
            Observable::point_exp(part.scaled(C::new(c, 0.0)))
        };
        vec![mark(0.8, 1.0, true), mark(0.5, 0.5, false), mark(-0.3, 2.0, true)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_derivative_matches_difference_quotient() {
        let s = Spread { a0: 0.5, a1: 0.5 };
        for y in [-1.3, 0.0, 0.7] {
            let h = 1e-6;
            let fd = (s.var(y + h) - s.var(y - h)) / (2.0 * h);
            assert!((fd - s.dvar(y)).abs() < 1e-8);
        }
    }
}
