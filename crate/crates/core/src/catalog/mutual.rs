//! Mutual approximations of normalized sums, random walks and empirical processes,
//! and their erroneous variants.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};
use serde_json::{json, Value};

use super::forms::{DiffusionForm, GaussianPathForm, PathDrift};
use super::{ApproximationModel, Params};
use crate::algebra::{path_exp_sum, Integrand, Observable};
use crate::quadrature::{self, gaussian_expect, ScalarLaw};
use crate::rng::SampleRng;
use crate::state::{CoupledSample, Side, State, StateSpace};
use crate::types::{mutual_gap, BiasKind, ComplexValue, Error, ModelFlags, RateSequence, Result};

type C = ComplexValue;

fn normal(rng: &mut SampleRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Centered unit-variance increment law of a random walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncrementLaw {
    Gaussian,
    Rademacher,
    /// Exp(1) − 1
    Exponential,
}

impl IncrementLaw {
    pub const NAMES: [&'static str; 3] = ["gaussian", "rademacher", "exponential"];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(IncrementLaw::Gaussian),
            "rademacher" => Ok(IncrementLaw::Rademacher),
            "exponential" => Ok(IncrementLaw::Exponential),
            other => Err(Error::Config(format!("unknown increment law `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IncrementLaw::Gaussian => "gaussian",
            IncrementLaw::Rademacher => "rademacher",
            IncrementLaw::Exponential => "exponential",
        }
    }

    pub fn draw(self, rng: &mut SampleRng) -> f64 {
        match self {
            IncrementLaw::Gaussian => normal(rng),
            IncrementLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            IncrementLaw::Exponential => -(1.0 - rng.random::<f64>()).ln() - 1.0,
        }
    }

    /// Sum of k independent increments, drawn exactly in O(1).
    pub fn sum(self, k: u64, rng: &mut SampleRng) -> f64 {
        if k == 0 {
            return 0.0;
        }
        match self {
            IncrementLaw::Gaussian => (k as f64).sqrt() * normal(rng),
            IncrementLaw::Rademacher => {
                let heads = Binomial::new(k, 0.5).expect("valid").sample(rng);
                2.0 * heads as f64 - k as f64
            }
            IncrementLaw::Exponential => Gamma::new(k as f64, 1.0).expect("valid").sample(rng) - k as f64,
        }
    }
}

struct WalkParams {
    sigma: f64,
    theta: f64,
    law: IncrementLaw,
}

impl WalkParams {
    fn read(p: &Params<'_>) -> Result<Self> {
        let sigma = p.positive("sigma", 1.0)?;
        let theta = p.f64("theta", 1.0)?;
        RateSequence::Mutual { theta }.validate()?;
        let law = IncrementLaw::parse(&p.choice("law", "gaussian", &IncrementLaw::NAMES)?)?;
        Ok(WalkParams { sigma, theta, law })
    }

    fn linked(&self, m: u64) -> u64 {
        m + mutual_gap(self.theta, m)
    }

    fn json(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("sigma".into(), json!(self.sigma)),
            ("theta".into(), json!(self.theta)),
            ("law".into(), json!(self.law.name())),
        ])
    }
}

fn path_state(dt: f64, cells: usize) -> State {
    State::Path { dt, values: vec![0.0; cells + 1] }
}

fn iexp_defaults() -> Vec<Observable> {
    vec![Observable::iexp(&[1.0]), Observable::iexp(&[-1.0]), Observable::iexp(&[0.5])]
}

fn integral_defaults() -> Vec<Observable> {
    vec![
        Observable::integral_exp(Integrand::constant(1.0)),
        Observable::integral_exp(Integrand::Polynomial(vec![0.0, 1.0])),
        Observable::integral_exp(Integrand::Cosine { amp: 0.8, freq: std::f64::consts::PI, phase: 0.0 }),
    ]
}

/// S_m/√m against S_n/√n with n = m + k(m) and shared increments; α(m) = m/k(m).
pub struct CltMutual {
    walk: WalkParams,
    form: DiffusionForm,
}

impl CltMutual {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        let p = Params::new("clt_mutual", p, &["sigma", "theta", "law"])?;
        let walk = WalkParams::read(&p)?;
        let s2 = walk.sigma * walk.sigma;
        let ou: super::forms::Coefficients = Arc::new(move |x| (0.5 * s2, -0.5 * x));
        let form = DiffusionForm {
            law: ScalarLaw::Gaussian { mean: 0.0, sd: walk.sigma },
            theoretical: Some(ou.clone()),
            practical: Some(ou),
            gamma: Arc::new(move |_| s2),
            first_order_singular: true,
        };
        Ok(CltMutual { walk, form })
    }
}

impl ApproximationModel for CltMutual {
    fn id(&self) -> &'static str {
        "clt_mutual"
    }
    fn label(&self) -> &'static str {
        "central limit theorem as a mutual approximation of normalized sums"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::Mutual { theta: self.walk.theta }
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::RealLine
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: true, expected_local: true, deterministic_u: false }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![1000, 4000, 16000]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        self.walk.json()
    }
    fn new_sample(&self, _n: u64) -> CoupledSample {
        CoupledSample::scalars()
    }
    fn sample_into(&self, m: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let n = self.walk.linked(m);
        let head = self.walk.law.sum(m, rng) * self.walk.sigma;
        let tail = self.walk.law.sum(n - m, rng) * self.walk.sigma;
        out.approx = State::Scalar(head / (m as f64).sqrt());
        out.limit = State::Scalar((head + tail) / (n as f64).sqrt());
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
        let law = self.form.law;
        Some(Box::new(move |x| law.cdf(x)))
    }
}

/// Left limit f(1−).
fn terminal(f: &Integrand) -> f64 {
    if f.is_smooth() {
        f.value(1.0)
    } else {
        f.value(1.0 - 1e-12)
    }
}

/// ∫₀¹ s f(s) dg(s), with the jumps of a piecewise g; None when f and g jump together.
fn time_weighted_stieltjes(f: &Integrand, g: &Integrand) -> Option<f64> {
    let mut breaks = f.breakpoints();
    breaks.extend(g.breakpoints());
    let smooth = crate::quadrature::integrate_with_breaks(0.0, 1.0, &breaks, 8, |s| {
        C::new(s * f.value(s) * g.derivative(s), 0.0)
    })
    .re;
    let mut jumps = 0.0;
    let mut seen: Vec<f64> = Vec::new();
    for c in g.breakpoints().into_iter().filter(|c| *c > 0.0 && *c < 1.0) {
        if seen.iter().any(|x| (x - c).abs() < 1e-14) {
            continue;
        }
        seen.push(c);
        let h = 1e-12;
        let dg = g.value(c + h) - g.value(c - h);
        if dg == 0.0 {
            continue;
        }
        if (f.value(c + h) - f.value(c - h)).abs() > 1e-9 {
            return None;
        }
        jumps += c * f.value(c) * dg;
    }
    Some(smooth + jumps)
}

fn ou_path_form(cov: super::forms::Bilinear, gamma: super::forms::Bilinear) -> GaussianPathForm {
    GaussianPathForm { cov, gamma, drift: PathDrift::Symmetric, first_order_singular: true }
}

/// Piecewise-linear partial-sum paths on [0, 1] with m and n = m + k(m) steps.
pub struct DonskerMutual {
    walk: WalkParams,
    form: GaussianPathForm,
}

impl DonskerMutual {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        let p = Params::new("donsker_mutual", p, &["sigma", "theta", "law"])?;
        let walk = WalkParams::read(&p)?;
        let s2 = walk.sigma * walk.sigma;
        let cov: super::forms::Bilinear = Arc::new(move |f: &Integrand, g: &Integrand| s2 * f.inner(g));
        let gamma: super::forms::Bilinear = Arc::new(move |f: &Integrand, g: &Integrand| s2 * terminal(f) * terminal(g));
        let pairing: super::forms::Pairing =
            Arc::new(move |f: &Integrand, g: &Integrand| Some(s2 * (0.5 * f.inner(g) + time_weighted_stieltjes(f, g)?)));
        let form = GaussianPathForm { cov, gamma, drift: PathDrift::Pairing(pairing), first_order_singular: true };
        Ok(DonskerMutual { walk, form })
    }
}

impl ApproximationModel for DonskerMutual {
    fn id(&self) -> &'static str {
        "donsker_mutual"
    }
    fn label(&self) -> &'static str {
        "Donsker invariance principle as a mutual approximation of random walks"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::Mutual { theta: self.walk.theta }
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::Path { horizon: 1.0 }
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: false, expected_local: true, deterministic_u: false }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![1000, 4000, 16000]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        self.walk.json()
    }
    fn path_grid(&self, m: u64, side: Side) -> Option<(f64, usize)> {
        let cells = match side {
            Side::Approx => m,
            Side::Limit => self.walk.linked(m),
        };
        Some((1.0 / cells as f64, cells as usize))
    }
    fn new_sample(&self, m: u64) -> CoupledSample {
        let n = self.walk.linked(m);
        CoupledSample {
            limit: path_state(1.0 / n as f64, n as usize),
            approx: path_state(1.0 / m as f64, m as usize),
        }
    }
    fn sample_into(&self, m: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let n = self.walk.linked(m) as usize;
        let m = m as usize;
        let (State::Path { values: y, .. }, State::Path { values: ym, .. }) = (&mut out.limit, &mut out.approx) else {
            unreachable!("path buffers")
        };
        if y.len() != n + 1 || ym.len() != m + 1 {
            *out = self.new_sample(m as u64);
            return self.sample_into(m as u64, rng, out);
        }
        let (rm, rn) = (self.walk.sigma / (m as f64).sqrt(), self.walk.sigma / (n as f64).sqrt());
        let mut s = 0.0;
        y[0] = 0.0;
        ym[0] = 0.0;
        for j in 1..=n {
            s += self.walk.law.draw(rng);
            y[j] = s * rn;
            if j <= m {
                ym[j] = s * rm;
            }
        }
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C> {
        self.form.closed_form(kind, phi, chi, psi)
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        self.form.kinds()
    }
    fn default_functions(&self) -> Vec<Observable> {
        integral_defaults()
    }
}

/// Centered empirical processes of m and n = m + k(m) shared uniforms.
pub struct EmpiricalBridge {
    theta: f64,
    form: GaussianPathForm,
}

fn bridge_cov() -> super::forms::Bilinear {
    Arc::new(|f: &Integrand, g: &Integrand| f.inner(g) - f.integral(0.0, 1.0) * g.integral(0.0, 1.0))
}

impl EmpiricalBridge {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        let p = Params::new("empirical_bridge", p, &["theta"])?;
        let theta = p.f64("theta", 1.0)?;
        RateSequence::Mutual { theta }.validate()?;
        Ok(EmpiricalBridge { theta, form: ou_path_form(bridge_cov(), bridge_cov()) })
    }
}

impl ApproximationModel for EmpiricalBridge {
    fn id(&self) -> &'static str {
        "empirical_bridge"
    }
    fn label(&self) -> &'static str {
        "empirical processes against the Brownian bridge, mutual form"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::Mutual { theta: self.theta }
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::Empirical
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: true, expected_local: true, deterministic_u: false }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![1000, 4000, 16000]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([("theta".into(), json!(self.theta))])
    }
    fn new_sample(&self, m: u64) -> CoupledSample {
        let n = m + mutual_gap(self.theta, m);
        CoupledSample {
            limit: State::Empirical { points: vec![0.0; n as usize] },
            approx: State::Empirical { points: vec![0.0; m as usize] },
        }
    }
    fn sample_into(&self, m: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let n = (m + mutual_gap(self.theta, m)) as usize;
        let (State::Empirical { points: v }, State::Empirical { points: vm }) = (&mut out.limit, &mut out.approx)
        else {
            unreachable!("empirical buffers")
        };
        v.resize(n, 0.0);
        vm.resize(m as usize, 0.0);
        for x in v.iter_mut() {
            *x = rng.random();
        }
        vm.copy_from_slice(&v[..m as usize]);
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C> {
        self.form.closed_form(kind, phi, chi, psi)
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        self.form.kinds()
    }
    fn default_functions(&self) -> Vec<Observable> {
        // constants integrate to zero against a bridge
        integral_defaults().split_off(1)
            .into_iter()
            .chain([Observable::integral_exp(Integrand::Sine { amp: 1.0, freq: std::f64::consts::PI, phase: 0.0 })])
            .collect()
    }
}

/// Spread a(x) = a0 + a1·x(1 − x) of the erroneous observations.
#[derive(Debug, Clone, Copy)]
struct UnitSpread {
    a0: f64,
    a1: f64,
}

impl UnitSpread {
    fn a(&self, x: f64) -> f64 {
        self.a0 + self.a1 * x * (1.0 - x)
    }
}

/// Empirical process of `points` uniforms V_j, approximated by the empirical process of
/// U_j = V_j + a(V_j)·Ḡ_j with Ḡ_j the mean of m standard normals; β_m = m.
pub struct ErroneousEmpirical {
    points: usize,
    spread: UnitSpread,
}

const UNIT_PANELS: usize = 32;

impl ErroneousEmpirical {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        let p = Params::new("erroneous_empirical", p, &["points", "a0", "a1"])?;
        let points = p.u64("points", 256)?;
        if points < 1 {
            return Err(Error::Config("erroneous_empirical: points must be at least 1".into()));
        }
        let a0 = p.positive("a0", 0.2)?;
        let a1 = p.nonnegative("a1", 0.5)?;
        Ok(ErroneousEmpirical { points: points as usize, spread: UnitSpread { a0, a1 } })
    }

    fn second_derivative(f: &Integrand, x: f64) -> f64 {
        let h = 1e-5;
        (f.derivative(x + h) - f.derivative(x - h)) / (2.0 * h)
    }

    /// Limits as m → ∞ at fixed `points` of (Theoretical, Symmetric) for e^{i∫f dZ}, e^{i∫g dZ}.
    fn exp_pair(&self, f: &Integrand, g: &Integrand) -> (C, C) {
        let root = (self.points as f64).sqrt();
        let h = f.plus(g);
        let mean_h = h.integral(0.0, 1.0);
        let phase = |x: f64| C::new(0.0, (h.value(x) - mean_h) / root).exp();
        let unit = |w: &dyn Fn(f64) -> C| quadrature::integrate(0.0, 1.0, UNIT_PANELS, w);
        let char_fn = unit(&phase);
        let q = |x: f64| 0.5 * Self::second_derivative(f, x) * self.spread.a(x).powi(2);
        let mean_q = unit(&|x| C::new(q(x), 0.0)).re;
        let drift = unit(&|x| phase(x) * (q(x) - mean_q)) * C::new(0.0, root);
        let diffusion = unit(&|x| phase(x) * (f.derivative(x).powi(2) * self.spread.a(x).powi(2)));
        let cross = unit(&|x| phase(x) * (f.derivative(x) * g.derivative(x) * self.spread.a(x).powi(2)));
        let power = char_fn.powu(self.points as u32 - 1);
        (power * (drift - diffusion * 0.5), -power * cross * 0.5)
    }
}

impl ApproximationModel for ErroneousEmpirical {
    fn id(&self) -> &'static str {
        "erroneous_empirical"
    }
    fn label(&self) -> &'static str {
        "empirical process of erroneous observations (generalized Mehler form)"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::Power { c: 1.0, p: 1.0 }
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::Empirical
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: false, expected_local: true, deterministic_u: false }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![64, 256, 1024]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("points".into(), json!(self.points)),
            ("a0".into(), json!(self.spread.a0)),
            ("a1".into(), json!(self.spread.a1)),
        ])
    }
    fn empirical_center(&self, m: u64, side: Side, f: &Integrand) -> f64 {
        match side {
            Side::Limit => f.integral(0.0, 1.0),
            Side::Approx => {
                let sd = 1.0 / (m as f64).sqrt();
                quadrature::integrate(0.0, 1.0, UNIT_PANELS, |v| {
                    gaussian_expect(|z| C::new(f.value(v + self.spread.a(v) * sd * z), 0.0))
                })
                .re
            }
        }
    }
    fn new_sample(&self, _m: u64) -> CoupledSample {
        CoupledSample {
            limit: State::Empirical { points: vec![0.0; self.points] },
            approx: State::Empirical { points: vec![0.0; self.points] },
        }
    }
    fn sample_into(&self, m: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let (State::Empirical { points: v }, State::Empirical { points: u }) = (&mut out.limit, &mut out.approx)
        else {
            unreachable!("empirical buffers")
        };
        let sd = 1.0 / (m as f64).sqrt();
        for (vj, uj) in v.iter_mut().zip(u.iter_mut()) {
            let x: f64 = rng.random();
            *vj = x;
            *uj = x + self.spread.a(x) * sd * normal(rng);
        }
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, _psi: Option<&Observable>) -> Option<C> {
        if kind == BiasKind::QuarticDiagnostic {
            return Some(C::new(0.0, 0.0));
        }
        if !matches!(kind, BiasKind::Theoretical | BiasKind::Practical | BiasKind::Symmetric | BiasKind::Singular) {
            return None;
        }
        let a = path_exp_sum(phi)?;
        let b = path_exp_sum(chi)?;
        if a.iter().chain(&b).any(|(_, f)| !f.is_smooth()) {
            return None;
        }
        let (mut th, mut sym) = (C::new(0.0, 0.0), C::new(0.0, 0.0));
        for (ca, f) in &a {
            for (cb, g) in &b {
                let (t, s) = self.exp_pair(f, g);
                th += ca * cb * t;
                sym += ca * cb * s;
            }
        }
        Some(match kind {
            BiasKind::Theoretical => th,
            BiasKind::Practical => -th - sym * 2.0,
            BiasKind::Symmetric => sym,
            _ => th + sym,
        })
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        vec![
            BiasKind::Theoretical,
            BiasKind::Practical,
            BiasKind::Symmetric,
            BiasKind::Singular,
            BiasKind::QuarticDiagnostic,
        ]
    }
    fn default_functions(&self) -> Vec<Observable> {
        vec![
            Observable::integral_exp(Integrand::Polynomial(vec![0.0, 1.0])),
            Observable::integral_exp(Integrand::Sine { amp: 1.0, freq: std::f64::consts::PI, phase: 0.0 }),
            Observable::integral_exp(Integrand::Polynomial(vec![0.0, 0.0, -1.5])),
        ]
    }
}

/// Random walk of `steps` Gaussian increments U_i against the walk of U_i + √(λ/m)·G_i; α_m = m.
pub struct ErroneousWalk {
    steps: usize,
    lambda: f64,
    sigma: f64,
    form: GaussianPathForm,
}

impl ErroneousWalk {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        let p = Params::new("erroneous_walk", p, &["steps", "lambda", "sigma"])?;
        let steps = p.u64("steps", 256)?;
        if steps < 1 {
            return Err(Error::Config("erroneous_walk: steps must be at least 1".into()));
        }
        let steps = steps as usize;
        let lambda = p.positive("lambda", 1.0)?;
        let sigma = p.positive("sigma", 1.0)?;
        let dt = 1.0 / steps as f64;
        // discrete inner product of cell averages, exact for the interpolated walk
        let grid_inner = move |f: &Integrand, g: &Integrand| {
            let (wf, wg) = (f.cell_weights(dt, steps), g.cell_weights(dt, steps));
            dt * wf.iter().zip(&wg).map(|(a, b)| a * b).sum::<f64>()
        };
        let s2 = sigma * sigma;
        let form = GaussianPathForm {
            cov: Arc::new(move |f, g| s2 * grid_inner(f, g)),
            gamma: Arc::new(move |f, g| lambda * grid_inner(f, g)),
            drift: PathDrift::Additive,
            first_order_singular: true,
        };
        Ok(ErroneousWalk { steps, lambda, sigma, form })
    }
}

impl ApproximationModel for ErroneousWalk {
    fn id(&self) -> &'static str {
        "erroneous_walk"
    }
    fn label(&self) -> &'static str {
        "random walk with erroneous increments"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::Power { c: 1.0, p: 1.0 }
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::Path { horizon: 1.0 }
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: false, expected_local: true, deterministic_u: false }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![64, 256, 1024]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("steps".into(), json!(self.steps)),
            ("lambda".into(), json!(self.lambda)),
            ("sigma".into(), json!(self.sigma)),
        ])
    }
    fn path_grid(&self, _m: u64, _side: Side) -> Option<(f64, usize)> {
        Some((1.0 / self.steps as f64, self.steps))
    }
    fn new_sample(&self, _m: u64) -> CoupledSample {
        let dt = 1.0 / self.steps as f64;
        CoupledSample { limit: path_state(dt, self.steps), approx: path_state(dt, self.steps) }
    }
    fn sample_into(&self, m: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let (State::Path { values: x, .. }, State::Path { values: xm, .. }) = (&mut out.limit, &mut out.approx) else {
            unreachable!("path buffers")
        };
        let root = (self.steps as f64).sqrt();
        let err = (self.lambda / m as f64).sqrt();
        let (mut s, mut sm) = (0.0, 0.0);
        x[0] = 0.0;
        xm[0] = 0.0;
        for j in 1..=self.steps {
            let u = self.sigma * normal(rng);
            s += u;
            sm += u + err * normal(rng);
            x[j] = s / root;
            xm[j] = sm / root;
        }
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C> {
        self.form.closed_form(kind, phi, chi, psi)
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        self.form.kinds()
    }
    fn default_functions(&self) -> Vec<Observable> {
        integral_defaults()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linked_index_adds_gap() {
        let w = WalkParams { sigma: 1.0, theta: 1.0, law: IncrementLaw::Gaussian };
        assert_eq!(w.linked(1000), 1032);
        assert_eq!(w.linked(16), 20);
    }

    /// Exact finite-m theoretical bias for Gaussian increments, from the cell weights.
    fn donsker_theoretical_exact(m: u64, f: &Integrand, g: &Integrand) -> f64 {
        let w = WalkParams { sigma: 1.0, theta: 1.0, law: IncrementLaw::Gaussian };
        let n = w.linked(m);
        let (fm, gn, fn_) = (
            f.cell_weights(1.0 / m as f64, m as usize),
            g.cell_weights(1.0 / n as f64, n as usize),
            f.cell_weights(1.0 / n as f64, n as usize),
        );
        let (sm, sn) = ((m as f64).sqrt(), (n as f64).sqrt());
        let mut v1 = 0.0;
        let mut v2 = 0.0;
        for j in 0..n as usize {
            let a = if j < m as usize { fm[j] / sm } else { 0.0 };
            v1 += (a + gn[j] / sn).powi(2);
            v2 += ((fn_[j] + gn[j]) / sn).powi(2);
        }
        m as f64 / (n - m) as f64 * ((-0.5 * v1).exp() - (-0.5 * v2).exp())
    }

    #[test]
    fn donsker_pairing_matches_exact_finite_walk() {
        let model = DonskerMutual::build(&serde_json::Map::new()).unwrap();
        let cases = [
            (Integrand::constant(1.0), Integrand::Polynomial(vec![0.0, 1.0])),
            (Integrand::Polynomial(vec![0.0, 1.0]), Integrand::constant(1.0)),
            (Integrand::Cosine { amp: 0.8, freq: 3.0, phase: 0.0 }, Integrand::Polynomial(vec![0.5, -1.0, 2.0])),
            (Integrand::constant(1.0), Integrand::from_marginals(&[0.5], &[1.0])),
        ];
        for (f, g) in cases {
            let exact = donsker_theoretical_exact(400_000, &f, &g);
            let phi = Observable::integral_exp(f.clone());
            let chi = Observable::integral_exp(g.clone());
            let form = model.closed_form(BiasKind::Theoretical, &phi, &chi, None).unwrap();
            assert!((form.re - exact).abs() < 5e-3, "f={f} g={g}: form {form} exact {exact}");
        }
    }

    #[test]
    fn erroneous_walk_spot_value() {
        let m = ErroneousWalk::build(&serde_json::Map::new()).unwrap();
        let one = Observable::integral_exp(Integrand::constant(1.0));
        let sym = m.closed_form(BiasKind::Symmetric, &one, &one, None).unwrap();
        assert!((2.0 * sym.re + (-2.0f64).exp()).abs() < 1e-12, "{sym}");
    }

    #[test]
    fn erroneous_empirical_tends_to_gaussian_limit() {
        let mut p = serde_json::Map::new();
        p.insert("points".into(), json!(200_000));
        let m = ErroneousEmpirical::build(&p).unwrap();
        let f = Integrand::Polynomial(vec![0.0, 1.0]);
        let o = Observable::integral_exp(f.clone());
        let sym = m.closed_form(BiasKind::Symmetric, &o, &o, None).unwrap();
        // −½ ∫ a² · e^{−½ var(2V)}
        let a2 = quadrature::integrate_real(0.0, 1.0, 16, |x| (0.2 + 0.5 * x * (1.0 - x)).powi(2));
        let expected = -0.5 * a2 * (-0.5 * 4.0 / 12.0f64).exp();
        assert!((sym.re - expected).abs() < 1e-4 && sym.im.abs() < 1e-4, "{sym} vs {expected}");
    }
}
