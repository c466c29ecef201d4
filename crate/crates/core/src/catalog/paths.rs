//! Time-discretization schemes: Riemann sums of a stochastic integral, the Euler scheme
//! for a scalar SDE with its limit error process, and the Euler scheme for an ODE.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use super::forms::DiffusionForm;
use super::{ApproximationModel, Params};
use crate::algebra::{CylindricalFunction, Observable};
use crate::quadrature::{self, ScalarLaw};
use crate::rng::{SampleRng, StreamKey};
use crate::state::{CoupledSample, Side, State, StateSpace};
use crate::types::{BiasKind, ComplexValue, Error, ModelFlags, RateSequence, Result};

type C = ComplexValue;

fn normal(rng: &mut SampleRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Y = ∫₀¹ B dB = (B₁² − 1)/2 and Yₙ = Σ B_{k/n}(B_{(k+1)/n} − B_{k/n}).
pub struct StochasticIntegral {
    form: DiffusionForm,
}

impl StochasticIntegral {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        Params::new("stochastic_integral", p, &[])?;
        Ok(StochasticIntegral {
            form: DiffusionForm {
                law: ScalarLaw::ItoSquare,
                theoretical: None,
                practical: None,
                gamma: Arc::new(|_| 0.5),
                first_order_singular: false,
            },
        })
    }
}

impl ApproximationModel for StochasticIntegral {
    fn id(&self) -> &'static str {
        "stochastic_integral"
    }
    fn label(&self) -> &'static str {
        "Riemann sums of the Ito integral of Brownian motion against itself"
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
        BTreeMap::new()
    }
    fn new_sample(&self, _n: u64) -> CoupledSample {
        CoupledSample::scalars()
    }
    fn sample_into(&self, n: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let sd = 1.0 / (n as f64).sqrt();
        let (mut b, mut riemann) = (0.0, 0.0);
        for _ in 0..n {
            let db = sd * normal(rng);
            riemann += b * db;
            b += db;
        }
        out.limit = State::Scalar(0.5 * (b * b - 1.0));
        out.approx = State::Scalar(riemann);
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C> {
        self.form.closed_form(kind, phi, chi, psi)
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        self.form.kinds()
    }
    fn default_functions(&self) -> Vec<Observable> {
        vec![Observable::iexp(&[1.0]), Observable::iexp(&[-1.0]), Observable::iexp(&[0.5])]
    }
    fn limit_cdf(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        Some(Box::new(|x| ScalarLaw::ItoSquare.cdf(x)))
    }
}

/// Affine coefficient c0 + c1·y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub c0: f64,
    pub c1: f64,
}

impl Affine {
    fn at(&self, y: f64) -> f64 {
        self.c0 + self.c1 * y
    }
}

/// Refinement factor of the reference solution.
pub const REFINEMENT: u64 = 64;
/// Steps per unit time of the companion simulator.
const COMPANION_STEPS: f64 = 1024.0;
const COMPANION_SALT: u64 = 0xC0A1_E5CE;

/// Euler scheme with n steps per unit time for dY = a(Y)dB + b(Y)dt against the same
/// equation solved on a grid refined 64 times, driven by the same Brownian increments.
/// States are paths on the coarse grid.
pub struct EulerSde {
    a: Affine,
    b: Affine,
    y0: f64,
    horizon: f64,
    companion_samples: u64,
}

/// Summary of a companion run: mean, standard error and sample count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompanionMoment {
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
}

impl EulerSde {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        let p = Params::new("euler_sde", p, &["a0", "a1", "b0", "b1", "y0", "horizon", "companion_samples"])?;
        let a = Affine { c0: p.f64("a0", 0.0)?, c1: p.f64("a1", 2.0)? };
        if a.c1 == 0.0 {
            return Err(Error::Config(
                "euler_sde: a1 must be nonzero (the limit error needs a'(y)^2 bounded below)".into(),
            ));
        }
        let b = Affine { c0: p.f64("b0", 0.0)?, c1: p.f64("b1", 0.0)? };
        let horizon = p.positive("horizon", 0.25)?;
        let companion_samples = p.u64("companion_samples", 200_000)?;
        if companion_samples < 100 {
            return Err(Error::Config("euler_sde: companion_samples must be at least 100".into()));
        }
        Ok(EulerSde { a, b, y0: p.f64("y0", 1.0)?, horizon, companion_samples })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn cells(&self, n: u64) -> usize {
        (n as f64 * self.horizon).round() as usize
    }

    /// Monte Carlo of Ê[U_s U_t] = N_s N_t ∫₀^{s∧t} (a a′)²(Y_r) / (2 N_r²) dr averaged over Y,
    /// with N the derivative flow of Y. `weight` maps (Y, Ê[U U] at each requested time pair) to a sample value.
    fn companion<F>(&self, times: &[f64], samples: u64, seed: u64, weight: F) -> (C, f64)
    where
        F: Fn(&[f64], &[f64], &[f64]) -> C,
    {
        let h = 1.0 / COMPANION_STEPS;
        let tmax = times.iter().cloned().fold(0.0, f64::max);
        let steps = (tmax / h).ceil() as usize;
        let marks: Vec<usize> = times.iter().map(|t| ((t / h).round() as usize).min(steps)).collect();
        let key = StreamKey::salted(seed, "euler_sde", 0, COMPANION_SALT);
        let (mut sum, mut sq) = (C::new(0.0, 0.0), 0.0);
        let da = self.a.c1;
        let db = self.b.c1;
        let mut y_at = vec![0.0; times.len()];
        let mut n_at = vec![0.0; times.len()];
        let mut i_at = vec![0.0; times.len()];
        for s in 0..samples {
            let mut rng = key.stream(s);
            let (mut y, mut flow, mut integral) = (self.y0, 1.0, 0.0);
            for k in 0..=steps {
                for (j, mk) in marks.iter().enumerate() {
                    if *mk == k {
                        y_at[j] = y;
                        n_at[j] = flow;
                        i_at[j] = integral;
                    }
                }
                if k == steps {
                    break;
                }
                let drive = self.a.at(y) * da;
                integral += drive * drive / (2.0 * flow * flow) * h;
                let dbm = h.sqrt() * normal(&mut rng);
                let (ay, by) = (self.a.at(y), self.b.at(y));
                flow += da * flow * dbm + db * flow * h;
                y += ay * dbm + by * h;
            }
            // Ê[U_s U_t] for every pair, row-major
            let q = times.len();
            let mut cross = vec![0.0; q * q];
            for i in 0..q {
                for j in 0..q {
                    let early = if marks[i] <= marks[j] { i } else { j };
                    cross[i * q + j] = n_at[i] * n_at[j] * i_at[early];
                }
            }
            let v = weight(&y_at, &n_at, &cross);
            sum += v;
            sq += v.norm_sqr();
        }
        let mean = sum / samples as f64;
        let var = (sq / samples as f64 - mean.norm_sqr()).max(0.0);
        (mean, (var / samples as f64).sqrt())
    }

    /// E Ê[U_t²], the limit of n·E[(Yⁿ_t − Y_t)²].
    pub fn companion_second_moment(&self, t: f64, samples: u64, seed: u64) -> CompanionMoment {
        let (mean, stderr) = self.companion(&[t], samples, seed, |_, _, cross| C::new(cross[0], 0.0));
        CompanionMoment { mean: mean.re, stderr, samples }
    }

    /// Closed form E[Ê[U_t²]] = (a1⁴/2)·t·e^{a1² t}·y0² for a = a1·y, b = 0.
    pub fn linear_second_moment(&self, t: f64) -> Option<f64> {
        if self.a.c0 != 0.0 || self.b.c0 != 0.0 || self.b.c1 != 0.0 {
            return None;
        }
        let a1 = self.a.c1;
        Some(0.5 * a1.powi(4) * t * (a1 * a1 * t).exp() * self.y0 * self.y0)
    }

    fn marginal(o: &Observable) -> Option<(&[f64], &[f64])> {
        match o {
            Observable::Cylinder(CylindricalFunction::MarginalExp { times, weights }) => Some((times, weights)),
            _ => None,
        }
    }
}

impl ApproximationModel for EulerSde {
    fn id(&self) -> &'static str {
        "euler_sde"
    }
    fn label(&self) -> &'static str {
        "Euler scheme for a scalar SDE against a refined reference"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::Power { c: 1.0, p: 1.0 }
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::Path { horizon: self.horizon }
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: false, expected_local: true, deterministic_u: false }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![32, 128, 512, 2048]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("a0".into(), json!(self.a.c0)),
            ("a1".into(), json!(self.a.c1)),
            ("b0".into(), json!(self.b.c0)),
            ("b1".into(), json!(self.b.c1)),
            ("y0".into(), json!(self.y0)),
            ("horizon".into(), json!(self.horizon)),
            ("companion_samples".into(), json!(self.companion_samples)),
        ])
    }
    fn check_index(&self, n: u64) -> Result<()> {
        let cells = n as f64 * self.horizon;
        if n == 0 || cells < 1.0 || (cells - cells.round()).abs() > 1e-9 {
            return Err(Error::Usage(format!(
                "euler_sde needs n·horizon to be a positive integer, got n={n}, horizon={}",
                self.horizon
            )));
        }
        Ok(())
    }
    fn path_grid(&self, n: u64, _side: Side) -> Option<(f64, usize)> {
        Some((1.0 / n as f64, self.cells(n)))
    }
    fn new_sample(&self, n: u64) -> CoupledSample {
        let cells = self.cells(n);
        let dt = 1.0 / n as f64;
        CoupledSample {
            limit: State::Path { dt, values: vec![0.0; cells + 1] },
            approx: State::Path { dt, values: vec![0.0; cells + 1] },
        }
    }
    fn sample_into(&self, n: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let cells = self.cells(n);
        let (State::Path { values: y, .. }, State::Path { values: yn, .. }) = (&mut out.limit, &mut out.approx) else {
            unreachable!("path buffers")
        };
        let h = 1.0 / (n * REFINEMENT) as f64;
        let sd = h.sqrt();
        let coarse = 1.0 / n as f64;
        let (mut fine, mut euler) = (self.y0, self.y0);
        y[0] = fine;
        yn[0] = euler;
        for k in 1..=cells {
            let mut dbc = 0.0;
            for _ in 0..REFINEMENT {
                let db = sd * normal(rng);
                fine += self.a.at(fine) * db + self.b.at(fine) * h;
                dbc += db;
            }
            euler += self.a.at(euler) * dbc + self.b.at(euler) * coarse;
            y[k] = fine;
            yn[k] = euler;
        }
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, _psi: Option<&Observable>) -> Option<C> {
        match kind {
            BiasKind::QuarticDiagnostic => Some(C::new(0.0, 0.0)),
            BiasKind::Symmetric => {
                // Ẽ = ½ E[Γ[φ, χ]], Γ[e^{iA}, e^{iB}] = −e^{i(A+B)} Σ u_l v_k Ê[U_{t_l} U_{t_k}]
                let (tf, uf) = Self::marginal(phi)?;
                let (tg, ug) = Self::marginal(chi)?;
                let times: Vec<f64> = tf.iter().chain(tg).cloned().collect();
                let weights: Vec<f64> = uf.iter().chain(ug).cloned().collect();
                let nf = tf.len();
                let y0 = self.y0;
                let (mean, _) = self.companion(&times, self.companion_samples, 0, |y, _, cross| {
                    let q = times.len();
                    let phase: f64 = weights.iter().zip(y).map(|(w, yt)| w * (yt - y0)).sum();
                    let mut g = 0.0;
                    for i in 0..nf {
                        for j in nf..q {
                            g += weights[i] * weights[j] * cross[i * q + j];
                        }
                    }
                    -C::new(0.0, phase).exp() * (0.5 * g)
                });
                Some(mean)
            }
            _ => None,
        }
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        vec![BiasKind::Symmetric, BiasKind::QuarticDiagnostic]
    }
    fn default_functions(&self) -> Vec<Observable> {
        let t = self.horizon;
        vec![
            Observable::marginal_exp(&[t], &[0.5]),
            Observable::marginal_exp(&[t], &[-0.3]),
            Observable::marginal_exp(&[0.5 * t, t], &[0.4, 0.2]),
        ]
    }
}

/// Euler scheme x^n with the input y_s = 1 + s integrated exactly on each step, for
/// x′ = sin(x)·y, from a uniform random initial point; deterministic given x₀.
pub struct OdeEuler {
    x0_lo: f64,
    x0_hi: f64,
    horizon: f64,
}

impl OdeEuler {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        let p = Params::new("ode_euler", p, &["x0_lo", "x0_hi", "horizon"])?;
        let x0_lo = p.f64("x0_lo", 0.5)?;
        let x0_hi = p.f64("x0_hi", 2.5)?;
        if !(0.0 < x0_lo && x0_lo < x0_hi && x0_hi < std::f64::consts::PI) {
            return Err(Error::Config("ode_euler: need 0 < x0_lo < x0_hi < pi".into()));
        }
        Ok(OdeEuler { x0_lo, x0_hi, horizon: p.positive("horizon", 1.0)? })
    }

    /// ∫₀ᵗ y_s ds
    fn input_integral(t: f64) -> f64 {
        t + 0.5 * t * t
    }

    /// Exact flow x_t = 2 atan(tan(x₀/2) e^{∫₀ᵗ y}).
    pub fn exact(x0: f64, t: f64) -> f64 {
        2.0 * ((0.5 * x0).tan() * Self::input_integral(t).exp()).atan()
    }

    /// Euler approximation with n steps per unit time.
    pub fn euler(&self, x0: f64, n: u64) -> f64 {
        let steps = (n as f64 * self.horizon).round() as usize;
        let h = self.horizon / steps as f64;
        let mut x = x0;
        for k in 0..steps {
            let (a, b) = (h * k as f64, h * (k + 1) as f64);
            x += x.sin() * (Self::input_integral(b) - Self::input_integral(a));
        }
        x
    }

    /// Leading error coefficient u_t = −½ f(x_t) ∫₀ᵗ f′(x_s) y_s² ds.
    pub fn error_coefficient(x0: f64, t: f64) -> f64 {
        let inner = quadrature::integrate_real(0.0, t, 8, |s| Self::exact(x0, s).cos() * (1.0 + s).powi(2));
        -0.5 * Self::exact(x0, t).sin() * inner
    }

    fn expect_x0(&self, g: impl Fn(f64) -> C) -> C {
        ScalarLaw::Uniform { a: self.x0_lo, b: self.x0_hi }.expect(g)
    }
}

impl ApproximationModel for OdeEuler {
    fn id(&self) -> &'static str {
        "ode_euler"
    }
    fn label(&self) -> &'static str {
        "Euler scheme for an ODE with random initial condition"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::Power { c: 1.0, p: 1.0 }
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::Interval { lo: 0.0, hi: std::f64::consts::PI }
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: false, expected_local: true, deterministic_u: true }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![32, 128, 512, 2048]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("x0_lo".into(), json!(self.x0_lo)),
            ("x0_hi".into(), json!(self.x0_hi)),
            ("horizon".into(), json!(self.horizon)),
        ])
    }
    fn check_index(&self, n: u64) -> Result<()> {
        if n == 0 || (n as f64 * self.horizon).round() < 1.0 {
            return Err(Error::Usage(format!("ode_euler needs at least one step, got n={n}")));
        }
        Ok(())
    }
    fn new_sample(&self, _n: u64) -> CoupledSample {
        CoupledSample::scalars()
    }
    fn sample_into(&self, n: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let x0 = self.x0_lo + (self.x0_hi - self.x0_lo) * rng.random::<f64>();
        out.limit = State::Scalar(Self::exact(x0, self.horizon));
        out.approx = State::Scalar(self.euler(x0, n));
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, _psi: Option<&Observable>) -> Option<C> {
        let (f, g) = (phi.as_point()?, chi.as_point()?);
        let t = self.horizon;
        let theoretical = || {
            self.expect_x0(|x0| {
                let x = Self::exact(x0, t);
                f.deriv1(x) * g.eval1(x) * Self::error_coefficient(x0, t)
            })
        };
        Some(match kind {
            BiasKind::Theoretical | BiasKind::Singular => theoretical(),
            BiasKind::Practical => -theoretical(),
            _ => C::new(0.0, 0.0),
        })
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        BiasKind::ALL.to_vec()
    }
    fn default_functions(&self) -> Vec<Observable> {
        vec![Observable::iexp(&[1.0]), Observable::iexp(&[-1.0]), Observable::iexp(&[2.0])]
    }
    fn limit_cdf(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        let (lo, hi, t) = (self.x0_lo, self.x0_hi, self.horizon);
        Some(Box::new(move |x: f64| {
            if x <= 0.0 {
                return 0.0;
            }
            if x >= std::f64::consts::PI {
                return 1.0;
            }
            let x0 = 2.0 * ((0.5 * x).tan() * (-Self::input_integral(t)).exp()).atan();
            ((x0 - lo) / (hi - lo)).clamp(0.0, 1.0)
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_flow_solves_the_ode() {
        let (x0, t, h) = (1.1, 0.6, 1e-5);
        let d = (OdeEuler::exact(x0, t + h) - OdeEuler::exact(x0, t - h)) / (2.0 * h);
        let x = OdeEuler::exact(x0, t);
        assert!((d - x.sin() * (1.0 + t)).abs() < 1e-8);
    }

    #[test]
    fn euler_error_scales_like_the_coefficient() {
        let m = OdeEuler::build(&serde_json::Map::new()).unwrap();
        let x0 = 1.3;
        let n = 20_000;
        let err = n as f64 * (m.euler(x0, n) - OdeEuler::exact(x0, 1.0));
        let u = OdeEuler::error_coefficient(x0, 1.0);
        assert!((err - u).abs() < 2e-3 * u.abs().max(1.0), "{err} vs {u}");
    }

    #[test]
    fn single_step_riemann_sum_vanishes() {
        let m = StochasticIntegral::build(&serde_json::Map::new()).unwrap();
        let mut s = m.new_sample(1);
        let mut rng = StreamKey::new(1, "t", 1).stream(0);
        // with one step the sum is B_0·B_1 = 0
        m.sample_into(1, &mut rng, &mut s);
        assert_eq!(s.approx, State::Scalar(0.0));
    }
}
