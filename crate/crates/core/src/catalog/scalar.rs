//! Scalar schemes on the unit interval or the line.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Normal};
use serde_json::{json, Value};

use super::forms::DiffusionForm;
use super::{ApproximationModel, Params};
use crate::algebra::{Observable, TestFunction};
use crate::quadrature::{self, ScalarLaw};
use crate::rng::SampleRng;
use crate::state::{CoupledSample, State, StateSpace};
use crate::types::{BiasKind, ComplexValue, Error, ModelFlags, RateSequence, Result};

type C = ComplexValue;

fn set_scalars(out: &mut CoupledSample, limit: f64, approx: f64) {
    out.limit = State::Scalar(limit);
    out.approx = State::Scalar(approx);
}

fn fourier_defaults() -> Vec<Observable> {
    vec![Observable::fourier(1), Observable::fourier(-1), Observable::fourier(2)]
}

fn uniform_cdf() -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
    Some(Box::new(|x: f64| x.clamp(0.0, 1.0)))
}

/// Jacobi structure on [0, 1]: Γ[φ] = (y − y²)φ′².
fn jacobi_form(drift_in_theoretical: bool) -> DiffusionForm {
    let half_var = |y: f64| 0.5 * (y - y * y);
    let pure: super::forms::Coefficients = Arc::new(move |y| (half_var(y), 0.0));
    let drifted: super::forms::Coefficients = Arc::new(move |y| (half_var(y), 1.0 - 2.0 * y));
    let (theoretical, practical) = if drift_in_theoretical { (drifted, pure) } else { (pure, drifted) };
    DiffusionForm {
        law: ScalarLaw::unit_uniform(),
        theoretical: Some(theoretical),
        practical: Some(practical),
        gamma: Arc::new(|y| y - y * y),
        first_order_singular: true,
    }
}

/// Y uniform, Yₙ the empirical CDF of n further uniforms evaluated at Y.
pub struct GlivenkoCantelli {
    form: DiffusionForm,
}

impl GlivenkoCantelli {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        Params::new("glivenko_cantelli", p, &[])?;
        Ok(GlivenkoCantelli { form: jacobi_form(false) })
    }
}

impl ApproximationModel for GlivenkoCantelli {
    fn id(&self) -> &'static str {
        "glivenko_cantelli"
    }
    fn label(&self) -> &'static str {
        "empirical distribution function at an independent uniform point"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::Power { c: 1.0, p: 1.0 }
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::Interval { lo: 0.0, hi: 1.0 }
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: false, expected_local: true, deterministic_u: false }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![256, 1024, 4096]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        BTreeMap::new()
    }
    fn new_sample(&self, _n: u64) -> CoupledSample {
        CoupledSample::scalars()
    }
    fn sample_into(&self, n: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let u: f64 = rng.random();
        let count = Binomial::new(n, u).expect("valid binomial").sample(rng);
        set_scalars(out, u, count as f64 / n as f64);
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C> {
        self.form.closed_form(kind, phi, chi, psi)
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        self.form.kinds()
    }
    fn default_functions(&self) -> Vec<Observable> {
        fourier_defaults()
    }
    fn limit_cdf(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        uniform_cdf()
    }
}

/// Tail sums Σ_{k>n} k^{-s} for s = 2, 4.
fn tail_sum(n: u64, s: i32) -> f64 {
    if n <= 64 {
        let zeta = if s == 2 { std::f64::consts::PI.powi(2) / 6.0 } else { std::f64::consts::PI.powi(4) / 90.0 };
        let head: f64 = (1..=n).rev().map(|k| (k as f64).powi(-s)).sum();
        return zeta - head;
    }
    // Euler–Maclaurin expansion, error O(n^{-s-5})
    let x = n as f64;
    let sf = s as f64;
    x.powf(1.0 - sf) / (sf - 1.0) - 0.5 * x.powi(-s) + sf / 12.0 * x.powi(-s - 1)
        - sf * (sf + 1.0) * (sf + 2.0) / 720.0 * x.powi(-s - 3)
}

/// S = Σ X_k/k² + Z_k/k with Gaussian (X, Z); Sₙ is the partial sum.
pub struct IndependentSeries {
    mu_x: f64,
    sigma_x: f64,
    sigma_z: f64,
    form: DiffusionForm,
}

impl IndependentSeries {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        let p = Params::new("independent_series", p, &["mu_x", "sigma_x", "sigma_z"])?;
        let mu_x = p.f64("mu_x", 0.5)?;
        let sigma_x = p.nonnegative("sigma_x", 1.0)?;
        let sigma_z = p.positive("sigma_z", 1.0)?;
        let z2 = std::f64::consts::PI.powi(2) / 6.0;
        let z4 = std::f64::consts::PI.powi(4) / 90.0;
        let mean = mu_x * z2;
        let var = sigma_x * sigma_x * z4 + sigma_z * sigma_z * z2;
        let s2 = sigma_z * sigma_z;
        let form = DiffusionForm {
            law: ScalarLaw::Gaussian { mean, sd: var.sqrt() },
            theoretical: None,
            practical: Some(Arc::new(move |_| (0.5 * s2, mu_x))),
            gamma: Arc::new(move |_| s2),
            first_order_singular: true,
        };
        Ok(IndependentSeries { mu_x, sigma_x, sigma_z, form })
    }

    fn moments(&self, n: u64) -> ((f64, f64), (f64, f64)) {
        let t2 = tail_sum(n, 2);
        let t4 = tail_sum(n, 4);
        let z2 = std::f64::consts::PI.powi(2) / 6.0;
        let z4 = std::f64::consts::PI.powi(4) / 90.0;
        let (sx2, sz2) = (self.sigma_x.powi(2), self.sigma_z.powi(2));
        let head = (self.mu_x * (z2 - t2), sx2 * (z4 - t4) + sz2 * (z2 - t2));
        let tail = (self.mu_x * t2, sx2 * t4 + sz2 * t2);
        (head, tail)
    }
}

impl ApproximationModel for IndependentSeries {
    fn id(&self) -> &'static str {
        "independent_series"
    }
    fn label(&self) -> &'static str {
        "partial sums of a series with independent increments"
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
        BTreeMap::from([
            ("mu_x".into(), json!(self.mu_x)),
            ("sigma_x".into(), json!(self.sigma_x)),
            ("sigma_z".into(), json!(self.sigma_z)),
        ])
    }
    fn new_sample(&self, _n: u64) -> CoupledSample {
        CoupledSample::scalars()
    }
    fn sample_into(&self, n: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let ((hm, hv), (tm, tv)) = self.moments(n);
        let head = Normal::new(hm, hv.sqrt()).expect("finite").sample(rng);
        let tail = Normal::new(tm, tv.sqrt()).expect("finite").sample(rng);
        set_scalars(out, head + tail, head);
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
        let law = self.form.law;
        Some(Box::new(move |x| law.cdf(x)))
    }
}

/// Two-colour urn started from one ball of each colour; the limit proportion is proxied
/// by the proportion after N_max = factor·n draws, or drawn exactly from its posterior.
pub struct PolyaUrn {
    n_max_factor: u64,
    exact_limit: bool,
    form: DiffusionForm,
}

impl PolyaUrn {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        let p = Params::new("polya_urn", p, &["n_max_factor", "exact_limit"])?;
        let n_max_factor = p.u64("n_max_factor", 100)?;
        if n_max_factor < 1 {
            return Err(Error::Config("polya_urn: n_max_factor must be at least 1 (N_max >= n)".into()));
        }
        Ok(PolyaUrn { n_max_factor, exact_limit: p.bool("exact_limit", false)?, form: jacobi_form(true) })
    }
}

impl ApproximationModel for PolyaUrn {
    fn id(&self) -> &'static str {
        "polya_urn"
    }
    fn label(&self) -> &'static str {
        "Polya urn proportion against its martingale limit"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::Power { c: 1.0, p: 1.0 }
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::Interval { lo: 0.0, hi: 1.0 }
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: false, expected_local: true, deterministic_u: false }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![250, 1000, 4000]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        BTreeMap::from([
            ("n_max_factor".into(), json!(self.n_max_factor)),
            ("exact_limit".into(), json!(self.exact_limit)),
        ])
    }
    fn new_sample(&self, _n: u64) -> CoupledSample {
        CoupledSample::scalars()
    }
    fn sample_into(&self, n: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let mut x = 0.5;
        for k in 0..n {
            let u: f64 = rng.random();
            let hit = if u <= x { 1.0 } else { 0.0 };
            x += (hit - x) / (k as f64 + 3.0);
        }
        let balls = n as f64 + 2.0;
        let white = (x * balls).round();
        let black = balls - white;
        let p = Beta::new(white, black).expect("positive counts").sample(rng);
        let limit = if self.exact_limit {
            p
        } else {
            let remaining = (self.n_max_factor - 1) * n;
            let extra = if remaining == 0 { 0 } else { Binomial::new(remaining, p).expect("valid").sample(rng) };
            (white + extra as f64) / (balls + remaining as f64)
        };
        set_scalars(out, limit, x);
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C> {
        self.form.closed_form(kind, phi, chi, psi)
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        self.form.kinds()
    }
    fn default_functions(&self) -> Vec<Observable> {
        fourier_defaults()
    }
    fn limit_cdf(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        uniform_cdf()
    }
}

/// Y uniform on [0, 1) and Yₙ = θⁿ(Y) for the doubling map; αₙ = 1.
pub struct MixingShift;

impl MixingShift {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        Params::new("mixing_shift", p, &[])?;
        Ok(MixingShift)
    }

    /// Bits available beyond the 53 used for a double.
    pub const MAX_SHIFT: u64 = 75;

    fn unit(bits: u128) -> f64 {
        (bits >> 75) as f64 * (-53f64).exp2()
    }

    fn uniform_mean(f: impl Fn(f64) -> C) -> C {
        ScalarLaw::unit_uniform().expect(f)
    }
}

impl ApproximationModel for MixingShift {
    fn id(&self) -> &'static str {
        "mixing_shift"
    }
    fn label(&self) -> &'static str {
        "iterates of the doubling map (mixing, non-local limit)"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::Constant
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::Interval { lo: 0.0, hi: 1.0 }
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: true, expected_local: false, deterministic_u: false }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![8, 16, 24, 32]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        BTreeMap::new()
    }
    fn check_index(&self, n: u64) -> Result<()> {
        if n == 0 || n > Self::MAX_SHIFT {
            return Err(Error::Usage(format!("mixing_shift needs 1 <= n <= {}, got {n}", Self::MAX_SHIFT)));
        }
        Ok(())
    }
    fn new_sample(&self, _n: u64) -> CoupledSample {
        CoupledSample::scalars()
    }
    fn sample_into(&self, n: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let w: u128 = rng.random();
        set_scalars(out, Self::unit(w), Self::unit(w << n));
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C> {
        let (f, g) = (phi.as_point()?, chi.as_point()?);
        let h = match psi {
            Some(p) => p.as_point()?.clone(),
            None => g.clone(),
        };
        let e = |t: &dyn Fn(f64) -> C| Self::uniform_mean(t);
        let ef = e(&|y| f.eval1(y));
        let eg = e(&|y| g.eval1(y));
        let efg = e(&|y| f.eval1(y) * g.eval1(y));
        let cov = efg - ef * eg;
        Some(match kind {
            BiasKind::Theoretical | BiasKind::Practical => -cov,
            BiasKind::Symmetric => cov,
            BiasKind::Singular => C::new(0.0, 0.0),
            BiasKind::SquareFieldPaired => {
                let eff = e(&|y| f.eval1(y) * f.eval1(y));
                let effg = e(&|y| f.eval1(y) * f.eval1(y) * g.eval1(y));
                effg - ef * efg * 2.0 + eff * eg
            }
            BiasKind::TheoreticalVariance | BiasKind::PracticalVariance => {
                let eh = e(&|y| h.eval1(y));
                let egh = e(&|y| g.eval1(y) * h.eval1(y));
                let efh = e(&|y| f.eval1(y) * h.eval1(y));
                let efgh = e(&|y| f.eval1(y) * g.eval1(y) * h.eval1(y));
                efg * eh - ef * egh - eg * efh + efgh
            }
            BiasKind::QuarticDiagnostic => {
                let inner = |a: f64| {
                    let fa = f.eval1(a);
                    ScalarLaw::unit_uniform().expect_real(|b| (fa - f.eval1(b)).norm().powi(4))
                };
                C::new(quadrature::integrate_real(0.0, 1.0, 16, inner), 0.0)
            }
        })
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        BiasKind::ALL.to_vec()
    }
    fn default_functions(&self) -> Vec<Observable> {
        fourier_defaults()
    }
    fn limit_cdf(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        uniform_cdf()
    }
}

/// Y uniform and Yₙ its truncation to n decimal digits; αₙ = 10ⁿ.
pub struct DecimalTruncation {
    form: DiffusionForm,
}

impl DecimalTruncation {
    pub fn build(p: &serde_json::Map<String, Value>) -> Result<Self> {
        Params::new("decimal_truncation", p, &[])?;
        Ok(DecimalTruncation {
            form: DiffusionForm {
                law: ScalarLaw::unit_uniform(),
                theoretical: Some(Arc::new(|_| (0.0, -0.5))),
                practical: Some(Arc::new(|_| (0.0, 0.5))),
                gamma: Arc::new(|_| 0.0),
                first_order_singular: true,
            },
        })
    }
}

impl ApproximationModel for DecimalTruncation {
    fn id(&self) -> &'static str {
        "decimal_truncation"
    }
    fn label(&self) -> &'static str {
        "decimal digit truncation (deterministic given Y)"
    }
    fn rate(&self) -> RateSequence {
        RateSequence::Geometric { base: 10.0 }
    }
    fn state_space(&self) -> StateSpace {
        StateSpace::Interval { lo: 0.0, hi: 1.0 }
    }
    fn flags(&self) -> ModelFlags {
        ModelFlags { asymptotically_symmetric: false, expected_local: true, deterministic_u: true }
    }
    fn default_grid(&self) -> Vec<u64> {
        vec![2, 3, 4, 5, 6]
    }
    fn parameters(&self) -> BTreeMap<String, Value> {
        BTreeMap::new()
    }
    fn check_index(&self, n: u64) -> Result<()> {
        if n == 0 || n > 12 {
            return Err(Error::Usage(format!("decimal_truncation needs 1 <= n <= 12 digits, got {n}")));
        }
        Ok(())
    }
    fn new_sample(&self, _n: u64) -> CoupledSample {
        CoupledSample::scalars()
    }
    fn sample_into(&self, n: u64, rng: &mut SampleRng, out: &mut CoupledSample) {
        let y: f64 = rng.random();
        let scale = 10f64.powi(n as i32);
        set_scalars(out, y, (y * scale).floor() / scale);
    }
    fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C> {
        self.form.closed_form(kind, phi, chi, psi)
    }
    fn closed_form_kinds(&self) -> Vec<BiasKind> {
        self.form.kinds()
    }
    fn default_functions(&self) -> Vec<Observable> {
        vec![
            Observable::fourier(1),
            Observable::fourier(-1),
            Observable::Point(TestFunction::fourier(1).re()),
        ]
    }
    fn limit_cdf(&self) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        uniform_cdf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_sums_match_direct_summation() {
        for n in [10u64, 65, 100, 1000] {
            for s in [2, 4] {
                let direct: f64 = ((n + 1)..2_000_000).rev().map(|k| (k as f64).powi(-s)).sum::<f64>()
                    + if s == 2 { 1.0 / 2_000_000f64 + 0.5 / 2_000_000f64.powi(2) } else { 0.0 };
                let got = tail_sum(n, s);
                assert!((got - direct).abs() < 1e-10 * direct + 1e-18, "n={n} s={s}: {got} vs {direct}");
            }
        }
    }

    #[test]
    fn shift_uses_fractional_bits() {
        let w: u128 = 0b1011u128 << 124;
        assert_eq!(MixingShift::unit(w), 0.6875);
        assert_eq!(MixingShift::unit(w << 1), 0.375);
    }
}
