//! Monte Carlo estimation of bias functionals at fixed n and extrapolation to n → ∞.
//!
//! Samples are split into fixed chunks; each chunk accumulates in index order and
//! chunks are merged in index order, so results are bit-identical for any thread count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{chain_compose, outer_partial, Observable, OuterFn, TestFunction};
use crate::catalog::ApproximationModel;
use crate::rng::StreamKey;
use crate::state::{distance, Evaluator, Metric};
use crate::types::{BiasEstimate, BiasKind, ComplexValue, Error, FitModel, LimitEstimate, Result};

type C = ComplexValue;

/// Smallest sample count accepted by the estimators.
pub const MIN_SAMPLES: u64 = 100;
const CHUNK: u64 = 4096;

/// A bias functional of (φ, χ) and, for variance kinds, ψ (defaults to χ).
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSpec {
    pub kind: BiasKind,
    pub phi: Observable,
    pub chi: Observable,
    pub psi: Option<Observable>,
}

impl Serialize for FunctionalSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(None)?;
        m.serialize_entry("kind", self.kind.name())?;
        m.serialize_entry("phi", &self.phi.to_string())?;
        m.serialize_entry("chi", &self.chi.to_string())?;
        if let Some(psi) = &self.psi {
            m.serialize_entry("psi", &psi.to_string())?;
        }
        m.end()
    }
}

impl FunctionalSpec {
    pub fn new(kind: BiasKind, phi: Observable, chi: Observable) -> Self {
        FunctionalSpec { kind, phi, chi, psi: None }
    }

    pub fn with_psi(mut self, psi: Observable) -> Self {
        self.psi = Some(psi);
        self
    }

    /// Third function of variance kinds.
    pub fn third(&self) -> &Observable {
        self.psi.as_ref().unwrap_or(&self.chi)
    }

    /// Reference value from the model's closed forms.
    pub fn closed_form(&self, model: &dyn ApproximationModel) -> Option<C> {
        let psi = if self.kind.uses_third_function() { Some(self.third()) } else { None };
        model.closed_form(self.kind, &self.phi, &self.chi, psi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Term {
    Kind(BiasKind),
    /// |φ(Yₙ) − φ(Y)|^p
    AbsPower(f64),
    /// φ(Yₙ)ψ(Y) − φ(Y)ψ(Yₙ)
    Exchange,
    /// d(Y, Yₙ)^p
    Distance(f64, Metric),
}

#[derive(Debug, Clone, Copy)]
struct Part {
    coef: C,
    term: Term,
    phi: usize,
    chi: usize,
    psi: usize,
}

/// One accumulated statistic: a linear combination of per-sample integrands.
type Job = Vec<Part>;

/// Streaming mean and component variances (Welford, merged with Chan's formula).
#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    count: u64,
    mean: C,
    m2_re: f64,
    m2_im: f64,
}

impl Accumulator {
    fn push(&mut self, x: C) {
        self.count += 1;
        let k = self.count as f64;
        let d = x - self.mean;
        self.mean += d / k;
        let d2 = x - self.mean;
        self.m2_re += d.re * d2.re;
        self.m2_im += d.im * d2.im;
    }

    fn merge(&mut self, other: &Accumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let total = na + nb;
        let d = other.mean - self.mean;
        self.mean += d * (nb / total);
        self.m2_re += other.m2_re + d.re * d.re * na * nb / total;
        self.m2_im += other.m2_im + d.im * d.im * na * nb / total;
        self.count += other.count;
    }

    fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        (self.m2_re.max(self.m2_im) / (n - 1.0) / n).sqrt()
    }
}

fn integrand(job: &Part, va: &[C], vl: &[C]) -> C {
    let (fa, fl) = (va[job.phi], vl[job.phi]);
    let (ga, gl) = (va[job.chi], vl[job.chi]);
    let df = fa - fl;
    match job.term {
        Term::Kind(kind) => match kind {
            BiasKind::Theoretical => df * gl,
            BiasKind::Practical => (fl - fa) * ga,
            BiasKind::Symmetric => df * (ga - gl) * 0.5,
            BiasKind::Singular => df * (ga + gl) * 0.5,
            BiasKind::QuarticDiagnostic => C::new(df.norm_sqr().powi(2), 0.0),
            BiasKind::SquareFieldPaired => df * df * (ga + gl) * 0.5,
            BiasKind::TheoreticalVariance => df * (ga - gl) * vl[job.psi],
            BiasKind::PracticalVariance => df * (ga - gl) * va[job.psi],
        },
        Term::AbsPower(p) => C::new(df.norm().powf(p), 0.0),
        Term::Exchange => fa * gl - fl * ga,
        Term::Distance(..) => unreachable!("distance terms are evaluated on states"),
    }
}

/// Distinct observables of a job list, compiled once per index.
struct Plan {
    observables: Vec<Observable>,
    jobs: Vec<Job>,
}

impl Plan {
    fn new() -> Self {
        Plan { observables: Vec::new(), jobs: Vec::new() }
    }

    fn slot(&mut self, o: &Observable) -> usize {
        match self.observables.iter().position(|x| x == o) {
            Some(k) => k,
            None => {
                self.observables.push(o.clone());
                self.observables.len() - 1
            }
        }
    }

    fn part(&mut self, coef: C, term: Term, phi: &Observable, chi: &Observable, psi: &Observable) -> Part {
        Part { coef, term, phi: self.slot(phi), chi: self.slot(chi), psi: self.slot(psi) }
    }

    fn add(&mut self, term: Term, phi: &Observable, chi: &Observable, psi: &Observable) {
        let part = self.part(C::new(1.0, 0.0), term, phi, chi, psi);
        self.jobs.push(vec![part]);
    }

    fn add_spec(&mut self, spec: &FunctionalSpec) {
        self.add(Term::Kind(spec.kind), &spec.phi, &spec.chi, spec.third());
    }

    fn add_combination(&mut self, combo: &[(C, FunctionalSpec)]) {
        let job = combo
            .iter()
            .map(|(c, s)| self.part(*c, Term::Kind(s.kind), &s.phi, &s.chi, s.third()))
            .collect();
        self.jobs.push(job);
    }

    fn run(&self, model: &dyn ApproximationModel, n: u64, samples: u64, seed: u64) -> Result<Vec<BiasEstimate>> {
        if samples < MIN_SAMPLES {
            return Err(Error::Usage(format!("need at least {MIN_SAMPLES} samples, got {samples}")));
        }
        model.check_index(n)?;
        let alpha = model.alpha(n)?;
        let prepared: Vec<(Evaluator, Evaluator)> =
            self.observables.iter().map(|o| model.prepare(n, o)).collect::<Result<_>>()?;
        let key = StreamKey::new(seed, model.id(), n);
        let chunks = samples.div_ceil(CHUNK);
        let partial: Vec<Vec<Accumulator>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![Accumulator::default(); self.jobs.len()];
                let mut sample = model.new_sample(n);
                let mut va = vec![C::new(0.0, 0.0); prepared.len()];
                let mut vl = va.clone();
                for i in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                    let mut rng = key.stream(i);
                    model.sample_into(n, &mut rng, &mut sample);
                    for (k, (ea, el)) in prepared.iter().enumerate() {
                        va[k] = ea.eval(&sample.approx);
                        vl[k] = el.eval(&sample.limit);
                    }
                    for (a, job) in acc.iter_mut().zip(&self.jobs) {
                        let mut x = C::new(0.0, 0.0);
                        for part in job {
                            let v = match part.term {
                                Term::Distance(p, metric) => {
                                    C::new(distance(&sample.limit, &sample.approx, metric).powf(p), 0.0)
                                }
                                _ => integrand(part, &va, &vl),
                            };
                            x += part.coef * v;
                        }
                        a.push(x);
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![Accumulator::default(); self.jobs.len()];
        for chunk in &partial {
            for (t, a) in total.iter_mut().zip(chunk) {
                t.merge(a);
            }
        }
        let resolution = model.rate().resolution(n);
        total
            .iter()
            .map(|a| {
                if !(a.mean.re.is_finite() && a.mean.im.is_finite()) {
                    return Err(Error::Numerical(format!("{} produced a non-finite sample mean at n={n}", model.id())));
                }
                Ok(BiasEstimate { n, alpha, resolution, mean: a.mean * alpha, stderr: a.stderr() * alpha, samples, seed })
            })
            .collect()
    }
}

/// αₙ times the sample mean of the kind's integrand.
pub fn estimate(
    model: &dyn ApproximationModel,
    spec: &FunctionalSpec,
    n: u64,
    samples: u64,
    seed: u64,
) -> Result<BiasEstimate> {
    Ok(estimate_batch(model, std::slice::from_ref(spec), n, samples, seed)?.remove(0))
}

/// Several functionals from one shared set of samples. Each result equals the
/// corresponding single [`estimate`].
pub fn estimate_batch(
    model: &dyn ApproximationModel,
    specs: &[FunctionalSpec],
    n: u64,
    samples: u64,
    seed: u64,
) -> Result<Vec<BiasEstimate>> {
    let mut plan = Plan::new();
    for s in specs {
        plan.add_spec(s);
    }
    plan.run(model, n, samples, seed)
}

fn check_grid(grid: &[u64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Usage("index grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Usage(format!("index grid must be strictly increasing, got {grid:?}")));
    }
    Ok(())
}

/// One estimate per index, each from its own random substream.
pub fn estimate_grid(
    model: &dyn ApproximationModel,
    spec: &FunctionalSpec,
    grid: &[u64],
    samples: u64,
    seed: u64,
) -> Result<Vec<BiasEstimate>> {
    Ok(estimate_grid_batch(model, std::slice::from_ref(spec), grid, samples, seed)?.remove(0))
}

/// Grid estimates for several functionals; the outer index follows `specs`.
pub fn estimate_grid_batch(
    model: &dyn ApproximationModel,
    specs: &[FunctionalSpec],
    grid: &[u64],
    samples: u64,
    seed: u64,
) -> Result<Vec<Vec<BiasEstimate>>> {
    check_grid(grid)?;
    let mut out = vec![Vec::with_capacity(grid.len()); specs.len()];
    for &n in grid {
        for (k, e) in estimate_batch(model, specs, n, samples, seed)?.into_iter().enumerate() {
            out[k].push(e);
        }
    }
    Ok(out)
}

/// Σ cₖ·(functional k) along a grid, accumulated per sample so the standard error
/// accounts for correlation between the terms.
pub fn estimate_combination(
    model: &dyn ApproximationModel,
    combo: &[(C, FunctionalSpec)],
    grid: &[u64],
    samples: u64,
    seed: u64,
) -> Result<Vec<BiasEstimate>> {
    check_grid(grid)?;
    if combo.is_empty() {
        return Err(Error::Usage("empty combination".into()));
    }
    let mut plan = Plan::new();
    plan.add_combination(combo);
    grid.iter().map(|&n| Ok(plan.run(model, n, samples, seed)?.remove(0))).collect()
}

/// αₙE|φ(Yₙ) − φ(Y)|^p along a grid.
pub fn abs_power_moment(
    model: &dyn ApproximationModel,
    phi: &Observable,
    power: f64,
    grid: &[u64],
    samples: u64,
    seed: u64,
) -> Result<Vec<BiasEstimate>> {
    check_grid(grid)?;
    if power.is_nan() || power <= 0.0 {
        return Err(Error::Usage(format!("moment power must be positive, got {power}")));
    }
    let mut plan = Plan::new();
    plan.add(Term::AbsPower(power), phi, phi, phi);
    grid.iter().map(|&n| Ok(plan.run(model, n, samples, seed)?.remove(0))).collect()
}

/// αₙE[φ(Yₙ)ψ(Y) − φ(Y)ψ(Yₙ)] along a grid.
pub fn exchange_moment(
    model: &dyn ApproximationModel,
    phi: &Observable,
    psi: &Observable,
    grid: &[u64],
    samples: u64,
    seed: u64,
) -> Result<Vec<BiasEstimate>> {
    check_grid(grid)?;
    let mut plan = Plan::new();
    plan.add(Term::Exchange, phi, psi, psi);
    grid.iter().map(|&n| Ok(plan.run(model, n, samples, seed)?.remove(0))).collect()
}

/// αₙE[d(Y, Yₙ)^p] in the state-space metric.
pub fn error_moment(
    model: &dyn ApproximationModel,
    n: u64,
    samples: u64,
    seed: u64,
    power: f64,
    metric: Metric,
) -> Result<BiasEstimate> {
    let mut plan = Plan::new();
    let one = Observable::constant(1.0);
    plan.add(Term::Distance(power, metric), &one, &one, &one);
    Ok(plan.run(model, n, samples, seed)?.remove(0))
}

/// Largest per-sample |Th + Pr + 2·Sym| integrand residual; zero up to rounding for any model.
pub fn decomposition_residual(
    model: &dyn ApproximationModel,
    phi: &Observable,
    chi: &Observable,
    n: u64,
    samples: u64,
    seed: u64,
) -> Result<f64> {
    model.check_index(n)?;
    let (pa, pl) = model.prepare(n, phi)?;
    let (ca, cl) = model.prepare(n, chi)?;
    let key = StreamKey::new(seed, model.id(), n);
    let chunks = samples.div_ceil(CHUNK);
    let worst = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sample = model.new_sample(n);
            let mut worst: f64 = 0.0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(samples) {
                let mut rng = key.stream(i);
                model.sample_into(n, &mut rng, &mut sample);
                let (fa, fl) = (pa.eval(&sample.approx), pl.eval(&sample.limit));
                let (ga, gl) = (ca.eval(&sample.approx), cl.eval(&sample.limit));
                let th = (fa - fl) * gl;
                let pr = (fl - fa) * ga;
                let sym = (fa - fl) * (ga - gl) * 0.5;
                let scale = 1.0 + (fa - fl).norm() * (ga.norm() + gl.norm());
                worst = worst.max((th + pr + sym * 2.0).norm() / scale);
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

/// Weighted least squares fit of c₀ + c₁h^{1/2} + c₂h with h = 1/resolution.
/// Weights are 1/stderr², or uniform when any stderr vanishes.
pub fn extrapolate(points: &[BiasEstimate], fit: FitModel) -> Result<LimitEstimate> {
    let k = fit.parameters();
    if points.len() < k {
        return Err(Error::Usage(format!("{} fit needs at least {k} points, got {}", fit.describe(), points.len())));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.resolution.powf(-0.5)).collect();
    xs.sort_by(f64::total_cmp);
    if xs.windows(2).any(|w| w[0] == w[1]) && k > 1 {
        return Err(Error::Numerical("singular design matrix: duplicate indices in the fit".into()));
    }
    let m = points.len();
    let design = DMatrix::from_fn(m, k, |i, j| points[i].resolution.powf(-0.5).powi(j as i32));
    let weighted = points.iter().all(|p| p.stderr > 0.0);
    let w = DVector::from_fn(m, |i, _| if weighted { points[i].stderr.powi(-2) } else { 1.0 });
    let xtw = DMatrix::from_fn(k, m, |j, i| design[(i, j)] * w[i]);
    let normal = &xtw * &design;
    let inv = normal
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular design matrix in the limit fit".into()))?;
    let solve = |ys: DVector<f64>| -> (f64, f64, f64) {
        let coef = &inv * (&xtw * &ys);
        let fitted = &design * &coef;
        let resid = &ys - fitted;
        let rss: f64 = resid.iter().map(|r| r * r).sum();
        let rms = (rss / m as f64).sqrt();
        let var_c0 = if weighted {
            inv[(0, 0)]
        } else if m > k {
            rss / (m - k) as f64 * inv[(0, 0)]
        } else {
            0.0
        };
        (coef[0], var_c0, rms)
    };
    let (re, var_re, rms_re) = solve(DVector::from_iterator(m, points.iter().map(|p| p.mean.re)));
    let (im, var_im, rms_im) = solve(DVector::from_iterator(m, points.iter().map(|p| p.mean.im)));
    let last = points.iter().max_by(|a, b| a.resolution.total_cmp(&b.resolution)).expect("nonempty");
    Ok(LimitEstimate {
        value: C::new(re, im),
        uncertainty: (var_re.max(var_im) + last.stderr * last.stderr).sqrt(),
        fit_model: fit,
        residual: rms_re.max(rms_im),
        points_used: points.to_vec(),
    })
}

/// [`extrapolate`] with the default fit for the number of points.
pub fn extrapolate_default(points: &[BiasEstimate]) -> Result<LimitEstimate> {
    extrapolate(points, FitModel::default_for(points.len()))
}

/// Two sides of the chain rule E[Γ[F(f)]] = E[Σ ∂ᵢF ∂ⱼF Γ[fᵢ, fⱼ]].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRuleResult {
    /// αₙE[(F(f(Yₙ)) − F(f(Y)))²]
    pub lhs: BiasEstimate,
    pub rhs: C,
    /// Zero when the right side comes from closed forms.
    pub rhs_stderr: f64,
    pub rhs_closed_form: bool,
}

impl ChainRuleResult {
    /// Component-wise distance in combined standard errors.
    pub fn z_score(&self) -> f64 {
        let d = self.lhs.mean - self.rhs;
        let s = self.lhs.stderr.hypot(self.rhs_stderr);
        let m = d.re.abs().max(d.im.abs());
        if s > 0.0 {
            m / s
        } else if m == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Compares the quadratic error of F(f₁, …, f_k) with the square field assembled from the fᵢ.
/// The right side uses closed-form square fields when the model has them, otherwise Monte
/// Carlo estimates at the same index.
pub fn chain_rule_check(
    model: &dyn ApproximationModel,
    outer: OuterFn,
    fs: Vec<TestFunction>,
    n: u64,
    samples: u64,
    seed: u64,
) -> Result<ChainRuleResult> {
    if !model.flags().expected_local {
        return Err(Error::Usage(format!(
            "{} is not local: the chain rule for square fields does not apply",
            model.id()
        )));
    }
    let composite = Observable::Point(chain_compose(outer.clone(), fs.clone())?);
    let sym = estimate(model, &FunctionalSpec::new(BiasKind::Symmetric, composite.clone(), composite), n, samples, seed)?;
    let lhs = BiasEstimate { mean: sym.mean * 2.0, stderr: sym.stderr * 2.0, ..sym };

    // E[Γ[fᵢ, fⱼ] w] by polarization of the paired square field E[Γ[g] w]
    let weight = |i: usize, j: usize| {
        Observable::Point(outer_partial(&outer, &fs, i).times(outer_partial(&outer, &fs, j)))
    };
    let mut terms = Vec::new();
    for i in 0..fs.len() {
        for j in 0..fs.len() {
            let w = weight(i, j);
            let (fi, fj) = (Observable::Point(fs[i].clone()), Observable::Point(fs[j].clone()));
            let both = Observable::Point(fs[i].clone().plus(fs[j].clone()));
            terms.push((both, w.clone(), 0.5));
            terms.push((fi, w.clone(), -0.5));
            terms.push((fj, w, -0.5));
        }
    }
    let closed: Option<C> = terms
        .iter()
        .map(|(g, w, c)| model.closed_form(BiasKind::SquareFieldPaired, g, w, None).map(|v| v * *c))
        .sum();
    if let Some(rhs) = closed {
        return Ok(ChainRuleResult { lhs, rhs, rhs_stderr: 0.0, rhs_closed_form: true });
    }
    let specs: Vec<FunctionalSpec> = terms
        .iter()
        .map(|(g, w, _)| FunctionalSpec::new(BiasKind::SquareFieldPaired, g.clone(), w.clone()))
        .collect();
    let est = estimate_batch(model, &specs, n, samples, seed)?;
    let rhs: C = est.iter().zip(&terms).map(|(e, (_, _, c))| e.mean * *c).sum();
    // terms share samples; the absolute sum bounds the combined error
    let rhs_stderr: f64 = est.iter().zip(&terms).map(|(e, (_, _, c))| e.stderr * c.abs()).sum();
    Ok(ChainRuleResult { lhs, rhs, rhs_stderr, rhs_closed_form: false })
}
