//! The test-function algebra: bounded smooth functions with exact derivatives
//! on scalar and vector domains, and cylindrical functionals on paths, empirical
//! processes and point configurations.

use std::f64::consts::PI;
use std::fmt;

use crate::quadrature;
use crate::types::{ComplexValue, Error, Result};

type C = ComplexValue;

const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);

/// Value, gradient and Hessian (row-major d×d) of a function at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: C,
    pub grad: Vec<C>,
    pub hess: Vec<C>,
}

impl Jet {
    fn constant(v: C, d: usize) -> Jet {
        Jet { value: v, grad: vec![ZERO; d], hess: vec![ZERO; d * d] }
    }

    fn dim(&self) -> usize {
        self.grad.len()
    }

    fn add(mut self, o: &Jet) -> Jet {
        self.value += o.value;
        for (a, b) in self.grad.iter_mut().zip(&o.grad) {
            *a += b;
        }
        for (a, b) in self.hess.iter_mut().zip(&o.hess) {
            *a += b;
        }
        self
    }

    fn mul(&self, o: &Jet) -> Jet {
        let d = self.dim();
        let mut out = Jet::constant(self.value * o.value, d);
        for i in 0..d {
            out.grad[i] = self.grad[i] * o.value + self.value * o.grad[i];
            for j in 0..d {
                out.hess[i * d + j] = self.hess[i * d + j] * o.value
                    + self.grad[i] * o.grad[j]
                    + o.grad[i] * self.grad[j]
                    + self.value * o.hess[i * d + j];
            }
        }
        out
    }

    fn scale(mut self, c: C) -> Jet {
        self.value *= c;
        self.grad.iter_mut().for_each(|g| *g *= c);
        self.hess.iter_mut().for_each(|h| *h *= c);
        self
    }

    fn map_parts(self, f: impl Fn(C) -> C) -> Jet {
        Jet {
            value: f(self.value),
            grad: self.grad.into_iter().map(&f).collect(),
            hess: self.hess.into_iter().map(&f).collect(),
        }
    }
}

/// Whitelisted outer functions for smooth composites.
#[derive(Debug, Clone, PartialEq)]
pub enum OuterFn {
    /// Σ c_k x^k, one argument.
    Polynomial(Vec<f64>),
    Sin,
    Cos,
    Exp,
    /// Σ w_i x_i + offset.
    Affine { weights: Vec<f64>, offset: f64 },
    /// x₁·x₂⋯x_k.
    Product(usize),
}

impl OuterFn {
    pub fn arity(&self) -> usize {
        match self {
            OuterFn::Polynomial(_) | OuterFn::Sin | OuterFn::Cos | OuterFn::Exp => 1,
            OuterFn::Affine { weights, .. } => weights.len(),
            OuterFn::Product(k) => *k,
        }
    }

    pub fn eval(&self, args: &[C]) -> C {
        match self {
            OuterFn::Polynomial(c) => horner(c, args[0]),
            OuterFn::Sin => args[0].sin(),
            OuterFn::Cos => args[0].cos(),
            OuterFn::Exp => args[0].exp(),
            OuterFn::Affine { weights, offset } => {
                weights.iter().zip(args).fold(C::new(*offset, 0.0), |acc, (w, a)| acc + a * w)
            }
            OuterFn::Product(_) => args.iter().fold(ONE, |acc, a| acc * a),
        }
    }

    /// Value, gradient and Hessian (row-major) of the outer function.
    pub fn derivatives(&self, args: &[C]) -> (C, Vec<C>, Vec<C>) {
        let p = args.len();
        match self {
            OuterFn::Polynomial(c) => {
                let d1 = poly_derivative(c);
                let d2 = poly_derivative(&d1);
                (horner(c, args[0]), vec![horner(&d1, args[0])], vec![horner(&d2, args[0])])
            }
            OuterFn::Sin => {
                let (s, c) = (args[0].sin(), args[0].cos());
                (s, vec![c], vec![-s])
            }
            OuterFn::Cos => {
                let (s, c) = (args[0].sin(), args[0].cos());
                (c, vec![-s], vec![-c])
            }
            OuterFn::Exp => {
                let e = args[0].exp();
                (e, vec![e], vec![e])
            }
            OuterFn::Affine { weights, .. } => {
                (self.eval(args), weights.iter().map(|w| C::new(*w, 0.0)).collect(), vec![ZERO; p * p])
            }
            OuterFn::Product(_) => {
                let prod_except = |skip: &[usize]| {
                    args.iter()
                        .enumerate()
                        .filter(|(k, _)| !skip.contains(k))
                        .fold(ONE, |acc, (_, a)| acc * a)
                };
                let grad = (0..p).map(|i| prod_except(&[i])).collect();
                let mut hess = vec![ZERO; p * p];
                for i in 0..p {
                    for j in 0..p {
                        if i != j {
                            hess[i * p + j] = prod_except(&[i, j]);
                        }
                    }
                }
                (self.eval(args), grad, hess)
            }
        }
    }

    fn bound(&self, arg_bounds: &[f64], real_args: bool) -> f64 {
        match self {
            OuterFn::Polynomial(c) => c.iter().enumerate().map(|(k, ck)| ck.abs() * arg_bounds[0].powi(k as i32)).sum(),
            OuterFn::Sin | OuterFn::Cos => {
                if real_args {
                    1.0
                } else {
                    arg_bounds[0].cosh()
                }
            }
            OuterFn::Exp => arg_bounds[0].exp(),
            OuterFn::Affine { weights, offset } => {
                offset.abs() + weights.iter().zip(arg_bounds).map(|(w, b)| w.abs() * b).sum::<f64>()
            }
            OuterFn::Product(_) => arg_bounds.iter().product(),
        }
    }

    fn has_real_coefficients(&self) -> bool {
        true
    }
}

fn horner(c: &[f64], z: C) -> C {
    c.iter().rev().fold(ZERO, |acc, ck| acc * z + ck)
}

fn poly_derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(k, ck)| k as f64 * ck).collect()
}

/// Bounded smooth function on ℝ^d (d = 1 for Fourier modes).
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    Constant(C),
    /// y ↦ e^{2iπpy}
    Fourier(i64),
    /// x ↦ e^{i⟨u,x⟩}
    ImaginaryExp(Vec<f64>),
    Sum(Vec<TestFunction>),
    Product(Vec<TestFunction>),
    Scaled(C, Box<TestFunction>),
    RealPart(Box<TestFunction>),
    ImagPart(Box<TestFunction>),
    Composite { outer: OuterFn, args: Vec<TestFunction> },
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        TestFunction::Constant(C::new(c, 0.0))
    }

    pub fn fourier(p: i64) -> Self {
        TestFunction::Fourier(p)
    }

    pub fn iexp(u: &[f64]) -> Self {
        TestFunction::ImaginaryExp(u.to_vec())
    }

    pub fn re(self) -> Self {
        TestFunction::RealPart(Box::new(self))
    }

    pub fn im(self) -> Self {
        TestFunction::ImagPart(Box::new(self))
    }

    pub fn times(self, other: TestFunction) -> Self {
        TestFunction::Product(vec![self, other])
    }

    pub fn plus(self, other: TestFunction) -> Self {
        TestFunction::Sum(vec![self, other])
    }

    pub fn scaled(self, c: C) -> Self {
        TestFunction::Scaled(c, Box::new(self))
    }

    /// Domain dimension, `None` when the function is constant in every variable.
    pub fn dim(&self) -> Option<usize> {
        match self {
            TestFunction::Constant(_) => None,
            TestFunction::Fourier(_) => Some(1),
            TestFunction::ImaginaryExp(u) => Some(u.len()),
            TestFunction::Sum(fs) | TestFunction::Product(fs) | TestFunction::Composite { args: fs, .. } => {
                fs.iter().filter_map(|f| f.dim()).max()
            }
            TestFunction::Scaled(_, f) | TestFunction::RealPart(f) | TestFunction::ImagPart(f) => f.dim(),
        }
    }

    /// Structural checks: consistent dimensions and outer arities.
    pub fn validate(&self) -> Result<()> {
        let children: &[TestFunction] = match self {
            TestFunction::Constant(c) => {
                return finite(c.re).and(finite(c.im));
            }
            TestFunction::Fourier(_) => return Ok(()),
            TestFunction::ImaginaryExp(u) => {
                if u.is_empty() {
                    return Err(Error::Usage("iexp needs at least one coefficient".into()));
                }
                return u.iter().try_for_each(|x| finite(*x));
            }
            TestFunction::Sum(fs) | TestFunction::Product(fs) => fs,
            TestFunction::Composite { outer, args } => {
                if outer.arity() != args.len() {
                    return Err(Error::Usage(format!(
                        "outer function expects {} arguments, got {}",
                        outer.arity(),
                        args.len()
                    )));
                }
                args
            }
            TestFunction::Scaled(_, f) | TestFunction::RealPart(f) | TestFunction::ImagPart(f) => {
                return f.validate();
            }
        };
        if children.is_empty() {
            return Err(Error::Usage("empty sum or product".into()));
        }
        let dims: Vec<usize> = children.iter().filter_map(|f| f.dim()).collect();
        if dims.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Usage(format!("dimension mismatch among factors: {dims:?}")));
        }
        children.iter().try_for_each(|f| f.validate())
    }

    pub fn is_real(&self) -> bool {
        match self {
            TestFunction::Constant(c) => c.im == 0.0,
            TestFunction::Fourier(p) => *p == 0,
            TestFunction::ImaginaryExp(u) => u.iter().all(|x| *x == 0.0),
            TestFunction::Sum(fs) | TestFunction::Product(fs) => fs.iter().all(|f| f.is_real()),
            TestFunction::Scaled(c, f) => c.im == 0.0 && f.is_real(),
            TestFunction::RealPart(_) | TestFunction::ImagPart(_) => true,
            TestFunction::Composite { outer, args } => outer.has_real_coefficients() && args.iter().all(|f| f.is_real()),
        }
    }

    /// Certified bound on |f| over the whole domain.
    pub fn bound(&self) -> f64 {
        match self {
            TestFunction::Constant(c) => c.norm(),
            TestFunction::Fourier(_) | TestFunction::ImaginaryExp(_) => 1.0,
            TestFunction::Sum(fs) => fs.iter().map(|f| f.bound()).sum(),
            TestFunction::Product(fs) => fs.iter().map(|f| f.bound()).product(),
            TestFunction::Scaled(c, f) => c.norm() * f.bound(),
            TestFunction::RealPart(f) | TestFunction::ImagPart(f) => f.bound(),
            TestFunction::Composite { outer, args } => {
                let b: Vec<f64> = args.iter().map(|f| f.bound()).collect();
                outer.bound(&b, args.iter().all(|f| f.is_real()))
            }
        }
    }

    /// Value at `x`. Dimensions are assumed validated; use [`TestFunction::try_eval`] otherwise.
    pub fn eval(&self, x: &[f64]) -> C {
        match self {
            TestFunction::Constant(c) => *c,
            TestFunction::Fourier(p) => C::new(0.0, 2.0 * PI * *p as f64 * x[0]).exp(),
            TestFunction::ImaginaryExp(u) => C::new(0.0, u.iter().zip(x).map(|(a, b)| a * b).sum()).exp(),
            TestFunction::Sum(fs) => fs.iter().map(|f| f.eval(x)).sum(),
            TestFunction::Product(fs) => fs.iter().fold(ONE, |acc, f| acc * f.eval(x)),
            TestFunction::Scaled(c, f) => c * f.eval(x),
            TestFunction::RealPart(f) => C::new(f.eval(x).re, 0.0),
            TestFunction::ImagPart(f) => C::new(f.eval(x).im, 0.0),
            TestFunction::Composite { outer, args } => {
                let vals: Vec<C> = args.iter().map(|f| f.eval(x)).collect();
                outer.eval(&vals)
            }
        }
    }

    /// Scalar convenience wrapper.
    #[inline]
    pub fn eval1(&self, y: f64) -> C {
        self.eval(std::slice::from_ref(&y))
    }

    pub fn try_eval(&self, x: &[f64]) -> Result<C> {
        self.check_point(x)?;
        Ok(self.eval(x))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        match self.dim() {
            Some(d) if d != x.len() => Err(Error::Usage(format!(
                "dimension mismatch: function on R^{d}, point in R^{}",
                x.len()
            ))),
            _ => Ok(()),
        }
    }

    /// Exact value, gradient and Hessian.
    pub fn jet(&self, x: &[f64]) -> Jet {
        let d = x.len();
        match self {
            TestFunction::Constant(c) => Jet::constant(*c, d),
            TestFunction::Fourier(p) => {
                let k = 2.0 * PI * *p as f64;
                let v = C::new(0.0, k * x[0]).exp();
                let mut j = Jet::constant(v, d);
                j.grad[0] = C::new(0.0, k) * v;
                j.hess[0] = -(k * k) * v;
                j
            }
            TestFunction::ImaginaryExp(u) => {
                let v = self.eval(x);
                let mut j = Jet::constant(v, d);
                for a in 0..d.min(u.len()) {
                    j.grad[a] = C::new(0.0, u[a]) * v;
                    for b in 0..d.min(u.len()) {
                        j.hess[a * d + b] = -(u[a] * u[b]) * v;
                    }
                }
                j
            }
            TestFunction::Sum(fs) => fs.iter().fold(Jet::constant(ZERO, d), |acc, f| acc.add(&f.jet(x))),
            TestFunction::Product(fs) => fs.iter().fold(Jet::constant(ONE, d), |acc, f| acc.mul(&f.jet(x))),
            TestFunction::Scaled(c, f) => f.jet(x).scale(*c),
            TestFunction::RealPart(f) => f.jet(x).map_parts(|z| C::new(z.re, 0.0)),
            TestFunction::ImagPart(f) => f.jet(x).map_parts(|z| C::new(z.im, 0.0)),
            TestFunction::Composite { outer, args } => {
                let jets: Vec<Jet> = args.iter().map(|f| f.jet(x)).collect();
                let vals: Vec<C> = jets.iter().map(|j| j.value).collect();
                let (v, g, h) = outer.derivatives(&vals);
                let p = jets.len();
                let mut out = Jet::constant(v, d);
                for i in 0..p {
                    for a in 0..d {
                        out.grad[a] += g[i] * jets[i].grad[a];
                        for b in 0..d {
                            out.hess[a * d + b] += g[i] * jets[i].hess[a * d + b];
                            for k in 0..p {
                                out.hess[a * d + b] += h[i * p + k] * jets[i].grad[a] * jets[k].grad[b];
                            }
                        }
                    }
                }
                out
            }
        }
    }

    pub fn d1(&self, x: &[f64]) -> Vec<C> {
        self.jet(x).grad
    }

    pub fn d2(&self, x: &[f64]) -> Vec<Vec<C>> {
        let j = self.jet(x);
        let d = x.len();
        (0..d).map(|a| j.hess[a * d..(a + 1) * d].to_vec()).collect()
    }

    /// First derivative of a scalar function.
    pub fn deriv1(&self, y: f64) -> C {
        self.jet(&[y]).grad[0]
    }

    /// Value, first and second derivative of a scalar function.
    pub fn jet1(&self, y: f64) -> (C, C, C) {
        let j = self.jet(&[y]);
        (j.value, j.grad[0], j.hess[0])
    }
}

fn finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Usage(format!("non-finite coefficient {x}")))
    }
}

/// SmoothComposite F(f₁,…,f_p) with a whitelisted outer function.
pub fn chain_compose(outer: OuterFn, fs: Vec<TestFunction>) -> Result<TestFunction> {
    if fs.is_empty() {
        return Err(Error::Usage("chain_compose needs at least one inner function".into()));
    }
    if outer.arity() != fs.len() {
        return Err(Error::Usage(format!(
            "arity mismatch: outer function takes {} arguments, {} given",
            outer.arity(),
            fs.len()
        )));
    }
    let f = TestFunction::Composite { outer, args: fs };
    f.validate()?;
    Ok(f)
}

/// ∂F/∂x_i composed with the inner functions, as a test function.
pub fn outer_partial(outer: &OuterFn, args: &[TestFunction], i: usize) -> TestFunction {
    match outer {
        OuterFn::Polynomial(c) => {
            let d = poly_derivative(c);
            if d.is_empty() {
                TestFunction::constant(0.0)
            } else {
                TestFunction::Composite { outer: OuterFn::Polynomial(d), args: args.to_vec() }
            }
        }
        OuterFn::Sin => TestFunction::Composite { outer: OuterFn::Cos, args: args.to_vec() },
        OuterFn::Cos => TestFunction::Composite { outer: OuterFn::Sin, args: args.to_vec() }.scaled(C::new(-1.0, 0.0)),
        OuterFn::Exp => TestFunction::Composite { outer: OuterFn::Exp, args: args.to_vec() },
        OuterFn::Affine { weights, .. } => TestFunction::constant(weights[i]),
        OuterFn::Product(_) => {
            let rest: Vec<TestFunction> =
                args.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, f)| f.clone()).collect();
            if rest.is_empty() {
                TestFunction::constant(1.0)
            } else {
                TestFunction::Product(rest)
            }
        }
    }
}

/// Deterministic integrand f on [0, ∞) for path functionals ∫f dX.
#[derive(Debug, Clone, PartialEq)]
pub enum Integrand {
    /// Σ value·1_[from, to)
    Piecewise(Vec<Piece>),
    /// Σ c_k s^k
    Polynomial(Vec<f64>),
    /// amp·sin(freq·s + phase)
    Sine { amp: f64, freq: f64, phase: f64 },
    /// amp·cos(freq·s + phase)
    Cosine { amp: f64, freq: f64, phase: f64 },
    Sum(Vec<Integrand>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub from: f64,
    pub to: f64,
    pub value: f64,
}

impl Integrand {
    pub fn constant(c: f64) -> Self {
        Integrand::Polynomial(vec![c])
    }

    /// Step integrand Σ u_ℓ 1_[0, t_ℓ), so that ∫f dX = Σ u_ℓ X(t_ℓ) when X(0) = 0.
    pub fn from_marginals(times: &[f64], weights: &[f64]) -> Self {
        Integrand::Piecewise(
            times.iter().zip(weights).map(|(t, u)| Piece { from: 0.0, to: *t, value: *u }).collect(),
        )
    }

    pub fn value(&self, s: f64) -> f64 {
        match self {
            Integrand::Piecewise(ps) => ps.iter().filter(|p| s >= p.from && s < p.to).map(|p| p.value).sum(),
            Integrand::Polynomial(c) => c.iter().rev().fold(0.0, |acc, ck| acc * s + ck),
            Integrand::Sine { amp, freq, phase } => amp * (freq * s + phase).sin(),
            Integrand::Cosine { amp, freq, phase } => amp * (freq * s + phase).cos(),
            Integrand::Sum(fs) => fs.iter().map(|f| f.value(s)).sum(),
        }
    }

    /// Derivative, defined for smooth integrands.
    pub fn derivative(&self, s: f64) -> f64 {
        match self {
            Integrand::Piecewise(_) => 0.0,
            Integrand::Polynomial(c) => {
                let d = poly_derivative(c);
                d.iter().rev().fold(0.0, |acc, ck| acc * s + ck)
            }
            Integrand::Sine { amp, freq, phase } => amp * freq * (freq * s + phase).cos(),
            Integrand::Cosine { amp, freq, phase } => -amp * freq * (freq * s + phase).sin(),
            Integrand::Sum(fs) => fs.iter().map(|f| f.derivative(s)).sum(),
        }
    }

    pub fn is_smooth(&self) -> bool {
        match self {
            Integrand::Piecewise(_) => false,
            Integrand::Sum(fs) => fs.iter().all(|f| f.is_smooth()),
            _ => true,
        }
    }

    /// ∫₀ˢ f.
    pub fn primitive(&self, s: f64) -> f64 {
        match self {
            Integrand::Piecewise(ps) => ps.iter().map(|p| p.value * (s.clamp(p.from, p.to) - p.from).max(0.0)).sum(),
            Integrand::Polynomial(c) => {
                c.iter().enumerate().map(|(k, ck)| ck * s.powi(k as i32 + 1) / (k as f64 + 1.0)).sum()
            }
            Integrand::Sine { amp, freq, phase } => {
                if *freq == 0.0 {
                    amp * phase.sin() * s
                } else {
                    -amp / freq * ((freq * s + phase).cos() - phase.cos())
                }
            }
            Integrand::Cosine { amp, freq, phase } => {
                if *freq == 0.0 {
                    amp * phase.cos() * s
                } else {
                    amp / freq * ((freq * s + phase).sin() - phase.sin())
                }
            }
            Integrand::Sum(fs) => fs.iter().map(|f| f.primitive(s)).sum(),
        }
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.primitive(b) - self.primitive(a)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Integrand::Piecewise(ps) => ps.iter().flat_map(|p| [p.from, p.to]).collect(),
            Integrand::Sum(fs) => fs.iter().flat_map(|f| f.breakpoints()).collect(),
            _ => Vec::new(),
        }
    }

    /// Cell averages (1/dt)∫_{cell k} f for a uniform grid, so that
    /// ∫f dX = Σ ΔX_k·w_k exactly for the piecewise-linear interpolant X.
    pub fn cell_weights(&self, dt: f64, cells: usize) -> Vec<f64> {
        let mut prev = self.primitive(0.0);
        (1..=cells)
            .map(|k| {
                let next = self.primitive(dt * k as f64);
                let w = (next - prev) / dt;
                prev = next;
                w
            })
            .collect()
    }

    /// ∫_a^b f·g by quadrature respecting breakpoints.
    pub fn inner_on(&self, other: &Integrand, a: f64, b: f64) -> f64 {
        let mut br = self.breakpoints();
        br.extend(other.breakpoints());
        quadrature::integrate_with_breaks(a, b, &br, 8, |s| C::new(self.value(s) * other.value(s), 0.0)).re
    }

    pub fn inner(&self, other: &Integrand) -> f64 {
        self.inner_on(other, 0.0, 1.0)
    }

    pub fn plus(&self, other: &Integrand) -> Integrand {
        Integrand::Sum(vec![self.clone(), other.clone()])
    }

    pub fn scaled(&self, c: f64) -> Integrand {
        match self {
            Integrand::Piecewise(ps) => {
                Integrand::Piecewise(ps.iter().map(|p| Piece { value: p.value * c, ..*p }).collect())
            }
            Integrand::Polynomial(cs) => Integrand::Polynomial(cs.iter().map(|x| x * c).collect()),
            Integrand::Sine { amp, freq, phase } => Integrand::Sine { amp: amp * c, freq: *freq, phase: *phase },
            Integrand::Cosine { amp, freq, phase } => Integrand::Cosine { amp: amp * c, freq: *freq, phase: *phase },
            Integrand::Sum(fs) => Integrand::Sum(fs.iter().map(|f| f.scaled(c)).collect()),
        }
    }

    /// ∫₀ᴴ f dX by parts, X(H)f(H) − X(0)f(0) − ∫X df, with the Stieltjes term
    /// on `quad` uniform subintervals (midpoint values of X).
    pub fn by_parts(&self, path: &PathView<'_>, quad: usize) -> f64 {
        let h = path.horizon();
        let ds = h / quad as f64;
        let mut stieltjes = 0.0;
        for j in 0..quad {
            let (a, b) = (ds * j as f64, ds * (j + 1) as f64);
            stieltjes += path.at(0.5 * (a + b)) * (self.value(b) - self.value(a));
        }
        path.at(h) * self.value(h) - path.at(0.0) * self.value(0.0) - stieltjes
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Integrand::Piecewise(ps) => {
                if ps.is_empty() {
                    return Err(Error::Usage("piecewise integrand needs at least one piece".into()));
                }
                for p in ps {
                    finite(p.from)?;
                    finite(p.to)?;
                    finite(p.value)?;
                    if p.from > p.to || p.from < 0.0 {
                        return Err(Error::Usage(format!("invalid piece [{}, {})", p.from, p.to)));
                    }
                }
                Ok(())
            }
            Integrand::Polynomial(c) => {
                if c.is_empty() {
                    return Err(Error::Usage("empty polynomial integrand".into()));
                }
                c.iter().try_for_each(|x| finite(*x))
            }
            Integrand::Sine { amp, freq, phase } | Integrand::Cosine { amp, freq, phase } => {
                finite(*amp).and(finite(*freq)).and(finite(*phase))
            }
            Integrand::Sum(fs) => {
                if fs.is_empty() {
                    return Err(Error::Usage("empty integrand sum".into()));
                }
                fs.iter().try_for_each(|f| f.validate())
            }
        }
    }
}

/// Read-only view of a piecewise-linear path on a uniform grid.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    pub dt: f64,
    pub values: &'a [f64],
}

impl PathView<'_> {
    pub fn horizon(&self) -> f64 {
        self.dt * (self.values.len() - 1) as f64
    }

    /// Linear interpolation at time t (clamped to the grid).
    pub fn at(&self, t: f64) -> f64 {
        let cells = self.values.len() - 1;
        let x = (t / self.dt).clamp(0.0, cells as f64);
        let k = (x.floor() as usize).min(cells.saturating_sub(1));
        if cells == 0 {
            return self.values[0];
        }
        let r = x - k as f64;
        self.values[k] * (1.0 - r) + self.values[k + 1] * r
    }

    /// Exact ∫₀ᴴ f dX for the interpolant.
    pub fn integrate(&self, f: &Integrand) -> f64 {
        let w = f.cell_weights(self.dt, self.values.len() - 1);
        self.integrate_weights(&w)
    }

    pub fn integrate_weights(&self, w: &[f64]) -> f64 {
        self.values.windows(2).zip(w).map(|(x, wk)| (x[1] - x[0]) * wk).sum()
    }
}

/// Exponential functionals of path-valued, empirical or point-measure states.
#[derive(Debug, Clone, PartialEq)]
pub enum CylindricalFunction {
    /// e^{i Σ u_ℓ X(t_ℓ)}
    MarginalExp { times: Vec<f64>, weights: Vec<f64> },
    /// e^{i ∫f dX}
    IntegralExp(Integrand),
    /// e^{i Σ_j φ(x_j)} over the atoms of a point configuration.
    PointExp(TestFunction),
}

impl CylindricalFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            CylindricalFunction::MarginalExp { times, weights } => {
                if times.is_empty() || times.len() != weights.len() {
                    return Err(Error::Usage("margexp needs equally many times and weights".into()));
                }
                for t in times {
                    if !(*t >= 0.0 && t.is_finite()) {
                        return Err(Error::Usage(format!("invalid marginal time {t}")));
                    }
                }
                weights.iter().try_for_each(|u| finite(*u))
            }
            CylindricalFunction::IntegralExp(f) => f.validate(),
            CylindricalFunction::PointExp(f) => {
                f.validate()?;
                if f.dim().unwrap_or(1) != 1 {
                    return Err(Error::Usage("point exponential needs a scalar mark function".into()));
                }
                if !f.is_real() {
                    return Err(Error::Usage("point exponential needs a real mark function".into()));
                }
                Ok(())
            }
        }
    }

    /// The integrand equivalent of a path functional (marginals become step integrands).
    pub fn path_integrand(&self) -> Option<Integrand> {
        match self {
            CylindricalFunction::MarginalExp { times, weights } => Some(Integrand::from_marginals(times, weights)),
            CylindricalFunction::IntegralExp(f) => Some(f.clone()),
            CylindricalFunction::PointExp(_) => None,
        }
    }
}

/// Any function admissible as φ, χ or ψ in a bias functional.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    Point(TestFunction),
    Cylinder(CylindricalFunction),
    Sum(Vec<Observable>),
    Product(Vec<Observable>),
}

impl Observable {
    pub fn constant(c: f64) -> Self {
        Observable::Point(TestFunction::constant(c))
    }

    pub fn fourier(p: i64) -> Self {
        Observable::Point(TestFunction::Fourier(p))
    }

    pub fn iexp(u: &[f64]) -> Self {
        Observable::Point(TestFunction::iexp(u))
    }

    pub fn integral_exp(f: Integrand) -> Self {
        Observable::Cylinder(CylindricalFunction::IntegralExp(f))
    }

    pub fn marginal_exp(times: &[f64], weights: &[f64]) -> Self {
        Observable::Cylinder(CylindricalFunction::MarginalExp { times: times.to_vec(), weights: weights.to_vec() })
    }

    pub fn point_exp(f: TestFunction) -> Self {
        Observable::Cylinder(CylindricalFunction::PointExp(f))
    }

    /// Pointwise product, merging scalar factors into a single test function.
    pub fn times(&self, other: &Observable) -> Observable {
        match (self, other) {
            (Observable::Point(a), Observable::Point(b)) => Observable::Point(a.clone().times(b.clone())),
            _ => Observable::Product(vec![self.clone(), other.clone()]),
        }
    }

    pub fn plus(&self, other: &Observable) -> Observable {
        match (self, other) {
            (Observable::Point(a), Observable::Point(b)) => Observable::Point(a.clone().plus(b.clone())),
            _ => Observable::Sum(vec![self.clone(), other.clone()]),
        }
    }

    pub fn scaled(&self, c: C) -> Observable {
        match self {
            Observable::Point(f) => Observable::Point(f.clone().scaled(c)),
            _ => Observable::Product(vec![Observable::Point(TestFunction::Constant(c)), self.clone()]),
        }
    }

    pub fn as_point(&self) -> Option<&TestFunction> {
        match self {
            Observable::Point(f) => Some(f),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Observable::Point(f) => f.validate(),
            Observable::Cylinder(c) => c.validate(),
            Observable::Sum(os) | Observable::Product(os) => {
                if os.is_empty() {
                    return Err(Error::Usage("empty observable sum or product".into()));
                }
                os.iter().try_for_each(|o| o.validate())
            }
        }
    }

    /// True when every scalar factor is constant (admissible on any state).
    pub fn is_constant(&self) -> bool {
        match self {
            Observable::Point(f) => f.dim().is_none(),
            Observable::Cylinder(_) => false,
            Observable::Sum(os) | Observable::Product(os) => os.iter().all(|o| o.is_constant()),
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            Observable::Point(f) => f.bound(),
            Observable::Cylinder(CylindricalFunction::PointExp(_)) => 1.0,
            Observable::Cylinder(_) => 1.0,
            Observable::Sum(os) => os.iter().map(|o| o.bound()).sum(),
            Observable::Product(os) => os.iter().map(|o| o.bound()).product(),
        }
    }
}

/// Finite exponential sum Σ c_k e^{i⟨u_k,x⟩}, the normal form used by Gaussian closed forms.
pub type ExpSum = Vec<(C, Vec<f64>)>;

/// Normal form of a test function built from exponentials, constants, sums and products.
pub fn exp_sum(f: &TestFunction, dim: usize) -> Option<ExpSum> {
    match f {
        TestFunction::Constant(c) => Some(vec![(*c, vec![0.0; dim])]),
        TestFunction::Fourier(p) if dim == 1 => Some(vec![(ONE, vec![2.0 * PI * *p as f64])]),
        TestFunction::ImaginaryExp(u) if u.len() == dim => Some(vec![(ONE, u.clone())]),
        TestFunction::Sum(fs) => {
            let mut out = Vec::new();
            for g in fs {
                out.extend(exp_sum(g, dim)?);
            }
            Some(out)
        }
        TestFunction::Product(fs) => {
            let mut acc: ExpSum = vec![(ONE, vec![0.0; dim])];
            for g in fs {
                let terms = exp_sum(g, dim)?;
                let mut next = Vec::with_capacity(acc.len() * terms.len());
                for (ca, ua) in &acc {
                    for (cb, ub) in &terms {
                        next.push((ca * cb, ua.iter().zip(ub).map(|(a, b)| a + b).collect()));
                    }
                }
                acc = next;
            }
            Some(acc)
        }
        TestFunction::Scaled(c, g) => Some(exp_sum(g, dim)?.into_iter().map(|(k, u)| (k * c, u)).collect()),
        _ => None,
    }
}

/// Normal form Σ c_k e^{i∫f_k dX} of a path observable.
pub fn path_exp_sum(o: &Observable) -> Option<Vec<(C, Integrand)>> {
    match o {
        Observable::Point(f) => match exp_sum(f, 1)?.as_slice() {
            terms if terms.iter().all(|(_, u)| u[0] == 0.0) => {
                Some(terms.iter().map(|(c, _)| (*c, Integrand::constant(0.0))).collect())
            }
            _ => None,
        },
        Observable::Cylinder(c) => Some(vec![(ONE, c.path_integrand()?)]),
        Observable::Sum(os) => {
            let mut out = Vec::new();
            for g in os {
                out.extend(path_exp_sum(g)?);
            }
            Some(out)
        }
        Observable::Product(os) => {
            let mut acc = vec![(ONE, Integrand::constant(0.0))];
            for g in os {
                let terms = path_exp_sum(g)?;
                let mut next = Vec::new();
                for (ca, fa) in &acc {
                    for (cb, fb) in &terms {
                        next.push((ca * cb, fa.plus(fb)));
                    }
                }
                acc = next;
            }
            Some(acc)
        }
    }
}

/// Normal form Σ c_k e^{iΣ_j φ_k(x_j)} of a point-measure observable.
pub fn point_exp_sum(o: &Observable) -> Option<Vec<(C, Vec<TestFunction>)>> {
    match o {
        Observable::Point(f) if f.dim().is_none() => Some(vec![(f.eval(&[]), Vec::new())]),
        Observable::Cylinder(CylindricalFunction::PointExp(f)) => Some(vec![(ONE, vec![f.clone()])]),
        Observable::Sum(os) => {
            let mut out = Vec::new();
            for g in os {
                out.extend(point_exp_sum(g)?);
            }
            Some(out)
        }
        Observable::Product(os) => {
            let mut acc: Vec<(C, Vec<TestFunction>)> = vec![(ONE, Vec::new())];
            for g in os {
                let terms = point_exp_sum(g)?;
                let mut next = Vec::new();
                for (ca, fa) in &acc {
                    for (cb, fb) in &terms {
                        let mut fs = fa.clone();
                        fs.extend(fb.iter().cloned());
                        next.push((ca * cb, fs));
                    }
                }
                acc = next;
            }
            Some(acc)
        }
        _ => None,
    }
}

impl fmt::Display for OuterFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OuterFn::Polynomial(c) => write!(f, "poly[{}]", join(c)),
            OuterFn::Sin => f.write_str("sin"),
            OuterFn::Cos => f.write_str("cos"),
            OuterFn::Exp => f.write_str("exp"),
            OuterFn::Affine { weights, offset } => write!(f, "affine[{};{}]", join(weights), fmt_num(*offset)),
            OuterFn::Product(_) => f.write_str("mul"),
        }
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(",")
}

fn fmt_complex(c: C) -> String {
    if c.im == 0.0 {
        fmt_num(c.re)
    } else {
        format!("{},{}", fmt_num(c.re), fmt_num(c.im))
    }
}

fn join_display<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Constant(c) => write!(f, "const:{}", fmt_complex(*c)),
            TestFunction::Fourier(p) => write!(f, "fourier:p={p}"),
            TestFunction::ImaginaryExp(u) => write!(f, "iexp:u={}", join(u)),
            TestFunction::Sum(fs) => write!(f, "sum({})", join_display(fs)),
            TestFunction::Product(fs) => write!(f, "prod({})", join_display(fs)),
            TestFunction::Scaled(c, g) => write!(f, "scale[{}]({g})", fmt_complex(*c)),
            TestFunction::RealPart(g) => write!(f, "re({g})"),
            TestFunction::ImagPart(g) => write!(f, "im({g})"),
            TestFunction::Composite { outer, args } => write!(f, "{outer}({})", join_display(args)),
        }
    }
}

impl fmt::Display for Integrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Integrand::Piecewise(ps) => {
                let body: Vec<String> = ps
                    .iter()
                    .map(|p| format!("{}:{}={}", fmt_num(p.from), fmt_num(p.to), fmt_num(p.value)))
                    .collect();
                write!(f, "pw[{}]", body.join(";"))
            }
            Integrand::Polynomial(c) if c.len() == 1 => write!(f, "{}", fmt_num(c[0])),
            Integrand::Polynomial(c) => write!(f, "poly[{}]", join(c)),
            Integrand::Sine { amp, freq, phase } => {
                write!(f, "sin[{},{},{}]", fmt_num(*amp), fmt_num(*freq), fmt_num(*phase))
            }
            Integrand::Cosine { amp, freq, phase } => {
                write!(f, "cos[{},{},{}]", fmt_num(*amp), fmt_num(*freq), fmt_num(*phase))
            }
            Integrand::Sum(fs) => {
                let body: Vec<String> = fs.iter().map(|g| g.to_string()).collect();
                write!(f, "{}", body.join("+"))
            }
        }
    }
}

impl fmt::Display for CylindricalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CylindricalFunction::MarginalExp { times, weights } => {
                write!(f, "margexp:t={},u={}", join(times), join(weights))
            }
            CylindricalFunction::IntegralExp(g) => write!(f, "intexp:f={g}"),
            CylindricalFunction::PointExp(g) => write!(f, "pexp({g})"),
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Point(g) => write!(f, "{g}"),
            Observable::Cylinder(c) => write!(f, "{c}"),
            Observable::Sum(os) => write!(f, "sum({})", join_display(os)),
            Observable::Product(os) => write!(f, "prod({})", join_display(os)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: C, b: C, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn fourier_values_and_derivatives() {
        let f = TestFunction::fourier(1);
        assert!(close(f.eval1(0.0), ONE, 1e-15));
        assert!(close(f.eval1(0.25), C::new(0.0, 1.0), 1e-15));
        assert!(close(f.deriv1(0.0), C::new(0.0, 2.0 * PI), 1e-15));
        assert!(close(f.jet1(0.0).2, C::new(-4.0 * PI * PI, 0.0), 1e-12));
        assert_eq!(TestFunction::constant(5.0).deriv1(0.3), ZERO);
        assert!(close(TestFunction::iexp(&[1.0, 1.0]).eval(&[0.0, 0.0]), ONE, 0.0));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        assert!(TestFunction::iexp(&[1.0, 1.0]).try_eval(&[0.0]).is_err());
        let bad = TestFunction::iexp(&[1.0]).times(TestFunction::iexp(&[1.0, 2.0]));
        assert!(bad.validate().is_err());
    }

    #[test]
    fn chain_compose_examples() {
        let sq = chain_compose(OuterFn::Polynomial(vec![0.0, 0.0, 1.0]), vec![TestFunction::fourier(1)]).unwrap();
        for y in [0.0, 0.1, 0.37] {
            assert!(close(sq.eval1(y), TestFunction::fourier(2).eval1(y), 1e-14));
            assert!(close(sq.deriv1(y), C::new(0.0, 4.0 * PI) * TestFunction::fourier(2).eval1(y), 1e-12));
        }
        let prod = chain_compose(OuterFn::Product(2), vec![TestFunction::fourier(2), TestFunction::fourier(-3)]).unwrap();
        for y in [0.05, 0.6] {
            assert!(close(prod.eval1(y), TestFunction::fourier(-1).eval1(y), 1e-14));
        }
        assert!(chain_compose(OuterFn::Product(3), vec![TestFunction::fourier(1)]).is_err());
        assert!(chain_compose(OuterFn::Sin, vec![]).is_err());
    }

    #[test]
    fn sin_of_real_part_matches_finite_differences() {
        let f = chain_compose(OuterFn::Sin, vec![TestFunction::fourier(1).re()]).unwrap();
        let h = 1e-5;
        for k in 0..20 {
            let y = 0.05 * k as f64;
            let fd = (f.eval1(y + h) - f.eval1(y - h)) / (2.0 * h);
            let exact = f.deriv1(y);
            assert!((fd - exact).norm() <= 1e-6 * exact.norm().max(1.0), "y={y}");
        }
    }

    #[test]
    fn bounds_hold() {
        let f = chain_compose(
            OuterFn::Exp,
            vec![TestFunction::fourier(1).re().scaled(C::new(0.5, 0.0))],
        )
        .unwrap();
        let b = f.bound();
        for k in 0..100 {
            assert!(f.eval1(k as f64 / 100.0).norm() <= b + 1e-12);
        }
    }

    #[test]
    fn outer_partials() {
        let args = vec![TestFunction::fourier(1).re()];
        let y = 0.3;
        let x = args[0].eval1(y);
        let p = outer_partial(&OuterFn::Polynomial(vec![1.0, 2.0, 3.0]), &args, 0);
        assert!(close(p.eval1(y), 2.0 + 6.0 * x, 1e-14));
        let c = outer_partial(&OuterFn::Cos, &args, 0);
        assert!(close(c.eval1(y), -x.sin(), 1e-14));
    }

    #[test]
    fn integrand_cell_weights_are_exact() {
        let f = Integrand::Sum(vec![
            Integrand::Polynomial(vec![1.0, -2.0, 0.5]),
            Integrand::Sine { amp: 0.3, freq: 5.0, phase: 0.1 },
            Integrand::Piecewise(vec![Piece { from: 0.0, to: 0.37, value: 2.0 }]),
        ]);
        let w = f.cell_weights(0.25, 4);
        let total: f64 = w.iter().map(|x| x * 0.25).sum();
        assert!((total - f.integral(0.0, 1.0)).abs() < 1e-14);
        // ∫f dX for X(t) = t equals ∫f
        let values: Vec<f64> = (0..=64).map(|k| k as f64 / 64.0).collect();
        let path = PathView { dt: 1.0 / 64.0, values: &values };
        assert!((path.integrate(&f) - f.integral(0.0, 1.0)).abs() < 1e-13);
    }

    #[test]
    fn by_parts_converges_under_refinement() {
        let f = Integrand::Cosine { amp: 1.0, freq: 3.0, phase: 0.2 };
        let values: Vec<f64> = (0..=32).map(|k| ((k * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let path = PathView { dt: 1.0 / 32.0, values: &values };
        let exact = path.integrate(&f);
        let a = f.by_parts(&path, 1024);
        let b = f.by_parts(&path, 2048);
        assert!((a - b).abs() <= 1e-3);
        assert!((b - exact).abs() <= 1e-3);
    }

    #[test]
    fn marginal_step_integrand_reproduces_values() {
        let values: Vec<f64> = vec![0.0, 0.3, -0.2, 0.9, 0.4];
        let path = PathView { dt: 0.25, values: &values };
        let f = Integrand::from_marginals(&[0.5, 0.8], &[2.0, -1.0]);
        let expected = 2.0 * path.at(0.5) - path.at(0.8);
        assert!((path.integrate(&f) - expected).abs() < 1e-14);
    }

    #[test]
    fn exp_sum_normal_form() {
        let f = TestFunction::Sum(vec![
            TestFunction::fourier(1).times(TestFunction::fourier(2)),
            TestFunction::constant(3.0),
        ]);
        let terms = exp_sum(&f, 1).unwrap();
        for y in [0.1, 0.7] {
            let v: C = terms.iter().map(|(c, u)| c * C::new(0.0, u[0] * y).exp()).sum();
            assert!(close(v, f.eval1(y), 1e-13));
        }
        assert!(exp_sum(&TestFunction::fourier(1).re(), 1).is_none());
    }
}
