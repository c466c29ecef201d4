//! Sample states of coupled pairs (Y, Yₙ) and prepared evaluators of observables on them.

use crate::algebra::{CylindricalFunction, Integrand, Observable, PathView, TestFunction};
use crate::types::{ComplexValue, Error, Result};

type C = ComplexValue;

/// Descriptor of the space in which Y and Yₙ live.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateSpace {
    Interval { lo: f64, hi: f64 },
    RealLine,
    Vector(usize),
    /// Piecewise-linear paths on [0, horizon].
    Path { horizon: f64 },
    /// Centred empirical processes on [0, 1].
    Empirical,
    /// Finite configurations of scalar marks.
    PointMeasure,
}

impl StateSpace {
    pub fn describe(&self) -> String {
        match self {
            StateSpace::Interval { lo, hi } => format!("scalar on [{lo}, {hi}]"),
            StateSpace::RealLine => "scalar on R".into(),
            StateSpace::Vector(d) => format!("vector in R^{d}"),
            StateSpace::Path { horizon } => format!("path on [0, {horizon}]"),
            StateSpace::Empirical => "empirical process on [0, 1]".into(),
            StateSpace::PointMeasure => "point measure on R".into(),
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, StateSpace::Interval { .. } | StateSpace::RealLine)
    }

    /// Checks that `o` can be evaluated on states of this space.
    pub fn admits(&self, o: &Observable) -> std::result::Result<(), String> {
        match o {
            Observable::Point(f) => match (f.dim(), self) {
                (None, _) => Ok(()),
                (Some(1), s) if s.is_scalar() => Ok(()),
                (Some(d), StateSpace::Vector(q)) if d == *q => Ok(()),
                (Some(d), s) => Err(format!("a function on R^{d} cannot act on a {}", s.describe())),
            },
            Observable::Cylinder(c) => match (c, self) {
                (CylindricalFunction::PointExp(_), StateSpace::PointMeasure) => Ok(()),
                (CylindricalFunction::MarginalExp { times, .. }, StateSpace::Path { horizon }) => {
                    if times.iter().all(|t| *t <= horizon + 1e-12) {
                        Ok(())
                    } else {
                        Err(format!("marginal times must lie in [0, {horizon}]"))
                    }
                }
                (CylindricalFunction::MarginalExp { times, .. }, StateSpace::Empirical) => {
                    if times.iter().all(|t| *t <= 1.0) {
                        Ok(())
                    } else {
                        Err("marginal times must lie in [0, 1]".into())
                    }
                }
                (CylindricalFunction::IntegralExp(_), StateSpace::Path { .. } | StateSpace::Empirical) => Ok(()),
                (c, s) => Err(format!("`{c}` cannot act on a {}", s.describe())),
            },
            Observable::Sum(os) | Observable::Product(os) => os.iter().try_for_each(|x| self.admits(x)),
        }
    }
}

/// One side of a coupled sample.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Scalar(f64),
    Vector(Vec<f64>),
    /// Values at k·dt, k = 0..=cells, interpolated linearly.
    Path { dt: f64, values: Vec<f64> },
    /// Points V_1..V_N defining Z(x) = N^{-1/2} Σ (1{V_k ≤ x} − E 1{V ≤ x}).
    Empirical { points: Vec<f64> },
    /// Atoms of a finite point configuration.
    Points(Vec<f64>),
}

impl State {
    pub fn scalar(&self) -> f64 {
        match self {
            State::Scalar(y) => *y,
            _ => f64::NAN,
        }
    }

    pub fn path(&self) -> Option<PathView<'_>> {
        match self {
            State::Path { dt, values } => Some(PathView { dt: *dt, values }),
            _ => None,
        }
    }
}

/// A draw of (Y, Yₙ) from the coupled sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSample {
    pub limit: State,
    pub approx: State,
}

impl CoupledSample {
    pub fn scalars() -> Self {
        CoupledSample { limit: State::Scalar(0.0), approx: State::Scalar(0.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Limit,
    Approx,
}

/// Distances between the two sides of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    /// Absolute difference, Euclidean norm, L² over the path horizon, or summed mark displacement.
    Default,
    /// |X(t) − Xₙ(t)| for paths and empirical processes.
    At(f64),
}

const PATH_PROBES: usize = 256;

fn empirical_at(points: &[f64], x: f64) -> f64 {
    let below = points.iter().filter(|p| **p <= x).count() as f64;
    (below - points.len() as f64 * x.clamp(0.0, 1.0)) / (points.len() as f64).sqrt()
}

pub fn distance(a: &State, b: &State, metric: Metric) -> f64 {
    match (a, b, metric) {
        (State::Scalar(x), State::Scalar(y), _) => (x - y).abs(),
        (State::Vector(x), State::Vector(y), _) => x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt(),
        (State::Path { .. }, State::Path { .. }, Metric::At(t)) => (a.path().unwrap().at(t) - b.path().unwrap().at(t)).abs(),
        (State::Path { .. }, State::Path { .. }, Metric::Default) => {
            let (pa, pb) = (a.path().unwrap(), b.path().unwrap());
            let h = pa.horizon().min(pb.horizon());
            let ss: f64 = (0..PATH_PROBES)
                .map(|k| {
                    let t = h * (k as f64 + 0.5) / PATH_PROBES as f64;
                    (pa.at(t) - pb.at(t)).powi(2)
                })
                .sum();
            (ss / PATH_PROBES as f64).sqrt()
        }
        (State::Empirical { points: p }, State::Empirical { points: q }, Metric::At(t)) => {
            (empirical_at(p, t) - empirical_at(q, t)).abs()
        }
        (State::Empirical { points: p }, State::Empirical { points: q }, Metric::Default) => {
            let ss: f64 = (0..PATH_PROBES)
                .map(|k| {
                    let t = (k as f64 + 0.5) / PATH_PROBES as f64;
                    (empirical_at(p, t) - empirical_at(q, t)).powi(2)
                })
                .sum();
            (ss / PATH_PROBES as f64).sqrt()
        }
        (State::Points(p), State::Points(q), _) => {
            let shared: f64 = p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum();
            shared + p.len().abs_diff(q.len()) as f64
        }
        _ => f64::NAN,
    }
}

/// Observable compiled for one side of one model at one index.
#[derive(Debug, Clone, PartialEq)]
pub enum Evaluator {
    Point(TestFunction),
    /// e^{i∫f dX} with cell weights for the expected grid.
    PathIntegral { integrand: Integrand, dt: f64, weights: Vec<f64> },
    /// e^{i N^{-1/2} Σ (f(V_k) − center)}
    Empirical { integrand: Integrand, center: f64 },
    /// e^{i Σ φ(x_j)}
    PointExp(TestFunction),
    Sum(Vec<Evaluator>),
    Product(Vec<Evaluator>),
}

/// Per-side information needed to compile observables.
pub struct SideContext<'a> {
    /// Expected (dt, cells) of path states.
    pub grid: Option<(f64, usize)>,
    /// Centering constant E f(V) for empirical states.
    pub center: &'a dyn Fn(&Integrand) -> f64,
}

impl Evaluator {
    pub fn compile(o: &Observable, ctx: &SideContext<'_>) -> Result<Evaluator> {
        Ok(match o {
            Observable::Point(f) => Evaluator::Point(f.clone()),
            Observable::Cylinder(CylindricalFunction::PointExp(f)) => Evaluator::PointExp(f.clone()),
            Observable::Cylinder(c) => {
                let integrand = c
                    .path_integrand()
                    .ok_or_else(|| Error::Usage(format!("`{c}` has no path integrand")))?;
                match ctx.grid {
                    Some((dt, cells)) => {
                        let weights = integrand.cell_weights(dt, cells);
                        Evaluator::PathIntegral { integrand, dt, weights }
                    }
                    None => {
                        let center = (ctx.center)(&integrand);
                        Evaluator::Empirical { integrand, center }
                    }
                }
            }
            Observable::Sum(os) => Evaluator::Sum(os.iter().map(|x| Evaluator::compile(x, ctx)).collect::<Result<_>>()?),
            Observable::Product(os) => {
                Evaluator::Product(os.iter().map(|x| Evaluator::compile(x, ctx)).collect::<Result<_>>()?)
            }
        })
    }

    pub fn eval(&self, s: &State) -> C {
        match self {
            Evaluator::Point(f) => match s {
                State::Scalar(y) => f.eval1(*y),
                State::Vector(x) => f.eval(x),
                _ => f.eval(&[]),
            },
            Evaluator::PathIntegral { integrand, dt, weights } => {
                let State::Path { dt: sdt, values } = s else { return C::new(f64::NAN, f64::NAN) };
                let view = PathView { dt: *sdt, values };
                let x = if values.len() == weights.len() + 1 && (sdt - dt).abs() <= 1e-15 * dt.abs() {
                    view.integrate_weights(weights)
                } else {
                    view.integrate(integrand)
                };
                C::new(0.0, x).exp()
            }
            Evaluator::Empirical { integrand, center } => {
                let State::Empirical { points } = s else { return C::new(f64::NAN, f64::NAN) };
                let sum: f64 = points.iter().map(|v| integrand.value(*v) - center).sum();
                C::new(0.0, sum / (points.len() as f64).sqrt()).exp()
            }
            Evaluator::PointExp(f) => {
                let State::Points(xs) = s else { return C::new(f64::NAN, f64::NAN) };
                let sum: f64 = xs.iter().map(|x| f.eval1(*x).re).sum();
                C::new(0.0, sum).exp()
            }
            Evaluator::Sum(es) => es.iter().map(|e| e.eval(s)).sum(),
            Evaluator::Product(es) => es.iter().fold(C::new(1.0, 0.0), |acc, e| acc * e.eval(s)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marginal_matches_pointwise_exponential() {
        let values: Vec<f64> = vec![0.0, 0.4, -0.3, 1.1, 0.2];
        let state = State::Path { dt: 0.25, values: values.clone() };
        let ctx = SideContext { grid: Some((0.25, 4)), center: &|_| 0.0 };
        for (t, u) in [(0.5, 2.0), (0.6, -1.3), (1.0, 0.7)] {
            let e = Evaluator::compile(&Observable::marginal_exp(&[t], &[u]), &ctx).unwrap();
            let x = PathView { dt: 0.25, values: &values }.at(t);
            let direct = TestFunction::iexp(&[u]).eval(&[x]);
            assert!((e.eval(&state) - direct).norm() < 1e-14);
        }
    }

    #[test]
    fn admissibility() {
        let line = StateSpace::RealLine;
        assert!(line.admits(&Observable::fourier(1)).is_ok());
        assert!(line.admits(&Observable::iexp(&[1.0, 2.0])).is_err());
        assert!(line.admits(&Observable::integral_exp(Integrand::constant(1.0))).is_err());
        assert!(StateSpace::Vector(2).admits(&Observable::iexp(&[1.0, 2.0])).is_ok());
        assert!(StateSpace::Path { horizon: 0.25 }.admits(&Observable::marginal_exp(&[0.5], &[1.0])).is_err());
        assert!(StateSpace::PointMeasure.admits(&Observable::constant(2.0)).is_ok());
    }

    #[test]
    fn distances() {
        assert_eq!(distance(&State::Scalar(1.0), &State::Scalar(0.25), Metric::Default), 0.75);
        let a = State::Path { dt: 0.5, values: vec![0.0, 1.0, 2.0] };
        let b = State::Path { dt: 0.25, values: vec![0.0, 0.5, 1.0, 1.5, 2.0] };
        assert!(distance(&a, &b, Metric::Default) < 1e-14);
        assert!((distance(&a, &State::Path { dt: 1.0, values: vec![0.0, 0.0] }, Metric::At(0.5)) - 1.0).abs() < 1e-15);
    }
}
