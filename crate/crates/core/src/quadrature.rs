//! Deterministic quadrature against the limit laws used by closed-form references.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::types::ComplexValue;

const ORDER: usize = 20;

struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Gauss–Legendre nodes on [−1, 1] from the Jacobi matrix eigenproblem.
fn legendre_rule(order: usize) -> Rule {
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

fn rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(ORDER))
}

/// Composite Gauss–Legendre integral of `f` over [a, b] with `panels` equal panels.
pub fn integrate<F: FnMut(f64) -> ComplexValue>(a: f64, b: f64, panels: usize, mut f: F) -> ComplexValue {
    let r = rule();
    let h = (b - a) / panels as f64;
    let mut total = ComplexValue::new(0.0, 0.0);
    for p in 0..panels {
        let lo = a + h * p as f64;
        let mid = lo + 0.5 * h;
        let mut acc = ComplexValue::new(0.0, 0.0);
        for (x, w) in r.nodes.iter().zip(&r.weights) {
            acc += f(mid + 0.5 * h * x) * *w;
        }
        total += acc * (0.5 * h);
    }
    total
}

/// Composite rule respecting breakpoints: each interval between consecutive breaks gets its own panels.
pub fn integrate_with_breaks<F: FnMut(f64) -> ComplexValue>(
    a: f64,
    b: f64,
    breaks: &[f64],
    panels: usize,
    mut f: F,
) -> ComplexValue {
    let mut cuts: Vec<f64> = vec![a, b];
    cuts.extend(breaks.iter().copied().filter(|x| *x > a && *x < b));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = ComplexValue::new(0.0, 0.0);
    for w in cuts.windows(2) {
        total += integrate(w[0], w[1], panels, &mut f);
    }
    total
}

pub fn integrate_real<F: FnMut(f64) -> f64>(a: f64, b: f64, panels: usize, mut f: F) -> f64 {
    integrate(a, b, panels, |x| ComplexValue::new(f(x), 0.0)).re
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// E[g(G)] for a standard normal G.
pub fn gaussian_expect<F: FnMut(f64) -> ComplexValue>(mut g: F) -> ComplexValue {
    integrate(-12.0, 12.0, 96, |z| g(z) * normal_pdf(z))
}

/// Scalar limit laws that admit quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ScalarLaw {
    Uniform { a: f64, b: f64 },
    Gaussian { mean: f64, sd: f64 },
    /// Law of (Z² − 1)/2 for standard normal Z.
    ItoSquare,
}

impl ScalarLaw {
    pub fn unit_uniform() -> Self {
        ScalarLaw::Uniform { a: 0.0, b: 1.0 }
    }

    pub fn standard_gaussian() -> Self {
        ScalarLaw::Gaussian { mean: 0.0, sd: 1.0 }
    }

    /// E[g(Y)] for Y with this law.
    pub fn expect<F: FnMut(f64) -> ComplexValue>(&self, mut g: F) -> ComplexValue {
        match *self {
            ScalarLaw::Uniform { a, b } => integrate(a, b, 48, &mut g) / (b - a),
            ScalarLaw::Gaussian { mean, sd } => gaussian_expect(|z| g(mean + sd * z)),
            ScalarLaw::ItoSquare => gaussian_expect(|z| g(0.5 * (z * z - 1.0))),
        }
    }

    pub fn expect_real<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        self.expect(|y| ComplexValue::new(g(y), 0.0)).re
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            ScalarLaw::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            ScalarLaw::Gaussian { mean, sd } => normal_cdf((x - mean) / sd),
            ScalarLaw::ItoSquare => {
                let s = 2.0 * x + 1.0;
                if s <= 0.0 {
                    0.0
                } else {
                    2.0 * normal_cdf(s.sqrt()) - 1.0
                }
            }
        }
    }

    /// Logarithmic derivative of the density, where smooth.
    pub fn score(&self, y: f64) -> f64 {
        match *self {
            ScalarLaw::Uniform { .. } => 0.0,
            ScalarLaw::Gaussian { mean, sd } => -(y - mean) / (sd * sd),
            ScalarLaw::ItoSquare => -1.0 / (2.0 * y + 1.0) - 0.5,
        }
    }
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in samples.iter().enumerate() {
        let c = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - c).max(c - i as f64 / n);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let r = rule();
        let s: f64 = r.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-13);
        for deg in 0..(2 * ORDER - 1) {
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            let got: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(deg as i32)).sum();
            assert!((got - exact).abs() < 1e-12, "degree {deg}: {got} vs {exact}");
        }
    }

    #[test]
    fn gaussian_moments() {
        let law = ScalarLaw::Gaussian { mean: 0.5, sd: 2.0 };
        assert!((law.expect_real(|y| y) - 0.5).abs() < 1e-12);
        assert!((law.expect_real(|y| (y - 0.5).powi(2)) - 4.0).abs() < 1e-10);
        // Characteristic function e^{iu m − u²s²/2}
        let u = 1.3;
        let cf = law.expect(|y| ComplexValue::new(0.0, u * y).exp());
        let exact = ComplexValue::new(-0.5 * u * u * 4.0, 0.5 * u).exp();
        assert!((cf - exact).norm() < 1e-10);
    }

    #[test]
    fn ito_square_characteristic_function() {
        // E e^{2iY} = e^{-i} (1 − 2i)^{−1/2}
        let cf = ScalarLaw::ItoSquare.expect(|y| ComplexValue::new(0.0, 2.0 * y).exp());
        let exact = ComplexValue::new(0.0, -1.0).exp() / ComplexValue::new(1.0, -2.0).sqrt();
        assert!((cf - exact).norm() < 1e-9, "{cf} vs {exact}");
        assert!((ScalarLaw::ItoSquare.cdf(-0.5)).abs() < 1e-15);
        assert!((ScalarLaw::ItoSquare.cdf(0.0) - 0.682_689_492_137_086).abs() < 1e-9);
    }

    #[test]
    fn breaks_handle_discontinuities() {
        let v = integrate_with_breaks(0.0, 1.0, &[0.3], 2, |x| ComplexValue::new(if x < 0.3 { 1.0 } else { -1.0 }, 0.0));
        assert!((v.re - (0.3 - 0.7)).abs() < 1e-14);
    }

    #[test]
    fn ks_of_uniform_grid_is_small() {
        let mut xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let d = ks_distance(&mut xs, |x| x.clamp(0.0, 1.0));
        assert!(d <= 0.5e-3 + 1e-12);
    }
}
