//! Reusable closed-form operator families: scalar diffusion forms evaluated by
//! quadrature, and Gaussian structures evaluated on exponential normal forms.

use std::sync::Arc;

use crate::algebra::{exp_sum, path_exp_sum, Integrand, Observable, TestFunction};
use crate::quadrature::ScalarLaw;
use crate::types::{BiasKind, ComplexValue};

type C = ComplexValue;

/// Second- and first-order coefficients (a, b) of an operator a·φ″ + b·φ′.
pub type Coefficients = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;
pub type Density = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar structure with Γ[φ, χ] = γ·φ′χ′ under a limit law, plus optional
/// explicit theoretical and practical operators. A missing operator is
/// recovered from Ā + A̲ = 2Ã.
#[derive(Clone)]
pub struct DiffusionForm {
    pub law: ScalarLaw,
    pub theoretical: Option<Coefficients>,
    pub practical: Option<Coefficients>,
    pub gamma: Density,
    /// The singular part is a derivation, so both variances equal E[Γ[φ,χ]ψ].
    pub first_order_singular: bool,
}

fn apply(op: &Coefficients, f: &TestFunction, y: f64) -> C {
    let (_, d1, d2) = f.jet1(y);
    let (a, b) = op(y);
    d2 * a + d1 * b
}

impl DiffusionForm {
    /// ⟨Ā φ, χ⟩
    pub fn theoretical(&self, phi: &TestFunction, chi: &TestFunction) -> Option<C> {
        match (&self.theoretical, &self.practical) {
            (Some(op), _) => Some(self.law.expect(|y| apply(op, phi, y) * chi.eval1(y))),
            (None, Some(_)) => Some(-self.practical(phi, chi)? - self.symmetric(phi, chi) * 2.0),
            (None, None) => None,
        }
    }

    /// ⟨A̲ φ, χ⟩
    pub fn practical(&self, phi: &TestFunction, chi: &TestFunction) -> Option<C> {
        match (&self.practical, &self.theoretical) {
            (Some(op), _) => Some(self.law.expect(|y| apply(op, phi, y) * chi.eval1(y))),
            (None, Some(_)) => Some(-self.theoretical(phi, chi)? - self.symmetric(phi, chi) * 2.0),
            (None, None) => None,
        }
    }

    /// Ẽ[φ, χ] = ½ E[γ φ′ χ′]
    pub fn symmetric(&self, phi: &TestFunction, chi: &TestFunction) -> C {
        self.law.expect(|y| phi.deriv1(y) * chi.deriv1(y) * (0.5 * (self.gamma)(y)))
    }

    /// E[Γ[φ, χ] ψ]
    pub fn square_field(&self, phi: &TestFunction, chi: &TestFunction, psi: &TestFunction) -> C {
        self.law.expect(|y| phi.deriv1(y) * chi.deriv1(y) * psi.eval1(y) * (self.gamma)(y))
    }

    fn variance(&self, kind: BiasKind, phi: &TestFunction, chi: &TestFunction, psi: &TestFunction) -> Option<C> {
        let (Some(th), Some(pr)) = (&self.theoretical, &self.practical) else {
            return self.first_order_singular.then(|| self.square_field(phi, chi, psi));
        };
        let (first, second) = match kind {
            BiasKind::TheoreticalVariance => (pr, th),
            _ => (th, pr),
        };
        let phipsi = phi.clone().times(psi.clone());
        Some(self.law.expect(|y| {
            -apply(first, &phipsi, y) * chi.eval1(y) + apply(first, psi, y) * phi.eval1(y) * chi.eval1(y)
                - apply(second, phi, y) * chi.eval1(y) * psi.eval1(y)
        }))
    }

    pub fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C> {
        let (phi, chi) = (phi.as_point()?, chi.as_point()?);
        Some(match kind {
            BiasKind::Theoretical => self.theoretical(phi, chi)?,
            BiasKind::Practical => self.practical(phi, chi)?,
            BiasKind::Symmetric => self.symmetric(phi, chi),
            BiasKind::Singular => (self.theoretical(phi, chi)? - self.practical(phi, chi)?) * 0.5,
            BiasKind::QuarticDiagnostic => C::new(0.0, 0.0),
            BiasKind::SquareFieldPaired => self.square_field(phi, phi, chi),
            BiasKind::TheoreticalVariance | BiasKind::PracticalVariance => {
                let psi = psi.map(|p| p.as_point()).unwrap_or(Some(chi))?;
                self.variance(kind, phi, chi, psi)?
            }
        })
    }

    pub fn kinds(&self) -> Vec<BiasKind> {
        let mut k = vec![BiasKind::Symmetric, BiasKind::QuarticDiagnostic, BiasKind::SquareFieldPaired];
        if self.theoretical.is_some() || self.practical.is_some() {
            k.extend([BiasKind::Theoretical, BiasKind::Practical, BiasKind::Singular]);
        }
        if (self.theoretical.is_some() && self.practical.is_some()) || self.first_order_singular {
            k.extend([BiasKind::TheoreticalVariance, BiasKind::PracticalVariance]);
        }
        k
    }
}

/// Quadratic functional on integrands.
pub type Bilinear = Arc<dyn Fn(&Integrand, &Integrand) -> f64 + Send + Sync>;

/// ⟨Ā e^{iX(f)}, e^{iX(g)}⟩ / E e^{iX(f+g)}, or None where it is not available.
pub type Pairing = Arc<dyn Fn(&Integrand, &Integrand) -> Option<f64> + Send + Sync>;

/// How the theoretical operator acts on exponentials of a Gaussian path structure.
#[derive(Clone)]
pub enum PathDrift {
    /// Ā = A̲ = Ã, so Theoretical = Practical = −Ẽ and the singular part vanishes.
    Symmetric,
    /// Independent additive perturbation: ⟨Ā e^{iX(f)}, e^{iX(g)}⟩ = −½ gamma(f,f) e^{−½ cov(f+g)}.
    Additive,
    /// Explicit pairing of exponentials.
    Pairing(Pairing),
    /// Only the form is known.
    Unknown,
}

/// Gaussian path structure: E e^{iX(h)} = e^{−½ cov(h,h)} and Γ[X(f), X(g)] = gamma(f, g).
#[derive(Clone)]
pub struct GaussianPathForm {
    pub cov: Bilinear,
    pub gamma: Bilinear,
    pub drift: PathDrift,
    /// The singular part is a derivation, so both variances equal E[Γ[φ,χ]ψ].
    pub first_order_singular: bool,
}

impl GaussianPathForm {
    fn characteristic(&self, h: &Integrand) -> f64 {
        (-0.5 * (self.cov)(h, h)).exp()
    }

    /// Ẽ[e^{iX(f)}, e^{iX(g)}] = −½ gamma(f,g) e^{−½ cov(f+g)}
    pub fn symmetric_exp(&self, f: &Integrand, g: &Integrand) -> f64 {
        -0.5 * (self.gamma)(f, g) * self.characteristic(&f.plus(g))
    }

    pub fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C> {
        let a = path_exp_sum(phi)?;
        let b = path_exp_sum(chi)?;
        let sym = || -> C {
            let mut s = C::new(0.0, 0.0);
            for (ca, f) in &a {
                for (cb, g) in &b {
                    s += ca * cb * self.symmetric_exp(f, g);
                }
            }
            s
        };
        let pair = |f: &Integrand, g: &Integrand| -> Option<f64> {
            match &self.drift {
                PathDrift::Additive => Some(-0.5 * (self.gamma)(f, f)),
                PathDrift::Pairing(p) => p(f, g),
                PathDrift::Symmetric | PathDrift::Unknown => None,
            }
        };
        let theoretical = || -> Option<C> {
            let mut s = C::new(0.0, 0.0);
            for (ca, f) in &a {
                for (cb, g) in &b {
                    s += ca * cb * (pair(f, g)? * self.characteristic(&f.plus(g)));
                }
            }
            Some(s)
        };
        match (kind, &self.drift) {
            (BiasKind::Symmetric, _) => Some(sym()),
            (BiasKind::Theoretical | BiasKind::Practical, PathDrift::Symmetric) => Some(-sym()),
            (BiasKind::Singular, PathDrift::Symmetric) => Some(C::new(0.0, 0.0)),
            (_, PathDrift::Unknown) if matches!(kind, BiasKind::Theoretical | BiasKind::Practical | BiasKind::Singular) => None,
            (BiasKind::Theoretical, _) => theoretical(),
            (BiasKind::Practical, _) => Some(-theoretical()? - sym() * 2.0),
            (BiasKind::Singular, _) => Some(theoretical()? + sym()),
            (BiasKind::QuarticDiagnostic, _) => Some(C::new(0.0, 0.0)),
            (BiasKind::SquareFieldPaired, _) => {
                let mut s = C::new(0.0, 0.0);
                for (c1, f1) in &a {
                    for (c2, f2) in &a {
                        for (cb, g) in &b {
                            let h = f1.plus(f2).plus(g);
                            s += c1 * c2 * cb * (-(self.gamma)(f1, f2) * self.characteristic(&h));
                        }
                    }
                }
                Some(s)
            }
            (BiasKind::TheoreticalVariance | BiasKind::PracticalVariance, _) if self.first_order_singular => {
                let w = match psi {
                    Some(p) => path_exp_sum(p)?,
                    None => b.clone(),
                };
                let mut s = C::new(0.0, 0.0);
                for (ca, f) in &a {
                    for (cb, g) in &b {
                        for (cw, h) in &w {
                            let total = f.plus(g).plus(h);
                            s += ca * cb * cw * (-(self.gamma)(f, g) * self.characteristic(&total));
                        }
                    }
                }
                Some(s)
            }
            _ => None,
        }
    }

    pub fn kinds(&self) -> Vec<BiasKind> {
        let mut k = vec![BiasKind::Symmetric, BiasKind::QuarticDiagnostic, BiasKind::SquareFieldPaired];
        if !matches!(self.drift, PathDrift::Unknown) {
            k.extend([BiasKind::Theoretical, BiasKind::Practical, BiasKind::Singular]);
        }
        if self.first_order_singular {
            k.extend([BiasKind::TheoreticalVariance, BiasKind::PracticalVariance]);
        }
        k
    }
}

/// Standard Gaussian vector X with additive perturbation of per-coordinate variance λ·a_q/n.
#[derive(Clone, Debug)]
pub struct GaussianVectorForm {
    pub lambda: f64,
    pub speeds: Vec<f64>,
}

impl GaussianVectorForm {
    fn weighted(&self, f: &[f64], g: &[f64]) -> f64 {
        self.lambda * self.speeds.iter().zip(f.iter().zip(g)).map(|(a, (x, y))| a * x * y).sum::<f64>()
    }

    fn characteristic(h: &[f64]) -> f64 {
        (-0.5 * h.iter().map(|x| x * x).sum::<f64>()).exp()
    }

    fn add(f: &[f64], g: &[f64]) -> Vec<f64> {
        f.iter().zip(g).map(|(a, b)| a + b).collect()
    }

    /// Pairing of two pure exponentials e^{i⟨f,x⟩}, e^{i⟨g,x⟩}.
    fn pair(&self, kind: BiasKind, f: &[f64], g: &[f64]) -> Option<f64> {
        let h = Self::add(f, g);
        let e = Self::characteristic(&h);
        Some(match kind {
            BiasKind::Theoretical => -0.5 * self.weighted(f, f) * e,
            BiasKind::Practical => (-0.5 * self.weighted(f, f) + self.weighted(f, &h)) * e,
            BiasKind::Symmetric => -0.5 * self.weighted(f, g) * e,
            BiasKind::Singular => -0.5 * self.weighted(f, &h) * e,
            BiasKind::QuarticDiagnostic => 0.0,
            _ => return None,
        })
    }

    pub fn closed_form(&self, kind: BiasKind, phi: &Observable, chi: &Observable, psi: Option<&Observable>) -> Option<C> {
        let d = self.speeds.len();
        let a = exp_sum(phi.as_point()?, d)?;
        let b = exp_sum(chi.as_point()?, d)?;
        let mut s = C::new(0.0, 0.0);
        match kind {
            BiasKind::SquareFieldPaired => {
                for (c1, f1) in &a {
                    for (c2, f2) in &a {
                        for (cb, g) in &b {
                            let h = Self::add(&Self::add(f1, f2), g);
                            s += c1 * c2 * cb * (-self.weighted(f1, f2) * Self::characteristic(&h));
                        }
                    }
                }
            }
            BiasKind::TheoreticalVariance | BiasKind::PracticalVariance => {
                let w = match psi {
                    Some(p) => exp_sum(p.as_point()?, d)?,
                    None => b.clone(),
                };
                for (ca, f) in &a {
                    for (cb, g) in &b {
                        for (cw, u) in &w {
                            let h = Self::add(&Self::add(f, g), u);
                            s += ca * cb * cw * (-self.weighted(f, g) * Self::characteristic(&h));
                        }
                    }
                }
            }
            _ => {
                for (ca, f) in &a {
                    for (cb, g) in &b {
                        s += ca * cb * self.pair(kind, f, g)?;
                    }
                }
            }
        }
        Some(s)
    }
}
