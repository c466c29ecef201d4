//! Structural checks of the limit operators over any catalog model.
//!
//! Every check is a pure function of its arguments and reproducible bit for bit.
//! Operator identities are tested only in weak form, smeared against test functions.

use serde::Serialize;

use crate::algebra::Observable;
use crate::catalog::ApproximationModel;
use crate::engine::{
    abs_power_moment, decomposition_residual, estimate_combination, estimate_grid_batch, exchange_moment,
    extrapolate, extrapolate_default, FunctionalSpec,
};
use crate::types::{BiasEstimate, BiasKind, ComplexValue, Error, FitModel, LimitEstimate, Result};

type C = ComplexValue;

const ONE: C = C::new(1.0, 0.0);
/// Agreement threshold in standard deviations.
pub const Z_MAX: f64 = 3.0;
/// Largest per-sample residual of the bias decomposition treated as rounding.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Shared Monte Carlo settings of a check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSettings {
    pub grid: Vec<u64>,
    pub samples: u64,
    pub seed: u64,
}

impl CheckSettings {
    pub fn new(grid: &[u64], samples: u64, seed: u64) -> Self {
        CheckSettings { grid: grid.to_vec(), samples, seed }
    }
}

/// One compared quantity within a check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    /// Functions involved, in the textual grammar.
    pub functions: String,
    pub quantity: String,
    pub value: C,
    pub reference: C,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub check: String,
    pub model: String,
    pub comparisons: Vec<Comparison>,
    pub pass: bool,
    /// True when the model lacks the property the check presupposes.
    pub skipped: bool,
    pub narrative: String,
}

impl VerificationReport {
    fn new(check: &str, model: &dyn ApproximationModel, narrative: &str) -> Self {
        VerificationReport {
            check: check.into(),
            model: model.id().into(),
            comparisons: Vec::new(),
            pass: true,
            skipped: false,
            narrative: narrative.into(),
        }
    }

    fn skip(check: &str, model: &dyn ApproximationModel, why: &str) -> Self {
        let mut r = Self::new(check, model, why);
        r.skipped = true;
        r
    }

    fn push(&mut self, c: Comparison) {
        self.pass &= c.pass;
        self.comparisons.push(c);
    }

    /// Largest z-score among the comparisons (0 when there are none).
    pub fn max_z(&self) -> f64 {
        self.comparisons.iter().map(|c| c.z).fold(0.0, f64::max)
    }
}

fn z_of(diff: C, scale: f64) -> f64 {
    let m = diff.re.abs().max(diff.im.abs());
    if m == 0.0 {
        0.0
    } else if scale > 0.0 {
        m / scale
    } else {
        f64::INFINITY
    }
}

/// Agreement of an extrapolated limit with a reference.
fn agreement(functions: String, quantity: &str, limit: &LimitEstimate, reference: C) -> Comparison {
    let z = limit.z_score(reference);
    Comparison { functions, quantity: quantity.into(), value: limit.value, reference, z, pass: z <= Z_MAX }
}

fn all_zero(points: &[BiasEstimate]) -> bool {
    points.iter().all(|p| p.mean == C::new(0.0, 0.0) && p.stderr == 0.0)
}

/// Slowest log-log decay rate, in powers of the resolution, accepted on the last grid step.
/// Scaled cubic moments of mutual approximations fall like resolution^(−1/4).
pub const MIN_DECAY_RATE: f64 = 0.1;

fn size(p: &BiasEstimate) -> f64 {
    p.mean.norm()
}

fn at_noise_floor(p: &BiasEstimate) -> bool {
    size(p) <= Z_MAX * p.stderr
}

/// No increase beyond noise between neighbours, and the last step either reaches the noise
/// floor or still falls at least like resolution^(−1/10).
pub fn decreasing(points: &[BiasEstimate]) -> bool {
    if points.len() < 2 {
        return false;
    }
    let monotone = points.windows(2).all(|w| size(&w[1]) <= size(&w[0]) + Z_MAX * w[0].stderr.hypot(w[1].stderr));
    let (prev, last) = (&points[points.len() - 2], &points[points.len() - 1]);
    let still_falling = at_noise_floor(last) || {
        let rate = (size(last) / size(prev)).ln() / (last.resolution / prev.resolution).ln();
        rate <= -MIN_DECAY_RATE
    };
    let net = at_noise_floor(&points[0]) || size(last) < size(&points[0]);
    monotone && still_falling && net
}

/// [`decreasing`], with the last value below 0.3 of the first unless either end is already
/// within noise of zero.
pub fn decays(points: &[BiasEstimate]) -> bool {
    if points.is_empty() {
        return false;
    }
    let (first, last) = (&points[0], &points[points.len() - 1]);
    decreasing(points) && (at_noise_floor(first) || at_noise_floor(last) || size(last) < 0.3 * size(first))
}

/// Extrapolated limit is zero: within Z_MAX uncertainties of the default fit, or the values
/// decay along the grid. Returns the fit and its z-score against zero.
pub fn limit_vanishes(points: &[BiasEstimate]) -> Result<(bool, LimitEstimate, f64)> {
    let limit = extrapolate_default(points)?;
    if all_zero(points) {
        return Ok((true, limit, 0.0));
    }
    let z = limit.z_score(C::new(0.0, 0.0));
    Ok((z <= Z_MAX || decays(points), limit, z))
}

/// Trend test for a nonnegative diagnostic that should vanish as n grows. The three-term
/// fit and its z-score against zero are reported alongside.
pub fn vanishing_trend(points: &[BiasEstimate]) -> Result<(bool, LimitEstimate, f64)> {
    if points.len() < 2 {
        return Err(Error::Usage("trend test needs at least two grid points".into()));
    }
    let fit = if points.len() >= 3 { FitModel::SqrtQuadratic } else { FitModel::SqrtLinear };
    let limit = extrapolate(points, fit)?;
    if all_zero(points) {
        return Ok((true, limit, 0.0));
    }
    let z = limit.z_score(C::new(0.0, 0.0));
    Ok((decays(points), limit, z))
}

/// Stable strictly positive level: constant fit clear of zero, each point within noise of it.
pub fn positive_plateau(points: &[BiasEstimate]) -> Result<(bool, LimitEstimate)> {
    let limit = extrapolate(points, FitModel::Constant)?;
    let level = limit.value.re;
    let clear = level > 10.0 * limit.uncertainty && limit.value.im.abs() <= Z_MAX * limit.uncertainty;
    let flat = points.iter().all(|p| (p.mean.re - level).abs() <= Z_MAX * p.stderr.hypot(limit.uncertainty));
    Ok((clear && flat, limit))
}

fn label(fs: &[&Observable]) -> String {
    fs.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", ")
}

fn spec(kind: BiasKind, phi: &Observable, chi: &Observable) -> FunctionalSpec {
    FunctionalSpec::new(kind, phi.clone(), chi.clone())
}

/// Sample-level identity Th + Pr + 2·Sym = 0 on every pair, and the same relation between
/// the extrapolated limits.
pub fn check_h_consistency(
    model: &dyn ApproximationModel,
    pairs: &[(Observable, Observable)],
    settings: &CheckSettings,
) -> Result<VerificationReport> {
    if pairs.len() < 3 {
        return Err(Error::Usage(format!("consistency check needs at least 3 function pairs, got {}", pairs.len())));
    }
    let mut report = VerificationReport::new(
        "consistency",
        model,
        "symmetric operator is the mean of the theoretical and practical operators",
    );
    for (phi, chi) in pairs {
        let functions = label(&[phi, chi]);
        let mut residual: f64 = 0.0;
        for &n in &settings.grid {
            residual = residual.max(decomposition_residual(model, phi, chi, n, settings.samples, settings.seed)?);
        }
        report.push(Comparison {
            functions: functions.clone(),
            quantity: "max per-sample |Th + Pr + 2 Sym|".into(),
            value: C::new(residual, 0.0),
            reference: C::new(0.0, 0.0),
            z: 0.0,
            pass: residual < IDENTITY_TOLERANCE,
        });
        let specs = [
            spec(BiasKind::Theoretical, phi, chi),
            spec(BiasKind::Practical, phi, chi),
            spec(BiasKind::Symmetric, phi, chi),
        ];
        let grids = estimate_grid_batch(model, &specs, &settings.grid, settings.samples, settings.seed)?;
        let limits: Vec<LimitEstimate> = grids.iter().map(|g| extrapolate_default(g)).collect::<Result<_>>()?;
        let sum = limits[0].value + limits[1].value + limits[2].value * 2.0;
        let scale = limits[0].uncertainty + limits[1].uncertainty + 2.0 * limits[2].uncertainty;
        let z = z_of(sum, scale);
        report.push(Comparison {
            functions,
            quantity: "Th + Pr + 2 Sym limits".into(),
            value: sum,
            reference: C::new(0.0, 0.0),
            z,
            pass: z <= Z_MAX,
        });
    }
    Ok(report)
}

/// Paired square field against the combination −Ẽ[φ², χ] + 2Ẽ[φ, φχ] and, when the model
/// has one, against the closed-form E[Γ[φ]χ].
pub fn check_square_field(
    model: &dyn ApproximationModel,
    phi: &Observable,
    chi: &Observable,
    settings: &CheckSettings,
) -> Result<VerificationReport> {
    let mut report =
        VerificationReport::new("square_field", model, "square field equals the polarised symmetric form");
    let functions = label(&[phi, chi]);
    let field = spec(BiasKind::SquareFieldPaired, phi, chi);
    let direct = estimate_grid_batch(model, std::slice::from_ref(&field), &settings.grid, settings.samples, settings.seed)?
        .remove(0);
    let combo = [
        (-ONE, spec(BiasKind::Symmetric, &phi.times(phi), chi)),
        (2.0 * ONE, spec(BiasKind::Symmetric, phi, &phi.times(chi))),
    ];
    let polarised = estimate_combination(model, &combo, &settings.grid, settings.samples, settings.seed)?;
    let (ld, lp) = (extrapolate_default(&direct)?, extrapolate_default(&polarised)?);
    let z = z_of(ld.value - lp.value, ld.uncertainty.hypot(lp.uncertainty));
    report.push(Comparison {
        functions: functions.clone(),
        quantity: "paired square field vs symmetric-form combination".into(),
        value: ld.value,
        reference: lp.value,
        z,
        pass: z <= Z_MAX,
    });
    if let Some(reference) = field.closed_form(model) {
        report.push(agreement(functions, "paired square field vs closed form", &ld, reference));
    }
    Ok(report)
}

/// Scaled moments |Δφ|^λ, λ ∈ {3, 4, 6}: vanishing for local models, a positive plateau of
/// the quartic otherwise.
pub fn check_locality(
    model: &dyn ApproximationModel,
    phis: &[Observable],
    settings: &CheckSettings,
) -> Result<VerificationReport> {
    if phis.len() < 2 {
        return Err(Error::Usage(format!("locality check needs at least 2 functions, got {}", phis.len())));
    }
    let local = model.flags().expected_local;
    let mut report = VerificationReport::new(
        "locality",
        model,
        if local {
            "scaled higher moments of the error vanish (local form)"
        } else {
            "scaled quartic moment stays at a positive level (non-local form)"
        },
    );
    for phi in phis {
        let functions = phi.to_string();
        let powers: &[f64] = if local { &[3.0, 4.0, 6.0] } else { &[4.0] };
        for &p in powers {
            let points = abs_power_moment(model, phi, p, &settings.grid, settings.samples, settings.seed)?;
            let quantity = format!("alpha E|dphi|^{p}");
            if local {
                let (mut pass, limit, z) = vanishing_trend(&points)?;
                if p != 4.0 {
                    // other powers of the family are only required to fall along the grid
                    pass = all_zero(&points) || decreasing(&points);
                }
                report.push(Comparison {
                    functions: functions.clone(),
                    quantity: format!("{quantity} vanishes"),
                    value: limit.value,
                    reference: C::new(0.0, 0.0),
                    z,
                    pass,
                });
            } else {
                let (pass, limit) = positive_plateau(&points)?;
                let quartic = spec(BiasKind::QuarticDiagnostic, phi, &Observable::constant(1.0));
                let (reference, z) = match quartic.closed_form(model) {
                    Some(r) => (r, limit.z_score(r)),
                    None => (C::new(0.0, 0.0), 0.0),
                };
                report.push(Comparison {
                    functions: functions.clone(),
                    quantity: format!("{quantity} plateau"),
                    value: limit.value,
                    reference,
                    z,
                    pass,
                });
            }
        }
    }
    Ok(report)
}

/// Theoretical and practical variances coincide, and the singular operator satisfies the
/// Leibniz rule ⟨/A[φψ] − φ/A[ψ] − ψ/A[φ], χ⟩ = 0.
pub fn check_first_order_singular(
    model: &dyn ApproximationModel,
    phi: &Observable,
    psi: &Observable,
    chi: &Observable,
    settings: &CheckSettings,
) -> Result<VerificationReport> {
    if !model.flags().expected_local {
        return Ok(VerificationReport::skip(
            "first_order",
            model,
            "variances coincide only for local forms; model is not local",
        ));
    }
    let mut report =
        VerificationReport::new("first_order", model, "singular operator is first order: the two variances coincide");
    let functions = label(&[phi, psi, chi]);
    let tv = FunctionalSpec::new(BiasKind::TheoreticalVariance, phi.clone(), psi.clone()).with_psi(chi.clone());
    let pv = FunctionalSpec { kind: BiasKind::PracticalVariance, ..tv.clone() };
    let (s, g) = (settings, &settings.grid);
    let gap = estimate_combination(model, &[(ONE, tv), (-ONE, pv)], g, s.samples, s.seed)?;
    let (pass, limit, z) = limit_vanishes(&gap)?;
    report.push(Comparison {
        functions: functions.clone(),
        quantity: "theoretical minus practical variance".into(),
        value: limit.value,
        reference: C::new(0.0, 0.0),
        z,
        pass,
    });
    let defect = [
        (ONE, spec(BiasKind::Singular, &phi.times(psi), chi)),
        (-ONE, spec(BiasKind::Singular, psi, &phi.times(chi))),
        (-ONE, spec(BiasKind::Singular, phi, &psi.times(chi))),
    ];
    let points = estimate_combination(model, &defect, g, s.samples, s.seed)?;
    let (pass, limit, z) = limit_vanishes(&points)?;
    report.push(Comparison {
        functions,
        quantity: "derivation defect of the singular operator".into(),
        value: limit.value,
        reference: C::new(0.0, 0.0),
        z,
        pass,
    });
    Ok(report)
}

/// For asymptotically symmetric models: αₙE[φ(Yₙ)ψ(Y) − φ(Y)ψ(Yₙ)] → 0 and the theoretical
/// and practical limits agree.
pub fn check_asymptotic_symmetry(
    model: &dyn ApproximationModel,
    phi: &Observable,
    psi: &Observable,
    settings: &CheckSettings,
) -> Result<VerificationReport> {
    if !model.flags().asymptotically_symmetric {
        return Ok(VerificationReport::skip("symmetry", model, "model is not flagged asymptotically symmetric"));
    }
    let mut report =
        VerificationReport::new("symmetry", model, "exchange of limit and approximation is asymptotically neutral");
    let functions = label(&[phi, psi]);
    let (s, g) = (settings, &settings.grid);
    let exchange = exchange_moment(model, phi, psi, g, s.samples, s.seed)?;
    let (pass, limit, z) = limit_vanishes(&exchange)?;
    report.push(Comparison {
        functions: functions.clone(),
        quantity: "exchange moment".into(),
        value: limit.value,
        reference: C::new(0.0, 0.0),
        z,
        pass,
    });
    let gap = estimate_combination(
        model,
        &[(ONE, spec(BiasKind::Theoretical, phi, psi)), (-ONE, spec(BiasKind::Practical, phi, psi))],
        g,
        s.samples,
        s.seed,
    )?;
    let (pass, limit, z) = limit_vanishes(&gap)?;
    report.push(Comparison {
        functions,
        quantity: "theoretical minus practical".into(),
        value: limit.value,
        reference: C::new(0.0, 0.0),
        z,
        pass,
    });
    Ok(report)
}

/// For approximations that are deterministic functions of the limit: the symmetric form
/// vanishes and Th = −Pr. Theoretical limits are also compared with closed forms when present.
pub fn check_deterministic(
    model: &dyn ApproximationModel,
    phis: &[Observable],
    settings: &CheckSettings,
) -> Result<VerificationReport> {
    if !model.flags().deterministic_u {
        return Ok(VerificationReport::skip(
            "deterministic",
            model,
            "approximation is not a deterministic function of the limit",
        ));
    }
    if phis.is_empty() {
        return Err(Error::Usage("deterministic check needs at least one function".into()));
    }
    let mut report = VerificationReport::new(
        "deterministic",
        model,
        "symmetric form vanishes; theoretical and practical operators are opposite",
    );
    let (s, g) = (settings, &settings.grid);
    let chis: Vec<Observable> = std::iter::once(Observable::constant(1.0)).chain(phis.iter().cloned()).collect();
    for phi in phis {
        for chi in &chis {
            let functions = label(&[phi, chi]);
            let specs = [
                spec(BiasKind::Symmetric, phi, chi),
                spec(BiasKind::Theoretical, phi, chi),
                spec(BiasKind::Practical, phi, chi),
            ];
            let grids = estimate_grid_batch(model, &specs, g, s.samples, s.seed)?;
            let sym = extrapolate_default(&grids[0])?;
            let first = &grids[0][0];
            let vanishes = sym.value.norm() < 10.0 * first.stderr || sym.z_score(C::new(0.0, 0.0)) <= Z_MAX;
            report.push(Comparison {
                functions: functions.clone(),
                quantity: "symmetric form vanishes".into(),
                value: sym.value,
                reference: C::new(0.0, 0.0),
                z: if all_zero(&grids[0]) { 0.0 } else { sym.value.norm() / first.stderr.max(f64::MIN_POSITIVE) },
                pass: vanishes || all_zero(&grids[0]),
            });
            let (th, pr) = (extrapolate_default(&grids[1])?, extrapolate_default(&grids[2])?);
            let z = z_of(th.value + pr.value, th.uncertainty.hypot(pr.uncertainty));
            report.push(Comparison {
                functions: functions.clone(),
                quantity: "theoretical plus practical".into(),
                value: th.value + pr.value,
                reference: C::new(0.0, 0.0),
                z,
                pass: z <= Z_MAX,
            });
            if let Some(reference) = specs[1].closed_form(model) {
                report.push(agreement(functions, "theoretical vs closed form", &th, reference));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(n: u64, v: f64, se: f64) -> BiasEstimate {
        BiasEstimate { n, alpha: 1.0, resolution: n as f64, mean: C::new(v, 0.0), stderr: se, samples: 1000, seed: 0 }
    }

    #[test]
    fn one_over_n_decay_is_vanishing() {
        let pts: Vec<_> = [64u64, 256, 1024].iter().map(|&n| pt(n, 3.0 / n as f64, 1e-4)).collect();
        assert!(vanishing_trend(&pts).unwrap().0);
    }

    #[test]
    fn level_is_not_vanishing_but_plateaus() {
        let pts: Vec<_> = [64u64, 256, 1024].iter().map(|&n| pt(n, 6.0, 0.02)).collect();
        assert!(!vanishing_trend(&pts).unwrap().0);
        assert!(positive_plateau(&pts).unwrap().0);
    }

    #[test]
    fn falling_into_noise_counts_as_decay() {
        // heavy-tailed last point: within noise of zero but above 0.3 of the first
        let pts = [pt(32, 0.45, 0.12), pt(128, 0.38, 0.13), pt(512, 0.064, 0.015), pt(2048, 0.30, 0.28)];
        assert!(decays(&pts));
        let rising = [pt(32, 0.45, 0.12), pt(128, 0.5, 0.13), pt(512, 0.6, 0.015), pt(2048, 0.8, 0.28)];
        assert!(!decays(&rising));
    }

    #[test]
    fn zeros_vanish_exactly() {
        let pts: Vec<_> = [2u64, 4, 6].iter().map(|&n| pt(n, 0.0, 0.0)).collect();
        let (pass, _, z) = vanishing_trend(&pts).unwrap();
        assert!(pass);
        assert_eq!(z, 0.0);
    }
}
