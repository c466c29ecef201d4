use biaslab::algebra::Observable;
use biaslab::catalog::default_model;
use biaslab::cli::{grid_csv, parse_grid_csv, GridPoint};
use biaslab::engine::{decomposition_residual, estimate, estimate_batch, extrapolate, FunctionalSpec};
use biaslab::grammar::parse_observable;
use biaslab::types::{BiasEstimate, BiasKind, ComplexValue as C, FitModel};
use proptest::prelude::*;

const FOURIER_MODELS: [&str; 4] = ["glivenko_cantelli", "polya_urn", "mixing_shift", "decimal_truncation"];
const REAL_LINE_MODELS: [&str; 5] =
    ["gaussian_perturbation", "independent_series", "cond_gaussian_mean", "stochastic_integral", "clt_mutual"];

fn close(a: C, b: C, rel: f64) -> bool {
    (a - b).norm() <= rel * (1.0 + a.norm().max(b.norm()))
}

fn pair() -> impl Strategy<Value = (&'static str, Observable, Observable)> {
    let fourier = (0..FOURIER_MODELS.len(), -4i64..=4, -4i64..=4)
        .prop_map(|(m, p, q)| (FOURIER_MODELS[m], Observable::fourier(p), Observable::fourier(q)));
    let line = (0..REAL_LINE_MODELS.len(), -3.0f64..3.0, -3.0f64..3.0)
        .prop_map(|(m, u, v)| (REAL_LINE_MODELS[m], Observable::iexp(&[u]), Observable::iexp(&[v])));
    prop_oneof![fourier, line]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn decomposition_holds_sample_by_sample((id, phi, chi) in pair(), seed in 0u64..1000) {
        let model = default_model(id).unwrap();
        let n = model.default_grid()[0];
        let r = decomposition_residual(&*model, &phi, &chi, n, 200, seed).unwrap();
        prop_assert!(r < 1e-12, "{id}: residual {r}");
    }

    #[test]
    fn symmetric_form_is_symmetric_and_consistent((id, phi, chi) in pair(), seed in 0u64..1000) {
        let model = default_model(id).unwrap();
        let n = model.default_grid()[0];
        let spec = |k, a: &Observable, b: &Observable| FunctionalSpec::new(k, a.clone(), b.clone());
        let est = estimate_batch(&*model, &[
            spec(BiasKind::Symmetric, &phi, &chi),
            spec(BiasKind::Symmetric, &chi, &phi),
            spec(BiasKind::Theoretical, &phi, &chi),
            spec(BiasKind::Practical, &phi, &chi),
            spec(BiasKind::Singular, &phi, &chi),
        ], n, 300, seed).unwrap();
        prop_assert!(close(est[0].mean, est[1].mean, 1e-12));
        prop_assert!(close(est[2].mean + est[3].mean, -est[0].mean * 2.0, 1e-10));
        prop_assert!(close(est[4].mean, est[2].mean + est[0].mean, 1e-10));
    }

    #[test]
    fn paired_square_field_matches_its_expansion((id, phi, chi) in pair(), seed in 0u64..1000) {
        // SFP(φ, χ) = 2·Sym(φ, φχ) − Sym(φ², χ) holds for every sample
        let model = default_model(id).unwrap();
        let n = model.default_grid()[0];
        let sq = Observable::Product(vec![phi.clone(), phi.clone()]);
        let mixed = Observable::Product(vec![phi.clone(), chi.clone()]);
        let est = estimate_batch(&*model, &[
            FunctionalSpec::new(BiasKind::SquareFieldPaired, phi.clone(), chi.clone()),
            FunctionalSpec::new(BiasKind::Symmetric, phi.clone(), mixed),
            FunctionalSpec::new(BiasKind::Symmetric, sq, chi.clone()),
        ], n, 300, seed).unwrap();
        prop_assert!(close(est[0].mean, est[1].mean * 2.0 - est[2].mean, 1e-10), "{} vs {}", est[0].mean, est[1].mean * 2.0 - est[2].mean);
    }

    #[test]
    fn quartic_diagnostic_is_nonnegative((id, phi, _chi) in pair(), seed in 0u64..1000) {
        let model = default_model(id).unwrap();
        let n = model.default_grid()[0];
        let q = estimate(&*model, &FunctionalSpec::new(BiasKind::QuarticDiagnostic, phi, Observable::constant(1.0)), n, 200, seed).unwrap();
        prop_assert!(q.mean.re >= 0.0 && q.mean.im == 0.0);
    }

    #[test]
    fn exact_trends_extrapolate_exactly(c0 in -10.0f64..10.0, c1 in -10.0f64..10.0, c2 in -10.0f64..10.0) {
        let point = |n: u64, v: f64| BiasEstimate {
            n, alpha: n as f64, resolution: n as f64, mean: C::new(v, -v), stderr: 0.0, samples: 1000, seed: 0,
        };
        let f = |n: u64| { let h = 1.0 / (n as f64).sqrt(); c0 + c1 * h + c2 * h * h };
        let pts: Vec<_> = [16u64, 64, 256, 1024].iter().map(|&n| point(n, f(n))).collect();
        let l = extrapolate(&pts, FitModel::SqrtQuadratic).unwrap();
        prop_assert!((l.value.re - c0).abs() < 1e-8 && (l.value.im + c0).abs() < 1e-8, "{} vs {c0}", l.value);
    }

    #[test]
    fn csv_round_trips_any_finite_grid(rows in prop::collection::vec((1u64..u64::MAX, any::<f64>(), any::<f64>(), 0.0f64..1e300), 0..12)) {
        let points: Vec<GridPoint> = rows.into_iter()
            .filter(|(_, re, im, _)| re.is_finite() && im.is_finite())
            .map(|(n, re, im, stderr)| GridPoint { n, re, im, stderr })
            .collect();
        prop_assert_eq!(parse_grid_csv(&grid_csv(&points)).unwrap(), points);
    }

    #[test]
    fn specifiers_round_trip_through_display(p in -9i64..9, u in -5.0f64..5.0, v in -5.0f64..5.0) {
        for o in [Observable::fourier(p), Observable::iexp(&[u, v]), Observable::Product(vec![Observable::fourier(p), Observable::iexp(&[u])])] {
            // products of point functions are normalised on parsing, so compare printed forms
            let text = o.to_string();
            prop_assert_eq!(parse_observable(&text).unwrap().to_string(), text);
        }
    }
}
