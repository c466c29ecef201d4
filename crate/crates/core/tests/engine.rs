use biaslab::catalog::{all_models, default_model};
use biaslab::engine::{estimate, estimate_batch, estimate_combination, estimate_grid, FunctionalSpec};
use biaslab::grammar::parse_observable;
use biaslab::quadrature::ks_distance;
use biaslab::rng::StreamKey;
use biaslab::state::State;
use biaslab::types::{BiasKind, ComplexValue as C, Error};

fn obs(s: &str) -> biaslab::algebra::Observable {
    parse_observable(s).unwrap()
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let model = default_model("stochastic_integral").unwrap();
    let spec = FunctionalSpec::new(BiasKind::Theoretical, obs("iexp:u=1"), obs("iexp:u=-0.5"));
    // enough samples to span several chunks
    let run = || estimate_grid(&*model, &spec, &[16, 64], 20_000, 17).unwrap();
    let one = with_threads(1, run);
    let three = with_threads(3, run);
    for (a, b) in one.iter().zip(&three) {
        assert_eq!(a.mean.re.to_bits(), b.mean.re.to_bits());
        assert_eq!(a.mean.im.to_bits(), b.mean.im.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }
}

#[test]
fn batch_matches_individual_estimates() {
    let model = default_model("glivenko_cantelli").unwrap();
    let specs = [
        FunctionalSpec::new(BiasKind::Theoretical, obs("fourier:p=1"), obs("fourier:p=2")),
        FunctionalSpec::new(BiasKind::Symmetric, obs("fourier:p=-1"), obs("fourier:p=1")),
        FunctionalSpec::new(BiasKind::QuarticDiagnostic, obs("fourier:p=2"), obs("const:1")),
    ];
    let batch = estimate_batch(&*model, &specs, 128, 5000, 3).unwrap();
    for (spec, b) in specs.iter().zip(&batch) {
        assert_eq!(&estimate(&*model, spec, 128, 5000, 3).unwrap(), b);
    }
}

#[test]
fn estimates_are_linear_in_the_first_function() {
    let model = default_model("gaussian_perturbation").unwrap();
    let (f, g, chi) = (obs("iexp:u=1"), obs("iexp:u=-0.5"), obs("iexp:u=0.3"));
    let sum = obs("sum(iexp:u=1, scale[2](iexp:u=-0.5))");
    for kind in [BiasKind::Theoretical, BiasKind::Practical, BiasKind::Singular] {
        let est = |phi: &biaslab::algebra::Observable| {
            estimate(&*model, &FunctionalSpec::new(kind, phi.clone(), chi.clone()), 64, 3000, 5).unwrap().mean
        };
        let lhs = est(&sum);
        let rhs = est(&f) + est(&g) * 2.0;
        assert!((lhs - rhs).norm() < 1e-10 * (1.0 + rhs.norm()), "{kind}: {lhs} vs {rhs}");
    }
}

#[test]
fn combination_matches_sum_of_parts() {
    let model = default_model("independent_series").unwrap();
    let th = FunctionalSpec::new(BiasKind::Theoretical, obs("iexp:u=1"), obs("iexp:u=-1"));
    let pr = FunctionalSpec { kind: BiasKind::Practical, ..th.clone() };
    let combo = estimate_combination(&*model, &[(C::new(1.0, 0.0), th.clone()), (C::new(0.0, 2.0), pr.clone())], &[32, 64], 4000, 9)
        .unwrap();
    for (k, n) in [32u64, 64].into_iter().enumerate() {
        let parts = estimate(&*model, &th, n, 4000, 9).unwrap().mean + estimate(&*model, &pr, n, 4000, 9).unwrap().mean * C::new(0.0, 2.0);
        assert!((combo[k].mean - parts).norm() < 1e-12);
    }
}

#[test]
fn too_few_samples_and_bad_grids_are_usage_errors() {
    let model = default_model("glivenko_cantelli").unwrap();
    let spec = FunctionalSpec::new(BiasKind::Theoretical, obs("fourier:p=1"), obs("const:1"));
    assert!(matches!(estimate(&*model, &spec, 64, 10, 1), Err(Error::Usage(_))));
    assert!(matches!(estimate_grid(&*model, &spec, &[], 1000, 1), Err(Error::Usage(_))));
    assert!(matches!(estimate_grid(&*model, &spec, &[64, 32], 1000, 1), Err(Error::Usage(_))));
}

#[test]
fn limit_marginals_follow_the_limit_law() {
    let draws = 20_000usize;
    // 0.1% critical value of the one-sample KS statistic
    let critical = 1.95 / (draws as f64).sqrt();
    let mut checked = 0;
    for model in all_models() {
        let Some(cdf) = model.limit_cdf() else { continue };
        let n = model.default_grid()[0];
        let key = StreamKey::new(23, model.id(), n);
        let mut sample = model.new_sample(n);
        let mut ys: Vec<f64> = (0..draws as u64)
            .map(|i| {
                model.sample_into(n, &mut key.stream(i), &mut sample);
                match &sample.limit {
                    State::Scalar(y) => *y,
                    other => panic!("{} has a limit CDF but non-scalar state {other:?}", model.id()),
                }
            })
            .collect();
        let d = ks_distance(&mut ys, &*cdf);
        assert!(d < critical, "{}: KS distance {d:.4} exceeds {critical:.4}", model.id());
        checked += 1;
    }
    assert!(checked >= 8, "only {checked} models expose a limit law");
}

#[test]
fn donsker_symmetric_form_follows_the_endpoint_pairing() {
    // for f(t) = t the endpoint pairing −½σ²f(1)² e^{−2σ²∫f²} and the pairing
    // −½σ²∫f² e^{−2σ²∫f²} differ by a factor 3
    let model = default_model("donsker_mutual").unwrap();
    let phi = obs("intexp:f=poly[0,1]");
    let spec = FunctionalSpec::new(BiasKind::Symmetric, phi.clone(), phi);
    let est = estimate(&*model, &spec, 4000, 4000, 29).unwrap();
    let damp = (-2.0f64 / 3.0).exp();
    let endpoint = -0.5 * damp;
    let integral = -0.5 / 3.0 * damp;
    let closed = spec.closed_form(&*model).unwrap();
    assert!((closed.re - endpoint).abs() < 1e-9 && closed.im.abs() < 1e-9, "closed form {closed}");
    let z = |r: f64| (est.mean.re - r).abs() / est.stderr;
    assert!(z(endpoint) < 4.0, "MC {} ± {} vs endpoint {endpoint}", est.mean, est.stderr);
    assert!(z(integral) > 10.0, "MC {} ± {} cannot separate from {integral}", est.mean, est.stderr);
}
