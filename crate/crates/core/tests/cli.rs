use std::path::Path;

use biaslab::cli::{
    catalog_entries, cmd_run, cmd_verify, expand_suite, grid_csv, main_with_args, parse_grid_csv, parse_manifests,
    resolve_seed, CatalogFilter, GridPoint, EXIT_FAIL, EXIT_PASS, EXIT_USAGE, SEED_ENV,
};
use biaslab::types::Error;
use serde_json::Value;

const GC_MANIFEST: &str = r#"{
  "name": "gc",
  "model": "glivenko_cantelli",
  "functionals": [
    {"kind": "theoretical", "phi": "fourier:p=1", "chi": "const:1"},
    {"kind": "symmetric", "phi": "fourier:p=1", "chi": "fourier:p=-1"}
  ],
  "grid": [256, 1024, 4096],
  "samples": 40000,
  "seed": 12
}"#;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_cli(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("biaslab").chain(args.iter().copied()))
}

#[test]
fn run_writes_report_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write(dir.path(), "gc.json", GC_MANIFEST);
    let outcome = cmd_run(&manifest, None).unwrap();
    assert!(outcome.pass);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("gc.report.json")).unwrap()).unwrap();
    let first = &report["results"][0];
    let mut keys: Vec<&str> = first.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["candidates", "chi", "grid", "kind", "limit", "model", "pass", "phi", "reference", "seed", "z"]);
    assert_eq!(first["model"], "glivenko_cantelli");
    assert_eq!(first["kind"], "theoretical");
    assert_eq!(first["seed"], 12);
    assert_eq!(first["grid"].as_array().unwrap().len(), 3);
    for key in ["n", "re", "im", "stderr"] {
        assert!(first["grid"][0].get(key).is_some());
    }
    for key in ["re", "im", "unc"] {
        assert!(first["limit"][key].is_f64());
    }
    assert_eq!(first["reference"]["present"], true);
    assert!((first["reference"]["re"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(first["z"].as_f64().unwrap() <= 3.0);

    let csv = std::fs::read_to_string(dir.path().join("gc_0.csv")).unwrap();
    assert!(csv.starts_with("n,re,im,stderr\n"));
    assert_eq!(parse_grid_csv(&csv).unwrap(), outcome.reports[0].grid);
    assert!(dir.path().join("gc_1.csv").exists());
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = write(a.path(), "gc.json", GC_MANIFEST);
    cmd_run(&m, Some(a.path())).unwrap();
    let first = std::fs::read(a.path().join("gc.report.json")).unwrap();
    cmd_run(&m, Some(b.path())).unwrap();
    assert_eq!(first, std::fs::read(b.path().join("gc.report.json")).unwrap());
    assert_eq!(std::fs::read(a.path().join("gc_0.csv")).unwrap(), std::fs::read(b.path().join("gc_0.csv")).unwrap());
}

#[test]
fn unknown_model_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "bad.json", r#"{"model": "nonexistent", "functionals": [], "samples": 100}"#);
    let err = cmd_run(&m, None).err().unwrap();
    assert!(err.to_string().contains("manifest.model"), "{err}");
    assert_eq!(run_cli(&["run", "-m", m.to_str().unwrap()]), EXIT_USAGE);
}

#[test]
fn manifest_diagnostics_name_the_offending_field() {
    let cases = [
        (r#"{"model": "glivenko_cantelli", "functionals": [{"kind": "theoretical", "phi": "fourier:q=1", "chi": "const:1"}], "samples": 100}"#, "functionals[0].phi"),
        (r#"{"model": "glivenko_cantelli", "functionals": [{"kind": "sideways", "phi": "fourier:p=1", "chi": "const:1"}], "samples": 100}"#, "functionals[0].kind"),
        (r#"{"model": "glivenko_cantelli", "functionals": [{"kind": "theoretical", "phi": "fourier:p=1", "chi": "const:1"}], "grid": [64, 64], "samples": 100}"#, "grid"),
        (r#"{"model": "glivenko_cantelli", "functionals": [{"kind": "theoretical", "phi": "fourier:p=1", "chi": "const:1"}], "samples": 100, "fit": "cubic"}"#, "fit"),
        (r#"[{"model": "glivenko_cantelli", "functionals": [{"kind": "theoretical", "phi": "fourier:p=1", "chi": "const:1"}], "samples": 100}, {"model": "x"}]"#, "manifest[1]"),
        ("{\n  \"model\": \"glivenko_cantelli\",\n  oops\n}", "line 3"),
    ];
    for (text, needle) in cases {
        match parse_manifests(text) {
            Err(Error::Config(msg)) => assert!(msg.contains(needle), "`{msg}` should mention `{needle}`"),
            other => panic!("expected a config error mentioning {needle}, got {other:?}"),
        }
    }
}

#[test]
fn model_parameter_errors_surface_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(
        dir.path(),
        "p.json",
        r#"{"model": "polya_urn", "params": {"n_max_factor": 0}, "functionals": [{"kind": "theoretical", "phi": "fourier:p=1", "chi": "const:1"}], "samples": 100}"#,
    );
    let err = cmd_run(&m, None).err().unwrap();
    assert!(err.to_string().contains("n_max_factor"), "{err}");
}

#[test]
fn csv_round_trips_extreme_values() {
    let points = vec![
        GridPoint { n: 1, re: 0.1 + 0.2, im: -1e-300, stderr: 5e-324 },
        GridPoint { n: 10, re: 1.0 / 3.0, im: f64::MAX, stderr: 0.0 },
        GridPoint { n: 1 << 40, re: -std::f64::consts::PI, im: 1e300, stderr: 2.5 },
    ];
    assert_eq!(parse_grid_csv(&grid_csv(&points)).unwrap(), points);
    assert!(parse_grid_csv("n,re\n1,2\n").is_err());
    assert!(parse_grid_csv("n,re,im,stderr\n1,2,3\n").is_err());
}

#[test]
fn catalog_lists_every_model_and_filters_by_locality() {
    let all = catalog_entries(&CatalogFilter::default());
    assert_eq!(all.len(), 17);
    assert!(all.iter().all(|e| !e.label.is_empty() && !e.default_grid.is_empty()));
    let polya = all.iter().find(|e| e.id == "polya_urn").unwrap();
    assert!(polya.parameters.contains_key("n_max_factor"));
    let nonlocal = catalog_entries(&CatalogFilter { local: Some(false), ..Default::default() });
    assert!(nonlocal.iter().any(|e| e.id == "mixing_shift"));
    assert!(nonlocal.iter().all(|e| !e.local));
    assert_eq!(run_cli(&["catalog", "--local", "false"]), EXIT_PASS);
}

#[test]
fn suites_expand_and_reject_empty_selections() {
    assert_eq!(expand_suite("structure").unwrap(), ["consistency", "square_field", "locality", "first_order"]);
    assert_eq!(expand_suite("symmetry,consistency").unwrap(), ["consistency", "symmetry"]);
    assert_eq!(expand_suite("all").unwrap().len(), 6);
    assert!(matches!(expand_suite(""), Err(Error::Usage(_))));
    assert!(matches!(expand_suite(" , "), Err(Error::Usage(_))));
    assert_eq!(run_cli(&["verify", "--model", "glivenko_cantelli", "--suite", ""]), EXIT_USAGE);
    assert_eq!(run_cli(&["verify", "--model", "glivenko_cantelli", "--suite", "nonexistent_suite"]), EXIT_USAGE);
    assert_eq!(run_cli(&["verify", "--model", "nope", "--suite", "locality"]), EXIT_USAGE);
}

#[test]
fn verify_structure_suite_passes_on_empirical_cdf() {
    let dir = tempfile::tempdir().unwrap();
    let summary = cmd_verify("glivenko_cantelli", "structure", 4, 20_000, Some(dir.path())).unwrap();
    assert!(summary.pass, "{}", summary.table());
    assert_eq!(summary.reports.len(), 4);
    assert!(dir.path().join("verify.json").exists());
}

#[test]
fn verify_reports_mixing_plateau_as_pass() {
    let summary = cmd_verify("mixing_shift", "locality", 4, 20_000, None).unwrap();
    assert!(summary.pass, "{}", summary.table());
    assert!(summary.reports[0].comparisons.iter().all(|c| c.quantity.contains("plateau")));
    assert_eq!(run_cli(&["verify", "--model", "mixing_shift", "--suite", "locality", "--samples", "20000"]), EXIT_PASS);
}

#[test]
fn failing_reference_exits_1() {
    // indices 2 and 3 are far from the limit; the run completes and reports the miss
    let dir = tempfile::tempdir().unwrap();
    let m = write(
        dir.path(),
        "coarse.json",
        r#"{"model": "glivenko_cantelli", "functionals": [{"kind": "practical", "phi": "fourier:p=1", "chi": "fourier:p=1"}], "grid": [2, 3], "samples": 20000, "seed": 3, "fit": "constant"}"#,
    );
    let code = run_cli(&["run", "-m", m.to_str().unwrap()]);
    let outcome = cmd_run(&m, None).unwrap();
    assert!(!outcome.pass, "{:?}", outcome.reports[0]);
    assert_eq!(code, EXIT_FAIL);
}

#[test]
fn seed_falls_back_to_environment() {
    assert_eq!(resolve_seed(Some(5)).unwrap(), 5);
    std::env::set_var(SEED_ENV, "77");
    assert_eq!(resolve_seed(None).unwrap(), 77);
    std::env::set_var(SEED_ENV, "seventy");
    assert!(matches!(resolve_seed(None), Err(Error::Config(_))));
    std::env::remove_var(SEED_ENV);
    assert_eq!(resolve_seed(None).unwrap(), 1);
}
