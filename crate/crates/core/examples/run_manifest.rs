//! Writes a manifest, runs it through the batch driver and reads the plot CSV back.
use biaslab::cli::{cmd_run, parse_grid_csv};

fn main() -> biaslab::types::Result<()> {
    let dir = tempfile::tempdir()?;
    let manifest = dir.path().join("gc.json");
    std::fs::write(
        &manifest,
        r#"{
  "name": "gc_theoretical",
  "model": "glivenko_cantelli",
  "functionals": [{"kind": "theoretical", "phi": "fourier:p=1", "chi": "const:1"}],
  "grid": [256, 1024, 4096],
  "samples": 20000,
  "seed": 42
}"#,
    )?;
    let outcome = cmd_run(&manifest, None)?;
    for r in &outcome.reports {
        println!("{}", r.summary_line());
    }
    let csv = std::fs::read_to_string(dir.path().join("gc_theoretical_0.csv"))?;
    print!("{csv}");
    assert_eq!(parse_grid_csv(&csv)?, outcome.reports[0].grid);
    Ok(())
}
