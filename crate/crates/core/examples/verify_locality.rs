//! Locality check on a local model and on the doubling map, whose quartic moment plateaus.
use biaslab::catalog::default_model;
use biaslab::verify::{check_locality, CheckSettings};

fn main() -> biaslab::types::Result<()> {
    for id in ["glivenko_cantelli", "mixing_shift"] {
        let model = default_model(id)?;
        let settings = CheckSettings::new(&model.default_grid(), 10_000, 3);
        let report = check_locality(&*model, &model.default_functions(), &settings)?;
        println!("{id}: pass={} ({})", report.pass, report.narrative);
        for c in &report.comparisons {
            println!("  {:<40} {:.4} vs {:.4}  z={:.2}", c.quantity, c.value, c.reference, c.z);
        }
    }
    Ok(())
}
