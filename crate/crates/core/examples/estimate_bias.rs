//! Theoretical bias of the empirical CDF approximation for the first Fourier mode,
//! estimated on a grid and extrapolated to n → ∞.
use biaslab::catalog::default_model;
use biaslab::engine::{estimate_grid, extrapolate_default, FunctionalSpec};
use biaslab::grammar::parse_observable;
use biaslab::types::{BiasKind, Result};

fn main() -> Result<()> {
    let model = default_model("glivenko_cantelli")?;
    let spec = FunctionalSpec::new(BiasKind::Theoretical, parse_observable("fourier:p=1")?, parse_observable("const:1")?);
    let points = estimate_grid(&*model, &spec, &[256, 1024, 4096], 50_000, 7)?;
    for p in &points {
        println!("n={:<5} {:.4} ± {:.4}", p.n, p.mean, p.stderr);
    }
    let limit = extrapolate_default(&points)?;
    println!("limit {:.4} ± {:.4} ({})", limit.value, limit.uncertainty, limit.fit_model.describe());
    if let Some(r) = spec.closed_form(&*model) {
        println!("closed form {r:.4}, z = {:.2}", limit.z_score(r));
    }
    Ok(())
}
