//! Scaled mean-square error of the Euler scheme for dY = 2Y dt at t = 0.25,
//! extrapolated and compared with 2e.
use biaslab::catalog::default_model;
use biaslab::engine::{error_moment, extrapolate};
use biaslab::state::Metric;
use biaslab::types::{FitModel, Result};

fn main() -> Result<()> {
    let model = default_model("euler_sde")?;
    let points = [32u64, 128, 512]
        .iter()
        .map(|&n| error_moment(&*model, n, 40_000, 9, 2.0, Metric::At(0.25)))
        .collect::<Result<Vec<_>>>()?;
    for p in &points {
        println!("n={:<4} {:.4} ± {:.4}", p.n, p.mean.re, p.stderr);
    }
    let limit = extrapolate(&points, FitModel::SqrtLinear)?;
    let reference = 2.0 * std::f64::consts::E;
    println!("limit {:.3} ± {:.3}, 2e = {reference:.3}", limit.value.re, limit.uncertainty);
    Ok(())
}
