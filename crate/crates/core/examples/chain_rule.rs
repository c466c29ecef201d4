//! Quadratic error of F(f) = f² against the square field of f, for the empirical CDF model.
use biaslab::algebra::{OuterFn, TestFunction};
use biaslab::catalog::default_model;
use biaslab::engine::chain_rule_check;

fn main() -> biaslab::types::Result<()> {
    let model = default_model("glivenko_cantelli")?;
    let f = TestFunction::fourier(1).re();
    let r = chain_rule_check(&*model, OuterFn::Polynomial(vec![0.0, 0.0, 1.0]), vec![f], 4096, 50_000, 5)?;
    println!("2 Sym(F∘f) = {:.5} ± {:.5}", r.lhs.mean, r.lhs.stderr);
    println!("square field side = {:.5} (closed form: {})", r.rhs, r.rhs_closed_form);
    println!("z = {:.2}", r.z_score());
    Ok(())
}
