//! Sup norm and modulus of continuity of the scaled state across n: the
//! two ingredients of C-tightness.

use htn::engine::run;
use htn::metrics::scale;
use htn::path::modulus;
use htn::{Model, ModelConfig, Policy, Scenario};

fn main() -> Result<(), htn::Error> {
    let model = Model::validate(&ModelConfig::reference())?;
    let horizon = 5.0;
    for n in [25, 100, 400, 1600] {
        let (mut sup, mut w) = (0.0, 0.0);
        let reps = 20;
        for rep in 0..reps {
            let trace = run(&model, Policy::Fp, Scenario::Reference, n, horizon, 9, rep)?;
            let scaled = scale(&trace, &model, horizon)?;
            sup += scaled.x.sup_norm(horizon) / reps as f64;
            w += modulus(&scaled.x, 0.05, horizon) / reps as f64;
        }
        println!("n = {n:5}: mean sup |Xhat| {sup:.3}, mean w(Xhat, 0.05) {w:.3}");
    }
    Ok(())
}
