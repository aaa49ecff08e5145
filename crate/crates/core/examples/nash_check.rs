//! Sampled-deviator equilibrium check: how often does deviating from the
//! threshold rule save more than eps?

use htn::harness::{nash_experiment, ExperimentPlan};
use htn::{Model, ModelConfig, Policy};

fn main() -> Result<(), htn::Error> {
    let model = Model::validate(&ModelConfig::reference())?;
    for n in [100, 400, 1600] {
        let mut plan = ExperimentPlan::new(model.clone(), Policy::Fp, vec![n], 5, 5.0, 1);
        plan.eps = 0.15;
        plan.deviators = 100;
        let nash = nash_experiment(&plan)?.nash.expect("nash summary");
        println!(
            "n = {n}: violation fraction {:.3} [{:.3}, {:.3}]; at eps = 0.05: {:.3}, at eps = 0.5: {:.3}",
            nash.fraction,
            nash.ci_low,
            nash.ci_high,
            nash.violation_fraction(0.05),
            nash.violation_fraction(0.5)
        );
    }
    Ok(())
}
