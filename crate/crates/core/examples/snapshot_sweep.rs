//! Snapshot-gap and collapse sweep over n for both policies.

use htn::harness::{rsp_experiment, ExperimentPlan};
use htn::{Model, ModelConfig, Policy};

fn main() -> Result<(), htn::Error> {
    let model = Model::validate(&ModelConfig::reference())?;
    for policy in [Policy::Fp, Policy::Slq] {
        let plan = ExperimentPlan::new(model.clone(), policy, vec![25, 100, 400, 1600], 50, 5.0, 11);
        let report = rsp_experiment(&plan)?;
        print!("{}", report.summary());
    }
    Ok(())
}
