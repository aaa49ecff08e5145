//! KS distance between scaled simulation marginals and the limit SDE.

use htn::harness::{compare_marginals, ExperimentPlan};
use htn::diffusion::SdeSettings;
use htn::{Model, ModelConfig, Policy};

fn main() -> Result<(), htn::Error> {
    let model = Model::validate(&ModelConfig::reference())?;
    for policy in [Policy::Fp, Policy::Slq] {
        let mut plan = ExperimentPlan::new(model.clone(), policy, vec![100, 400], 200, 5.0, 5);
        plan.sde = SdeSettings::new(1e-3, 5.0);
        plan.sde_paths = 2000;
        plan.compare_times = vec![2.0, 5.0];
        print!("{}", compare_marginals(&plan)?.summary());
    }
    Ok(())
}
