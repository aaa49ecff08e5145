//! One reference run under each policy: invariant check, queue statistics
//! and the first few customers.

use htn::engine::{check_trace, run};
use htn::export::customers_csv;
use htn::metrics::run_metrics;
use htn::{Model, ModelConfig, Policy, Scenario};

fn main() -> Result<(), htn::Error> {
    let model = Model::validate(&ModelConfig::reference())?;
    let (n, horizon, seed) = (100, 5.0, 7);
    for policy in [Policy::Fp, Policy::Slq] {
        let trace = run(&model, policy, Scenario::Reference, n, horizon, seed, 0)?;
        let check = check_trace(&trace, &model);
        let m = run_metrics(&trace, &model, horizon, 0)?;
        println!("policy {policy}: {} events, invariants ok: {}", check.events, check.ok());
        println!("  drained at t = {:.4}", trace.end_time);
        for i in 0..2 {
            println!(
                "  class {}: max Qhat {:.3}, reneged {}, snapshot gap {:.3}",
                i + 1,
                m.max_queue[i],
                m.reneged[i],
                m.gamma[i]
            );
        }
        println!("  collapse metric {:.3}", m.ssc);
    }
    let trace = run(&model, Policy::Fp, Scenario::Reference, n, horizon, seed, 0)?;
    println!("first customers (FP):");
    for line in customers_csv(&trace).lines().take(6) {
        println!("  {line}");
    }
    Ok(())
}
