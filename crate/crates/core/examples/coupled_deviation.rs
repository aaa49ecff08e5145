//! A single customer plays the opposite of the threshold rule on the same
//! randomness as everyone else; compare its cost in both worlds.

use htn::engine::{run, run_coupled};
use htn::metrics::{nash_gap, payoff};
use htn::model::Action;
use htn::{Model, ModelConfig, Policy, Scenario};

fn main() -> Result<(), htn::Error> {
    let model = Model::validate(&ModelConfig::reference())?;
    let (n, horizon, seed) = (400, 5.0, 3);
    let reference = run(&model, Policy::Fp, Scenario::Reference, n, horizon, seed, 0)?;
    let class2 = || reference.customers[1].iter().filter(|c| c.arrival <= horizon);
    // An immediately served joiner, the joiner who saw the longest queue,
    // and a customer who left.
    let picks = [
        class2().find(|c| c.wait() == Some(0.0)),
        class2().filter(|c| c.action == Action::Join).max_by_key(|c| c.observed_queue),
        class2().find(|c| c.action == Action::Leave),
    ];
    println!("class 2 ceiling: {:.1} queued", (n as f64).sqrt() * model.theta(1));
    for c in picks.into_iter().flatten() {
        let (class, j) = (c.class, c.j);
        let (reference, deviator) = run_coupled(&model, Policy::Fp, n, horizon, seed, 0, class, j)?;
        let follow = payoff(&reference, class, j, horizon, &model)?;
        let deviate = payoff(&deviator, class, j, horizon, &model)?;
        let gap = nash_gap(&reference, &deviator, class, j, horizon, &model)?;
        println!(
            "customer ({}, {j}) at t = {:.3} saw {} queued: rule says {}, cost {:.3} ({:?}); deviating costs {:.3} ({:?}); saving from deviating {:.3}",
            class + 1,
            c.arrival,
            c.observed_queue,
            c.action,
            follow.value,
            follow.case,
            deviate.value,
            deviate.case,
            gap
        );
    }
    Ok(())
}
