//! Load a model config, print the derived load split, thresholds and the
//! join rule at a few queue lengths.
//!
//!     cargo run --example validate_config -- configs/three_class_table.json

use htn::Model;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "configs/c_star.json".into());
    let model = Model::load(&path)?;
    println!("{path}: {} classes", model.num_classes());
    for (i, c) in model.classes().iter().enumerate() {
        println!(
            "  class {}: lambda {} mu {} rho {:.4} r {} theta {:.6}",
            i + 1,
            c.lambda,
            c.mu,
            model.rho()[i],
            c.r,
            model.theta(i)
        );
    }
    match model.m() {
        Some(m) => println!("first class at the least threshold: {}", m + 1),
        None => println!("thresholds not ordered; SLQ is unavailable"),
    }

    let n = 100;
    println!("join decisions at n = {n} (ceiling sqrt(n) theta):");
    for i in 0..model.num_classes() {
        let ceiling = (n as f64).sqrt() * model.theta(i);
        let q = ceiling.floor() as u64;
        println!(
            "  class {}: ceiling {ceiling:.3}, q = {q} -> {}, q = {} -> {}",
            i + 1,
            model.join_decision(i, q, n),
            q + 1,
            model.join_decision(i, q + 1, n)
        );
    }
    Ok(())
}
