//! Euler paths of the reflected limit diffusions, with the implied queue
//! split and the regulator.

use htn::diffusion::{simulate_sde, SdeSettings};
use htn::{Model, ModelConfig, Policy};

fn main() -> Result<(), htn::Error> {
    let model = Model::validate(&ModelConfig::reference())?;
    let settings = SdeSettings::new(1e-3, 5.0);
    for policy in [Policy::Fp, Policy::Slq] {
        let paths = simulate_sde(policy, &model, &[0.0, 0.0], &settings, 5, 200)?;
        let at_bound = paths
            .iter()
            .map(|p| p.x.points().filter(|x| x.iter().sum::<f64>() >= p.bound - 1e-9).count())
            .sum::<usize>() as f64
            / paths.iter().map(|p| p.x.len()).sum::<usize>() as f64;
        let mean_l = paths.iter().map(|p| *p.l.last().unwrap()).sum::<f64>() / paths.len() as f64;
        let last = &paths[0];
        let k = last.x.len() - 1;
        println!("policy {policy}: bound {:.2}", last.bound);
        println!("  fraction of grid points on the boundary {at_bound:.3}, mean L(5) {mean_l:.3}");
        println!("  path 0 at t = 5: X = {:?}, Q = {:?}", last.x.point(k), last.q.point(k));
    }
    Ok(())
}
