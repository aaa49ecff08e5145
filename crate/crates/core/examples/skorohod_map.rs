//! Reflect a two-dimensional step path so that its coordinate sum stays
//! below a bound, pushing only the last coordinate down.

use htn::diffusion::skorohod_map;
use htn::path::StepPath;

fn main() {
    let mut f = StepPath::new(2);
    for (t, a, b) in [(0.0, 0.0, 0.0), (0.5, 0.2, 0.3), (1.0, 0.1, 0.6), (1.5, -0.4, 0.2), (2.0, 0.3, 0.5)] {
        f.push(t, &[a, b]);
    }
    let bound = 0.4;
    let r = skorohod_map(&f, bound);
    println!("bound {bound}");
    println!("    t      f_1    f_2  |  y_1    y_2    1.y    g");
    for k in 0..f.len() {
        let (x, y) = (f.point(k), r.y.point(k));
        println!(
            "{:5.2}  {:6.2} {:6.2}  | {:6.2} {:6.2} {:6.2} {:6.2}",
            f.times()[k],
            x[0],
            x[1],
            y[0],
            y[1],
            y[0] + y[1],
            r.g[k]
        );
    }
}
