//! Piecewise-constant vector paths.

/// Right-continuous step path in `R^dim`: the value recorded at `times[k]`
/// holds on `[times[k], times[k + 1])`, and the last value holds forever.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPath {
    dim: usize,
    times: Vec<f64>,
    data: Vec<f64>,
}

impl StepPath {
    pub fn new(dim: usize) -> Self {
        StepPath {
            dim,
            times: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, len: usize) -> Self {
        StepPath {
            dim,
            times: Vec::with_capacity(len),
            data: Vec::with_capacity(len * dim),
        }
    }

    /// Builds a scalar path.
    pub fn scalar(times: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(times.len(), values.len());
        StepPath {
            dim: 1,
            times,
            data: values,
        }
    }

    /// Appends a breakpoint. Times must be non-decreasing.
    pub fn push(&mut self, t: f64, value: &[f64]) {
        assert_eq!(value.len(), self.dim, "dimension mismatch");
        debug_assert!(self.times.last().is_none_or(|&last| last <= t));
        self.times.push(t);
        self.data.extend_from_slice(value);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    /// Value at time `t` (the first value before the first breakpoint).
    pub fn value_at(&self, t: f64) -> &[f64] {
        let k = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        self.point(k)
    }

    /// One coordinate as a scalar path.
    pub fn component(&self, i: usize) -> StepPath {
        StepPath::scalar(self.times.clone(), self.points().map(|p| p[i]).collect())
    }

    /// Coordinate sums `1 . f`.
    pub fn sums(&self) -> Vec<f64> {
        self.points().map(|p| p.iter().sum()).collect()
    }

    /// `sup_{t <= horizon} |f(t)|` over breakpoints.
    pub fn sup_norm(&self, horizon: f64) -> f64 {
        self.times
            .iter()
            .zip(self.points())
            .take_while(|(&t, _)| t <= horizon)
            .map(|(_, p)| norm(p))
            .fold(0.0, f64::max)
    }

    /// `sup_t |f(t) - g(t)|` for paths on the same breakpoints.
    pub fn distance(&self, other: &StepPath) -> f64 {
        assert_eq!(self.times, other.times, "paths must share breakpoints");
        self.points()
            .zip(other.points())
            .map(|(a, b)| dist(a, b))
            .fold(0.0, f64::max)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Modulus of continuity
/// `w_T(f, window) = sup { |f(u) - f(s)| : 0 <= s < u <= s + window <= T }`,
/// exact for step paths starting at time 0.
///
/// A pair of pieces `a < b` is reachable iff some `s` in piece `a` with
/// `s <= T - window` has `t_b <= s + window`, which reduces to
/// `max(t_a, t_b - window) < t_{a+1}` and `max(t_a, t_b - window) <= T - window`.
pub fn modulus(path: &StepPath, window: f64, horizon: f64) -> f64 {
    assert!(window > 0.0 && window <= horizon, "need 0 < window <= horizon");
    let times = path.times();
    let last_s = horizon - window;
    let mut best = 0.0_f64;
    for a in 0..times.len() {
        if times[a] > last_s {
            break;
        }
        let next = times.get(a + 1).copied().unwrap_or(f64::INFINITY);
        for b in a + 1..times.len() {
            let lower = times[a].max(times[b] - window);
            if lower >= next || lower > last_s {
                break;
            }
            best = best.max(dist(path.point(a), path.point(b)));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Grid scan over `(s, u)` pairs.
    fn modulus_oracle(path: &StepPath, window: f64, horizon: f64, step: f64) -> f64 {
        let k = (horizon / step).round() as usize;
        let w = (window / step).round() as usize;
        let mut best = 0.0_f64;
        for s in 0..=k {
            for u in s + 1..=(s + w).min(k) {
                if s + w > k {
                    break;
                }
                let fs = path.value_at(s as f64 * step);
                let fu = path.value_at(u as f64 * step);
                best = best.max(dist(fs, fu));
            }
        }
        best
    }

    #[test]
    fn constant_path_has_zero_modulus() {
        let p = StepPath::scalar(vec![0.0, 1.0, 2.0], vec![4.0, 4.0, 4.0]);
        assert_eq!(modulus(&p, 0.5, 3.0), 0.0);
    }

    #[test]
    fn two_step_example() {
        let p = StepPath::scalar(vec![0.0, 1.0, 1.5], vec![0.0, 1.0, 3.0]);
        let oracle = modulus_oracle(&p, 0.6, 2.0, 0.01);
        assert_eq!(oracle, 3.0);
        assert_eq!(modulus(&p, 0.6, 2.0), 3.0);
        // The window must fit before T: only s <= 1.4 counts, and from
        // s = 1.0 we see the jump of 2.
        assert_eq!(modulus(&p, 0.6, 1.6), 3.0);
        assert_eq!(modulus(&p, 0.4, 2.0), 2.0);
    }

    #[test]
    fn ramp_modulus_is_slope_times_window() {
        let step = 1e-3;
        let k = 2000;
        let slope = 1.5;
        let p = StepPath::scalar(
            (0..=k).map(|i| i as f64 * step).collect(),
            (0..=k).map(|i| slope * i as f64 * step).collect(),
        );
        let w = modulus(&p, 0.3, 2.0);
        assert!((w - slope * 0.3).abs() <= slope * step + 1e-12, "w = {w}");
    }

    #[test]
    fn random_paths_match_grid_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let steps = rng.random_range(1..12);
            let mut times = vec![0.0];
            // Breakpoints on a 0.1 grid, so the 0.05 oracle grid resolves
            // every strict inequality.
            for _ in 0..steps {
                let last: f64 = *times.last().unwrap();
                times.push(last + rng.random_range(1..6) as f64 * 0.1);
            }
            let values: Vec<f64> = times.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = StepPath::scalar(times, values);
            let window = rng.random_range(1..10) as f64 * 0.1 + 0.05;
            let horizon = 3.0;
            let oracle = modulus_oracle(&p, window, horizon, 0.05);
            let exact = modulus(&p, window, horizon);
            assert!((oracle - exact).abs() < 1e-12, "oracle {oracle} exact {exact}");
        }
    }

    #[test]
    fn sup_norm_and_lookup() {
        let mut p = StepPath::new(2);
        p.push(0.0, &[3.0, 4.0]);
        p.push(1.0, &[0.0, 1.0]);
        p.push(2.0, &[6.0, 8.0]);
        assert_eq!(p.sup_norm(1.5), 5.0);
        assert_eq!(p.sup_norm(2.0), 10.0);
        assert_eq!(p.value_at(1.2), &[0.0, 1.0]);
        assert_eq!(p.value_at(-1.0), &[3.0, 4.0]);
        assert_eq!(p.sums(), vec![7.0, 1.0, 14.0]);
    }
}
