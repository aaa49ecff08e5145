//! Keyed, counter-based random primitives.
//!
//! Every draw is a pure function of a [`StreamKey`]: there is no generator
//! state to share, so a reference run and a deviator run that ask for the
//! service requirement of customer `(i, j)` get the same number no matter in
//! which order they ask.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{IaDist, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Interarrival = 1,
    Service = 2,
    InitialService = 3,
    /// Per-path seed of the Gaussian increments of the limit SDE.
    Brownian = 4,
    /// Deviator identities sampled by the Nash experiment.
    DeviatorSample = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub replication: u64,
    pub purpose: Purpose,
    pub class_index: u64,
    pub customer_index: u64,
}

impl StreamKey {
    pub fn new(seed: u64, replication: u64, purpose: Purpose, class_index: usize, customer_index: u64) -> Self {
        StreamKey {
            seed,
            replication,
            purpose,
            class_index: class_index as u64,
            customer_index,
        }
    }

    /// 64 well-mixed bits for this key.
    pub fn bits(&self) -> u64 {
        let mut h = mix64(self.seed ^ 0x243F_6A88_85A3_08D3);
        for word in [
            self.replication,
            self.purpose as u64,
            self.class_index,
            self.customer_index,
        ] {
            h = mix64(h.wrapping_add(GOLDEN) ^ mix64(word.wrapping_add(0x1319_8A2E_0370_7344)));
        }
        h
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn uniform(&self) -> f64 {
        ((self.bits() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Unit-mean exponential, strictly positive.
    pub fn exponential(&self) -> f64 {
        -(self.uniform().ln())
    }

    /// Seeds a sequential generator from this key.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut h = self.bits();
        for chunk in seed.chunks_mut(8) {
            chunk.copy_from_slice(&h.to_le_bytes());
            h = mix64(h.wrapping_add(GOLDEN));
        }
        ChaCha8Rng::from_seed(seed)
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one value for `key`. Inter-arrival keys follow the class law,
/// everything else is unit exponential.
pub fn draw(key: StreamKey, ia: IaDist) -> f64 {
    match key.purpose {
        Purpose::Interarrival => ia_draw(key, ia),
        _ => key.exponential(),
    }
}

fn ia_draw(key: StreamKey, ia: IaDist) -> f64 {
    match ia {
        IaDist::Exponential => key.exponential(),
        IaDist::Deterministic => 1.0,
        IaDist::Uniform(a) => 1.0 - 0.5 * a + a * key.uniform(),
    }
}

/// Source of the stochastic primitives the simulator consumes.
///
/// Draws are indexed by customer identity; `customer` is the 1-based serial
/// number `j`, `k` numbers the initially busy class-`i` servers from 1.
pub trait Primitives {
    /// Unit-mean inter-arrival time preceding customer `(class, customer)`.
    fn interarrival(&self, class: usize, customer: u64) -> f64;
    /// Unit-exponential work of customer `(class, customer)`.
    fn workload(&self, class: usize, customer: u64) -> f64;
    /// Unit-exponential work of the `k`-th class customer in service at time 0.
    fn initial_workload(&self, class: usize, k: u64) -> f64;
}

/// Production primitives: keyed draws for one `(seed, replication)`.
#[derive(Debug, Clone)]
pub struct KeyedPrimitives {
    seed: u64,
    replication: u64,
    ia: Vec<IaDist>,
}

impl KeyedPrimitives {
    pub fn new(model: &Model, seed: u64, replication: u64) -> Self {
        KeyedPrimitives {
            seed,
            replication,
            ia: model.classes().iter().map(|c| c.ia_dist).collect(),
        }
    }

    fn key(&self, purpose: Purpose, class: usize, index: u64) -> StreamKey {
        StreamKey::new(self.seed, self.replication, purpose, class, index)
    }
}

impl Primitives for KeyedPrimitives {
    fn interarrival(&self, class: usize, customer: u64) -> f64 {
        ia_draw(self.key(Purpose::Interarrival, class, customer), self.ia[class])
    }

    fn workload(&self, class: usize, customer: u64) -> f64 {
        self.key(Purpose::Service, class, customer).exponential()
    }

    fn initial_workload(&self, class: usize, k: u64) -> f64 {
        self.key(Purpose::InitialService, class, k).exponential()
    }
}

/// Arrival epochs of class `i` in the `n`-th system that fall in
/// `[0, horizon]`: cumulative sums of `IA_i(j) / lambda_i^n`.
pub fn arrival_times(
    model: &Model,
    i: usize,
    n: u64,
    primitives: &impl Primitives,
    horizon: f64,
) -> Result<Vec<f64>, crate::model::ModelError> {
    let rate = model.arrival_rate_n(i, n)?;
    let mut out = Vec::new();
    let mut t = 0.0;
    for j in 1.. {
        t += primitives.interarrival(i, j) / rate;
        if t > horizon {
            break;
        }
        out.push(t);
    }
    Ok(out)
}
