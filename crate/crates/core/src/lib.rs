//! Simulation and numerical toolkit for a multiclass many-server queue with
//! strategic join-or-leave customers in the Halfin-Whitt regime.
//!
//! * [`model`]: class parameters, thresholds and the threshold join rule.
//! * [`rng`]: keyed random primitives shared by coupled scenarios.
//! * [`engine`]: event-driven simulation under fixed priority or
//!   serve-the-longest-queue.
//! * [`metrics`]: diffusion scaling, snapshot gaps, payoffs, deviation gains.
//! * [`diffusion`]: Skorohod map and the reflected limit SDEs.
//! * [`harness`]: Monte Carlo sweeps and comparisons.
//! * [`export`]: CSV writers.

pub mod diffusion;
pub mod engine;
pub mod export;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod path;
pub mod rng;

use thiserror::Error;

pub use engine::{EventTrace, Policy, Scenario};
pub use model::{Model, ModelConfig};

/// Any error the library can return.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Engine(#[from] engine::EngineError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Sde(#[from] diffusion::SdeError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
}

impl Error {
    /// True for errors caused by invalid input (configuration, arguments or
    /// plan) rather than by a failure during a run.
    pub fn is_validation(&self) -> bool {
        use engine::EngineError;
        matches!(
            self,
            Error::Model(_)
                | Error::Engine(EngineError::Model(_) | EngineError::InvalidScenario(_) | EngineError::InvalidArgument(_))
                | Error::Sde(_)
                | Error::Harness(harness::HarnessError::InvalidPlan(_))
                | Error::Harness(harness::HarnessError::Sde(_))
        )
    }
}
