//! Monte-Carlo study harness: finite-population generation, Poisson and
//! SRSWOR sampling, replication orchestration and summary metrics.
//!
//! Randomness comes from ChaCha8 substreams keyed by `(seed, replication,
//! role)`, so a replication's draws do not depend on which worker runs it.

mod fixture;
mod metrics;
mod population;
mod sampling;
mod study;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use fixture::{fixture_schema, synthetic_fixture, Fixture, FixtureSpec, FIXTURE_COLUMNS};
pub use metrics::{absolute_metrics, compute_metrics, MetricRow};
pub use population::{generate_outcomes, generate_population, Population, PopulationSpec, TABLE1};
pub use sampling::{draw_poisson_sample, draw_srswor};
pub use study::{
    run_replication, run_replications, run_study, summarize, EstimateRecord, EstimatorMetrics, MetricsTable,
    ParamMetrics, RepRecord, StudyConfig, ThetaMetrics,
};

/// What a substream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamRole {
    Population = 0,
    SampleA = 1,
    SampleB = 2,
    Calibration = 3,
    Fixture = 4,
}

/// Independent generator for `(seed, index, role)`.
pub fn substream(seed: u64, index: u64, role: StreamRole) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((index << 8) | role as u64);
    rng
}
