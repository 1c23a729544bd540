//! Estimators for the levels of the product decomposition.

pub mod crude;
pub mod density;
pub mod level;
pub mod pipeline;
pub mod product;
pub mod rwm;
pub mod seeds;
pub mod stats;

pub use crude::{crude_mc, CrudeOutcome, CrudeSettings, CRUDE_CHUNK};
pub use density::{independence_sampler_step, sample_weighted, Gaussian, StateDensity, Uniform};
pub use level::{BatchRecord, EstimateMethod, LevelEstimate, SeedSummary};
pub use pipeline::{
    run_diagnostics, run_level, run_subset_simulation, DiagnosticsSettings, LevelDiagnostics, LevelRun, SamplingSettings,
    SubsetOutcome, SubsetProblem,
};
pub use product::{combine_product, time_between_failures, variance_bound_check, ProductBound, TimeBetweenFailures, VarianceBoundCheck};
pub use rwm::{rwm_level_batch, BatchOutcome, RwmSettings};
pub use seeds::{carryover_pool, harvest_honest, stratified_select, Provenance, Reservoir, SeedPool};
pub use stats::{
    clopper_pearson_interval, normal_interval, student_t_interval, student_t_interval_from, CrudeInterval, Welford,
};
