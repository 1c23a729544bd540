//! End-to-end subset simulation: crude Monte Carlo for level 1, seeded RWM
//! batches for every later level, then the product bound.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::crude::{crude_mc, CrudeSettings};
use super::density::StateDensity;
use super::level::{EstimateMethod, LevelEstimate, SeedSummary};
use super::product::{combine_product, ProductBound};
use super::rwm::{rwm_level_batch, RwmSettings};
use super::seeds::{carryover_pool, harvest_honest, Provenance, Reservoir, SeedPool};
use super::stats::{batch_mean_and_variance, check_alpha, student_t_interval_from, CrudeInterval};
use crate::chain::ChainModel;
use crate::diagnostics::{compare, make_pilots, PilotAccumulator, PilotBasis, PilotFunction, DEFAULT_PILOTS, MIN_HONEST_SAMPLES};
use crate::error::{Error, Result};
use crate::oracle::{worker_handle, ReliabilityOracle};
use crate::rng::{Purpose, SeedSource};
use crate::space::{PerturbationRadii, StatePoint, StateSpace};

pub const DEFAULT_HONEST_BUDGET: u64 = 100_000_000;

fn default_honest_budget() -> u64 {
    DEFAULT_HONEST_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSettings {
    /// Crude Monte Carlo draws for level 1.
    pub level1_samples: u64,
    /// Batches `M` per RWM level.
    pub batches: usize,
    /// Counted steps `K` per batch.
    pub steps_per_batch: u64,
    #[serde(default)]
    pub burn_in: u64,
    /// Per-level confidence.
    pub alpha: f64,
    #[serde(default)]
    pub seed_mode: Provenance,
    #[serde(default)]
    pub crude_interval: CrudeInterval,
    /// Maximum draws spent on one honest seed harvest.
    #[serde(default = "default_honest_budget")]
    pub honest_budget: u64,
}

impl SamplingSettings {
    pub fn validate(&self) -> Result<()> {
        if self.level1_samples == 0 || self.steps_per_batch == 0 || self.honest_budget == 0 {
            return Err(Error::InvalidConfig("sample counts must be at least 1".into()));
        }
        if self.batches < 2 {
            return Err(Error::TooFewBatches { needed: 2, got: self.batches });
        }
        check_alpha(self.alpha)
    }
}

fn default_pilots() -> usize {
    DEFAULT_PILOTS
}

fn default_diag_alpha() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSettings {
    #[serde(default = "default_pilots")]
    pub pilots: usize,
    #[serde(default)]
    pub basis: PilotBasis,
    /// Honest sample size; defaults to `max(M, 30)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub honest_samples: Option<usize>,
    #[serde(default = "default_diag_alpha")]
    pub alpha: f64,
}

impl Default for DiagnosticsSettings {
    fn default() -> Self {
        DiagnosticsSettings { pilots: DEFAULT_PILOTS, basis: PilotBasis::Trig, honest_samples: None, alpha: 0.99 }
    }
}

impl DiagnosticsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.pilots == 0 {
            return Err(Error::InvalidConfig("at least one pilot function is required".into()));
        }
        if let Some(h) = self.honest_samples {
            if h < MIN_HONEST_SAMPLES {
                return Err(Error::TooFewHonestSamples { needed: MIN_HONEST_SAMPLES, got: h });
            }
        }
        check_alpha(self.alpha)
    }

    fn honest_target(&self, batches: usize) -> usize {
        self.honest_samples.unwrap_or(batches.max(MIN_HONEST_SAMPLES))
    }
}

/// Everything that defines the probability being estimated.
#[derive(Clone)]
pub struct SubsetProblem {
    pub space: StateSpace,
    pub model: ChainModel,
    pub r_rwm: PerturbationRadii,
    pub oracle: Arc<dyn ReliabilityOracle>,
    /// Density of `X_1` with respect to the uniform law; `None` is uniform.
    pub density: Option<Arc<dyn StateDensity>>,
}

impl SubsetProblem {
    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        self.model.r_p.validate(&self.space)?;
        self.r_rwm.validate(&self.space)
    }

    fn density(&self) -> Option<&dyn StateDensity> {
        self.density.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub level: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<crate::diagnostics::DiagnosticVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unavailable: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SubsetOutcome {
    pub levels: Vec<LevelEstimate>,
    pub product: ProductBound,
    pub oracle_calls: u64,
    pub diagnostics: Vec<LevelDiagnostics>,
}

/// Result of running the `M` batches of one level.
#[derive(Debug, Clone)]
pub struct LevelRun {
    pub estimate: LevelEstimate,
    /// Per-batch reservoirs of failure prefixes, in batch order.
    pub carryover: Vec<Vec<Vec<StatePoint>>>,
    pub carryover_seen: u64,
    pub pilots: Option<PilotAccumulator>,
}

/// Runs every batch of `level` from `pool`. Batch `i` draws from substream
/// `(Batch, level, i)`, so results do not depend on the worker count.
pub fn run_level(
    problem: &SubsetProblem,
    settings: &SamplingSettings,
    level: usize,
    pool: &SeedPool,
    pilots: Option<&[PilotFunction]>,
    carry_cap: usize,
    seeds: &SeedSource,
) -> Result<LevelRun> {
    let m = settings.batches;
    let rwm = RwmSettings {
        r_rwm: &problem.r_rwm,
        steps: settings.steps_per_batch,
        burn_in: settings.burn_in,
        density: problem.density(),
    };
    let model = &problem.model;
    let batches: Vec<Result<_>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let oracle = worker_handle(&problem.oracle)?;
            let mut rng = seeds.stream_for(Purpose::Batch, level, i as u64);
            let mut reservoir = Reservoir::new(carry_cap, seeds.stream_for(Purpose::Reservoir, level, i as u64));
            let mut acc = pilots.map(|p| PilotAccumulator::new(p.len()));
            let mut observe = |y: &[StatePoint]| {
                if let (Some(acc), Some(p)) = (acc.as_mut(), pilots) {
                    acc.observe(p, model.anchor(y));
                }
            };
            let out = rwm_level_batch(
                model,
                &problem.space,
                oracle.as_ref(),
                pool.seed_for(i),
                &rwm,
                &mut rng,
                (carry_cap > 0).then_some(&mut reservoir),
                &mut observe,
            )?;
            let seen = reservoir.seen();
            Ok((out, reservoir.into_items(), seen, acc))
        })
        .collect();

    let mut records = Vec::with_capacity(m);
    let mut carryover = Vec::with_capacity(m);
    let (mut calls, mut proposed, mut accepted, mut seen) = (0u64, 0u64, 0u64, 0u64);
    let mut pilot_acc = pilots.map(|p| PilotAccumulator::new(p.len()));
    for batch in batches {
        let (out, kept, s, acc) = batch?;
        records.push(out.record);
        calls += out.oracle_calls;
        proposed += out.proposed;
        accepted += out.accepted;
        seen += s;
        carryover.push(kept);
        if let (Some(total), Some(acc)) = (pilot_acc.as_mut(), acc) {
            total.merge(&acc);
        }
    }
    let means: Vec<f64> = records.iter().map(|r| r.mean).collect();
    let (estimate, variance) = batch_mean_and_variance(&means)?;
    let (lo, hi) = student_t_interval_from(estimate, variance, m, settings.alpha)?;
    let failures: u64 = records.iter().map(|r| r.failures).sum();
    let total = settings.steps_per_batch * m as u64;
    let (below_resolution, rule_of_three) = LevelEstimate::resolution(failures, total);
    Ok(LevelRun {
        estimate: LevelEstimate {
            level,
            method: EstimateMethod::BatchedRwm,
            batches: records,
            estimate,
            variance,
            estimator_variance: variance / m as f64,
            alpha: settings.alpha,
            lo,
            hi,
            samples_per_batch: settings.steps_per_batch,
            total_samples: total,
            failures,
            oracle_calls: calls,
            below_resolution,
            rule_of_three,
            seeds: Some(SeedSummary {
                provenance: pool.provenance,
                distinct: pool.len(),
                candidates: pool.candidates,
                oracle_calls: pool.oracle_calls,
            }),
            acceptance_rate: Some(accepted as f64 / proposed as f64),
        },
        carryover,
        carryover_seen: seen,
        pilots: pilot_acc,
    })
}

pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if workers == 0 {
        return Err(Error::InvalidConfig("worker count must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn honest_pool(problem: &SubsetProblem, settings: &SamplingSettings, level: usize, target: usize, seeds: &SeedSource, purpose: Purpose) -> Result<SeedPool> {
    harvest_honest(
        &problem.model,
        &problem.space,
        &problem.oracle,
        problem.density(),
        level,
        target,
        settings.honest_budget,
        seeds,
        purpose,
    )
}

fn diagnose_with(
    problem: &SubsetProblem,
    settings: &SamplingSettings,
    diag: &DiagnosticsSettings,
    level: usize,
    pilots: &[PilotFunction],
    rwm: &PilotAccumulator,
    seeds: &SeedSource,
) -> LevelDiagnostics {
    let result = honest_pool(problem, settings, level, diag.honest_target(settings.batches), seeds, Purpose::Diagnostics)
        .and_then(|pool| {
            let mut honest = PilotAccumulator::new(pilots.len());
            for prefix in &pool.prefixes {
                honest.observe(pilots, problem.model.anchor(prefix));
            }
            compare(&honest, rwm, diag.alpha)
        });
    match result {
        Ok(v) => LevelDiagnostics { level, verdict: Some(v), unavailable: None },
        Err(e) => LevelDiagnostics { level, verdict: None, unavailable: Some(e.to_string()) },
    }
}

/// Estimates `P(A_1 .. A_N)` and its product bound.
pub fn run_subset_simulation(
    problem: &SubsetProblem,
    settings: &SamplingSettings,
    diagnostics: Option<&DiagnosticsSettings>,
    seed: u64,
    workers: usize,
) -> Result<SubsetOutcome> {
    problem.validate()?;
    settings.validate()?;
    if let Some(d) = diagnostics {
        d.validate()?;
    }
    with_workers(workers, || run_inner(problem, settings, diagnostics, seed))
}

fn run_inner(
    problem: &SubsetProblem,
    settings: &SamplingSettings,
    diagnostics: Option<&DiagnosticsSettings>,
    seed: u64,
) -> Result<SubsetOutcome> {
    let seeds = SeedSource::new(seed);
    let n = problem.model.length;
    let m = settings.batches;
    let carry = settings.seed_mode == Provenance::Carryover;
    let crude = crude_mc(
        &problem.oracle,
        &problem.space,
        problem.density(),
        &CrudeSettings {
            samples: settings.level1_samples,
            alpha: settings.alpha,
            interval: settings.crude_interval,
            reservoir: if carry && n > 1 { m } else { 0 },
        },
        &seeds,
    )?;
    let mut calls = crude.estimate.oracle_calls;
    let mut levels = vec![crude.estimate];
    let mut sources = crude.failure_samples;
    let mut seen = crude.failures_seen;
    let pilots = diagnostics
        .map(|d| make_pilots(&problem.space, d.pilots, d.basis, &mut seeds.stream_for(Purpose::Pilots, 0, 0)));
    let mut diag_out = Vec::new();
    for k in 2..=n {
        let pool = if carry {
            carryover_pool(k, std::mem::take(&mut sources), seen, m)?
        } else {
            honest_pool(problem, settings, k, m, &seeds, Purpose::Harvest)?
        };
        let carry_cap = if carry && k < n { m } else { 0 };
        let run = run_level(problem, settings, k, &pool, pilots.as_deref(), carry_cap, &seeds)?;
        calls += pool.oracle_calls + run.estimate.oracle_calls;
        if let (Some(d), Some(acc)) = (diagnostics, run.pilots.as_ref()) {
            let pilots = pilots.as_deref().expect("pilots exist with diagnostics");
            diag_out.push(diagnose_with(problem, settings, d, k, pilots, acc, &seeds));
        }
        sources = run.carryover;
        seen = run.carryover_seen;
        levels.push(run.estimate);
    }
    let product = combine_product(&levels, n)?;
    Ok(SubsetOutcome { levels, product, oracle_calls: calls, diagnostics: diag_out })
}

/// Pilot comparison only: for every level `k >= 2`, honest seeds start `M`
/// RWM batches whose states are checked against a separate honest sample.
pub fn run_diagnostics(
    problem: &SubsetProblem,
    settings: &SamplingSettings,
    diag: &DiagnosticsSettings,
    seed: u64,
    workers: usize,
) -> Result<Vec<LevelDiagnostics>> {
    problem.validate()?;
    settings.validate()?;
    diag.validate()?;
    with_workers(workers, || {
        let seeds = SeedSource::new(seed);
        let pilots = make_pilots(&problem.space, diag.pilots, diag.basis, &mut seeds.stream_for(Purpose::Pilots, 0, 0));
        let mut out = Vec::new();
        for k in 2..=problem.model.length {
            let pool = honest_pool(problem, settings, k, settings.batches, &seeds, Purpose::Harvest)?;
            let run = run_level(problem, settings, k, &pool, Some(&pilots), 0, &seeds)?;
            out.push(diagnose_with(problem, settings, diag, k, &pilots, run.pilots.as_ref().expect("pilots"), &seeds));
        }
        Ok(out)
    })
}
