//! Level 1: crude Monte Carlo estimate of `P(F(X_1) = 0)`.

use std::sync::Arc;

use rayon::prelude::*;

use super::density::{independence_sampler_step, StateDensity};
use super::level::{BatchRecord, EstimateMethod, LevelEstimate};
use super::seeds::{draw_initial, Reservoir};
use super::stats::{clopper_pearson_interval, normal_interval, CrudeInterval, Welford};
use crate::error::{Error, Result};
use crate::oracle::{worker_handle, ReliabilityOracle};
use crate::rng::{Purpose, SeedSource};
use crate::space::{sample_uniform, StatePoint, StateSpace};

/// Samples per crude Monte Carlo chunk; each chunk has its own substream.
pub const CRUDE_CHUNK: u64 = 65_536;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrudeSettings {
    pub samples: u64,
    pub alpha: f64,
    pub interval: CrudeInterval,
    /// Failure states kept per chunk for carryover seeding.
    pub reservoir: usize,
}

#[derive(Debug, Clone)]
pub struct CrudeOutcome {
    pub estimate: LevelEstimate,
    /// Per-chunk reservoirs of failing `X_1`, in chunk order.
    pub failure_samples: Vec<Vec<Vec<StatePoint>>>,
    pub failures_seen: u64,
}

struct Chunk {
    stats: Welford,
    failures: u64,
    kept: Vec<Vec<StatePoint>>,
}

/// Crude Monte Carlo over `settings.samples` draws of `X_1`.
///
/// Under a non-uniform density each chunk runs an independence sampler
/// started from an exact draw, so every chunk is stationary from its first
/// sample.
pub fn crude_mc(
    oracle: &Arc<dyn ReliabilityOracle>,
    space: &StateSpace,
    density: Option<&dyn StateDensity>,
    settings: &CrudeSettings,
    seeds: &SeedSource,
) -> Result<CrudeOutcome> {
    if settings.samples == 0 {
        return Err(Error::InvalidConfig("level-1 sample count must be at least 1".into()));
    }
    let n_chunks = settings.samples.div_ceil(CRUDE_CHUNK);
    let chunks: Vec<Result<Chunk>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let oracle = worker_handle(oracle)?;
            let size = CRUDE_CHUNK.min(settings.samples - c * CRUDE_CHUNK);
            let mut rng = seeds.stream_for(Purpose::Crude, 1, c);
            let mut reservoir = Reservoir::new(settings.reservoir, seeds.stream_for(Purpose::Reservoir, 1, c));
            let mut stats = Welford::new();
            let mut failures = 0u64;
            let mut y = match density {
                Some(f) => Some(draw_initial(space, Some(f), &mut rng)?),
                None => None,
            };
            for i in 0..size {
                let x = match (&mut y, density) {
                    (Some(y), Some(f)) => {
                        if i > 0 {
                            *y = independence_sampler_step(y, f, space, &mut rng)?;
                        }
                        y.clone()
                    }
                    _ => sample_uniform(space, &mut rng)?,
                };
                let failed = !oracle.is_reliable(&x)?;
                stats.update(failed as u8 as f64);
                if failed {
                    failures += 1;
                    reservoir.offer(|| vec![x]);
                }
            }
            Ok(Chunk { stats, failures, kept: reservoir.into_items() })
        })
        .collect();

    let mut total = Welford::new();
    let mut batches = Vec::with_capacity(chunks.len());
    let mut failure_samples = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let chunk = chunk?;
        total.merge(&chunk.stats);
        batches.push(BatchRecord::new(chunk.stats.count(), chunk.failures));
        failure_samples.push(chunk.kept);
    }
    let n = total.count();
    let failures: u64 = batches.iter().map(|b| b.failures).sum();
    let p = failures as f64 / n as f64;
    let (method, (lo, hi)) = match settings.interval {
        CrudeInterval::Normal => (EstimateMethod::CrudeNormal, normal_interval(failures, n, settings.alpha)?),
        CrudeInterval::ClopperPearson => {
            (EstimateMethod::CrudeClopperPearson, clopper_pearson_interval(failures, n, settings.alpha)?)
        }
    };
    let (below_resolution, rule_of_three) = LevelEstimate::resolution(failures, n);
    let estimate = LevelEstimate {
        level: 1,
        method,
        batches,
        estimate: p,
        variance: p * (1.0 - p),
        estimator_variance: p * (1.0 - p) / n as f64,
        alpha: settings.alpha,
        lo,
        hi,
        samples_per_batch: CRUDE_CHUNK.min(n),
        total_samples: n,
        failures,
        oracle_calls: n,
        below_resolution,
        rule_of_three,
        seeds: None,
        acceptance_rate: None,
    };
    Ok(CrudeOutcome { estimate, failure_samples, failures_seen: failures })
}
