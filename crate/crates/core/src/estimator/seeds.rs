//! Seed prefixes for the RWM chains of a level.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::density::{sample_weighted, StateDensity};
use crate::chain::ChainModel;
use crate::error::{Error, Result};
use crate::oracle::{worker_handle, ReliabilityOracle};
use crate::rng::{Purpose, SeedSource, StreamRng};
use crate::space::{sample_uniform, StatePoint, StateSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Fresh independent prefixes, kept if every flag is 0.
    #[default]
    Honest,
    /// Failure prefixes observed while estimating the previous level.
    Carryover,
}

/// Prefixes `(x_1 .. x_{k-1})` with all flags 0, used to start level `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedPool {
    pub level: usize,
    pub prefixes: Vec<Vec<StatePoint>>,
    pub provenance: Provenance,
    pub candidates: u64,
    pub oracle_calls: u64,
}

impl SeedPool {
    pub fn len(&self) -> usize {
        self.prefixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefixes.is_empty()
    }

    /// Seed for batch `i`, cycling when the pool is smaller than the batch count.
    pub fn seed_for(&self, batch: usize) -> &[StatePoint] {
        &self.prefixes[batch % self.prefixes.len()]
    }

    /// Re-evaluates every flag of every prefix.
    pub fn verify(&self, model: &ChainModel, oracle: &dyn ReliabilityOracle) -> Result<bool> {
        for prefix in &self.prefixes {
            for (pos, x) in prefix.iter().enumerate() {
                if model.flag(oracle, &prefix[0], pos, x)? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Uniform reservoir sample (Algorithm R) on its own random stream.
#[derive(Debug, Clone)]
pub struct Reservoir<T> {
    cap: usize,
    seen: u64,
    items: Vec<T>,
    rng: StreamRng,
}

impl<T> Reservoir<T> {
    pub fn new(cap: usize, rng: StreamRng) -> Self {
        Reservoir { cap, seen: 0, items: Vec::with_capacity(cap.min(1024)), rng }
    }

    pub fn offer(&mut self, make: impl FnOnce() -> T) {
        self.seen += 1;
        if self.items.len() < self.cap {
            self.items.push(make());
        } else if self.cap > 0 {
            let j = self.rng.random_range(0..self.seen);
            if (j as usize) < self.cap {
                self.items[j as usize] = make();
            }
        }
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn into_items(self) -> Vec<T> {
        self.items
    }
}

/// Prefixes found by one harvest chunk, with its draw and oracle-call counts.
type HarvestChunk = (Vec<Vec<StatePoint>>, u64, u64);

/// Round-robin over sources in index order: item 0 of every source, then item 1, ...
pub fn stratified_select<T: Clone>(sources: &[Vec<T>], count: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(count);
    let depth = sources.iter().map(Vec::len).max().unwrap_or(0);
    'outer: for d in 0..depth {
        for s in sources {
            if out.len() == count {
                break 'outer;
            }
            if let Some(x) = s.get(d) {
                out.push(x.clone());
            }
        }
    }
    out
}

/// Draws `X_1` from the uniform law or from `f . U`.
pub(crate) fn draw_initial<R: Rng + ?Sized>(
    space: &StateSpace,
    density: Option<&dyn StateDensity>,
    rng: &mut R,
) -> Result<StatePoint> {
    match density {
        None => sample_uniform(space, rng),
        Some(f) => sample_weighted(f, space, rng),
    }
}

/// Grows a fresh prefix of `len` states, stopping at the first `F = 1`.
/// Returns the prefix if every flag is 0, and the oracle calls spent.
pub(crate) fn draw_prefix<R: Rng + ?Sized>(
    model: &ChainModel,
    space: &StateSpace,
    oracle: &dyn ReliabilityOracle,
    density: Option<&dyn StateDensity>,
    len: usize,
    rng: &mut R,
) -> Result<(Option<Vec<StatePoint>>, u64)> {
    let x1 = draw_initial(space, density, rng)?;
    let mut calls = 1;
    if oracle.is_reliable(&x1)? {
        return Ok((None, calls));
    }
    let mut prefix = vec![x1];
    while prefix.len() < len {
        let next = crate::chain::extend(model, space, &prefix, rng)?;
        calls += 1;
        if model.flag(oracle, &prefix[0], prefix.len(), &next)? {
            return Ok((None, calls));
        }
        prefix.push(next);
    }
    Ok((Some(prefix), calls))
}

const HARVEST_CHUNKS_PER_ROUND: u64 = 64;
const HARVEST_MAX_CHUNK: u64 = 65_536;

/// Honest seeds for `level >= 2`: independent prefixes of length `level - 1`
/// drawn until `target` all-failure prefixes are found or `budget` draws are
/// spent. The result does not depend on the number of rayon workers.
#[allow(clippy::too_many_arguments)]
pub fn harvest_honest(
    model: &ChainModel,
    space: &StateSpace,
    oracle: &Arc<dyn ReliabilityOracle>,
    density: Option<&dyn StateDensity>,
    level: usize,
    target: usize,
    budget: u64,
    seeds: &SeedSource,
    purpose: Purpose,
) -> Result<SeedPool> {
    assert!(level >= 2 && level <= model.length, "seed level out of range");
    let len = level - 1;
    let mut found: Vec<Vec<StatePoint>> = Vec::new();
    let (mut draws, mut calls) = (0u64, 0u64);
    let mut round = 0u32;
    while found.len() < target && draws < budget {
        let size = (256u64 << round.min(8)).min(HARVEST_MAX_CHUNK);
        let first = round as u64 * HARVEST_CHUNKS_PER_ROUND;
        let chunks: Vec<Result<HarvestChunk>> = (first..first + HARVEST_CHUNKS_PER_ROUND)
            .into_par_iter()
            .map(|c| {
                let oracle = worker_handle(oracle)?;
                let mut rng = seeds.stream_for(purpose, level, c);
                let (mut hits, mut n, mut calls) = (Vec::new(), 0u64, 0u64);
                while n < size && hits.len() < target {
                    let (prefix, used) = draw_prefix(model, space, oracle.as_ref(), density, len, &mut rng)?;
                    n += 1;
                    calls += used;
                    hits.extend(prefix);
                }
                Ok((hits, n, calls))
            })
            .collect();
        for chunk in chunks {
            let (hits, n, used) = chunk?;
            draws += n;
            calls += used;
            found.extend(hits);
        }
        round += 1;
    }
    if found.is_empty() {
        return Err(Error::LevelUnreachable { level, draws });
    }
    found.truncate(target);
    Ok(SeedPool { level, prefixes: found, provenance: Provenance::Honest, candidates: draws, oracle_calls: calls })
}

/// Carryover seeds: stratified selection over the per-source reservoirs of
/// failure prefixes recorded while estimating `level - 1`.
pub fn carryover_pool(level: usize, sources: Vec<Vec<Vec<StatePoint>>>, seen: u64, target: usize) -> Result<SeedPool> {
    let prefixes = stratified_select(&sources, target);
    if prefixes.is_empty() {
        return Err(Error::LevelUnreachable { level, draws: seen });
    }
    Ok(SeedPool { level, prefixes, provenance: Provenance::Carryover, candidates: seen, oracle_calls: 0 })
}
