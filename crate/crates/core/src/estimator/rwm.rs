//! Levels `k >= 2`: one batch of the random walk Metropolis estimator.
//!
//! The chain lives on failure prefixes `y = (y_1 .. y_{k-1})`. Each step draws
//! the next element after `y` and records whether it fails too, then proposes
//! a move of `y_1`, regrows the rest of the prefix under the chain model, and
//! accepts only if every regrown flag is 0 (weighted by the density ratio of
//! the first element when `X_1` is not uniform).

use rand::Rng;

use super::density::{checked, StateDensity};
use super::level::BatchRecord;
use super::seeds::Reservoir;
use crate::chain::{extend, ChainModel};
use crate::error::{Error, Result};
use crate::oracle::ReliabilityOracle;
use crate::rng::StreamRng;
use crate::space::{perturb, PerturbationRadii, StatePoint, StateSpace};

#[derive(Clone, Copy)]
pub struct RwmSettings<'a> {
    pub r_rwm: &'a PerturbationRadii,
    /// Counted steps `K`.
    pub steps: u64,
    /// Uncounted steps run first.
    pub burn_in: u64,
    pub density: Option<&'a dyn StateDensity>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub record: BatchRecord,
    pub oracle_calls: u64,
    pub proposed: u64,
    pub accepted: u64,
}

/// Runs one batch from `seed`, a prefix with every flag 0.
///
/// Extended failure prefixes `(y, y + dY)` are offered to `carryover`, and the
/// chain state after every counted step is passed to `observer`.
#[allow(clippy::too_many_arguments)]
pub fn rwm_level_batch(
    model: &ChainModel,
    space: &StateSpace,
    oracle: &dyn ReliabilityOracle,
    seed: &[StatePoint],
    settings: &RwmSettings<'_>,
    rng: &mut StreamRng,
    mut carryover: Option<&mut Reservoir<Vec<StatePoint>>>,
    observer: &mut dyn FnMut(&[StatePoint]),
) -> Result<BatchOutcome> {
    if seed.is_empty() || seed.len() >= model.length {
        return Err(Error::InvalidConfig(format!(
            "seed prefix of length {} cannot start a level of a length-{} chain",
            seed.len(),
            model.length
        )));
    }
    if settings.steps == 0 {
        return Err(Error::InvalidConfig("steps per batch must be at least 1".into()));
    }
    let mut y: Vec<StatePoint> = seed.to_vec();
    let mut fy = match settings.density {
        Some(f) => {
            let v = checked(f, &y[0])?;
            if v <= 0.0 {
                return Err(Error::InvalidDensity { value: v });
            }
            v
        }
        None => 1.0,
    };
    let (mut failures, mut calls, mut proposed, mut accepted) = (0u64, 0u64, 0u64, 0u64);
    let pos = y.len();
    for step in 0..settings.burn_in + settings.steps {
        let counted = step >= settings.burn_in;
        if counted {
            let next = extend(model, space, &y, rng)?;
            calls += 1;
            if !model.flag(oracle, &y[0], pos, &next)? {
                failures += 1;
                if let Some(res) = carryover.as_deref_mut() {
                    res.offer(|| {
                        let mut p = y.clone();
                        p.push(next);
                        p
                    });
                }
            }
        }

        proposed += 1;
        let first = perturb(&y[0], settings.r_rwm, space, rng)?;
        let u: f64 = rng.random();
        let f_first = match settings.density {
            Some(f) => checked(f, &first)?,
            None => 1.0,
        };
        if u * fy < f_first {
            calls += 1;
            if !oracle.is_reliable(&first)? {
                let mut candidate = vec![first];
                let mut ok = true;
                while candidate.len() < pos {
                    let next = extend(model, space, &candidate, rng)?;
                    calls += 1;
                    if model.flag(oracle, &candidate[0], candidate.len(), &next)? {
                        ok = false;
                        break;
                    }
                    candidate.push(next);
                }
                if ok {
                    y = candidate;
                    fy = f_first;
                    accepted += 1;
                }
            }
        }
        if counted {
            observer(&y);
        }
    }
    Ok(BatchOutcome { record: BatchRecord::new(settings.steps, failures), oracle_calls: calls, proposed, accepted })
}
