//! State sequences inside one latency interval.
//!
//! Latency budget model: `X_k = X_{k-1} + delta_k`. Concurrent design model:
//! `X_k = X_1 + delta_k`, the perturbations pairwise independent. In both,
//! `delta_k ~ D(anchor, r_p)` with the reflecting kernel from [`crate::space`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{OracleError, ReliabilityOracle};
use crate::space::{perturb, PerturbationRadii, StatePoint, StateSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LatencyBudget,
    ConcurrentDesign,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::LatencyBudget => "latency-budget",
            ModelKind::ConcurrentDesign => "concurrent-design",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainModel {
    pub kind: ModelKind,
    /// Chain length `N`: controller evaluations per latency interval, or threads.
    pub length: usize,
    pub r_p: PerturbationRadii,
}

impl ChainModel {
    pub fn new(kind: ModelKind, length: usize, r_p: PerturbationRadii, space: &StateSpace) -> Result<Self> {
        if length == 0 {
            return Err(Error::InvalidConfig("chain length must be at least 1".into()));
        }
        r_p.validate(space)?;
        Ok(ChainModel { kind, length, r_p })
    }

    /// The state the next element is perturbed from.
    pub fn anchor<'a>(&self, prefix: &'a [StatePoint]) -> &'a StatePoint {
        match self.kind {
            ModelKind::LatencyBudget => prefix.last().expect("nonempty prefix"),
            ModelKind::ConcurrentDesign => &prefix[0],
        }
    }

    /// Flag of the element at `position` (0-based) whose chain starts at `first`.
    pub fn flag(
        &self,
        oracle: &dyn ReliabilityOracle,
        first: &StatePoint,
        position: usize,
        x: &StatePoint,
    ) -> Result<bool, OracleError> {
        match (self.kind, position) {
            (ModelKind::ConcurrentDesign, p) if p > 0 => oracle.is_reliable_from(first, x),
            _ => oracle.is_reliable(x),
        }
    }
}

/// Draws the next chain element after `prefix`.
pub fn extend<R: Rng + ?Sized>(
    model: &ChainModel,
    space: &StateSpace,
    prefix: &[StatePoint],
    rng: &mut R,
) -> Result<StatePoint> {
    assert!(!prefix.is_empty(), "prefix must be nonempty");
    assert!(prefix.len() < model.length, "prefix already has full length");
    perturb(model.anchor(prefix), &model.r_p, space, rng)
}

/// A realised latency interval: states `x_1..x_n` and their flags `F(x_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<StatePoint>,
    pub flags: Vec<bool>,
}

impl Trajectory {
    /// All flags are 0.
    pub fn failed(&self) -> bool {
        self.flags.iter().all(|f| !f)
    }
}

/// Grows a trajectory from `x1`. With `short_circuit` the walk stops at the
/// first `F = 1`, since the failure event can no longer occur.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    model: &ChainModel,
    space: &StateSpace,
    oracle: &dyn ReliabilityOracle,
    x1: StatePoint,
    short_circuit: bool,
    rng: &mut R,
) -> Result<Trajectory> {
    let first_flag = oracle.is_reliable(&x1)?;
    let mut traj = Trajectory { states: vec![x1], flags: vec![first_flag] };
    while traj.states.len() < model.length {
        if short_circuit && *traj.flags.last().unwrap() {
            break;
        }
        let next = extend(model, space, &traj.states, rng)?;
        let flag = model.flag(oracle, &traj.states[0], traj.states.len(), &next)?;
        traj.states.push(next);
        traj.flags.push(flag);
    }
    Ok(traj)
}

/// Outcome of one failure-indicator draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailureDraw {
    /// `1{F(x_1) = .. = F(x_N) = 0}`.
    pub failed: bool,
    pub oracle_calls: u64,
}

pub fn simulate_failure_indicator<R: Rng + ?Sized>(
    model: &ChainModel,
    space: &StateSpace,
    oracle: &dyn ReliabilityOracle,
    x1: StatePoint,
    rng: &mut R,
) -> Result<FailureDraw> {
    let traj = simulate_trajectory(model, space, oracle, x1, true, rng)?;
    Ok(FailureDraw { failed: traj.failed(), oracle_calls: traj.flags.len() as u64 })
}
