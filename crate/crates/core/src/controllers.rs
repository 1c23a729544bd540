//! Controllers with a warm-start argument, the oracles they induce, and the
//! composite controller that races perturbed instances.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{Concurrency, OracleError, ReliabilityOracle};
use crate::space::{perturb, PerturbationRadii, StatePoint, StateSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    pub control: Vec<f64>,
    /// Solver status; 1 means the solver's own success criterion was met.
    pub exitflag: i32,
}

impl ControlOutcome {
    pub fn succeeded(&self) -> bool {
        self.exitflag == 1
    }
}

/// `c(x, y)`: `x` is the state that fixes the constraints, `y` seeds the
/// initial guess. The one-argument controller is `c(x) = c(x, x)`.
///
/// A solver crash is reported as [`OracleError::Crash`], never as a failed
/// exitflag.
pub trait TwoArgController: Send + Sync {
    fn name(&self) -> &str;

    fn control(&self, x: &StatePoint, guess: &StatePoint) -> Result<ControlOutcome, OracleError>;
}

/// How the composite controller perturbs its instances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// (a) each instance solves from a perturbed state.
    #[default]
    PerturbState,
    /// (b) each instance keeps the state and perturbs its warm start.
    PerturbGuess,
}

/// `F(x) = 1` iff the controller returns exitflag 1.
///
/// Under [`Strategy::PerturbGuess`], `is_reliable_from(anchor, y)` evaluates
/// `c(anchor, y)`: the chain element is a perturbed guess for the anchor state.
pub struct ControllerOracle<C: ?Sized> {
    controller: Arc<C>,
    strategy: Strategy,
}

impl<C: TwoArgController + ?Sized> ControllerOracle<C> {
    pub fn new(controller: Arc<C>, strategy: Strategy) -> Self {
        ControllerOracle { controller, strategy }
    }

    pub fn controller(&self) -> &Arc<C> {
        &self.controller
    }
}

impl<C: TwoArgController + ?Sized> ReliabilityOracle for ControllerOracle<C> {
    fn name(&self) -> &str {
        self.controller.name()
    }

    fn is_reliable(&self, x: &StatePoint) -> Result<bool, OracleError> {
        Ok(self.controller.control(x, x)?.succeeded())
    }

    fn is_reliable_from(&self, anchor: &StatePoint, x: &StatePoint) -> Result<bool, OracleError> {
        match self.strategy {
            Strategy::PerturbState => self.is_reliable(x),
            Strategy::PerturbGuess => Ok(self.controller.control(anchor, x)?.succeeded()),
        }
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::ConcurrentSafe
    }
}

/// The cascade: run `threads` instances, instance 1 unperturbed, and use the
/// smallest-index instance that succeeded.
pub struct CompositeController<C: ?Sized> {
    pub base: Arc<C>,
    pub threads: usize,
    pub radii: PerturbationRadii,
    pub strategy: Strategy,
    pub space: StateSpace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeOutcome {
    pub control: Vec<f64>,
    /// 1-based index of the instance whose control is returned.
    pub chosen: usize,
    /// Per-instance success flag; `None` marks a crash.
    pub flags: Vec<Option<bool>>,
    pub crashes: usize,
}

impl CompositeOutcome {
    pub fn succeeded(&self) -> bool {
        self.flags.contains(&Some(true))
    }
}

impl<C: TwoArgController + ?Sized> CompositeController<C> {
    pub fn new(base: Arc<C>, threads: usize, radii: PerturbationRadii, strategy: Strategy, space: StateSpace) -> Result<Self> {
        if threads < 2 {
            return Err(Error::InvalidConfig(format!("a composite controller needs at least 2 threads, got {threads}")));
        }
        radii.validate(&space)?;
        Ok(CompositeController { base, threads, radii, strategy, space })
    }
}

/// Evaluates the composite controller at `x`. Perturbations are drawn from
/// `rng` in instance order before any instance runs, so the outcome does not
/// depend on how the instances are scheduled. Without a success the last
/// instance that did not crash is returned.
pub fn composite_eval<C: TwoArgController + ?Sized, R: Rng + ?Sized>(
    cc: &CompositeController<C>,
    x: &StatePoint,
    rng: &mut R,
) -> Result<CompositeOutcome> {
    let mut inputs = Vec::with_capacity(cc.threads);
    inputs.push(x.clone());
    for _ in 1..cc.threads {
        inputs.push(perturb(x, &cc.radii, &cc.space, rng)?);
    }
    let results: Vec<Result<ControlOutcome, OracleError>> = inputs
        .par_iter()
        .map(|y| match cc.strategy {
            Strategy::PerturbState => cc.base.control(y, y),
            Strategy::PerturbGuess => cc.base.control(x, y),
        })
        .collect();
    let mut flags = Vec::with_capacity(cc.threads);
    let mut outcomes = Vec::with_capacity(cc.threads);
    for r in results {
        match r {
            Ok(o) => {
                flags.push(Some(o.succeeded()));
                outcomes.push(Some(o));
            }
            Err(OracleError::Crash(_)) => {
                flags.push(None);
                outcomes.push(None);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let crashes = flags.iter().filter(|f| f.is_none()).count();
    let chosen = flags
        .iter()
        .position(|f| *f == Some(true))
        .or_else(|| flags.iter().rposition(|f| f.is_some()))
        .ok_or(Error::AllInstancesCrashed { threads: cc.threads })?;
    Ok(CompositeOutcome {
        control: outcomes[chosen].take().expect("chosen instance has an outcome").control,
        chosen: chosen + 1,
        flags,
        crashes,
    })
}
