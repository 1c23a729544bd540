//! Pilot-function convergence checks for the RWM chains.
//!
//! Random scalar functions are averaged over an honest sample and over the
//! RWM chain states; each RWM mean should fall inside the honest CLT interval.
//! A pass is evidence of convergence, never proof.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::stats::{check_alpha, normal_quantile, two_sided_level, Welford};
use crate::space::{StatePoint, StateSpace};

pub const DEFAULT_PILOTS: usize = 5;
pub const MIN_HONEST_SAMPLES: usize = 30;
pub const COEFFICIENT_BOUND: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PilotBasis {
    /// `sum_i c_i trig_i(x_i)` with `trig_i` either cos or sin.
    #[default]
    Trig,
    /// `sum_i a_i x_i + b_i x_i^2`.
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PilotTerm {
    Cos { coef: f64 },
    Sin { coef: f64 },
    Quadratic { linear: f64, square: f64 },
}

impl PilotTerm {
    fn eval(&self, x: f64) -> f64 {
        match *self {
            PilotTerm::Cos { coef } => coef * x.cos(),
            PilotTerm::Sin { coef } => coef * x.sin(),
            PilotTerm::Quadratic { linear, square } => linear * x + square * x * x,
        }
    }
}

/// A random function of the flat coordinates of a state. Sphere
/// coordinates are fed in one by one like any other coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotFunction {
    pub terms: Vec<PilotTerm>,
}

impl PilotFunction {
    pub fn eval(&self, x: &StatePoint) -> f64 {
        self.terms.iter().zip(&x.0).map(|(t, &v)| t.eval(v)).sum()
    }
}

fn coef<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Open interval, as the endpoints have probability zero anyway.
    loop {
        let c = rng.random_range(-COEFFICIENT_BOUND..COEFFICIENT_BOUND);
        if c != -COEFFICIENT_BOUND {
            return c;
        }
    }
}

pub fn make_pilots<R: Rng + ?Sized>(space: &StateSpace, count: usize, basis: PilotBasis, rng: &mut R) -> Vec<PilotFunction> {
    (0..count)
        .map(|_| PilotFunction {
            terms: (0..space.dim())
                .map(|_| match basis {
                    PilotBasis::Trig => {
                        if rng.random::<bool>() {
                            PilotTerm::Cos { coef: coef(rng) }
                        } else {
                            PilotTerm::Sin { coef: coef(rng) }
                        }
                    }
                    PilotBasis::Polynomial => PilotTerm::Quadratic { linear: coef(rng), square: coef(rng) },
                })
                .collect(),
        })
        .collect()
}

/// Per-pilot running moments, fed one state at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotAccumulator {
    stats: Vec<Welford>,
}

impl PilotAccumulator {
    pub fn new(pilots: usize) -> Self {
        PilotAccumulator { stats: vec![Welford::new(); pilots] }
    }

    pub fn observe(&mut self, pilots: &[PilotFunction], x: &StatePoint) {
        for (s, p) in self.stats.iter_mut().zip(pilots) {
            s.update(p.eval(x));
        }
    }

    pub fn merge(&mut self, other: &PilotAccumulator) {
        for (a, b) in self.stats.iter_mut().zip(&other.stats) {
            a.merge(b);
        }
    }

    pub fn count(&self) -> u64 {
        self.stats.first().map_or(0, Welford::count)
    }

    pub fn stats(&self) -> &[Welford] {
        &self.stats
    }

    pub fn means(&self) -> Vec<f64> {
        self.stats.iter().map(Welford::mean).collect()
    }
}

pub fn pilot_means(pilots: &[PilotFunction], sample: &[StatePoint]) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut acc = PilotAccumulator::new(pilots.len());
    for x in sample {
        acc.observe(pilots, x);
    }
    Ok(acc.means())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotVerdict {
    pub pilot: usize,
    pub honest_mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub rwm_mean: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticVerdict {
    pub alpha: f64,
    pub honest_samples: u64,
    pub rwm_samples: u64,
    pub pilots: Vec<PilotVerdict>,
    pub all_pass: bool,
}

/// Checks each RWM pilot mean against the honest `alpha` CLT interval.
pub fn compare(honest: &PilotAccumulator, rwm: &PilotAccumulator, alpha: f64) -> Result<DiagnosticVerdict> {
    check_alpha(alpha)?;
    let h = honest.count();
    if (h as usize) < MIN_HONEST_SAMPLES {
        return Err(Error::TooFewHonestSamples { needed: MIN_HONEST_SAMPLES, got: h as usize });
    }
    if rwm.count() == 0 {
        return Err(Error::EmptySample);
    }
    let z = normal_quantile(two_sided_level(alpha));
    let pilots: Vec<PilotVerdict> = honest
        .stats()
        .iter()
        .zip(rwm.means())
        .enumerate()
        .map(|(i, (s, rwm_mean))| {
            let half = z * (s.sample_variance() / h as f64).sqrt();
            let (lo, hi) = (s.mean() - half, s.mean() + half);
            PilotVerdict { pilot: i, honest_mean: s.mean(), lo, hi, rwm_mean, pass: lo <= rwm_mean && rwm_mean <= hi }
        })
        .collect();
    Ok(DiagnosticVerdict {
        alpha,
        honest_samples: h,
        rwm_samples: rwm.count(),
        all_pass: pilots.iter().all(|p| p.pass),
        pilots,
    })
}
