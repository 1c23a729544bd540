//! Combining levels into a bound on `P(A_1 .. A_N)` and reading it as a time.

use serde::{Deserialize, Serialize};

use super::level::LevelEstimate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductBound {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    /// Per-level confidence.
    pub alpha: f64,
    /// Union bound on the joint coverage: `1 - N (1 - alpha)`, floored at 0.
    pub nominal_joint_confidence: f64,
    pub levels: usize,
}

/// Multiplies per-level estimates and interval endpoints for levels `1 ..= n`.
pub fn combine_product(levels: &[LevelEstimate], n: usize) -> Result<ProductBound> {
    if n == 0 {
        return Err(Error::InvalidConfig("a product needs at least one level".into()));
    }
    let mut point = 1.0;
    let mut lower = 1.0;
    let mut upper = 1.0;
    let alpha = levels.first().ok_or(Error::MissingLevel(1))?.alpha;
    for k in 1..=n {
        let level = levels.iter().find(|l| l.level == k).ok_or(Error::MissingLevel(k))?;
        if level.alpha != alpha {
            return Err(Error::InvalidConfig("levels were estimated at different confidence levels".into()));
        }
        point *= level.estimate;
        lower *= level.lo;
        upper *= level.hi;
    }
    Ok(ProductBound {
        point,
        lower,
        upper,
        alpha,
        nominal_joint_confidence: (1.0 - n as f64 * (1.0 - alpha)).max(0.0),
        levels: n,
    })
}

/// Plug-in evaluation of the product variance bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceBoundCheck {
    pub k_const: f64,
    /// `(2^N - 2) E(Z_k)^2 <= K V(Z_k)` per level.
    pub per_level: Vec<bool>,
    pub hypothesis_holds: bool,
    /// `(1 + K^(N-1)) V(Z_1) .. V(Z_N)`.
    pub bound: f64,
}

/// `levels` holds plug-in `(E(Z_k), V(Z_k))` pairs, one per level.
pub fn variance_bound_check(levels: &[(f64, f64)], k_const: f64) -> VarianceBoundCheck {
    let n = levels.len() as i32;
    let lhs_factor = 2f64.powi(n) - 2.0;
    let per_level: Vec<bool> = levels.iter().map(|&(m, v)| lhs_factor * m * m <= k_const * v).collect();
    let bound = (1.0 + k_const.powi(n - 1)) * levels.iter().map(|&(_, v)| v).product::<f64>();
    VarianceBoundCheck { k_const, hypothesis_holds: per_level.iter().all(|&b| b), per_level, bound }
}

pub const SECONDS_PER_YEAR: f64 = 365.0 * 24.0 * 3600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBetweenFailures {
    pub probability: f64,
    pub latency_seconds: f64,
    pub seconds: Option<f64>,
    pub years: Option<f64>,
    pub summary: String,
}

/// Expected time between failing latency intervals, `T / p`. With `p` an
/// upper bound this is a lower bound on the time.
pub fn time_between_failures(p: f64, latency_seconds: f64) -> Result<TimeBetweenFailures> {
    if !(latency_seconds > 0.0 && latency_seconds.is_finite()) {
        return Err(Error::InvalidConfig(format!("latency must be positive, got {latency_seconds}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("probability must lie in [0, 1], got {p}")));
    }
    if p == 0.0 {
        return Ok(TimeBetweenFailures {
            probability: p,
            latency_seconds,
            seconds: None,
            years: None,
            summary: "no failure observed; bound only".into(),
        });
    }
    let seconds = latency_seconds / p;
    let years = seconds / SECONDS_PER_YEAR;
    Ok(TimeBetweenFailures {
        probability: p,
        latency_seconds,
        seconds: Some(seconds),
        years: Some(years),
        summary: format!("time between failures > {}", lower_bound_text(seconds, years)),
    })
}

/// Rounds down to three significant figures so the text stays a lower bound:
/// `792.7` years reads `792 years`, `3.1709e8` years reads `317e6 years`.
fn lower_bound_text(seconds: f64, years: f64) -> String {
    let (value, unit) = if years >= 1.0 { (years, "years") } else { (seconds, "s") };
    if value < 1e4 {
        return format!("{} {unit}", floor_sig(value));
    }
    let exponent = value.log10().floor() as i32 - 2;
    let mantissa = (value / 10f64.powi(exponent)).floor();
    format!("{mantissa}e{exponent} {unit}")
}

fn floor_sig(value: f64) -> String {
    if value >= 100.0 {
        return format!("{}", value.floor());
    }
    let decimals = (2 - value.log10().floor() as i32).max(0) as usize;
    let scale = 10f64.powi(decimals as i32);
    format!("{:.*}", decimals, (value * scale).floor() / scale)
}
