use serde::{Deserialize, Serialize};

use super::seeds::Provenance;

/// One batch (or crude Monte Carlo chunk) of indicator samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub mean: f64,
    pub samples: u64,
    pub failures: u64,
}

impl BatchRecord {
    pub fn new(samples: u64, failures: u64) -> Self {
        let mean = if samples == 0 { 0.0 } else { failures as f64 / samples as f64 };
        BatchRecord { mean, samples, failures }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    CrudeNormal,
    CrudeClopperPearson,
    BatchedRwm,
}

/// Where the RWM chains of a level started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub provenance: Provenance,
    pub distinct: usize,
    /// Draws (honest) or failure candidates (carryover) behind the pool.
    pub candidates: u64,
    pub oracle_calls: u64,
}

/// Estimate of `P(A_1)` (level 1) or `P(A_k | A_1 .. A_{k-1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEstimate {
    pub level: usize,
    pub method: EstimateMethod,
    pub batches: Vec<BatchRecord>,
    pub estimate: f64,
    /// Batch variance `v_k` for RWM levels, `p(1-p)` for crude Monte Carlo.
    pub variance: f64,
    /// Variance of the estimator itself: `v_k / M` or `p(1-p) / K`.
    pub estimator_variance: f64,
    pub alpha: f64,
    pub lo: f64,
    pub hi: f64,
    pub samples_per_batch: u64,
    pub total_samples: u64,
    pub failures: u64,
    pub oracle_calls: u64,
    /// No failure was observed at this level.
    pub below_resolution: bool,
    /// `3 / total_samples`, shown next to the interval when nothing was observed.
    pub rule_of_three: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<SeedSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
}

impl LevelEstimate {
    pub fn batch_means(&self) -> Vec<f64> {
        self.batches.iter().map(|b| b.mean).collect()
    }

    pub(crate) fn resolution(failures: u64, total: u64) -> (bool, Option<f64>) {
        if failures == 0 {
            (true, Some(3.0 / total as f64))
        } else {
            (false, None)
        }
    }
}
