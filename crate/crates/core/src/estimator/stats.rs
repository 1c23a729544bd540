//! Running moments and confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Single-pass mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.count as f64 * other.count as f64) / n as f64;
        self.count = n;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; 0 for fewer than two observations.
    pub fn sample_variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn population_variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }
}

impl Extend<f64> for Welford {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.update(x);
        }
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::new();
        w.extend(iter);
        w
    }
}

/// Interval used for the crude Monte Carlo level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrudeInterval {
    /// CLT interval with the plug-in variance `p(1-p)`.
    #[default]
    Normal,
    /// Exact binomial interval.
    ClopperPearson,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("confidence level must lie in (0, 1), got {alpha}")))
    }
}

/// Two-sided quantile level for an `alpha`-confidence interval.
pub fn two_sided_level(alpha: f64) -> f64 {
    alpha + (1.0 - alpha) / 2.0
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

pub fn student_t_quantile(p: f64, dof: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom").inverse_cdf(p)
}

fn clip(lo: f64, hi: f64) -> (f64, f64) {
    (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0))
}

/// Normal interval for a binomial proportion with maximum-likelihood variance.
pub fn normal_interval(failures: u64, n: u64, alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let p = failures as f64 / n as f64;
    let half = normal_quantile(two_sided_level(alpha)) * (p * (1.0 - p) / n as f64).sqrt();
    Ok(clip(p - half, p + half))
}

pub fn clopper_pearson_interval(failures: u64, n: u64, alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let tail = (1.0 - alpha) / 2.0;
    let (x, n) = (failures as f64, n as f64);
    let lo = if failures == 0 { 0.0 } else { Beta::new(x, n - x + 1.0).expect("beta").inverse_cdf(tail) };
    let hi = if x == n { 1.0 } else { Beta::new(x + 1.0, n - x).expect("beta").inverse_cdf(1.0 - tail) };
    Ok(clip(lo, hi))
}

/// `mean +- t_{M-1} sqrt(v / M)` with `v` the batch variance, clipped to [0, 1].
pub fn student_t_interval_from(mean: f64, batch_variance: f64, m: usize, alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if m < 2 {
        return Err(Error::TooFewBatches { needed: 2, got: m });
    }
    let t = student_t_quantile(two_sided_level(alpha), (m - 1) as f64);
    let half = t * (batch_variance / m as f64).sqrt();
    Ok(clip(mean - half, mean + half))
}

/// Mean and batch variance of batch means, summed in index order.
pub fn batch_mean_and_variance(batch_means: &[f64]) -> Result<(f64, f64)> {
    let m = batch_means.len();
    if m < 2 {
        return Err(Error::TooFewBatches { needed: 2, got: m });
    }
    let mean = batch_means.iter().sum::<f64>() / m as f64;
    let var = batch_means.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / (m - 1) as f64;
    Ok((mean, var))
}

pub fn student_t_interval(batch_means: &[f64], alpha: f64) -> Result<(f64, f64)> {
    let (mean, var) = batch_mean_and_variance(batch_means)?;
    student_t_interval_from(mean, var, batch_means.len(), alpha)
}
