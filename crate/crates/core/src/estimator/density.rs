//! Densities of the initial state with respect to the uniform law, and the
//! independence sampler that targets them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::space::{sample_uniform, StatePoint, StateSpace};

/// An unnormalized density `f` with respect to the uniform law on the space.
pub trait StateDensity: Send + Sync {
    fn density(&self, x: &StatePoint) -> f64;

    /// An upper bound on `f`, needed to draw exact independent samples by
    /// rejection. `None` restricts the density to Markov chain use.
    fn sup(&self) -> Option<f64>;

    fn describe(&self) -> String;
}

pub(crate) fn checked(f: &dyn StateDensity, x: &StatePoint) -> Result<f64> {
    let value = f.density(x);
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(Error::InvalidDensity { value })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Uniform;

impl StateDensity for Uniform {
    fn density(&self, _: &StatePoint) -> f64 {
        1.0
    }

    fn sup(&self) -> Option<f64> {
        Some(1.0)
    }

    fn describe(&self) -> String {
        "uniform".into()
    }
}

/// `exp(-|x - mean|^2 / (2 sd^2))` over the flat coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub sd: f64,
}

impl StateDensity for Gaussian {
    fn density(&self, x: &StatePoint) -> f64 {
        let d2: f64 = x.0.iter().zip(&self.mean).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 / (2.0 * self.sd * self.sd)).exp()
    }

    fn sup(&self) -> Option<f64> {
        Some(1.0)
    }

    fn describe(&self) -> String {
        format!("gaussian(mean={:?}, sd={})", self.mean, self.sd)
    }
}

/// One transition: propose `W ~ U`, move with probability `min(1, f(W)/f(y))`.
pub fn independence_sampler_step<R: Rng + ?Sized>(
    y: &StatePoint,
    f: &dyn StateDensity,
    space: &StateSpace,
    rng: &mut R,
) -> Result<StatePoint> {
    let fy = checked(f, y)?;
    if fy <= 0.0 {
        return Err(Error::InvalidDensity { value: fy });
    }
    let w = sample_uniform(space, rng)?;
    let fw = checked(f, &w)?;
    let u: f64 = rng.random();
    Ok(if u * fy < fw { w } else { y.clone() })
}

/// An exact draw from `f . U` by rejection against `sup f`.
pub fn sample_weighted<R: Rng + ?Sized>(f: &dyn StateDensity, space: &StateSpace, rng: &mut R) -> Result<StatePoint> {
    let sup = f
        .sup()
        .filter(|s| s.is_finite() && *s > 0.0)
        .ok_or_else(|| Error::InvalidConfig(format!("density {} has no usable upper bound", f.describe())))?;
    loop {
        let w = sample_uniform(space, rng)?;
        let fw = checked(f, &w)?;
        if fw > sup * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!("density {} exceeds its declared bound", f.describe())));
        }
        if rng.random::<f64>() * sup < fw {
            return Ok(w);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, SeedSource};

    struct TwoValued;

    impl StateDensity for TwoValued {
        fn density(&self, x: &StatePoint) -> f64 {
            if x.0[0] < 0.0 {
                3.0
            } else {
                1.0
            }
        }
        fn sup(&self) -> Option<f64> {
            Some(3.0)
        }
        fn describe(&self) -> String {
            "two-valued".into()
        }
    }

    struct Broken;

    impl StateDensity for Broken {
        fn density(&self, _: &StatePoint) -> f64 {
            f64::NAN
        }
        fn sup(&self) -> Option<f64> {
            None
        }
        fn describe(&self) -> String {
            "broken".into()
        }
    }

    #[test]
    fn constant_density_always_moves() {
        let space = StateSpace::cube(2, -1.0, 1.0).unwrap();
        let mut rng = SeedSource::new(1).stream_for(Purpose::User, 0, 0);
        let mut y = StatePoint(vec![0.0, 0.0]);
        for _ in 0..1000 {
            let next = independence_sampler_step(&y, &Uniform, &space, &mut rng).unwrap();
            assert_ne!(next, y);
            y = next;
        }
    }

    #[test]
    fn uphill_moves_are_always_taken() {
        let space = StateSpace::cube(1, -1.0, 1.0).unwrap();
        let mut rng = SeedSource::new(2).stream_for(Purpose::User, 0, 0);
        // From the low-density half every proposal has ratio >= 1.
        for _ in 0..1000 {
            let y = StatePoint(vec![0.5]);
            let next = independence_sampler_step(&y, &TwoValued, &space, &mut rng).unwrap();
            assert_ne!(next, y);
        }
    }

    #[test]
    fn occupation_matches_density_ratio() {
        let space = StateSpace::cube(1, -1.0, 1.0).unwrap();
        let mut rng = SeedSource::new(3).stream_for(Purpose::User, 0, 0);
        let n = 100_000;
        let mut y = StatePoint(vec![0.5]);
        let mut left = 0usize;
        for _ in 0..n {
            y = independence_sampler_step(&y, &TwoValued, &space, &mut rng).unwrap();
            left += (y.0[0] < 0.0) as usize;
        }
        // Stationary left mass 3/4. The chain is two-state Markov on the halves
        // with switching rates a = 1/2 (left to right, times 1/3) and b = 1/2,
        // giving an asymptotic variance factor (2 - a - b)/(a + b) for the mean.
        let p = 0.75;
        let (a, b) = (0.5 / 3.0, 0.5);
        let factor = (2.0 - a - b) / (a + b);
        let sigma = (p * (1.0 - p) * factor / n as f64).sqrt();
        let frac = left as f64 / n as f64;
        assert!((frac - p).abs() < 3.0 * sigma, "frac {frac} sigma {sigma}");
    }

    #[test]
    fn weighted_rejection_draws() {
        let space = StateSpace::cube(1, -1.0, 1.0).unwrap();
        let mut rng = SeedSource::new(4).stream_for(Purpose::User, 0, 0);
        let n = 100_000;
        let left = (0..n).filter(|_| sample_weighted(&TwoValued, &space, &mut rng).unwrap().0[0] < 0.0).count();
        let sigma = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((left as f64 / n as f64 - 0.75).abs() < 3.0 * sigma);
    }

    #[test]
    fn invalid_density_is_an_error() {
        let space = StateSpace::cube(1, -1.0, 1.0).unwrap();
        let mut rng = SeedSource::new(5).stream_for(Purpose::User, 0, 0);
        let err = independence_sampler_step(&StatePoint(vec![0.0]), &Broken, &space, &mut rng).unwrap_err();
        assert!(matches!(err, Error::InvalidDensity { .. }));
        assert!(sample_weighted(&Broken, &space, &mut rng).is_err());
    }
}
