//! Product state spaces and the reflecting perturbation kernel.
//!
//! A [`StateSpace`] is an ordered list of blocks (boxes of closed intervals,
//! unit spheres, finite ordered value sets), optionally replicated over
//! several actors with pairwise separation constraints between them.
//! Points are stored flat: actor-major, blocks in declaration order, a sphere
//! `S^n` taking `n + 1` coordinates and a discrete block taking one.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on the raw vector norm accepted by the sphere sampler.
pub const SPHERE_MIN_NORM: f64 = 1e-6;

const DEFAULT_RETRY_CAP: usize = 10_000;
const DEFAULT_BURN_IN: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Block {
    /// Product of closed intervals `[lo, hi]`.
    Interval {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        bounds: Vec<(f64, f64)>,
    },
    /// Unit sphere `S^dim` embedded in `R^(dim + 1)`.
    Sphere {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        dim: usize,
    },
    /// One variable ranging over an ordered finite set. Distance is index distance.
    Discrete {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        values: Vec<f64>,
    },
}

impl Block {
    pub fn interval(bounds: impl Into<Vec<(f64, f64)>>) -> Self {
        Block::Interval { name: None, bounds: bounds.into() }
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Block::interval(vec![(lo, hi); dim])
    }

    pub fn sphere(dim: usize) -> Self {
        Block::Sphere { name: None, dim }
    }

    pub fn discrete(values: impl Into<Vec<f64>>) -> Self {
        Block::Discrete { name: None, values: values.into() }
    }

    pub fn named(mut self, label: &str) -> Self {
        match &mut self {
            Block::Interval { name, .. } | Block::Sphere { name, .. } | Block::Discrete { name, .. } => {
                *name = Some(label.to_owned())
            }
        }
        self
    }

    /// Number of stored coordinates.
    pub fn width(&self) -> usize {
        match self {
            Block::Interval { bounds, .. } => bounds.len(),
            Block::Sphere { dim, .. } => dim + 1,
            Block::Discrete { .. } => 1,
        }
    }
}

/// Pairwise separation between actors on a subset `coords` of each actor's coordinates:
/// a point is feasible iff `|x^i_J - x^j_J| > radii[i][j]` for all `i != j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Separation {
    pub coords: Vec<usize>,
    pub radii: Vec<Vec<f64>>,
}

impl Separation {
    /// Same radius for every pair of `actors`.
    pub fn uniform(coords: Vec<usize>, actors: usize, radius: f64) -> Self {
        let radii = (0..actors)
            .map(|i| (0..actors).map(|j| if i == j { 0.0 } else { radius }).collect())
            .collect();
        Separation { coords, radii }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpace {
    pub blocks: Vec<Block>,
    #[serde(default = "one")]
    pub actors: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub separation: Vec<Separation>,
    /// Zero-width intervals are rejected unless this is set.
    #[serde(default)]
    pub allow_degenerate: bool,
    /// Rejections tolerated per perturbation (and per initial search) under separation constraints.
    #[serde(default = "default_retry_cap")]
    pub retry_cap: usize,
    /// Metropolis steps used by [`sample_uniform`] when separation constraints are present.
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn one() -> usize {
    1
}
fn default_retry_cap() -> usize {
    DEFAULT_RETRY_CAP
}
fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

impl StateSpace {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        let space = StateSpace {
            blocks,
            actors: 1,
            separation: Vec::new(),
            allow_degenerate: false,
            retry_cap: DEFAULT_RETRY_CAP,
            burn_in: DEFAULT_BURN_IN,
        };
        space.validate()?;
        Ok(space)
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        StateSpace::new(vec![Block::cube(dim, lo, hi)])
    }

    pub fn with_degenerate(mut self) -> Result<Self> {
        self.allow_degenerate = true;
        self.validate()?;
        Ok(self)
    }

    pub fn with_actors(mut self, actors: usize, separation: Vec<Separation>) -> Result<Self> {
        self.actors = actors;
        self.separation = separation;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpace(msg));
        if self.blocks.is_empty() {
            return bad("no blocks".into());
        }
        if self.actors == 0 {
            return bad("actor count must be positive".into());
        }
        for (b, block) in self.blocks.iter().enumerate() {
            match block {
                Block::Interval { bounds, .. } => {
                    if bounds.is_empty() {
                        return bad(format!("interval block {b} has no dimensions"));
                    }
                    for &(lo, hi) in bounds {
                        if !lo.is_finite() || !hi.is_finite() {
                            return bad(format!("interval block {b} has non-finite bound"));
                        }
                        if lo > hi || (lo == hi && !self.allow_degenerate) {
                            return bad(format!("interval block {b} has bad bounds [{lo}, {hi}]"));
                        }
                    }
                }
                Block::Sphere { dim, .. } => {
                    if *dim == 0 {
                        return bad(format!("sphere block {b} must have dimension >= 1"));
                    }
                }
                Block::Discrete { values, .. } => {
                    if values.is_empty() {
                        return bad(format!("discrete block {b} is empty"));
                    }
                    if values.iter().any(|v| !v.is_finite()) {
                        return bad(format!("discrete block {b} has non-finite value"));
                    }
                }
            }
        }
        if !self.separation.is_empty() && self.actors < 2 {
            return bad("separation constraints require at least two actors".into());
        }
        let width = self.actor_width();
        for sep in &self.separation {
            if sep.coords.is_empty() || sep.coords.iter().any(|&c| c >= width) {
                return bad("separation coordinates out of range".into());
            }
            if sep.radii.len() != self.actors || sep.radii.iter().any(|r| r.len() != self.actors) {
                return bad("separation radii must be an actors x actors matrix".into());
            }
            for i in 0..self.actors {
                for j in 0..self.actors {
                    let r = sep.radii[i][j];
                    if !(r >= 0.0) || !r.is_finite() {
                        return bad(format!("separation radius r[{i}][{j}] = {r} is invalid"));
                    }
                    if r != sep.radii[j][i] {
                        return bad(format!("separation radii not symmetric at ({i}, {j})"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Coordinates per actor.
    pub fn actor_width(&self) -> usize {
        self.blocks.iter().map(Block::width).sum()
    }

    /// Total stored coordinates.
    pub fn dim(&self) -> usize {
        self.actor_width() * self.actors
    }

    pub fn is_constrained(&self) -> bool {
        !self.separation.is_empty()
    }

    /// Coordinate range of `block` for `actor` inside a flat point.
    pub fn block_range(&self, actor: usize, block: usize) -> Range<usize> {
        let start = actor * self.actor_width()
            + self.blocks[..block].iter().map(Block::width).sum::<usize>();
        start..start + self.blocks[block].width()
    }

    /// Checks every [`StatePoint`] invariant. Returns a description of the first violation.
    pub fn check(&self, x: &StatePoint) -> std::result::Result<(), String> {
        if x.len() != self.dim() {
            return Err(format!("point has {} coordinates, space needs {}", x.len(), self.dim()));
        }
        for actor in 0..self.actors {
            for (b, block) in self.blocks.iter().enumerate() {
                let v = &x.0[self.block_range(actor, b)];
                match block {
                    Block::Interval { bounds, .. } => {
                        for (c, (&xi, &(lo, hi))) in v.iter().zip(bounds).enumerate() {
                            if !(lo <= xi && xi <= hi) {
                                return Err(format!("actor {actor} block {b} coord {c} = {xi} outside [{lo}, {hi}]"));
                            }
                        }
                    }
                    Block::Sphere { .. } => {
                        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                        if (norm - 1.0).abs() > 1e-12 {
                            return Err(format!("actor {actor} block {b} sphere norm {norm}"));
                        }
                    }
                    Block::Discrete { values, .. } => {
                        if !values.contains(&v[0]) {
                            return Err(format!("actor {actor} block {b} value {} not in set", v[0]));
                        }
                    }
                }
            }
        }
        if !self.separation_holds(&x.0) {
            return Err("separation constraint violated".into());
        }
        Ok(())
    }

    pub fn contains(&self, x: &StatePoint) -> bool {
        self.check(x).is_ok()
    }

    fn separation_holds(&self, x: &[f64]) -> bool {
        self.first_violation(x).is_none()
    }

    /// First actor pair `(i, j)`, `i < j`, violating a separation constraint.
    fn first_violation(&self, x: &[f64]) -> Option<(usize, usize)> {
        let w = self.actor_width();
        for sep in &self.separation {
            for i in 0..self.actors {
                for j in i + 1..self.actors {
                    let d2: f64 = sep
                        .coords
                        .iter()
                        .map(|&c| {
                            let d = x[i * w + c] - x[j * w + c];
                            d * d
                        })
                        .sum();
                    if d2.sqrt() <= sep.radii[i][j] {
                        return Some((i, j));
                    }
                }
            }
        }
        None
    }
}

/// One element of a [`StateSpace`], in the flat layout described there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StatePoint(pub Vec<f64>);

impl StatePoint {
    pub fn new(coords: Vec<f64>) -> Self {
        StatePoint(coords)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for StatePoint {
    fn from(v: Vec<f64>) -> Self {
        StatePoint(v)
    }
}

/// Perturbation radius per block (shared by all actors) or per actor and block.
///
/// Interval blocks move by `Uniform[-r, r]` per coordinate with billiard
/// reflection; spheres by a `Uniform[-r, r]^(n+1)` vector followed by
/// renormalisation; discrete blocks by a uniform index step in `[-floor(r), floor(r)]`,
/// reflected at the ends. `r = inf` on a discrete block resamples it uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PerturbationRadii(pub Vec<f64>);

impl PerturbationRadii {
    pub fn new(radii: impl Into<Vec<f64>>) -> Self {
        PerturbationRadii(radii.into())
    }

    pub fn zero(space: &StateSpace) -> Self {
        PerturbationRadii(vec![0.0; space.blocks.len()])
    }

    pub fn validate(&self, space: &StateSpace) -> Result<()> {
        let nb = space.blocks.len();
        if self.0.len() != nb && self.0.len() != nb * space.actors {
            return Err(Error::InvalidRadii(format!(
                "expected {nb} (shared) or {} (per actor) radii, got {}",
                nb * space.actors,
                self.0.len()
            )));
        }
        if let Some(r) = self.0.iter().find(|r| !(**r >= 0.0)) {
            return Err(Error::InvalidRadii(format!("radius {r} is negative or NaN")));
        }
        for (i, r) in self.0.iter().enumerate() {
            if r.is_infinite() && !matches!(space.blocks[i % nb], Block::Discrete { .. }) {
                return Err(Error::InvalidRadii("only discrete blocks accept an infinite radius".into()));
            }
        }
        Ok(())
    }

    pub fn radius(&self, actor: usize, block: usize, blocks: usize) -> f64 {
        if self.0.len() == blocks {
            self.0[block]
        } else {
            self.0[actor * blocks + block]
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&r| r == 0.0)
    }
}

/// Billiard reflection of the segment `x + t * delta`, `t in [0, 1]`, inside `[lo, hi]`.
///
/// Exact for any `delta`: the unfolded coordinate is reduced modulo the
/// period `2 (hi - lo)` and folded back.
pub fn reflect_interval(x: f64, delta: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    if width <= 0.0 {
        return lo;
    }
    let y = x + delta;
    if (lo..=hi).contains(&y) {
        return y;
    }
    let period = 2.0 * width;
    let m = (y - lo).rem_euclid(period);
    let folded = if m > width { period - m } else { m };
    (lo + folded).clamp(lo, hi)
}

/// Index reflection on `{0, .., n-1}` with period `2n` (`-1 -> 0`, `n -> n-1`).
fn reflect_index(i: i64, n: i64) -> usize {
    let m = i.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

/// Normalises a raw draw from `[-1, 1]^(n+1)` if it passes the acceptance rule
/// `SPHERE_MIN_NORM < |q| < 1`.
pub fn sphere_from_raw(raw: &[f64]) -> Option<Vec<f64>> {
    let norm = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm > SPHERE_MIN_NORM && norm < 1.0 {
        Some(normalize(raw, norm))
    } else {
        None
    }
}

fn normalize(v: &[f64], norm: f64) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().map(|c| c / norm).collect();
    // one refinement pass keeps |out| within a few ulps of 1
    let n2 = out.iter().map(|c| c * c).sum::<f64>().sqrt();
    out.iter_mut().for_each(|c| *c /= n2);
    out
}

/// Uniform point on `S^n` by acceptance-rejection in the enclosing cube.
pub fn sample_sphere_uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    assert!(n >= 1, "sphere dimension must be >= 1");
    let mut raw = vec![0.0; n + 1];
    loop {
        raw.iter_mut().for_each(|c| *c = rng.random_range(-1.0..=1.0));
        if let Some(q) = sphere_from_raw(&raw) {
            return q;
        }
    }
}

fn sample_actor<R: Rng + ?Sized>(space: &StateSpace, out: &mut Vec<f64>, rng: &mut R) {
    for block in &space.blocks {
        match block {
            Block::Interval { bounds, .. } => {
                for &(lo, hi) in bounds {
                    out.push(if hi > lo { lo + (hi - lo) * rng.random::<f64>() } else { lo });
                }
            }
            Block::Sphere { dim, .. } => out.extend(sample_sphere_uniform(*dim, rng)),
            Block::Discrete { values, .. } => out.push(values[rng.random_range(0..values.len())]),
        }
    }
}

fn sample_product<R: Rng + ?Sized>(space: &StateSpace, rng: &mut R) -> StatePoint {
    let mut coords = Vec::with_capacity(space.dim());
    for _ in 0..space.actors {
        sample_actor(space, &mut coords, rng);
    }
    StatePoint(coords)
}

/// Uniform sample from `space`. Spaces with separation constraints are
/// sampled by [`sample_uniform_constrained`] with `space.burn_in` steps.
pub fn sample_uniform<R: Rng + ?Sized>(space: &StateSpace, rng: &mut R) -> Result<StatePoint> {
    if space.is_constrained() {
        sample_uniform_constrained(space, space.burn_in, rng)
    } else {
        Ok(sample_product(space, rng))
    }
}

fn perturb_actor<R: Rng + ?Sized>(
    space: &StateSpace,
    r: &PerturbationRadii,
    actor: usize,
    x: &[f64],
    out: &mut [f64],
    rng: &mut R,
) -> Result<()> {
    let nb = space.blocks.len();
    for (b, block) in space.blocks.iter().enumerate() {
        let range = space.block_range(actor, b);
        let radius = r.radius(actor, b, nb);
        let src = &x[range.clone()];
        let dst = &mut out[range];
        if radius == 0.0 {
            dst.copy_from_slice(src);
            continue;
        }
        match block {
            Block::Interval { bounds, .. } => {
                for ((d, &s), &(lo, hi)) in dst.iter_mut().zip(src).zip(bounds) {
                    *d = reflect_interval(s, rng.random_range(-radius..=radius), lo, hi);
                }
            }
            Block::Sphere { .. } => loop {
                let moved: Vec<f64> = src.iter().map(|s| s + rng.random_range(-radius..=radius)).collect();
                let norm = moved.iter().map(|c| c * c).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    dst.copy_from_slice(&normalize(&moved, norm));
                    break;
                }
            },
            Block::Discrete { values, .. } => {
                let n = values.len();
                let idx = values
                    .iter()
                    .position(|v| *v == src[0])
                    .ok_or_else(|| Error::InvalidSpace(format!("value {} not in discrete block {b}", src[0])))?;
                dst[0] = if radius.is_infinite() {
                    values[rng.random_range(0..n)]
                } else {
                    let w = radius.floor().min((1u64 << 40) as f64) as i64;
                    let step = rng.random_range(-w..=w);
                    values[reflect_index(idx as i64 + step, n as i64)]
                };
            }
        }
    }
    Ok(())
}

const FULL_REDRAW_EVERY: usize = 100;

/// Draws from the perturbation kernel `D(x, r)`.
///
/// Under separation constraints the offending actor's perturbation is redrawn
/// until the result is feasible, at most `space.retry_cap` times. Every
/// hundredth retry redraws all actors.
pub fn perturb<R: Rng + ?Sized>(
    x: &StatePoint,
    r: &PerturbationRadii,
    space: &StateSpace,
    rng: &mut R,
) -> Result<StatePoint> {
    let mut out = vec![0.0; x.len()];
    for actor in 0..space.actors {
        perturb_actor(space, r, actor, &x.0, &mut out, rng)?;
    }
    if space.is_constrained() {
        let mut retries = 0;
        while let Some((_, j)) = space.first_violation(&out) {
            if retries >= space.retry_cap {
                return Err(Error::RetryCapExceeded { retries });
            }
            retries += 1;
            if retries % FULL_REDRAW_EVERY == 0 {
                // The offender alone can be boxed in by an already moved neighbour.
                for actor in 0..space.actors {
                    perturb_actor(space, r, actor, &x.0, &mut out, rng)?;
                }
            } else {
                perturb_actor(space, r, j, &x.0, &mut out, rng)?;
            }
        }
    }
    Ok(StatePoint(out))
}

/// Proposal radii that make one Metropolis step an independent uniform proposal
/// on interval and discrete blocks.
fn full_width_radii(space: &StateSpace) -> PerturbationRadii {
    PerturbationRadii(
        space
            .blocks
            .iter()
            .map(|b| match b {
                Block::Interval { bounds, .. } => bounds.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max),
                Block::Sphere { .. } => 1.0,
                Block::Discrete { .. } => f64::INFINITY,
            })
            .collect(),
    )
}

/// Acceptance statistics of a constrained sampling run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstrainedStats {
    pub initial_attempts: usize,
    pub proposed: usize,
    pub accepted: usize,
}

/// Uniform sampling on a separation-constrained product by symmetric
/// random-walk Metropolis: proposals violating a constraint are rejected.
pub fn sample_uniform_constrained<R: Rng + ?Sized>(
    space: &StateSpace,
    burn_in: usize,
    rng: &mut R,
) -> Result<StatePoint> {
    sample_uniform_constrained_with_stats(space, burn_in, rng).map(|(x, _)| x)
}

pub fn sample_uniform_constrained_with_stats<R: Rng + ?Sized>(
    space: &StateSpace,
    burn_in: usize,
    rng: &mut R,
) -> Result<(StatePoint, ConstrainedStats)> {
    let mut stats = ConstrainedStats { initial_attempts: 0, proposed: 0, accepted: 0 };
    let mut x = loop {
        if stats.initial_attempts >= space.retry_cap.max(1) {
            return Err(Error::NoFeasiblePoint { attempts: stats.initial_attempts });
        }
        stats.initial_attempts += 1;
        let candidate = sample_product(space, rng);
        if space.separation_holds(&candidate.0) {
            break candidate;
        }
    };
    let proposal = full_width_radii(space);
    let mut buf = vec![0.0; x.len()];
    for _ in 0..burn_in {
        for actor in 0..space.actors {
            perturb_actor(space, &proposal, actor, &x.0, &mut buf, rng)?;
        }
        stats.proposed += 1;
        if space.separation_holds(&buf) {
            stats.accepted += 1;
            std::mem::swap(&mut x.0, &mut buf);
        }
    }
    Ok((x, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, SeedSource};
    use proptest::prelude::{prop_assert, proptest};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn rng(i: u64) -> crate::rng::StreamRng {
        SeedSource::new(0xC0FFEE).stream_for(Purpose::User, 0, i)
    }

    fn chi_square_uniform(samples: &[f64], lo: f64, hi: f64, bins: usize) -> (f64, f64) {
        let mut counts = vec![0usize; bins];
        for &s in samples {
            let b = (((s - lo) / (hi - lo)) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let expected = samples.len() as f64 / bins as f64;
        let stat = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let crit = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.999);
        (stat, crit)
    }

    #[test]
    fn degenerate_interval_requires_flag() {
        assert!(StateSpace::new(vec![Block::interval(vec![(2.0, 2.0)])]).is_err());
        let space = StateSpace::new(vec![Block::interval(vec![(-1.0, 1.0)])]).unwrap();
        let mut deg = space.clone();
        deg.blocks = vec![Block::interval(vec![(2.5, 2.5)])];
        let deg = deg.with_degenerate().unwrap();
        let x = sample_uniform(&deg, &mut rng(0)).unwrap();
        assert_eq!(x.0, vec![2.5]);
    }

    #[test]
    fn invalid_spaces_are_rejected() {
        assert!(StateSpace::new(vec![]).is_err());
        assert!(StateSpace::new(vec![Block::interval(vec![(1.0, -1.0)])]).is_err());
        assert!(StateSpace::new(vec![Block::sphere(0)]).is_err());
        assert!(StateSpace::new(vec![Block::discrete(vec![])]).is_err());
        let base = StateSpace::cube(1, 0.0, 1.0).unwrap();
        // separation needs >= 2 actors
        assert!(base.clone().with_actors(1, vec![Separation::uniform(vec![0], 1, 0.5)]).is_err());
        // asymmetric radii
        let sep = Separation { coords: vec![0], radii: vec![vec![0.0, 0.1], vec![0.2, 0.0]] };
        assert!(base.clone().with_actors(2, vec![sep]).is_err());
        let sep = Separation::uniform(vec![0], 2, -0.1);
        assert!(base.with_actors(2, vec![sep]).is_err());
    }

    #[test]
    fn uniform_box_mean_within_three_sigma() {
        let space = StateSpace::cube(2, -8.0, 8.0).unwrap();
        let mut r = rng(1);
        let n = 1_000_000;
        let mut sums = [0.0; 2];
        for _ in 0..n {
            let x = sample_uniform(&space, &mut r).unwrap();
            sums[0] += x.0[0];
            sums[1] += x.0[1];
        }
        let sigma = (16.0 / 12f64.sqrt()) / 1e3;
        for s in sums {
            assert!((s / n as f64).abs() < 3.0 * sigma, "mean {}", s / n as f64);
        }
    }

    #[test]
    fn sphere_component_is_unit() {
        let space = StateSpace::new(vec![Block::cube(3, -50.0, 50.0), Block::sphere(3)]).unwrap();
        let mut r = rng(2);
        for _ in 0..1000 {
            let x = sample_uniform(&space, &mut r).unwrap();
            let q = &x.0[space.block_range(0, 1)];
            let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-12);
            assert!(space.contains(&x));
        }
    }

    #[test]
    fn sphere_acceptance_rule() {
        assert_eq!(sphere_from_raw(&[1.2, 0.0, 0.0, 0.0]), None);
        assert_eq!(sphere_from_raw(&[0.6, 0.0, 0.8, 0.1]), None);
        assert_eq!(sphere_from_raw(&[1e-7, 0.0, 0.0, 0.0]), None);
        assert_eq!(sphere_from_raw(&[0.3, 0.0, 0.0, 0.0]), Some(vec![1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn sphere_samples_have_centered_mean() {
        let mut r = rng(3);
        let n = 1_000_000;
        let mut mean = [0.0; 4];
        for _ in 0..n {
            let q = sample_sphere_uniform(3, &mut r);
            for (m, c) in mean.iter_mut().zip(&q) {
                *m += c / n as f64;
            }
        }
        let norm = mean.iter().map(|c| c * c).sum::<f64>().sqrt();
        assert!(norm < 0.01, "mean norm {norm}");
    }

    #[test]
    fn reflect_examples() {
        assert!((reflect_interval(7.9, 0.3, -8.0, 8.0) - 7.8).abs() < 1e-12);
        assert_eq!(reflect_interval(3.25, 0.0, -8.0, 8.0), 3.25);
        assert!((reflect_interval(-7.9, -0.3, -8.0, 8.0) + 7.8).abs() < 1e-12);
        // several bounces: 0.5 + 5.2 in [0, 1] -> 5.7 mod 2 = 1.7 -> 0.3
        assert!((reflect_interval(0.5, 5.2, 0.0, 1.0) - 0.3).abs() < 1e-12);
        assert!((reflect_interval(0.5, -5.2, 0.0, 1.0) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn reflection_preserves_uniform_law() {
        let mut r = rng(4);
        for eps in [0.15, 1.0, 5.0] {
            let samples: Vec<f64> = (0..1_000_000)
                .map(|_| {
                    let x0 = r.random_range(-8.0..8.0);
                    reflect_interval(x0, r.random_range(-eps..=eps), -8.0, 8.0)
                })
                .collect();
            let (stat, crit) = chi_square_uniform(&samples, -8.0, 8.0, 100);
            assert!(stat < crit, "eps {eps}: chi2 {stat} >= {crit}");
        }
    }

    #[test]
    fn zero_radius_is_identity() {
        let space = StateSpace::new(vec![Block::cube(2, -1.0, 1.0), Block::sphere(2), Block::discrete(vec![1.0, 2.0, 3.0])])
            .unwrap();
        let mut r = rng(5);
        let x = sample_uniform(&space, &mut r).unwrap();
        let y = perturb(&x, &PerturbationRadii::zero(&space), &space, &mut r).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn sphere_perturbation_stays_unit_and_local() {
        let space = StateSpace::new(vec![Block::sphere(3)]).unwrap();
        let mut r = rng(6);
        let x = StatePoint(vec![0.5, 0.5, 0.5, 0.5]);
        let radii = PerturbationRadii::new(vec![0.1]);
        let mut mean = [0.0; 4];
        let n = 20_000;
        for _ in 0..n {
            let y = perturb(&x, &radii, &space, &mut r).unwrap();
            let norm = y.0.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-12);
            for (m, c) in mean.iter_mut().zip(&y.0) {
                *m += c / n as f64;
            }
        }
        // symmetric kernel: the mean points back at the pre-image direction
        let dot: f64 = mean.iter().zip(&x.0).map(|(a, b)| a * b).sum();
        let norm = mean.iter().map(|c| c * c).sum::<f64>().sqrt();
        assert!(dot / norm > 0.999);
    }

    #[test]
    fn perturbed_uniform_stays_uniform() {
        let space = StateSpace::cube(2, -8.0, 8.0).unwrap();
        let radii = PerturbationRadii::new(vec![1.0]);
        let mut r = rng(7);
        let mut first = Vec::with_capacity(200_000);
        let mut second = Vec::with_capacity(200_000);
        for _ in 0..200_000 {
            let x = sample_uniform(&space, &mut r).unwrap();
            let y = perturb(&x, &radii, &space, &mut r).unwrap();
            first.push(y.0[0]);
            second.push(y.0[1]);
        }
        for s in [first, second] {
            let (stat, crit) = chi_square_uniform(&s, -8.0, 8.0, 100);
            assert!(stat < crit, "chi2 {stat} >= {crit}");
        }
    }

    #[test]
    fn discrete_kernel_is_local_and_uniform_stationary() {
        let values: Vec<f64> = (0..7).map(|v| v as f64 * 10.0).collect();
        let space = StateSpace::new(vec![Block::discrete(values.clone())]).unwrap();
        let radii = PerturbationRadii::new(vec![2.0]);
        let mut r = rng(8);
        let mut counts = [0usize; 7];
        let n = 700_000;
        for _ in 0..n {
            let x = sample_uniform(&space, &mut r).unwrap();
            let y = perturb(&x, &radii, &space, &mut r).unwrap();
            let i = values.iter().position(|v| *v == x.0[0]).unwrap() as i64;
            let j = values.iter().position(|v| *v == y.0[0]).unwrap() as i64;
            assert!((i - j).abs() <= 2);
            counts[j as usize] += 1;
        }
        let expected = n as f64 / 7.0;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let crit = ChiSquared::new(6.0).unwrap().inverse_cdf(0.999);
        assert!(stat < crit, "{counts:?}");
    }

    #[test]
    fn constrained_sampler_without_radius_is_product_uniform() {
        let base = StateSpace::cube(1, 0.0, 1.0).unwrap();
        let space = base.with_actors(2, vec![Separation::uniform(vec![0], 2, 0.0)]).unwrap();
        let mut r = rng(9);
        let (_, stats) = sample_uniform_constrained_with_stats(&space, 1000, &mut r).unwrap();
        assert_eq!(stats.initial_attempts, 1);
        assert_eq!(stats.accepted, stats.proposed);
    }

    #[test]
    fn constrained_acceptance_matches_feasible_area() {
        let base = StateSpace::cube(1, 0.0, 1.0).unwrap();
        let space = base.with_actors(2, vec![Separation::uniform(vec![0], 2, 0.5)]).unwrap();
        let mut r = rng(10);
        let n = 100_000;
        let (x, stats) = sample_uniform_constrained_with_stats(&space, n, &mut r).unwrap();
        assert!(space.contains(&x));
        let frac = stats.accepted as f64 / n as f64;
        let sigma = (0.25f64 * 0.75 / n as f64).sqrt();
        assert!((frac - 0.25).abs() < 3.0 * sigma, "acceptance {frac}");
    }

    #[test]
    fn constrained_perturbation_respects_separation() {
        let base = StateSpace::cube(2, -1.0, 1.0).unwrap();
        let space = base.with_actors(3, vec![Separation::uniform(vec![0, 1], 3, 0.3)]).unwrap();
        let mut r = rng(11);
        let radii = PerturbationRadii::new(vec![0.2]);
        let mut x = sample_uniform(&space, &mut r).unwrap();
        for _ in 0..2000 {
            x = perturb(&x, &radii, &space, &mut r).unwrap();
            assert!(space.contains(&x));
        }
    }

    #[test]
    fn unsatisfiable_constraints_are_reported() {
        let mut base = StateSpace::cube(1, 0.0, 1.0).unwrap();
        base.retry_cap = 50;
        let space = base.with_actors(2, vec![Separation::uniform(vec![0], 2, 2.0)]).unwrap();
        let err = sample_uniform(&space, &mut rng(12)).unwrap_err();
        assert!(matches!(err, Error::NoFeasiblePoint { attempts: 50 }));
    }

    #[test]
    fn same_seed_same_points() {
        let space = StateSpace::new(vec![Block::cube(3, -50.0, 50.0), Block::sphere(3)]).unwrap();
        let radii = PerturbationRadii::new(vec![7.0, 0.5]);
        let run = || {
            let mut r = rng(13);
            let x = sample_uniform(&space, &mut r).unwrap();
            perturb(&x, &radii, &space, &mut r).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn reflection_stays_in_bounds(x in 0.0f64..1.0, delta in -100.0f64..100.0, lo in -10.0f64..10.0, w in 1e-3f64..20.0) {
            let x = lo + x * w;
            let y = reflect_interval(x, delta, lo, lo + w);
            prop_assert!(lo <= y && y <= lo + w);
        }

        #[test]
        fn reflection_reverses_without_crossing(x in -7.0f64..7.0, delta in -1.0f64..1.0) {
            let y = reflect_interval(x, delta, -8.0, 8.0);
            let back = reflect_interval(y, -delta, -8.0, 8.0);
            prop_assert!((back - x).abs() < 1e-12);
        }
    }
}
