//! Van der Pol oscillator steered to the origin by a 10-stage nonlinear MPC.
//!
//! The solver is a multiple-shooting SQP on the exact Lagrangian Hessian,
//! falling back to the Gauss-Newton Hessian where the condensed Hessian is
//! indefinite. Stage variables are
//! `(u_i, s_i)`; the constraints are `s_0 = x` and `s_{i+1} = Phi(s_i, u_i)`
//! with `Phi` one RK4 step of length `h`. State steps are condensed into an
//! affine function of the control steps, leaving a small box-constrained QP
//! that is solved exactly by an active-set method. An l1 merit function with
//! Armijo backtracking globalizes the iteration.

// Small dense matrices indexed by stage and coordinate.
#![allow(clippy::needless_range_loop)]

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::rk4::rk4_step;
use crate::controllers::{ControlOutcome, ControllerOracle, Strategy, TwoArgController};
use crate::error::Result;
use crate::oracle::OracleError;
use crate::space::{StatePoint, StateSpace};

pub const VDP_STAGES: usize = 10;
pub const VDP_BOUND: f64 = 8.0;

type V2 = [f64; 2];
type M2 = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VdpProblem {
    #[serde(default = "default_stages")]
    pub stages: usize,
    /// Discretization step per stage (s).
    #[serde(default = "default_h")]
    pub h: f64,
    /// Control bound `|u| <= u_max`.
    #[serde(default = "default_u_max")]
    pub u_max: f64,
    #[serde(default = "default_control_weight")]
    pub control_weight: f64,
    /// Tolerance on shooting defects and on the projected KKT gradient.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_stages() -> usize {
    VDP_STAGES
}
fn default_h() -> f64 {
    0.1
}
fn default_u_max() -> f64 {
    10.0
}
fn default_control_weight() -> f64 {
    1e-5
}
fn default_tol() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    200
}

impl Default for VdpProblem {
    fn default() -> Self {
        VdpProblem {
            stages: default_stages(),
            h: default_h(),
            u_max: default_u_max(),
            control_weight: default_control_weight(),
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

impl VdpProblem {
    pub fn space() -> StateSpace {
        StateSpace::cube(2, -VDP_BOUND, VDP_BOUND).expect("valid box")
    }

    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if self.stages < 2 || !(self.h > 0.0) || !(self.u_max > 0.0) || !(self.control_weight > 0.0) || !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidConfig(format!("invalid Van der Pol problem {self:?}")));
        }
        Ok(())
    }
}

/// `x1' = x2`, `x2' = u (1 - x1^2) x2 - x1`.
pub fn vdp_dynamics(x: &V2, u: f64) -> V2 {
    [x[1], u * (1.0 - x[0] * x[0]) * x[1] - x[0]]
}

fn jac_x(x: &V2, u: f64) -> M2 {
    [[0.0, 1.0], [-2.0 * u * x[0] * x[1] - 1.0, u * (1.0 - x[0] * x[0])]]
}

fn jac_u(x: &V2) -> V2 {
    [0.0, (1.0 - x[0] * x[0]) * x[1]]
}

fn mat_mul(a: &M2, b: &M2) -> M2 {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j]))
}

fn mat_vec(a: &M2, v: &V2) -> V2 {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

const I2: M2 = [[1.0, 0.0], [0.0, 1.0]];

/// One RK4 step with its sensitivities `A = dPhi/dx` and `B = dPhi/du`.
pub fn rk4_with_sensitivities(x: &V2, u: f64, h: f64) -> (V2, M2, V2) {
    let stage = |y: &V2, dy_dx: &M2, dy_du: &V2| {
        let fx = jac_x(y, u);
        let k = vdp_dynamics(y, u);
        let kx = mat_mul(&fx, dy_dx);
        let ku = mat_vec(&fx, dy_du);
        let fu = jac_u(y);
        (k, kx, [ku[0] + fu[0], ku[1] + fu[1]])
    };
    let shift = |s: f64, k: &V2, kx: &M2, ku: &V2| -> (V2, M2, V2) {
        (
            [x[0] + s * k[0], x[1] + s * k[1]],
            std::array::from_fn(|i| std::array::from_fn(|j| I2[i][j] + s * kx[i][j])),
            [s * ku[0], s * ku[1]],
        )
    };
    let (k1, k1x, k1u) = stage(x, &I2, &[0.0, 0.0]);
    let (y2, y2x, y2u) = shift(h / 2.0, &k1, &k1x, &k1u);
    let (k2, k2x, k2u) = stage(&y2, &y2x, &y2u);
    let (y3, y3x, y3u) = shift(h / 2.0, &k2, &k2x, &k2u);
    let (k3, k3x, k3u) = stage(&y3, &y3x, &y3u);
    let (y4, y4x, y4u) = shift(h, &k3, &k3x, &k3u);
    let (k4, k4x, k4u) = stage(&y4, &y4x, &y4u);
    let c = h / 6.0;
    let next = std::array::from_fn(|i| x[i] + c * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    let a = std::array::from_fn(|i| std::array::from_fn(|j| I2[i][j] + c * (k1x[i][j] + 2.0 * k2x[i][j] + 2.0 * k3x[i][j] + k4x[i][j])));
    let b = std::array::from_fn(|i| c * (k1u[i] + 2.0 * k2u[i] + 2.0 * k3u[i] + k4u[i]));
    (next, a, b)
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VdpStatus {
    Converged,
    IterationLimit,
    LineSearchFailed,
    NonFinite,
    /// A KKT point costlier than the zero-control rollout from `x`.
    Dominated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VdpSolution {
    pub controls: Vec<f64>,
    pub states: Vec<V2>,
    pub exitflag: i32,
    pub status: VdpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub max_defect: f64,
    pub cost: f64,
}

/// Stage cost summed over the horizon.
pub fn vdp_cost(problem: &VdpProblem, controls: &[f64], states: &[V2]) -> f64 {
    controls.iter().zip(states).map(|(u, s)| problem.control_weight * u * u + s[0] * s[0] + s[1] * s[1]).sum()
}

/// Cost of the trajectory that applies `u = 0` from `x`, or `None` if it diverges.
pub fn zero_control_cost(problem: &VdpProblem, x: &V2) -> Option<f64> {
    let zero = vec![0.0; problem.stages];
    let states = rollout(problem, x, &zero)?;
    Some(vdp_cost(problem, &zero, &states))
}

/// Largest shooting defect of a candidate trajectory, re-integrated from scratch.
pub fn max_shooting_defect(problem: &VdpProblem, x: &V2, controls: &[f64], states: &[V2]) -> f64 {
    let mut worst = (states[0][0] - x[0]).abs().max((states[0][1] - x[1]).abs());
    for i in 0..problem.stages - 1 {
        let next = match rk4_step(|y| vdp_dynamics(y, controls[i]), &states[i], problem.h) {
            Ok(n) => n,
            Err(_) => return f64::INFINITY,
        };
        worst = worst.max((states[i + 1][0] - next[0]).abs()).max((states[i + 1][1] - next[1]).abs());
    }
    worst
}

struct Linearization {
    defects: Vec<V2>,
    a: Vec<M2>,
    b: Vec<V2>,
}

fn linearize(problem: &VdpProblem, x: &V2, u: &[f64], s: &[V2]) -> Option<Linearization> {
    let n = problem.stages;
    let mut defects = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n - 1);
    let mut b = Vec::with_capacity(n - 1);
    defects.push([s[0][0] - x[0], s[0][1] - x[1]]);
    for i in 0..n - 1 {
        let (next, ai, bi) = rk4_with_sensitivities(&s[i], u[i], problem.h);
        if !(next.iter().all(|v| v.is_finite()) && ai.iter().flatten().all(|v| v.is_finite()) && bi.iter().all(|v| v.is_finite())) {
            return None;
        }
        defects.push([s[i + 1][0] - next[0], s[i + 1][1] - next[1]]);
        a.push(ai);
        b.push(bi);
    }
    Some(Linearization { defects, a, b })
}

/// Hessian of `lam' Phi(s, u)` in `(s, u)`, by central differences of the
/// exact sensitivities.
fn stage_curvature(s: &V2, u: f64, lam: &V2, h: f64) -> [[f64; 3]; 3] {
    let gradient = |z: [f64; 3]| {
        let (_, a, b) = rk4_with_sensitivities(&[z[0], z[1]], z[2], h);
        [
            a[0][0] * lam[0] + a[1][0] * lam[1],
            a[0][1] * lam[0] + a[1][1] * lam[1],
            b[0] * lam[0] + b[1] * lam[1],
        ]
    };
    let z = [s[0], s[1], u];
    let mut q = [[0.0; 3]; 3];
    for j in 0..3 {
        let e = 1e-5 * (1.0 + z[j].abs());
        let (mut zp, mut zm) = (z, z);
        zp[j] += e;
        zm[j] -= e;
        let (gp, gm) = (gradient(zp), gradient(zm));
        for i in 0..3 {
            q[i][j] = (gp[i] - gm[i]) / (2.0 * e);
        }
    }
    for i in 0..3 {
        for j in 0..i {
            let avg = 0.5 * (q[i][j] + q[j][i]);
            q[i][j] = avg;
            q[j][i] = avg;
        }
    }
    q
}

fn defect_norms(defects: &[V2]) -> (f64, f64) {
    defects.iter().flatten().fold((0.0, 0.0), |(l1, inf), d| (l1 + d.abs(), f64::max(inf, d.abs())))
}

/// Multipliers of `s_{i+1} = Phi(s_i, u_i)` (index `i`) and of `s_0 = x`
/// (last entry), from stationarity in the states.
fn multipliers(s: &[V2], a: &[M2]) -> (Vec<V2>, V2) {
    let n = s.len();
    let mut lam = vec![[0.0; 2]; n - 1];
    lam[n - 2] = [2.0 * s[n - 1][0], 2.0 * s[n - 1][1]];
    for i in (0..n - 2).rev() {
        let at = &a[i + 1];
        let l = lam[i + 1];
        lam[i] = [2.0 * s[i + 1][0] + at[0][0] * l[0] + at[1][0] * l[1], 2.0 * s[i + 1][1] + at[0][1] * l[0] + at[1][1] * l[1]];
    }
    let (at, l) = (&a[0], lam[0]);
    let nu = [2.0 * s[0][0] + at[0][0] * l[0] + at[1][0] * l[1], 2.0 * s[0][1] + at[0][1] * l[0] + at[1][1] * l[1]];
    (lam, nu)
}

/// Projected gradient of the Lagrangian in the controls.
fn control_kkt_residual(problem: &VdpProblem, u: &[f64], b: &[V2], lam: &[V2]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..u.len() {
        let mut g = 2.0 * problem.control_weight * u[i];
        if i < b.len() {
            g += b[i][0] * lam[i][0] + b[i][1] * lam[i][1];
        }
        let projected = u[i] - (u[i] - g).clamp(-problem.u_max, problem.u_max);
        worst = worst.max(projected.abs());
    }
    worst
}

/// Minimizes `p'Hp/2 + g'p` over `lo <= p <= hi` (dense, row-major `H`,
/// positive definite) with a primal active-set method started at `p = 0`,
/// which must be feasible.
pub fn box_qp(h: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Option<Vec<f64>> {
    let n = g.len();
    let mut p = vec![0.0; n];
    // 0: free, -1: at lower bound, +1: at upper bound.
    let mut fixed = vec![0i8; n];
    for _ in 0..(10 * n + 10) {
        let free: Vec<usize> = (0..n).filter(|&j| fixed[j] == 0).collect();
        let mut target = p.clone();
        if !free.is_empty() {
            let m = free.len();
            let mut sub = vec![0.0; m * m];
            let mut rhs = vec![0.0; m];
            for (a, &i) in free.iter().enumerate() {
                rhs[a] = -g[i] - (0..n).filter(|&j| fixed[j] != 0).map(|j| h[i * n + j] * p[j]).sum::<f64>();
                for (b, &j) in free.iter().enumerate() {
                    sub[a * m + b] = h[i * n + j];
                }
            }
            let sol = cholesky_solve(&mut sub, &mut rhs, m)?;
            for (a, &i) in free.iter().enumerate() {
                target[i] = sol[a];
            }
        }
        let dir: Vec<f64> = (0..n).map(|j| target[j] - p[j]).collect();
        let scale = 1.0 + p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dir.iter().all(|d| d.abs() <= 1e-14 * scale) {
            let grad: Vec<f64> = (0..n).map(|i| g[i] + (0..n).map(|j| h[i * n + j] * p[j]).sum::<f64>()).collect();
            // Release the bound whose multiplier has the wrong sign by the most.
            let release = (0..n)
                .filter(|&j| (fixed[j] == -1 && grad[j] < 0.0) || (fixed[j] == 1 && grad[j] > 0.0))
                .max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs()));
            match release {
                Some(j) => fixed[j] = 0,
                None => return Some(p),
            }
            continue;
        }
        let mut step = 1.0;
        let mut blocking = None;
        for &j in &free {
            let limit = if dir[j] < 0.0 {
                (lo[j] - p[j]) / dir[j]
            } else if dir[j] > 0.0 {
                (hi[j] - p[j]) / dir[j]
            } else {
                continue;
            };
            if limit < step {
                step = limit.max(0.0);
                blocking = Some(j);
            }
        }
        for j in 0..n {
            p[j] += step * dir[j];
        }
        if let Some(j) = blocking {
            if dir[j] < 0.0 {
                p[j] = lo[j];
                fixed[j] = -1;
            } else {
                p[j] = hi[j];
                fixed[j] = 1;
            }
        }
    }
    None
}

fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[i * n + k] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= a[k * n + i] * b[k];
        }
        b[i] = v / a[i * n + i];
    }
    Some(b.to_vec())
}

fn rollout(problem: &VdpProblem, x: &V2, u: &[f64]) -> Option<Vec<V2>> {
    let mut states = Vec::with_capacity(problem.stages);
    states.push(*x);
    for i in 0..problem.stages - 1 {
        let next = rk4_step(|y| vdp_dynamics(y, u[i]), &states[i], problem.h).ok()?;
        states.push(next);
    }
    Some(states)
}

fn merit(problem: &VdpProblem, x: &V2, u: &[f64], s: &[V2], mu: f64) -> Option<f64> {
    let mut value = vdp_cost(problem, u, s) + mu * ((s[0][0] - x[0]).abs() + (s[0][1] - x[1]).abs());
    for i in 0..problem.stages - 1 {
        let next = rk4_step(|y| vdp_dynamics(y, u[i]), &s[i], problem.h).ok()?;
        value += mu * ((s[i + 1][0] - next[0]).abs() + (s[i + 1][1] - next[1]).abs());
    }
    value.is_finite().then_some(value)
}

#[allow(clippy::too_many_arguments)]
fn finish(problem: &VdpProblem, x: &V2, u: Vec<f64>, s: Vec<V2>, status: VdpStatus, iterations: usize, kkt: f64, defect: f64) -> VdpSolution {
    let cost = vdp_cost(problem, &u, &s);
    let status = match (status, zero_control_cost(problem, x)) {
        (VdpStatus::Converged, Some(zero)) if cost > zero => VdpStatus::Dominated,
        (status, _) => status,
    };
    VdpSolution {
        controls: u,
        states: s,
        exitflag: (status == VdpStatus::Converged) as i32,
        status,
        iterations,
        kkt_residual: kkt,
        max_defect: defect,
        cost,
    }
}

/// Solves the MPC problem for state `x` from the warm start `(0, y, 0, y, ..)`.
pub fn vdp_solve(problem: &VdpProblem, x: &V2, y: &V2) -> VdpSolution {
    let n = problem.stages;
    let mut u = vec![0.0; n];
    let mut s = vec![*y; n];
    let mut mu: f64 = 1.0;
    let mut rho: f64 = 0.0;
    let (mut kkt, mut defect) = (f64::INFINITY, f64::INFINITY);
    for iter in 0..problem.max_iter {
        let Some(lin) = linearize(problem, x, &u, &s) else {
            return finish(problem, x, u, s, VdpStatus::NonFinite, iter, kkt, defect);
        };
        let (l1, inf) = defect_norms(&lin.defects);
        let (lam, _) = multipliers(&s, &lin.a);
        kkt = control_kkt_residual(problem, &u, &lin.b, &lam);
        defect = inf;
        if defect <= problem.tol && kkt <= problem.tol {
            return finish(problem, x, u, s, VdpStatus::Converged, iter, kkt, defect);
        }

        // Condense: ds_i = c_i + G_i du, G_i stored as 2 x n row-major.
        let mut c = vec![[0.0; 2]; n];
        let mut g_mat = vec![[[0.0; VDP_MAX_STAGES]; 2]; n];
        c[0] = [-lin.defects[0][0], -lin.defects[0][1]];
        for i in 0..n - 1 {
            let (a, b) = (&lin.a[i], &lin.b[i]);
            let ci = mat_vec(a, &c[i]);
            c[i + 1] = [ci[0] - lin.defects[i + 1][0], ci[1] - lin.defects[i + 1][1]];
            for r in 0..2 {
                for k in 0..=i {
                    g_mat[i + 1][r][k] = a[r][0] * g_mat[i][0][k] + a[r][1] * g_mat[i][1][k];
                }
                g_mat[i + 1][r][i] += b[r];
            }
        }
        let w = problem.control_weight;
        let mut hess = vec![0.0; n * n];
        let mut grad = vec![0.0; n];
        for j in 0..n {
            hess[j * n + j] = 2.0 * w;
            grad[j] = 2.0 * w * u[j];
        }
        for i in 0..n {
            let gi = &g_mat[i];
            let base = [s[i][0] + c[i][0], s[i][1] + c[i][1]];
            for j in 0..i {
                grad[j] += 2.0 * (gi[0][j] * base[0] + gi[1][j] * base[1]);
                for k in 0..i {
                    hess[j * n + k] += 2.0 * (gi[0][j] * gi[0][k] + gi[1][j] * gi[1][k]);
                }
            }
        }
        let (gn_hess, gn_grad) = (hess.clone(), grad.clone());
        // Curvature of the dynamics weighted by the multipliers, mapped
        // through the condensing map (ds_i, du_i) = (c_i, 0) + P_i du.
        for i in 0..n - 1 {
            let q = stage_curvature(&s[i], u[i], &lam[i], problem.h);
            let row = |r: usize, k: usize| if r < 2 { g_mat[i][r][k] } else { (k == i) as u8 as f64 };
            let offset = [c[i][0], c[i][1], 0.0];
            for j in 0..=i {
                let mut qp = [0.0; 3];
                for a in 0..3 {
                    qp[a] = (0..3).map(|b| q[a][b] * row(b, j)).sum();
                }
                for a in 0..3 {
                    grad[j] += qp[a] * offset[a];
                }
                for k in 0..=i {
                    hess[k * n + j] += (0..3).map(|a| row(a, k) * qp[a]).sum::<f64>();
                }
            }
        }
        let lo: Vec<f64> = u.iter().map(|v| -problem.u_max - v).collect();
        let hi: Vec<f64> = u.iter().map(|v| problem.u_max - v).collect();
        let mut gauss_newton = false;
        let mut accepted: Option<(Vec<f64>, Vec<V2>)> = None;
        loop {
            let (base, gradient) = if gauss_newton { (&gn_hess, &gn_grad) } else { (&hess, &grad) };
            let mut damped = base.clone();
            for j in 0..n {
                damped[j * n + j] += rho;
            }
            // Indefinite on the free subspace: damp harder.
            let Some(du) = box_qp(&damped, gradient, &lo, &hi) else {
                if !gauss_newton {
                    gauss_newton = true;
                    continue;
                }
                rho = (rho * 4.0).max(1e-6);
                if rho > 1e12 {
                    return finish(problem, x, u, s, VdpStatus::LineSearchFailed, iter + 1, kkt, defect);
                }
                continue;
            };
            let ds: Vec<V2> = (0..n)
                .map(|i| {
                    let gi = &g_mat[i];
                    let (mut a, mut b) = (c[i][0], c[i][1]);
                    for k in 0..i {
                        a += gi[0][k] * du[k];
                        b += gi[1][k] * du[k];
                    }
                    [a, b]
                })
                .collect();
            let step_norm = du.iter().chain(ds.iter().flatten()).fold(0.0f64, |m, v| m.max(v.abs()));
            if !step_norm.is_finite() {
                return finish(problem, x, u, s, VdpStatus::NonFinite, iter, kkt, defect);
            }
            let s_plus: Vec<V2> = s.iter().zip(&ds).map(|(a, d)| [a[0] + d[0], a[1] + d[1]]).collect();
            let (lam_plus, nu_plus) = multipliers(&s_plus, &lin.a);
            let lam_inf = lam_plus.iter().flatten().chain(nu_plus.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
            mu = mu.max(1.1 * lam_inf + 1.0);
            let slope = u.iter().zip(&du).map(|(a, d)| 2.0 * w * a * d).sum::<f64>()
                + s.iter().zip(&ds).map(|(a, d)| 2.0 * (a[0] * d[0] + a[1] * d[1])).sum::<f64>()
                - mu * l1;
            let Some(phi0) = merit(problem, x, &u, &s, mu) else {
                return finish(problem, x, u, s, VdpStatus::NonFinite, iter, kkt, defect);
            };
            let ut: Vec<f64> = u.iter().zip(&du).map(|(a, d)| (a + d).clamp(-problem.u_max, problem.u_max)).collect();
            let st = s_plus;
            if let Some(phi) = merit(problem, x, &ut, &st, mu) {
                if phi <= phi0 + 1e-4 * slope.min(0.0) {
                    u = ut;
                    s = st;
                    rho = if rho < 1e-9 { 0.0 } else { rho / 4.0 };
                    break;
                }
            }
            // Second-order correction against the Maratos effect: keep the
            // trial controls and re-integrate the states from x.
            if let Some(sc) = rollout(problem, x, &ut) {
                if let Some(phi) = merit(problem, x, &ut, &sc, mu) {
                    if phi <= phi0 + 1e-4 * slope.min(0.0) {
                        u = ut;
                        s = sc;
                        rho = if rho < 1e-9 { 0.0 } else { rho / 4.0 };
                        break;
                    }
                }
            }
            // Damping cannot shorten the feasibility part of the step, so
            // heavily damped directions are backtracked as well.
            if rho >= 1e3 {
                let mut t = 0.5;
                while t > 1e-8 {
                    let ut: Vec<f64> = u.iter().zip(&du).map(|(a, d)| (a + t * d).clamp(-problem.u_max, problem.u_max)).collect();
                    let st: Vec<V2> = s.iter().zip(&ds).map(|(a, d)| [a[0] + t * d[0], a[1] + t * d[1]]).collect();
                    if let Some(phi) = merit(problem, x, &ut, &st, mu) {
                        if phi <= phi0 + 1e-4 * t * slope.min(0.0) {
                            accepted = Some((ut, st));
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if let Some((ut, st)) = accepted.take() {
                    u = ut;
                    s = st;
                    break;
                }
            }
            rho = (rho * 4.0).max(1e-6);
            if rho > 1e12 {
                return finish(problem, x, u, s, VdpStatus::LineSearchFailed, iter + 1, kkt, defect);
            }
        }
    }
    // Final convergence test at the last iterate.
    if let Some(lin) = linearize(problem, x, &u, &s) {
        let (_, inf) = defect_norms(&lin.defects);
        let (lam, _) = multipliers(&s, &lin.a);
        kkt = control_kkt_residual(problem, &u, &lin.b, &lam);
        defect = inf;
        if defect <= problem.tol && kkt <= problem.tol {
            return finish(problem, x, u, s, VdpStatus::Converged, problem.max_iter, kkt, defect);
        }
    }
    finish(problem, x, u, s, VdpStatus::IterationLimit, problem.max_iter, kkt, defect)
}

/// Upper limit on horizon length for the fixed-size condensing buffers.
pub const VDP_MAX_STAGES: usize = 32;

/// The MPC controller `c(x, y)`; the control is the first-stage input.
#[derive(Debug, Clone, PartialEq)]
pub struct VdpController {
    pub problem: VdpProblem,
}

impl TwoArgController for VdpController {
    fn name(&self) -> &str {
        "vdp"
    }

    fn control(&self, x: &StatePoint, guess: &StatePoint) -> Result<ControlOutcome, OracleError> {
        let as_v2 = |p: &StatePoint| -> Result<V2, OracleError> {
            match p.0.as_slice() {
                [a, b] => Ok([*a, *b]),
                _ => Err(OracleError::Protocol(format!("expected a 2-dimensional state, got {}", p.len()))),
            }
        };
        let sol = vdp_solve(&self.problem, &as_v2(x)?, &as_v2(guess)?);
        Ok(ControlOutcome { control: vec![sol.controls[0]], exitflag: sol.exitflag })
    }
}

pub fn vdp_controller2(problem: VdpProblem) -> Arc<VdpController> {
    Arc::new(VdpController { problem })
}

/// `F(x) = 1` iff the solver converges from the warm start built on `x`.
/// With [`Strategy::PerturbGuess`] the anchored form solves for the anchor
/// state from a perturbed warm start.
pub fn vdp_oracle(problem: VdpProblem, strategy: Strategy) -> ControllerOracle<VdpController> {
    ControllerOracle::new(vdp_controller2(problem), strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ReliabilityOracle;
    use crate::rng::{Purpose, SeedSource};
    use rand::Rng;

    #[test]
    fn dynamics_examples() {
        assert_eq!(vdp_dynamics(&[0.0, 0.0], 3.0), [0.0, 0.0]);
        assert_eq!(vdp_dynamics(&[1.0, 0.0], 5.0), [0.0, -1.0]);
        assert_eq!(vdp_dynamics(&[0.0, 1.0], 2.0), [1.0, 2.0]);
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        let mut rng = SeedSource::new(1).stream_for(Purpose::User, 0, 0);
        for _ in 0..50 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let u = rng.random_range(-2.0..2.0);
            let h = 0.1;
            let (next, a, b) = rk4_with_sensitivities(&x, u, h);
            let plain = rk4_step(|y| vdp_dynamics(y, u), &x, h).unwrap();
            assert!((next[0] - plain[0]).abs() < 1e-12 && (next[1] - plain[1]).abs() < 1e-12);
            let e = 1e-6;
            for j in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += e;
                xm[j] -= e;
                let fp = rk4_step(|y| vdp_dynamics(y, u), &xp, h).unwrap();
                let fm = rk4_step(|y| vdp_dynamics(y, u), &xm, h).unwrap();
                for i in 0..2 {
                    let fd = (fp[i] - fm[i]) / (2.0 * e);
                    assert!((fd - a[i][j]).abs() < 1e-5 * (1.0 + fd.abs()), "A[{i}][{j}] {fd} vs {}", a[i][j]);
                }
            }
            let fp = rk4_step(|y| vdp_dynamics(y, u + e), &x, h).unwrap();
            let fm = rk4_step(|y| vdp_dynamics(y, u - e), &x, h).unwrap();
            for i in 0..2 {
                let fd = (fp[i] - fm[i]) / (2.0 * e);
                assert!((fd - b[i]).abs() < 1e-5 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn box_qp_against_enumeration() {
        // Brute-force the 3-variable box QP by enumerating every face.
        let mut rng = SeedSource::new(2).stream_for(Purpose::User, 0, 0);
        for _ in 0..200 {
            let m: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut h = vec![0.0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    h[i * 3 + j] = (0..3).map(|k| m[i * 3 + k] * m[j * 3 + k]).sum::<f64>() + if i == j { 0.1 } else { 0.0 };
                }
            }
            let g: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lo: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..0.0)).collect();
            let hi: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let p = box_qp(&h, &g, &lo, &hi).unwrap();
            let f = |p: &[f64]| {
                (0..3).map(|i| g[i] * p[i] + 0.5 * (0..3).map(|j| p[i] * h[i * 3 + j] * p[j]).sum::<f64>()).sum::<f64>()
            };
            let mut best = f64::INFINITY;
            for face in 0..27 {
                let mut state = [0usize; 3];
                let mut c = face;
                for s in state.iter_mut() {
                    *s = c % 3;
                    c /= 3;
                }
                let free: Vec<usize> = (0..3).filter(|&j| state[j] == 0).collect();
                let mut q = [0.0; 3];
                for j in 0..3 {
                    q[j] = match state[j] {
                        1 => lo[j],
                        2 => hi[j],
                        _ => 0.0,
                    };
                }
                if !free.is_empty() {
                    let k = free.len();
                    let mut sub = vec![0.0; k * k];
                    let mut rhs = vec![0.0; k];
                    for (a, &i) in free.iter().enumerate() {
                        rhs[a] = -g[i] - (0..3).filter(|j| state[*j] != 0).map(|j| h[i * 3 + j] * q[j]).sum::<f64>();
                        for (b, &j) in free.iter().enumerate() {
                            sub[a * k + b] = h[i * 3 + j];
                        }
                    }
                    let sol = cholesky_solve(&mut sub, &mut rhs, k).unwrap();
                    for (a, &i) in free.iter().enumerate() {
                        q[i] = sol[a];
                    }
                }
                if (0..3).all(|j| q[j] >= lo[j] - 1e-12 && q[j] <= hi[j] + 1e-12) {
                    best = best.min(f(&q));
                }
            }
            assert!((f(&p) - best).abs() < 1e-9, "{} vs {best}", f(&p));
        }
    }

    #[test]
    fn origin_is_solved_with_zero_control() {
        let sol = vdp_solve(&VdpProblem::default(), &[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(sol.exitflag, 1);
        assert!(sol.controls.iter().all(|u| u.abs() < 1e-9));
        let oracle = vdp_oracle(VdpProblem::default(), Strategy::PerturbState);
        assert!(oracle.is_reliable(&StatePoint(vec![0.0, 0.0])).unwrap());
    }

    #[test]
    fn converged_solutions_are_sound() {
        let problem = VdpProblem::default();
        let mut rng = SeedSource::new(3).stream_for(Purpose::User, 0, 0);
        let mut converged = 0;
        for _ in 0..2000 {
            let x = [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)];
            let sol = vdp_solve(&problem, &x, &x);
            if sol.exitflag != 1 {
                continue;
            }
            converged += 1;
            assert!(max_shooting_defect(&problem, &x, &sol.controls, &sol.states) < 1e-6);
            assert!(sol.kkt_residual <= problem.tol);
            assert!(sol.controls.iter().all(|u| u.abs() <= problem.u_max));
            if let Some(zero) = zero_control_cost(&problem, &x) {
                assert!(sol.cost <= zero * (1.0 + 1e-9), "x {x:?}: {} > {zero}", sol.cost);
            }
        }
        assert!(converged > 1900);
    }

    #[test]
    fn solver_is_deterministic() {
        let problem = VdpProblem::default();
        let a = vdp_solve(&problem, &[3.1, -2.7], &[3.0, -2.5]);
        let b = vdp_solve(&problem, &[3.1, -2.7], &[3.0, -2.5]);
        assert_eq!(a, b);
    }

    #[test]
    fn two_argument_form_with_equal_arguments_is_the_oracle() {
        let problem = VdpProblem::default();
        let c = vdp_controller2(problem.clone());
        let oracle = vdp_oracle(problem, Strategy::PerturbState);
        let mut rng = SeedSource::new(4).stream_for(Purpose::User, 0, 0);
        for _ in 0..200 {
            let x = StatePoint(vec![rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)]);
            assert_eq!(c.control(&x, &x).unwrap().succeeded(), oracle.is_reliable(&x).unwrap());
        }
    }
}
