//! Quadrotor rigid-body model and its sampling space.
//!
//! The full state is `(p, v, q, Omega, omega)`: position, velocity, unit
//! quaternion `q = (q0, q1, q2, q3)` with scalar part first, body rates, and
//! the four propeller speeds. The input is the propeller acceleration
//! `omega_r`, one entry per propeller. The sampling space leaves out the
//! propeller speeds.
//!
//! Conventions:
//!
//! * `R(q)` is the usual body-to-world rotation of a unit quaternion.
//! * `E(q)` is the 3x4 matrix
//!   `[[-q1, q0, q3, -q2], [-q2, -q3, q0, q1], [-q3, q2, -q1, q0]]`, so that
//!   `q' = E(q)^T Omega / 2` is the body-rate quaternion kinematics.
//! * `Omega' = J^-1 (T + Omega x J Omega)`, sign as in the reference model.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{OracleError, ReliabilityOracle};
use crate::space::{Block, PerturbationRadii, StatePoint, StateSpace};

pub const QUAD_STATE: usize = 17;
pub const QUAD_SAMPLED_STATE: usize = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrotorModel {
    /// Air density (kg/m^3).
    pub rho: f64,
    /// Propeller area (m^2).
    pub area: f64,
    pub lift_coefficient: f64,
    /// Listed with the model parameters but not used by the dynamics.
    pub drag_coefficient: f64,
    pub mass: f64,
    pub gravity: f64,
    /// Diagonal of `J`.
    pub inertia: [f64; 3],
    /// Arm length `L` in the torque formulas; not given with the other
    /// parameters, so it is a free parameter.
    pub arm: f64,
}

impl Default for QuadrotorModel {
    fn default() -> Self {
        QuadrotorModel {
            rho: 1.23,
            area: 0.1,
            lift_coefficient: 0.25,
            drag_coefficient: 0.75,
            mass: 10.0,
            gravity: 9.81,
            inertia: [0.25, 0.25, 1.0],
            arm: 1.0,
        }
    }
}

/// Body-to-world rotation of a unit quaternion.
pub fn rotation(q: &[f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = *q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rate_matrix(q: &[f64; 4]) -> [[f64; 4]; 3] {
    let [q0, q1, q2, q3] = *q;
    [[-q1, q0, q3, -q2], [-q2, -q3, q0, q1], [-q3, q2, -q1, q0]]
}

impl QuadrotorModel {
    fn lift_constant(&self) -> f64 {
        0.5 * self.rho * self.area * self.lift_coefficient
    }

    /// Common propeller speed at which total lift balances gravity.
    pub fn hover_speed(&self) -> f64 {
        (self.mass * self.gravity / (4.0 * self.lift_constant())).sqrt()
    }

    /// Hover at the origin: level attitude, no motion, all propellers at
    /// [`hover_speed`](Self::hover_speed).
    pub fn hover_state(&self) -> [f64; QUAD_STATE] {
        let mut x = [0.0; QUAD_STATE];
        x[6] = 1.0;
        x[13..].fill(self.hover_speed());
        x
    }

    /// Time derivative of the full state under propeller acceleration `omega_r`.
    pub fn dynamics(&self, x: &[f64; QUAD_STATE], omega_r: &[f64; 4]) -> Result<[f64; QUAD_STATE]> {
        let norm = x[6..10].iter().map(|c| c * c).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidConfig(format!("quaternion norm {norm} is not 1")));
        }
        Ok(self.rhs(x, omega_r))
    }

    /// [`dynamics`](Self::dynamics) without the unit-quaternion check, for
    /// integrator stages that leave the sphere by `O(h^2)`.
    pub fn rhs(&self, x: &[f64; QUAD_STATE], omega_r: &[f64; 4]) -> [f64; QUAD_STATE] {
        let q = [x[6], x[7], x[8], x[9]];
        let rates = [x[10], x[11], x[12]];
        let w2: [f64; 4] = std::array::from_fn(|k| x[13 + k] * x[13 + k]);
        let k = self.lift_constant();
        let thrust = k * w2.iter().sum::<f64>();
        let torque = [
            k * self.arm * (w2[1] - w2[3]),
            k * self.arm * (w2[0] - w2[2]),
            k * self.arm * (w2[0] - w2[1] + w2[2] - w2[3]),
        ];
        let r = rotation(&q);
        let e = rate_matrix(&q);
        let j = self.inertia;
        let j_rates = [j[0] * rates[0], j[1] * rates[1], j[2] * rates[2]];
        let gyro = cross(&rates, &j_rates);

        let mut dx = [0.0; QUAD_STATE];
        dx[..3].copy_from_slice(&x[3..6]);
        for i in 0..3 {
            dx[3 + i] = r[i][2] * thrust / self.mass;
        }
        dx[5] -= self.gravity;
        for i in 0..4 {
            dx[6 + i] = 0.5 * (0..3).map(|a| e[a][i] * rates[a]).sum::<f64>();
        }
        for i in 0..3 {
            dx[10 + i] = (torque[i] + gyro[i]) / j[i];
        }
        dx[13..].copy_from_slice(omega_r);
        dx
    }
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// `[-50,50]^3 x [-50,50]^3 x S^3 x [-5,5]^3` over `(p, v, q, Omega)`.
pub fn quad_statespace() -> StateSpace {
    StateSpace::new(vec![
        Block::cube(3, -50.0, 50.0).named("position"),
        Block::cube(3, -50.0, 50.0).named("velocity"),
        Block::sphere(3).named("attitude"),
        Block::cube(3, -5.0, 5.0).named("body-rate"),
    ])
    .expect("valid quadrotor space")
}

/// `(r_p, r_RWM)` for the quadrotor space, one radius per block.
pub fn quad_chain_defaults() -> (PerturbationRadii, PerturbationRadii) {
    (PerturbationRadii::new(vec![0.1; 4]), PerturbationRadii::new(vec![7.0, 7.0, 0.5, 1.0]))
}

/// Synthetic failure set on the quadrotor space, for exercising the
/// pipeline without a quadrotor controller: `F(x) = 0` iff the attitude is
/// nearly inverted (`q0 <= attitude_threshold`) and some body rate has
/// magnitude at least `rate_threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrotorSyntheticOracle {
    #[serde(default = "default_attitude_threshold")]
    pub attitude_threshold: f64,
    #[serde(default = "default_rate_threshold")]
    pub rate_threshold: f64,
}

fn default_attitude_threshold() -> f64 {
    -0.9
}
fn default_rate_threshold() -> f64 {
    4.5
}

impl Default for QuadrotorSyntheticOracle {
    fn default() -> Self {
        QuadrotorSyntheticOracle { attitude_threshold: default_attitude_threshold(), rate_threshold: default_rate_threshold() }
    }
}

impl QuadrotorSyntheticOracle {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.attitude_threshold) || !(0.0..=5.0).contains(&self.rate_threshold) {
            return Err(Error::InvalidConfig(format!("invalid synthetic quadrotor oracle {self:?}")));
        }
        Ok(())
    }

    pub fn in_failure_set(&self, x: &[f64]) -> bool {
        x[6] <= self.attitude_threshold && x[10..13].iter().any(|w| w.abs() >= self.rate_threshold)
    }

    /// `P(F(X) = 0)` for `X` uniform on [`quad_statespace`].
    ///
    /// The scalar part of a uniform point on `S^3` has density
    /// `2 sqrt(1 - t^2) / pi` on `[-1, 1]`.
    pub fn failure_probability(&self) -> f64 {
        let t = self.attitude_threshold;
        let attitude = 0.5 + (t * (1.0 - t * t).sqrt() + t.asin()) / PI;
        let rate = 1.0 - (self.rate_threshold / 5.0).powi(3);
        attitude * rate
    }
}

impl ReliabilityOracle for QuadrotorSyntheticOracle {
    fn name(&self) -> &str {
        "quadrotor-synthetic"
    }

    fn is_reliable(&self, x: &StatePoint) -> Result<bool, OracleError> {
        if x.len() != QUAD_SAMPLED_STATE {
            return Err(OracleError::Protocol(format!("expected a {QUAD_SAMPLED_STATE}-dimensional state, got {}", x.len())));
        }
        Ok(!self.in_failure_set(&x.0))
    }
}
