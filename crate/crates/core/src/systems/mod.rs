//! Reference closed-loop systems.

pub mod quadrotor;
pub mod rk4;
pub mod vdp;
