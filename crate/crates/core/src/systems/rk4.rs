//! Classical fourth-order Runge-Kutta step with the input held constant.

use crate::error::{Error, Result};

pub fn rk4_step<const N: usize>(f: impl Fn(&[f64; N]) -> [f64; N], x: &[f64; N], h: f64) -> Result<[f64; N]> {
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("step size must be positive, got {h}")));
    }
    let axpy = |a: &[f64; N], s: f64, b: &[f64; N]| -> [f64; N] { std::array::from_fn(|i| a[i] + s * b[i]) };
    let k1 = f(x);
    let k2 = f(&axpy(x, h / 2.0, &k1));
    let k3 = f(&axpy(x, h / 2.0, &k2));
    let k4 = f(&axpy(x, h, &k3));
    let out: [f64; N] = std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NonFinite("rk4 state"))
    }
}
