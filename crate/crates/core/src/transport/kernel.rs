use std::f64::consts::PI;

use ndarray::ArrayView2;

use super::field::TransportField;
use crate::error::{Error, Result};

/// Log density of `x_next` under the isotropic Gaussian with mean
/// `x_curr + sign·v Δt − σ² s Δt` and per-coordinate variance `2σ²Δt`,
/// where `v`, `s` are already evaluated at the conditioning point.
pub fn gaussian_step_logpdf(
    x_next: &[f64],
    x_curr: &[f64],
    drift_sign: f64,
    v: &[f64],
    s: &[f64],
    sigma: f64,
    dt: f64,
) -> f64 {
    let var = 2.0 * sigma * sigma * dt;
    let mut sq = 0.0;
    for i in 0..x_next.len() {
        let mean = x_curr[i] + drift_sign * v[i] * dt - sigma * sigma * s[i] * dt;
        let r = x_next[i] - mean;
        sq += r * r;
    }
    -0.5 * sq / var - 0.5 * x_next.len() as f64 * (2.0 * PI * var).ln()
}

/// `log N^±(x_next | x_curr)` with the fields evaluated at `(x_curr, t)`.
/// `drift_sign = +1` is the forward kernel, `−1` the backward one.
pub fn step_kernel_logpdf(
    x_next: &[f64],
    x_curr: &[f64],
    drift_sign: f64,
    field: &dyn TransportField,
    t: f64,
    sigma: f64,
    dt: f64,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Config(
            "the Gaussian step kernel needs sigma > 0; use deterministic (ode) mode for sigma = 0".into(),
        ));
    }
    if !(dt > 0.0) {
        return Err(Error::Range(format!("kernel step size must be > 0, got {dt}")));
    }
    if x_next.len() != x_curr.len() || x_curr.len() != field.dim() {
        return Err(Error::shape(field.dim(), x_next.len(), "kernel state"));
    }
    let xs = ArrayView2::from_shape((1, x_curr.len()), x_curr).expect("row view");
    let v = field.velocity(xs, t)?;
    let s = field.score(xs, t)?;
    Ok(gaussian_step_logpdf(
        x_next,
        x_curr,
        drift_sign,
        v.as_slice().expect("standard layout"),
        s.as_slice().expect("standard layout"),
        sigma,
        dt,
    ))
}
