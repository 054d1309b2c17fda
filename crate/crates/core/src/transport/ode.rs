//! Deterministic-flow work: `U_b(X_1) − U_a(X_0) − ∫ ∇·v dt`.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::field::TransportField;
use super::path::{simulate_path, PathRecord};
use super::{Direction, TimeGrid};
use crate::error::{Error, Result};
use crate::systems::{Energy, InterpolatedEnergy};

/// Largest dimension for which `Auto` computes the divergence exactly.
pub const EXACT_DIVERGENCE_MAX_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DivergenceMethod {
    /// Exact up to [`EXACT_DIVERGENCE_MAX_DIM`], Hutchinson above.
    Auto { probes: usize },
    Exact,
    /// Rademacher probes.
    Hutchinson { probes: usize },
}

/// `∇·v` at every row. Hutchinson probes for row `k` come from `rngs[k]`.
pub fn divergence(
    field: &dyn TransportField,
    xs: ArrayView2<'_, f64>,
    t: f64,
    method: DivergenceMethod,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<f64>> {
    let (n, d) = xs.dim();
    let method = match method {
        DivergenceMethod::Auto { probes } if d > EXACT_DIVERGENCE_MAX_DIM => {
            DivergenceMethod::Hutchinson { probes }
        }
        DivergenceMethod::Auto { .. } => DivergenceMethod::Exact,
        m => m,
    };
    match method {
        DivergenceMethod::Exact => {
            if let Some(div) = field.divergence_exact(xs, t) {
                return Ok(div);
            }
            let mut div = vec![0.0; n];
            let mut dirs = Array2::zeros((n, d));
            for j in 0..d {
                dirs.fill(0.0);
                dirs.column_mut(j).fill(1.0);
                let jv = field.velocity_jvp(xs, t, dirs.view())?;
                for (acc, v) in div.iter_mut().zip(jv.column(j)) {
                    *acc += v;
                }
            }
            Ok(div)
        }
        DivergenceMethod::Hutchinson { probes } => {
            if probes == 0 {
                return Err(Error::Config("Hutchinson divergence needs probes >= 1".into()));
            }
            if rngs.len() != n {
                return Err(Error::shape(n, rngs.len(), "probe generators"));
            }
            let mut div = vec![0.0; n];
            let mut dirs = Array2::zeros((n, d));
            for _ in 0..probes {
                for (mut row, rng) in dirs.axis_iter_mut(Axis(0)).zip(rngs.iter_mut()) {
                    for v in row.iter_mut() {
                        *v = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    }
                }
                let jv = field.velocity_jvp(xs, t, dirs.view())?;
                for (k, acc) in div.iter_mut().enumerate() {
                    *acc += dirs.row(k).dot(&jv.row(k)) / probes as f64;
                }
            }
            Ok(div)
        }
        DivergenceMethod::Auto { .. } => unreachable!(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quadrature {
    LeftEndpoint,
    RightEndpoint,
    Trapezoid,
    /// Composite Simpson; needs a uniform grid with an even step count.
    Simpson,
}

/// `∫₀¹ f dt` from values at the grid knots.
pub fn integrate(values: &[f64], grid: &TimeGrid, rule: Quadrature) -> Result<f64> {
    let m = grid.steps();
    if values.len() != m + 1 {
        return Err(Error::shape(m + 1, values.len(), "quadrature values"));
    }
    Ok(match rule {
        Quadrature::LeftEndpoint => (0..m).map(|i| values[i] * grid.dt(i)).sum(),
        Quadrature::RightEndpoint => (0..m).map(|i| values[i + 1] * grid.dt(i)).sum(),
        Quadrature::Trapezoid => (0..m)
            .map(|i| 0.5 * (values[i] + values[i + 1]) * grid.dt(i))
            .sum(),
        Quadrature::Simpson => {
            if m % 2 != 0 || !grid.is_uniform() {
                return Err(Error::Config(
                    "Simpson quadrature needs a uniform grid with an even number of steps".into(),
                ));
            }
            let h = 1.0 / m as f64;
            let mut s = values[0] + values[m];
            for (i, v) in values.iter().enumerate().take(m).skip(1) {
                s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
            }
            s * h / 3.0
        }
    })
}

/// Explicit Euler path of `dX = v dt`.
pub fn simulate_ode_path(
    field: &dyn TransportField,
    grid: &TimeGrid,
    direction: Direction,
    x_init: &[f64],
) -> Result<PathRecord> {
    // No noise is drawn at sigma = 0, so the generator is never used.
    let mut rng = crate::seeds::stream(0, 0);
    simulate_path(field, grid, direction, x_init, 0.0, &mut rng, 0)
}

fn knot_divergences(
    path: &PathRecord,
    field: &dyn TransportField,
    grid: &TimeGrid,
    method: DivergenceMethod,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let knots = grid.knots();
    (0..=grid.steps())
        .map(|i| {
            let x = path.states.row(i).insert_axis(Axis(0));
            let d = divergence(field, x, knots[i], method, std::slice::from_mut(rng))?;
            Ok(d[0])
        })
        .collect()
}

fn check_path(path: &PathRecord, grid: &TimeGrid) -> Result<()> {
    if path.states.nrows() != grid.steps() + 1 {
        return Err(Error::shape(grid.steps() + 1, path.states.nrows(), "path knots"));
    }
    Ok(())
}

/// `U_b(X_1) − U_a(X_0) − ∫ ∇·v dt` on a stored path.
pub fn work_ode(
    path: &PathRecord,
    sys_a: &dyn Energy,
    sys_b: &dyn Energy,
    field: &dyn TransportField,
    grid: &TimeGrid,
    rule: Quadrature,
    method: DivergenceMethod,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    check_path(path, grid)?;
    let div = knot_divergences(path, field, grid, method, rng)?;
    let m = grid.steps();
    let w = sys_b.value(&path.states.row(m).to_vec()) - sys_a.value(&path.states.row(0).to_vec())
        - integrate(&div, grid, rule)?;
    if !w.is_finite() {
        return Err(Error::Numerical("non-finite path work".into()));
    }
    Ok(w)
}

/// The integrand form `∫ (−∇·v + ∇U_t·v + ∂_t U_t) dt` plus the boundary
/// correction `U_b(X_1) − U_1(X_1) − U_a(X_0) + U_0(X_0)`, where `U_t` is
/// supplied by `model`.
pub fn work_integrand_form(
    path: &PathRecord,
    sys_a: &dyn Energy,
    sys_b: &dyn Energy,
    field: &dyn TransportField,
    grid: &TimeGrid,
    model: &dyn Fn(&[f64], f64) -> Result<InterpolatedEnergy>,
    rule: Quadrature,
) -> Result<f64> {
    check_path(path, grid)?;
    let knots = grid.knots();
    let m = grid.steps();
    let mut rng = crate::seeds::stream(0, 0);
    let div = knot_divergences(path, field, grid, DivergenceMethod::Exact, &mut rng)?;
    let mut integrand = Vec::with_capacity(m + 1);
    for i in 0..=m {
        let x = path.states.row(i);
        let xs = x.insert_axis(Axis(0));
        let v = field.velocity(xs, knots[i])?;
        let e = model(&x.to_vec(), knots[i])?;
        let gv: f64 = e.grad.iter().zip(v.iter()).map(|(g, v)| g * v).sum();
        integrand.push(-div[i] + gv + e.dt_energy);
    }
    let x0 = path.states.row(0).to_vec();
    let x1 = path.states.row(m).to_vec();
    let u0 = model(&x0, 0.0)?.energy;
    let u1 = model(&x1, 1.0)?.energy;
    let correction = sys_b.value(&x1) - u1 - sys_a.value(&x0) + u0;
    Ok(integrate(&integrand, grid, rule)? + correction)
}
