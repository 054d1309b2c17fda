use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::field::{row_norms_sq, TransportField};
use super::kernel::gaussian_step_logpdf;
use super::ode::{divergence, DivergenceMethod};
use super::{Direction, TimeGrid};
use crate::error::{Error, Result};
use crate::systems::Energy;

/// One simulated path with every knot state (row `i` is time `t_i`,
/// whatever the simulation direction).
#[derive(Clone, Debug)]
pub struct PathRecord {
    pub direction: Direction,
    pub states: Array2<f64>,
    pub work: f64,
    pub valid: bool,
    /// Stream index the noise was drawn from.
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathOutcome {
    pub work: f64,
    pub valid: bool,
}

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    pub grid: TimeGrid,
    /// Constant diffusion level; `0` selects the deterministic flow.
    pub sigma: f64,
    /// Per-direction seed; path `k` uses stream `k` of it.
    pub seed: u64,
    /// Paths advanced together in one batch.
    pub chunk: usize,
    pub divergence: DivergenceMethod,
}

impl EnsembleConfig {
    pub fn new(grid: TimeGrid, sigma: f64, seed: u64) -> Self {
        EnsembleConfig {
            grid,
            sigma,
            seed,
            chunk: 256,
            divergence: DivergenceMethod::Auto { probes: 8 },
        }
    }
}

fn fill_noise(noise: &mut Array2<f64>, rngs: &mut [ChaCha8Rng]) {
    for (mut row, rng) in noise.axis_iter_mut(Axis(0)).zip(rngs.iter_mut()) {
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
}

fn energies(sys: &dyn Energy, xs: &Array2<f64>) -> Vec<f64> {
    xs.axis_iter(Axis(0))
        .map(|r| match r.as_slice() {
            Some(s) => sys.value(s),
            None => sys.value(&r.to_vec()),
        })
        .collect()
}

/// Knot index pair `(from, to)` of simulation step `k`.
fn step_knots(direction: Direction, m: usize, k: usize) -> (usize, usize) {
    match direction {
        Direction::Forward => (k, k + 1),
        Direction::Backward => (m - k, m - k - 1),
    }
}

fn sign(direction: Direction) -> f64 {
    match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    }
}

/// Simulate and record one path. Forward paths start at `t = 0`, backward
/// paths at `t = 1`. `sigma = 0` integrates the deterministic flow.
pub fn simulate_path(
    field: &dyn TransportField,
    grid: &TimeGrid,
    direction: Direction,
    x_init: &[f64],
    sigma: f64,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<PathRecord> {
    let d = field.dim();
    if x_init.len() != d {
        return Err(Error::shape(d, x_init.len(), "initial path state"));
    }
    let m = grid.steps();
    let knots = grid.knots();
    let mut states = Array2::zeros((m + 1, d));
    let start = match direction {
        Direction::Forward => 0,
        Direction::Backward => m,
    };
    states.row_mut(start).assign(&ndarray::ArrayView1::from(x_init));
    let sg = sign(direction);
    for k in 0..m {
        let (from, to) = step_knots(direction, m, k);
        let dt = (knots[to] - knots[from]).abs();
        let x = states.row(from).to_owned();
        if dt == 0.0 {
            states.row_mut(to).assign(&x);
            continue;
        }
        let xv = x.view().insert_axis(Axis(0));
        let v = field.velocity(xv, knots[from])?;
        let s = field.score(xv, knots[from])?;
        let scale = (2.0 * dt).sqrt() * sigma;
        let mut next = x.clone();
        for j in 0..d {
            let z: f64 = if sigma > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
            next[j] = x[j] + sg * v[[0, j]] * dt - sigma * sigma * s[[0, j]] * dt + scale * z;
        }
        states.row_mut(to).assign(&next);
    }
    let valid = states.iter().all(|v| v.is_finite());
    Ok(PathRecord {
        direction,
        states,
        work: f64::NAN,
        valid,
        seed,
    })
}

/// `U_b(X_1) − U_a(X_0) + Σ_i [log N⁺(X_{i+1} | X_i) − log N⁻(X_i | X_{i+1})]`,
/// the same for paths of either direction. Zero-length steps contribute 0.
pub fn work_fbrnd(
    path: &PathRecord,
    sys_a: &dyn Energy,
    sys_b: &dyn Energy,
    field: &dyn TransportField,
    grid: &TimeGrid,
    sigma: f64,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Config(
            "the path-density work needs sigma > 0; use work_ode for sigma = 0".into(),
        ));
    }
    let m = grid.steps();
    if path.states.nrows() != m + 1 {
        return Err(Error::shape(m + 1, path.states.nrows(), "path knots"));
    }
    let knots = grid.knots();
    let mut acc = 0.0;
    let eval = |i: usize| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let x = path.states.row(i).to_owned();
        let xv = x.view().insert_axis(Axis(0));
        let v = field.velocity(xv, knots[i])?.into_raw_vec_and_offset().0;
        let s = field.score(xv, knots[i])?.into_raw_vec_and_offset().0;
        Ok((x.to_vec(), v, s))
    };
    for i in 0..m {
        let dt = grid.dt(i);
        if dt == 0.0 {
            continue;
        }
        let (x0, v0, s0) = eval(i)?;
        let (x1, v1, s1) = eval(i + 1)?;
        let fwd = gaussian_step_logpdf(&x1, &x0, 1.0, &v0, &s0, sigma, dt);
        let bwd = gaussian_step_logpdf(&x0, &x1, -1.0, &v1, &s1, sigma, dt);
        acc += fwd - bwd;
    }
    let x_first = path.states.row(0).to_vec();
    let x_last = path.states.row(m).to_vec();
    let w = sys_b.value(&x_last) - sys_a.value(&x_first) + acc;
    if !w.is_finite() {
        return Err(Error::Numerical("non-finite path work".into()));
    }
    Ok(w)
}

fn run_chunk(
    field: &dyn TransportField,
    sys_a: &dyn Energy,
    sys_b: &dyn Energy,
    cfg: &EnsembleConfig,
    direction: Direction,
    starts: ArrayView2<'_, f64>,
    first_index: u64,
) -> Result<Vec<PathOutcome>> {
    let n = starts.nrows();
    let d = starts.ncols();
    let mut rngs: Vec<ChaCha8Rng> = (0..n as u64)
        .map(|k| crate::seeds::stream(cfg.seed, first_index + k))
        .collect();
    let grid = &cfg.grid;
    let knots = grid.knots();
    let m = grid.steps();
    let sg = sign(direction);
    let sigma = cfg.sigma;
    let s2 = sigma * sigma;
    let ode = sigma == 0.0;

    let mut x = starts.to_owned();
    let e_start = match direction {
        Direction::Forward => energies(sys_a, &x),
        Direction::Backward => energies(sys_b, &x),
    };
    let mut acc = vec![0.0; n];
    let t0 = knots[step_knots(direction, m, 0).0];
    let mut v = field.velocity(x.view(), t0)?;
    let mut s = if ode { Array2::zeros((0, 0)) } else { field.score(x.view(), t0)? };
    let mut noise = Array2::zeros((n, d));
    for k in 0..m {
        let (from, to) = step_knots(direction, m, k);
        let dt = (knots[to] - knots[from]).abs();
        if dt == 0.0 {
            continue;
        }
        if ode {
            let div = divergence(field, x.view(), knots[from], cfg.divergence, &mut rngs)?;
            x.scaled_add(sg * dt, &v);
            for (a, dv) in acc.iter_mut().zip(&div) {
                *a -= dv * dt;
            }
            v = field.velocity(x.view(), knots[to])?;
            continue;
        }
        fill_noise(&mut noise, &mut rngs);
        let scale = (2.0 * dt).sqrt() * sigma;
        let mut next = x.clone();
        next.scaled_add(sg * dt, &v);
        next.scaled_add(-s2 * dt, &s);
        next.scaled_add(scale, &noise);
        // Proposal residual is scale·η; only the quadratic parts differ
        // between the two kernels (same variance), so constants are dropped.
        let prop: Vec<f64> = row_norms_sq(&noise).iter().map(|q| -0.5 * q).collect();
        let v_next = field.velocity(next.view(), knots[to])?;
        let s_next = field.score(next.view(), knots[to])?;
        let mut resid = x.clone();
        resid -= &next;
        resid.scaled_add(sg * dt, &v_next);
        resid.scaled_add(s2 * dt, &s_next);
        let rev: Vec<f64> = row_norms_sq(&resid)
            .iter()
            .map(|q| -q / (4.0 * s2 * dt))
            .collect();
        for i in 0..n {
            acc[i] += match direction {
                Direction::Forward => prop[i] - rev[i],
                Direction::Backward => rev[i] - prop[i],
            };
        }
        x = next;
        v = v_next;
        s = s_next;
    }
    let e_end = match direction {
        Direction::Forward => energies(sys_b, &x),
        Direction::Backward => energies(sys_a, &x),
    };
    Ok((0..n)
        .map(|i| {
            let work = match direction {
                Direction::Forward => e_end[i] - e_start[i] + acc[i],
                Direction::Backward => e_start[i] - e_end[i] + acc[i],
            };
            let valid = work.is_finite() && x.row(i).iter().all(|v| v.is_finite());
            PathOutcome { work, valid }
        })
        .collect())
}

/// Works for one path per row of `starts`, batched in chunks and run in
/// parallel. Path `k` draws its noise from stream `k` of `cfg.seed`, so
/// the output is independent of chunking and thread count.
pub fn simulate_ensemble(
    field: &dyn TransportField,
    sys_a: &dyn Energy,
    sys_b: &dyn Energy,
    cfg: &EnsembleConfig,
    direction: Direction,
    starts: ArrayView2<'_, f64>,
) -> Result<Vec<PathOutcome>> {
    if starts.ncols() != field.dim() || sys_a.dim() != field.dim() || sys_b.dim() != field.dim() {
        return Err(Error::Shape(format!(
            "ensemble dims: starts {}, field {}, systems {}/{}",
            starts.ncols(),
            field.dim(),
            sys_a.dim(),
            sys_b.dim()
        )));
    }
    if cfg.sigma < 0.0 || !cfg.sigma.is_finite() {
        return Err(Error::Config(format!("sigma must be >= 0, got {}", cfg.sigma)));
    }
    let chunk = cfg.chunk.max(1);
    let n = starts.nrows();
    let bounds: Vec<(usize, usize)> = (0..n).step_by(chunk).map(|lo| (lo, (lo + chunk).min(n))).collect();
    let parts: Result<Vec<Vec<PathOutcome>>> = bounds
        .par_iter()
        .map(|&(lo, hi)| {
            run_chunk(
                field,
                sys_a,
                sys_b,
                cfg,
                direction,
                starts.slice(ndarray::s![lo..hi, ..]),
                lo as u64,
            )
        })
        .collect();
    Ok(parts?.into_iter().flatten().collect())
}
