//! Exact assignment, minibatch OT pairing, and point-cloud canonicalization.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::numcore::dist_sq;
use crate::sampling::SampleSet;

/// Minimum-cost perfect assignment on a square cost matrix (shortest
/// augmenting paths with potentials, O(n³)). Returns `col[row]`.
pub fn hungarian(cost: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::Shape(format!(
            "assignment needs a square cost matrix, got {:?}",
            cost.dim()
        )));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite assignment cost".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let c: Vec<f64> = cost.iter().copied().collect();
    // 1-based arrays; index 0 is the virtual root column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let crow = &c[(i0 - 1) * n..i0 * n];
            let ui = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = crow[j - 1] - ui - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=n {
        col[owner[j] - 1] = j - 1;
    }
    Ok(col)
}

/// Permutation `π` minimizing `Σ ‖x_a[i] − x_b[π(i)]‖²`.
pub fn minibatch_ot_pairs(xa: ArrayView2<'_, f64>, xb: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    if xa.dim() != xb.dim() {
        return Err(Error::Shape(format!(
            "OT batches differ: {:?} vs {:?}",
            xa.dim(),
            xb.dim()
        )));
    }
    let n = xa.nrows();
    let mut cost = Array2::zeros((n, n));
    for (i, a) in xa.axis_iter(Axis(0)).enumerate() {
        let a = a.as_slice().map(<[f64]>::to_vec).unwrap_or_else(|| a.to_vec());
        for (j, b) in xb.axis_iter(Axis(0)).enumerate() {
            cost[[i, j]] = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    }
    hungarian(cost.view())
}

pub fn assignment_cost(cost: ArrayView2<'_, f64>, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum()
}

fn points(x: &[f64]) -> Vec<Vector3<f64>> {
    x.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

fn centered(p: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let c = p.iter().sum::<Vector3<f64>>() / p.len() as f64;
    p.iter().map(|v| v - c).collect()
}

/// Proper rotation `R` minimizing `Σ ‖R p_i − q_i‖²` for centered clouds.
/// Returns `None` when the cross-covariance has rank < 2 (collinear or
/// coincident points), where the optimum is not unique.
pub fn kabsch(p: &[Vector3<f64>], q: &[Vector3<f64>]) -> Option<Matrix3<f64>> {
    let mut h = Matrix3::zeros();
    for (a, b) in p.iter().zip(q) {
        h += a * b.transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 0.0) || s[1] <= 1e-12 * s[0] {
        return None;
    }
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    Some(v * fix * u.transpose())
}

pub fn rmsd(a: &[f64], b: &[f64]) -> f64 {
    (dist_sq(a, b) / (a.len() / 3).max(1) as f64).sqrt()
}

/// Center one configuration, optionally permute particles onto the
/// reference, then rotate onto it. `grad` (if any) is permuted and rotated
/// the same way. Returns the applied rotation (identity on fallback).
pub fn canonicalize_one(
    x: &mut [f64],
    grad: Option<&mut [f64]>,
    reference: &[Vector3<f64>],
    particles: bool,
) -> Result<Matrix3<f64>> {
    let mut p = centered(&points(x));
    let mut g = grad.as_ref().map(|g| points(g));
    if particles {
        let n = p.len();
        let mut cost = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                cost[[i, j]] = (reference[i] - p[j]).norm_squared();
            }
        }
        // Reference slot i takes sample particle assign[i].
        let assign = hungarian(cost.view())?;
        p = assign.iter().map(|&j| p[j]).collect();
        if let Some(gv) = g.as_mut() {
            *gv = assign.iter().map(|&j| gv[j]).collect();
        }
    }
    let r = match kabsch(&p, reference) {
        Some(r) => r,
        None => {
            log::warn!("degenerate point cloud in canonicalization; using identity rotation");
            Matrix3::identity()
        }
    };
    for (k, v) in p.iter().enumerate() {
        let w = r * v;
        x[3 * k..3 * k + 3].copy_from_slice(w.as_slice());
    }
    if let (Some(out), Some(gv)) = (grad, g) {
        for (k, v) in gv.iter().enumerate() {
            let w = r * v;
            out[3 * k..3 * k + 3].copy_from_slice(w.as_slice());
        }
    }
    Ok(r)
}

/// Canonicalize every sample against `reference` (a `3·N_p` configuration).
pub fn canonicalize(set: &SampleSet, reference: &[f64], particles: bool) -> Result<SampleSet> {
    if set.dim % 3 != 0 || reference.len() != set.dim {
        return Err(Error::Shape(format!(
            "canonicalization needs 3-D point clouds of matching size, got dim {} and reference {}",
            set.dim,
            reference.len()
        )));
    }
    let reference = centered(&points(reference));
    let mut out = set.clone();
    let mut grads = out.grads.take();
    for (i, mut row) in out.samples.axis_iter_mut(Axis(0)).enumerate() {
        let x = row.as_slice_mut().expect("standard layout");
        let g = grads
            .as_mut()
            .map(|g| g.row_mut(i).into_slice().expect("standard layout"));
        canonicalize_one(x, g, &reference, particles)?;
    }
    out.grads = grads;
    Ok(out)
}
