//! Free-energy estimators over energy differences and path works.
//!
//! Work convention throughout: forward works come from paths started in
//! state a, backward works from paths started in state b, and both are
//! oriented as `b − a` so that `ΔF = −log E_fwd[e^{−W}] = log E_bwd[e^{W}]`.

pub mod report;
pub mod ti;
pub mod umbrella;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numcore::{log_mean_exp, log_sum_exp, mean, softplus, std_dev};

pub use report::{estimate_ledger, EstimateReport, ReportRow};
pub use ti::{gauss_legendre, ti_quadrature, TiConfig, TiResult};
pub use umbrella::{histogram, symmetry_metric, total_variation, umbrella_reweight, Umbrella};

/// Fixed-point tolerance on successive estimates.
pub const FIXED_POINT_TOL: f64 = 1e-10;
pub const FIXED_POINT_MAX_ITERS: usize = 1000;
pub const DEFAULT_BOOTSTRAP: usize = 200;
const POLISH_ITERS: usize = 2100;

/// `log φ(z)` for the Fermi function `φ(z) = 1/(1 + e^z)`.
#[inline]
pub fn log_fermi(z: f64) -> f64 {
    -softplus(z)
}

#[inline]
pub fn fermi(z: f64) -> f64 {
    log_fermi(z).exp()
}

/// `−log mean exp(−(U_b − U_a))` over samples of a.
pub fn fep_estimate(energies_a: &[f64], energies_b: &[f64]) -> Result<f64> {
    if energies_a.is_empty() {
        return Err(Error::Empty("FEP needs at least one sample".into()));
    }
    if energies_a.len() != energies_b.len() {
        return Err(Error::shape(energies_a.len(), energies_b.len(), "energy arrays"));
    }
    let neg: Vec<f64> = energies_a.iter().zip(energies_b).map(|(a, b)| -(b - a)).collect();
    Ok(-log_mean_exp(&neg))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPoint {
    pub value: f64,
    pub iters: usize,
    pub converged: bool,
}

/// One update `log[Σ_m φ(C − W_bwd) / Σ_n φ(W_fwd − C)] + C − log(M/N)`.
/// The count term vanishes for equal directions and keeps the fixed point
/// consistent when they differ.
pub fn fermi_update(forward: &[f64], backward: &[f64], c: f64) -> f64 {
    let num: Vec<f64> = backward.iter().map(|w| log_fermi(c - w)).collect();
    let den: Vec<f64> = forward.iter().map(|w| log_fermi(w - c)).collect();
    let counts = if forward.len() == backward.len() {
        0.0
    } else {
        (backward.len() as f64 / forward.len() as f64).ln()
    };
    log_sum_exp(&num) - log_sum_exp(&den) + c - counts
}

/// Iterates [`fermi_update`] from `c0` until successive values differ by
/// less than [`FIXED_POINT_TOL`].
pub fn fermi_fixed_point(forward: &[f64], backward: &[f64], c0: f64) -> Result<FixedPoint> {
    iterate(forward, backward, c0, true)
}

fn iterate(forward: &[f64], backward: &[f64], c0: f64, canonical: bool) -> Result<FixedPoint> {
    if forward.is_empty() || backward.is_empty() {
        return Err(Error::Empty("the acceptance-ratio fixed point needs both directions".into()));
    }
    if !c0.is_finite() {
        return Err(Error::Numerical(format!("non-finite starting constant {c0}")));
    }
    let mut c = c0;
    for iter in 1..=FIXED_POINT_MAX_ITERS {
        let next = fermi_update(forward, backward, c);
        if !next.is_finite() {
            return Err(Error::Numerical(format!("fixed point diverged at iteration {iter}")));
        }
        let done = (next - c).abs() < FIXED_POINT_TOL;
        c = next;
        if done {
            if canonical {
                c = polish(forward, backward, c);
            }
            return Ok(FixedPoint {
                value: c,
                iters: iter,
                converged: true,
            });
        }
    }
    log::warn!("acceptance-ratio fixed point did not converge in {FIXED_POINT_MAX_ITERS} iterations");
    Ok(FixedPoint {
        value: c,
        iters: FIXED_POINT_MAX_ITERS,
        converged: false,
    })
}

/// Bisection of `fermi_update(c) − c`, which decreases in `c`, on a bracket
/// taken from the works alone, down to adjacent floats. The result does not
/// depend on where the iteration started, so runs seeded differently agree
/// to the last bit.
fn polish(forward: &[f64], backward: &[f64], c: f64) -> f64 {
    let g = |x: f64| fermi_update(forward, backward, x) - x;
    let (mut lo, mut hi) = forward
        .iter()
        .chain(backward)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &w| (l.min(w), h.max(w)));
    let pad = 1.0 + (backward.len() as f64 / forward.len() as f64).ln().abs();
    lo -= pad;
    hi += pad;
    for _ in 0..64 {
        if g(lo) >= 0.0 {
            break;
        }
        lo -= hi - lo;
    }
    for _ in 0..64 {
        if g(hi) <= 0.0 {
            break;
        }
        hi += hi - lo;
    }
    if !(g(lo) >= 0.0 && g(hi) <= 0.0) {
        return c;
    }
    for _ in 0..POLISH_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if g(lo).abs() <= g(hi).abs() {
        lo
    } else {
        hi
    }
}

/// Equilibrium BAR from `ΔU = U_b − U_a` on samples of a (`du_a`) and of b
/// (`du_b`), started at the FEP estimate.
pub fn bar_equilibrium(du_a: &[f64], du_b: &[f64]) -> Result<FixedPoint> {
    bar_with(du_a, du_b, true)
}

/// Bootstrap resamples skip the canonical polish; they only feed a spread.
pub(crate) fn bar_resample(du_a: &[f64], du_b: &[f64]) -> f64 {
    bar_with(du_a, du_b, false).map(|f| f.value).unwrap_or(f64::NAN)
}

fn bar_with(du_a: &[f64], du_b: &[f64], canonical: bool) -> Result<FixedPoint> {
    if du_a.is_empty() || du_b.is_empty() {
        return Err(Error::Empty("BAR needs samples from both states".into()));
    }
    let neg: Vec<f64> = du_a.iter().map(|w| -w).collect();
    let c0 = -log_mean_exp(&neg);
    iterate(du_a, du_b, c0, canonical)
}

/// `−log mean exp(−W)` over forward works.
pub fn iwae_forward(works: &[f64]) -> Option<f64> {
    if works.is_empty() {
        return None;
    }
    let neg: Vec<f64> = works.iter().map(|w| -w).collect();
    Some(-log_mean_exp(&neg))
}

/// `log mean exp(W)` over backward works.
pub fn iwae_backward(works: &[f64]) -> Option<f64> {
    if works.is_empty() {
        None
    } else {
        Some(log_mean_exp(works))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IwaePair {
    pub forward: Option<f64>,
    pub backward: Option<f64>,
}

pub fn iwae_estimates(forward: &[f64], backward: &[f64]) -> Result<IwaePair> {
    if forward.is_empty() && backward.is_empty() {
        return Err(Error::Empty("no works in either direction".into()));
    }
    Ok(IwaePair {
        forward: iwae_forward(forward),
        backward: iwae_backward(backward),
    })
}

/// `(mean backward work, mean forward work)`; a missing direction is `None`.
pub fn elbo_eubo(forward: &[f64], backward: &[f64]) -> (Option<f64>, Option<f64>) {
    let m = |w: &[f64]| (!w.is_empty()).then(|| mean(w));
    (m(backward), m(forward))
}

/// Two-sided path estimator, started at the mean of the two IWAE values.
/// Needs at least two works per direction.
pub fn min_variance_estimate(forward: &[f64], backward: &[f64]) -> Result<FixedPoint> {
    min_variance_with(forward, backward, true)
}

pub(crate) fn min_variance_resample(forward: &[f64], backward: &[f64]) -> f64 {
    min_variance_with(forward, backward, false).map(|f| f.value).unwrap_or(f64::NAN)
}

fn min_variance_with(forward: &[f64], backward: &[f64], canonical: bool) -> Result<FixedPoint> {
    for (w, name) in [(forward, "forward"), (backward, "backward")] {
        if w.len() < 2 {
            return Err(Error::Empty(format!(
                "minimum-variance estimate needs >= 2 {name} works, found {}",
                w.len()
            )));
        }
    }
    let c0 = 0.5 * (iwae_forward(forward).unwrap() + iwae_backward(backward).unwrap());
    iterate(forward, backward, c0, canonical)
}

/// Standard deviation of `stat` over `resamples` bootstrap resamples.
/// Resample `r` draws from stream `r` of `seed`.
pub fn bootstrap_std<F>(values: &[f64], resamples: usize, seed: u64, stat: F) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    bootstrap_std_pair(values, &[], resamples, seed, |a, _| stat(a))
}

/// Bootstrap over two independent arrays, each resampled with replacement.
pub fn bootstrap_std_pair<F>(a: &[f64], b: &[f64], resamples: usize, seed: u64, stat: F) -> f64
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    use rand::Rng;
    if resamples < 2 {
        return f64::NAN;
    }
    let stats: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = crate::seeds::stream(seed, r as u64);
            let mut draw = |src: &[f64]| -> Vec<f64> {
                (0..src.len()).map(|_| src[rng.random_range(0..src.len())]).collect()
            };
            let ra = if a.is_empty() { Vec::new() } else { draw(a) };
            let rb = if b.is_empty() { Vec::new() } else { draw(b) };
            stat(&ra, &rb)
        })
        .collect();
    let finite: Vec<f64> = stats.into_iter().filter(|s| s.is_finite()).collect();
    std_dev(&finite)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn fep_and_iwae_by_hand() {
        assert_eq!(fep_estimate(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let expect = -(0.75f64).ln();
        assert!((fep_estimate(&[0.0, 0.0], &[0.0, LN2]).unwrap() - expect).abs() < 1e-12);
        assert!((iwae_forward(&[0.0, LN2]).unwrap() - expect).abs() < 1e-12);
        assert!((iwae_forward(&[0.4; 5]).unwrap() - 0.4).abs() < 1e-15);
        assert!(fep_estimate(&[], &[]).is_err());
        let (elbo, eubo) = elbo_eubo(&[0.0, LN2], &[]);
        assert!(elbo.is_none());
        assert!((eubo.unwrap() - 0.5 * LN2).abs() < 1e-15);
    }

    #[test]
    fn fixed_points_by_hand() {
        let fp = min_variance_estimate(&[0.0, 0.0], &[0.2, 0.2]).unwrap();
        assert!(fp.converged);
        assert!((fp.value - 0.1).abs() < 1e-10);
        let c = min_variance_estimate(&[0.7, 0.7], &[0.7, 0.7]).unwrap();
        assert_eq!(c.iters, 1);
        assert!((c.value - 0.7).abs() < 1e-15);
        let b = bar_equilibrium(&[0.0; 3], &[0.0; 4]).unwrap();
        assert!(b.value.abs() < 1e-12);
        // Unequal counts: the constant-work fixed point is still the work.
        let u = min_variance_estimate(&[0.5, 0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert!((u.value - 0.5).abs() < 1e-12);
        assert!(min_variance_estimate(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn fermi_identities() {
        for i in 0..=600 {
            let z = -30.0 + 0.1 * i as f64;
            assert!((fermi(z) + fermi(-z) - 1.0).abs() < 1e-12);
            assert!((log_fermi(z) - log_fermi(-z) + z).abs() < 1e-12);
        }
    }

    #[test]
    fn bootstrap_of_two_points_matches_the_resampling_law() {
        assert_eq!(bootstrap_std(&[3.0; 10], 50, 1, mean), 0.0);
        // Mean of two draws from {0, 1}: values 0, ½, 1 with p = ¼, ½, ¼.
        let s = bootstrap_std(&[0.0, 1.0], 20000, 7, mean);
        assert!((s - 0.125f64.sqrt()).abs() < 0.01, "{s}");
        assert_eq!(bootstrap_std(&[0.0, 1.0, 4.0], 30, 3, mean), bootstrap_std(&[0.0, 1.0, 4.0], 30, 3, mean));
    }
}
