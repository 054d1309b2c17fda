//! Combining two umbrella-biased histograms of a collective variable.

use crate::error::{Error, Result};
use crate::numcore::log_sum_exp;

/// Harmonic restraint `(k/2)(ξ − center)²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Umbrella {
    pub k: f64,
    pub center: f64,
}

impl Umbrella {
    pub fn bias(&self, xi: f64) -> f64 {
        0.5 * self.k * (xi - self.center).powi(2)
    }
}

/// Counts per bin for `bins` equal-width bins on `[lo, hi]`; values outside
/// are dropped. Returns `(counts, centers)`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if bins == 0 || !(hi > lo) {
        return Err(Error::Config(format!("bad binning [{lo}, {hi}] with {bins} bins")));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0.0; bins];
    for &v in values {
        if !(lo..=hi).contains(&v) {
            continue;
        }
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1.0;
    }
    let centers = (0..bins).map(|i| lo + (i as f64 + 0.5) * width).collect();
    Ok((counts, centers))
}

/// `P(ξ) ∝ (n_a + n_b) / (N_a e^{F_a − bias_a(ξ)} + N_b e^{F_b − bias_b(ξ)})`,
/// normalized to sum to one. `F_*` are free energies (`−log Z`) of the two
/// biased ensembles on a common scale.
pub fn umbrella_reweight(
    hist_a: &[f64],
    hist_b: &[f64],
    f_a: f64,
    f_b: f64,
    umbrella_a: Umbrella,
    umbrella_b: Umbrella,
    centers: &[f64],
) -> Result<Vec<f64>> {
    if hist_a.len() != centers.len() || hist_b.len() != centers.len() {
        return Err(Error::shape(centers.len(), hist_a.len().max(hist_b.len()), "histogram bins"));
    }
    let (na, nb): (f64, f64) = (hist_a.iter().sum(), hist_b.iter().sum());
    if na + nb <= 0.0 {
        return Err(Error::Empty("both umbrella histograms are empty".into()));
    }
    let mut log_p = Vec::with_capacity(centers.len());
    for i in 0..centers.len() {
        let n = hist_a[i] + hist_b[i];
        if n <= 0.0 {
            log_p.push(f64::NEG_INFINITY);
            continue;
        }
        let mut terms = Vec::with_capacity(2);
        if na > 0.0 {
            terms.push(na.ln() + f_a - umbrella_a.bias(centers[i]));
        }
        if nb > 0.0 {
            terms.push(nb.ln() + f_b - umbrella_b.bias(centers[i]));
        }
        log_p.push(n.ln() - log_sum_exp(&terms));
    }
    let z = log_sum_exp(&log_p);
    if !z.is_finite() {
        return Err(Error::Numerical("reweighted histogram has no finite mass".into()));
    }
    Ok(log_p.iter().map(|l| (l - z).exp()).collect())
}

/// `Σ_ξ |P(ξ) − P(−ξ)| / 2` over a binning symmetric about zero.
pub fn symmetry_metric(p: &[f64], centers: &[f64]) -> Result<f64> {
    if p.len() != centers.len() {
        return Err(Error::shape(centers.len(), p.len(), "histogram bins"));
    }
    let n = centers.len();
    for i in 0..n {
        if (centers[i] + centers[n - 1 - i]).abs() > 1e-9 * (1.0 + centers[i].abs()) {
            return Err(Error::Config("bin centers are not symmetric about zero".into()));
        }
    }
    Ok((0..n).map(|i| (p[i] - p[n - 1 - i]).abs()).sum::<f64>() / 2.0)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape(p.len(), q.len(), "distributions"));
    }
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_umbrellas_pool_the_counts() {
        let u = Umbrella { k: 10.0, center: 0.2 };
        let centers = [-0.5, 0.0, 0.5];
        let p = umbrella_reweight(&[1.0, 2.0, 1.0], &[0.0, 3.0, 1.0], 0.3, 0.3, u, u, &centers).unwrap();
        // Bias is undone: P ∝ pooled counts · e^{bias}.
        let raw: Vec<f64> = [1.0, 5.0, 2.0].iter().zip(centers).map(|(n, c)| n * u.bias(c).exp()).collect();
        let z: f64 = raw.iter().sum();
        for (a, b) in p.iter().zip(&raw) {
            assert!((a - b / z).abs() < 1e-12);
        }
    }

    #[test]
    fn mirrored_umbrellas_give_a_symmetric_result() {
        let (ua, ub) = (Umbrella { k: 4.0, center: -0.5 }, Umbrella { k: 4.0, center: 0.5 });
        let centers = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let ha = [3.0, 5.0, 2.0, 1.0, 0.0];
        let hb: Vec<f64> = ha.iter().rev().copied().collect();
        let p = umbrella_reweight(&ha, &hb, 0.0, 0.0, ua, ub, &centers).unwrap();
        assert!(symmetry_metric(&p, &centers).unwrap() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors_and_binning() {
        let u = Umbrella { k: 1.0, center: 0.0 };
        assert!(umbrella_reweight(&[0.0], &[0.0], 0.0, 0.0, u, u, &[0.0]).is_err());
        assert!(symmetry_metric(&[0.5, 0.5], &[0.0, 1.0]).is_err());
        let (c, centers) = histogram(&[-1.0, 0.1, 0.9, 1.0, 2.0], -1.0, 1.0, 2).unwrap();
        assert_eq!(c, vec![1.0, 3.0]);
        assert_eq!(centers, vec![-0.5, 0.5]);
    }
}
