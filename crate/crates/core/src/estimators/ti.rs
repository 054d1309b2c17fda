//! Thermodynamic integration along `U_t = (1 − t) U_a + t U_b`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numcore::mean;
use crate::sampling::{mala_chains, MalaConfig};
use crate::systems::{Energy, EnergySystem, LinearMix};

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Newton on P_n from the Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TiRule {
    GaussLegendre,
    /// Uniform knots including both endpoints.
    Trapezoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TiConfig {
    pub knots: usize,
    pub rule: TiRule,
    pub mala: MalaConfig,
    /// Chain start states, reused at every knot.
    pub starts: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TiResult {
    pub value: f64,
    /// `(t, weight, E_t[U_b − U_a])` per knot.
    pub knots: Vec<(f64, f64, f64)>,
}

/// `∫₀¹ E_t[U_b − U_a] dt` with MALA at each knot; knot `k` uses seed
/// `splitmix64(mala.seed ^ k)`.
pub fn ti_quadrature(a: &EnergySystem, b: &EnergySystem, cfg: &TiConfig) -> Result<TiResult> {
    if cfg.knots < 2 {
        return Err(Error::Config("TI needs at least two knots".into()));
    }
    if cfg.starts.is_empty() {
        return Err(Error::Config("TI needs at least one chain start".into()));
    }
    let nodes: Vec<(f64, f64)> = match cfg.rule {
        TiRule::GaussLegendre => gauss_legendre(cfg.knots),
        TiRule::Trapezoid => {
            let m = (cfg.knots - 1) as f64;
            (0..cfg.knots)
                .map(|k| {
                    let w = if k == 0 || k == cfg.knots - 1 { 0.5 / m } else { 1.0 / m };
                    (k as f64 / m, w)
                })
                .collect()
        }
    };
    let knots: Result<Vec<(f64, f64, f64)>> = nodes
        .par_iter()
        .enumerate()
        .map(|(k, &(t, w))| {
            let mix = LinearMix::new(a, b, t)?;
            let mut mala = cfg.mala.clone();
            mala.seed = crate::seeds::splitmix64(cfg.mala.seed ^ k as u64);
            let (set, _) = mala_chains(&mix, &mala, &cfg.starts)
                .map_err(|e| Error::Numerical(format!("sampler failed at t = {t}: {e}")))?;
            let du: Vec<f64> = set
                .samples
                .rows()
                .into_iter()
                .map(|x| {
                    let x = x.to_vec();
                    b.value(&x) - a.value(&x)
                })
                .collect();
            let m = mean(&du);
            if !m.is_finite() {
                return Err(Error::Numerical(format!("non-finite TI integrand at t = {t}")));
            }
            Ok((t, w, m))
        })
        .collect();
    let knots = knots?;
    let value = knots.iter().map(|(_, w, m)| w * m).sum();
    Ok(TiResult { value, knots })
}
