//! Dense numerics: small vector helpers, a tape-based reverse-mode
//! differentiator, the dense networks used for velocity and score fields,
//! and the Adam optimizer.
//!
//! Vectors and matrices are plain `f64` slices and `ndarray` arrays; there is
//! no broadcasting machinery beyond what the networks need.

pub mod adam;
pub mod autodiff;
pub mod checkpoint;
pub mod mlp;

pub use adam::AdamState;
pub use autodiff::{Tape, Var};
pub use checkpoint::{read_model, write_model, ModelKind};
pub use mlp::{Activation, Mlp, MlpInit, TIME_EMBED_WIDTH};

/// Row-major matrix of reals.
pub type RealMatrix = ndarray::Array2<f64>;
/// Vector of reals.
pub type RealVector = ndarray::Array1<f64>;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// `log Σ exp(v_i)` with the max shift. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `log (1/n) Σ exp(v_i)`.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    log_sum_exp(values) - (values.len() as f64).ln()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

pub fn std_dev(values: &[f64]) -> f64 {
    variance(values).sqrt()
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_large_magnitudes() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let v = [-1000.0, -1000.0 + 2f64.ln()];
        assert!((log_sum_exp(&v) - (-1000.0 + 3f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for x in [-20.0, -3.0, -0.5, 0.0, 0.7, 4.0, 30.0] {
            let naive = (1.0f64 + f64::exp(x)).ln();
            assert!((softplus(x) - naive).abs() < 1e-12, "x={x}");
        }
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn variance_of_constant_is_zero() {
        assert_eq!(variance(&[3.0; 7]), 0.0);
        assert_eq!(variance(&[1.0]), 0.0);
        assert!((variance(&[0.0, 2.0]) - 2.0).abs() < 1e-15);
    }
}
