//! Stochastic interpolant `I_t = α_t x_a + β_t x_b + γ_t ε`, its training
//! losses, minibatch pairing and the training loop.

pub mod ot;
pub mod train;

use ndarray::{Array2, ArrayView2, Axis, Zip};

pub use ot::{canonicalize, hungarian, kabsch, minibatch_ot_pairs};
pub use train::{format_loss_csv, train_from, train_transport, write_loss_csv, LossRecord, TrainConfig, TrainOutput};

use crate::error::{Error, Result};

/// Default t-sampling clip.
pub const DEFAULT_T_CLIP: f64 = 1e-3;
/// Default noise amplitude `a` in `γ_t = √(a t (1 − t))`.
pub const DEFAULT_NOISE: f64 = 0.05;

/// `α_t = 1 − t`, `β_t = t`, `γ_t = √(a t (1 − t))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub a: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { a: DEFAULT_NOISE }
    }
}

impl Schedule {
    pub fn new(a: f64) -> Result<Self> {
        if !(a >= 0.0) || !a.is_finite() {
            return Err(Error::Config(format!("noise amplitude must be >= 0, got {a}")));
        }
        Ok(Schedule { a })
    }

    #[inline]
    pub fn alpha(&self, t: f64) -> f64 {
        1.0 - t
    }

    #[inline]
    pub fn beta(&self, t: f64) -> f64 {
        t
    }

    #[inline]
    pub fn gamma(&self, t: f64) -> f64 {
        (self.a * t * (1.0 - t)).max(0.0).sqrt()
    }

    #[inline]
    pub fn alpha_dot(&self, _t: f64) -> f64 {
        -1.0
    }

    #[inline]
    pub fn beta_dot(&self, _t: f64) -> f64 {
        1.0
    }

    /// `γ̇_t = a (1 − 2t) / (2 γ_t)`; unbounded at the endpoints.
    #[inline]
    pub fn gamma_dot(&self, t: f64) -> f64 {
        if self.a == 0.0 {
            return 0.0;
        }
        self.a * (1.0 - 2.0 * t) / (2.0 * self.gamma(t))
    }

    /// `γ_t γ̇_t = a (1 − 2t) / 2`, finite everywhere.
    #[inline]
    pub fn gamma_gamma_dot(&self, t: f64) -> f64 {
        0.5 * self.a * (1.0 - 2.0 * t)
    }
}

/// Interpolant and its time derivative for one triple `(x_a, x_b, ε)`.
pub fn draw_interpolant(
    schedule: &Schedule,
    xa: &[f64],
    xb: &[f64],
    eps: &[f64],
    t: f64,
    clip: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if xa.len() != xb.len() || xa.len() != eps.len() {
        return Err(Error::Shape(format!(
            "interpolant inputs of lengths {}, {}, {}",
            xa.len(),
            xb.len(),
            eps.len()
        )));
    }
    if !(t >= clip && t <= 1.0 - clip) {
        return Err(Error::Range(format!("t = {t} outside [{clip}, {}]", 1.0 - clip)));
    }
    let (al, be, ga) = (schedule.alpha(t), schedule.beta(t), schedule.gamma(t));
    let (ad, bd) = (schedule.alpha_dot(t), schedule.beta_dot(t));
    let gd = if t > 0.0 && t < 1.0 { schedule.gamma_dot(t) } else { 0.0 };
    let mut it = Vec::with_capacity(xa.len());
    let mut dit = Vec::with_capacity(xa.len());
    for i in 0..xa.len() {
        it.push(al * xa[i] + be * xb[i] + ga * eps[i]);
        // At an exact endpoint the noise velocity is dropped (γ̇ is unbounded).
        let noise = if gd == 0.0 { 0.0 } else { gd * eps[i] };
        dit.push(ad * xa[i] + bd * xb[i] + noise);
    }
    Ok((it, dit))
}

/// A training minibatch. Rows of every matrix correspond.
#[derive(Clone, Debug)]
pub struct Batch {
    pub t: Vec<f64>,
    pub xa: Array2<f64>,
    pub xb: Array2<f64>,
    pub eps: Array2<f64>,
    /// `∇U_a(x_a)`, `∇U_b(x_b)` for target score matching.
    pub ga: Option<Array2<f64>>,
    pub gb: Option<Array2<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.t.len();
        let d = self.xa.ncols();
        for (m, name) in [(&self.xa, "x_a"), (&self.xb, "x_b"), (&self.eps, "ε")] {
            if m.dim() != (n, d) {
                return Err(Error::Shape(format!("{name} block {:?}, expected {:?}", m.dim(), (n, d))));
            }
        }
        for g in [&self.ga, &self.gb].into_iter().flatten() {
            if g.dim() != (n, d) {
                return Err(Error::Shape(format!("gradient block {:?}, expected {:?}", g.dim(), (n, d))));
            }
        }
        if n == 0 {
            return Err(Error::Empty("minibatch".into()));
        }
        Ok(())
    }

    /// `(I_t, İ_t)` for every row.
    pub fn interpolants(&self, schedule: &Schedule) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check()?;
        let mut it = Array2::zeros(self.xa.dim());
        let mut dit = Array2::zeros(self.xa.dim());
        for (i, &t) in self.t.iter().enumerate() {
            if !(t > 0.0 && t < 1.0) && schedule.a > 0.0 {
                return Err(Error::Range(format!("t = {t}: γ_t vanishes, clip the t range")));
            }
            let (al, be, ga) = (schedule.alpha(t), schedule.beta(t), schedule.gamma(t));
            let gd = schedule.gamma_dot(t);
            Zip::from(it.row_mut(i))
                .and(dit.row_mut(i))
                .and(self.xa.row(i))
                .and(self.xb.row(i))
                .and(self.eps.row(i))
                .for_each(|o, od, &a, &b, &e| {
                    *o = al * a + be * b + ga * e;
                    *od = -a + b + gd * e;
                });
        }
        Ok((it, dit))
    }

    /// DSM regression target `ε / γ_t` and per-row weight `η_t = γ_t`.
    pub fn dsm_target(&self, schedule: &Schedule) -> Result<(Array2<f64>, Vec<f64>)> {
        self.check()?;
        let mut target = self.eps.clone();
        let mut weights = Vec::with_capacity(self.len());
        for (mut row, &t) in target.axis_iter_mut(Axis(0)).zip(&self.t) {
            let g = schedule.gamma(t);
            if !(g > 0.0) {
                return Err(Error::Range(format!(
                    "γ_t = 0 at t = {t}; DSM needs t strictly inside (0, 1) and a > 0"
                )));
            }
            row /= g;
            weights.push(g);
        }
        Ok((target, weights))
    }

    /// TSM targets (`∇U_a(x_a)/α_t` for t < ½, `∇U_b(x_b)/β_t` otherwise)
    /// and the row masks of the two halves.
    pub fn tsm_target(&self, schedule: &Schedule) -> Result<(Array2<f64>, Vec<bool>)> {
        self.check()?;
        let (ga, gb) = match (&self.ga, &self.gb) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Config(
                    "target score matching needs endpoint energy gradients".into(),
                ))
            }
        };
        let mut target = Array2::zeros(self.xa.dim());
        let mut first = Vec::with_capacity(self.len());
        for (i, &t) in self.t.iter().enumerate() {
            let lower = t < 0.5;
            let (src, scale) = if lower {
                (ga.row(i), 1.0 / schedule.alpha(t))
            } else {
                (gb.row(i), 1.0 / schedule.beta(t))
            };
            target.row_mut(i).assign(&(&src * scale));
            first.push(lower);
        }
        Ok((target, first))
    }
}

fn row_sq_err(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    Ok(pred
        .axis_iter(Axis(0))
        .zip(target.axis_iter(Axis(0)))
        .map(|(p, q)| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect())
}

/// `mean ‖v(I_t) − İ_t‖²` given predictions `v(I_t)`.
pub fn loss_velocity(pred: ArrayView2<'_, f64>, batch: &Batch, schedule: &Schedule) -> Result<f64> {
    let (_, dit) = batch.interpolants(schedule)?;
    let e = row_sq_err(pred, dit.view())?;
    Ok(crate::numcore::mean(&e))
}

/// `mean γ_t ‖s(I_t) − ε/γ_t‖²` given predictions `s(I_t)`.
pub fn loss_score_dsm(pred: ArrayView2<'_, f64>, batch: &Batch, schedule: &Schedule) -> Result<f64> {
    let (target, w) = batch.dsm_target(schedule)?;
    let e = row_sq_err(pred, target.view())?;
    Ok(e.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / e.len() as f64)
}

/// The two TSM halves `(t < ½, t ≥ ½)`, each a mean over its own rows
/// (zero when a half is empty).
pub fn loss_score_tsm(
    pred: ArrayView2<'_, f64>,
    batch: &Batch,
    schedule: &Schedule,
) -> Result<(f64, f64)> {
    let (target, first) = batch.tsm_target(schedule)?;
    let e = row_sq_err(pred, target.view())?;
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (err, lower) in e.iter().zip(&first) {
        let k = if *lower { 0 } else { 1 };
        sums[k] += err;
        counts[k] += 1;
    }
    let half = |k: usize| if counts[k] == 0 { 0.0 } else { sums[k] / counts[k] as f64 };
    Ok((half(0), half(1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn boundary_identities() {
        let s = Schedule::default();
        assert_eq!((s.alpha(0.0), s.beta(0.0), s.gamma(0.0)), (1.0, 0.0, 0.0));
        assert_eq!((s.alpha(1.0), s.beta(1.0), s.gamma(1.0)), (0.0, 1.0, 0.0));
        assert!((s.gamma(0.5) - 0.111_803_398_874_989_5).abs() < 1e-15);
    }

    #[test]
    fn interpolant_examples() {
        let s = Schedule::default();
        let (i0, _) = draw_interpolant(&s, &[1.0, 2.0], &[5.0, 6.0], &[0.3, 0.1], 0.0, 0.0).unwrap();
        assert_eq!(i0, vec![1.0, 2.0]);
        let x = [0.7, -1.2];
        for t in [0.01, 0.3, 0.5, 0.99] {
            let (it, dit) = draw_interpolant(&s, &x, &x, &[0.0, 0.0], t, 1e-3).unwrap();
            for k in 0..2 {
                assert!((it[k] - x[k]).abs() < 1e-15);
                assert_eq!(dit[k], 0.0);
            }
        }
        assert!(matches!(
            draw_interpolant(&s, &x, &x, &[0.0, 0.0], 0.0005, 1e-3),
            Err(Error::Range(_))
        ));
    }

    fn two_row_batch() -> Batch {
        Batch {
            t: vec![0.25, 0.75],
            xa: array![[1.0], [-1.0]],
            xb: array![[3.0], [2.0]],
            eps: array![[0.0], [0.0]],
            ga: Some(array![[1.0], [-1.0]]),
            gb: Some(array![[0.75], [0.5]]),
        }
    }

    #[test]
    fn zero_network_velocity_loss_by_hand() {
        // ε = 0 so İ = x_b − x_a: rows 2 and 3, mean of squares 6.5.
        let b = two_row_batch();
        let s = Schedule::default();
        let zero = Array2::zeros((2, 1));
        assert!((loss_velocity(zero.view(), &b, &s).unwrap() - 6.5).abs() < 1e-15);
        assert_eq!(loss_score_dsm(zero.view(), &b, &s).unwrap(), 0.0);
    }

    #[test]
    fn tsm_targets_scale_endpoint_gradients() {
        let b = two_row_batch();
        let s = Schedule::default();
        let (target, first) = b.tsm_target(&s).unwrap();
        assert_eq!(first, vec![true, false]);
        assert!((target[[0, 0]] - 1.0 / 0.75).abs() < 1e-15);
        assert!((target[[1, 0]] - 0.5 / 0.75).abs() < 1e-15);
        let (l0, l1) = loss_score_tsm(target.view(), &b, &s).unwrap();
        assert_eq!((l0, l1), (0.0, 0.0));

        let mut near_half = two_row_batch();
        near_half.t = vec![0.5 - 1e-12, 0.9];
        let (t2, _) = near_half.tsm_target(&s).unwrap();
        assert!((t2[[0, 0]] - 2.0).abs() < 1e-10);

        let mut missing = two_row_batch();
        missing.ga = None;
        assert!(matches!(missing.tsm_target(&s), Err(Error::Config(_))));
    }
}
