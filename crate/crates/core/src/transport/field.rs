use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::interpolant::Schedule;
use crate::numcore::Mlp;
use crate::systems::EnergySystem;

/// Velocity `v_t` and score model `s_t ≈ ∇U_t`, evaluated on row batches.
pub trait TransportField: Send + Sync {
    fn dim(&self) -> usize;

    fn velocity(&self, xs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>>;

    fn score(&self, xs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>>;

    /// Row-wise `J_v(x) · dir`.
    fn velocity_jvp(
        &self,
        _xs: ArrayView2<'_, f64>,
        _t: f64,
        _dirs: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        Err(Error::Config(
            "this transport provides no velocity derivatives; divergence unavailable".into(),
        ))
    }

    /// Closed-form `∇·v` per row, when the field knows it.
    fn divergence_exact(&self, _xs: ArrayView2<'_, f64>, _t: f64) -> Option<Vec<f64>> {
        None
    }
}

fn check_dim(expected: usize, xs: ArrayView2<'_, f64>) -> Result<()> {
    if xs.ncols() != expected {
        return Err(Error::shape(expected, xs.ncols(), "transport input"));
    }
    Ok(())
}

/// `v ≡ 0`, `s ≡ 0`.
#[derive(Clone, Copy, Debug)]
pub struct ZeroField {
    pub dim: usize,
}

impl TransportField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, xs: ArrayView2<'_, f64>, _t: f64) -> Result<Array2<f64>> {
        check_dim(self.dim, xs)?;
        Ok(Array2::zeros(xs.dim()))
    }

    fn score(&self, xs: ArrayView2<'_, f64>, _t: f64) -> Result<Array2<f64>> {
        check_dim(self.dim, xs)?;
        Ok(Array2::zeros(xs.dim()))
    }

    fn velocity_jvp(&self, xs: ArrayView2<'_, f64>, _t: f64, _d: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(Array2::zeros(xs.dim()))
    }

    fn divergence_exact(&self, xs: ArrayView2<'_, f64>, _t: f64) -> Option<Vec<f64>> {
        Some(vec![0.0; xs.nrows()])
    }
}

/// `v(x, t) = c·x` with a zero score model. The flow map is `x e^{c t}`.
#[derive(Clone, Copy, Debug)]
pub struct LinearFlow {
    pub dim: usize,
    pub rate: f64,
}

impl TransportField for LinearFlow {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, xs: ArrayView2<'_, f64>, _t: f64) -> Result<Array2<f64>> {
        check_dim(self.dim, xs)?;
        Ok(&xs * self.rate)
    }

    fn score(&self, xs: ArrayView2<'_, f64>, _t: f64) -> Result<Array2<f64>> {
        check_dim(self.dim, xs)?;
        Ok(Array2::zeros(xs.dim()))
    }

    fn velocity_jvp(&self, _xs: ArrayView2<'_, f64>, _t: f64, dirs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(&dirs * self.rate)
    }

    fn divergence_exact(&self, xs: ArrayView2<'_, f64>, _t: f64) -> Option<Vec<f64>> {
        Some(vec![self.rate * self.dim as f64; xs.nrows()])
    }
}

/// Exact interpolant velocity and score for diagonal Gaussian endpoints
/// under independent coupling. Per coordinate, `I_t` is Gaussian with mean
/// `m_t = α μ_a + β μ_b` and variance `V_t = α² s_a² + β² s_b² + γ²`, and
/// `E[İ_t | I_t = x] = α̇ μ_a + β̇ μ_b + (α̇ α s_a² + β̇ β s_b² + γ γ̇)(x − m_t)/V_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticGaussianTransport {
    pub mean_a: Vec<f64>,
    pub std_a: Vec<f64>,
    pub mean_b: Vec<f64>,
    pub std_b: Vec<f64>,
    pub schedule: Schedule,
}

impl AnalyticGaussianTransport {
    pub fn new(a: &EnergySystem, b: &EnergySystem, schedule: Schedule) -> Result<Self> {
        match (a, b) {
            (EnergySystem::Gaussian(pa), EnergySystem::Gaussian(pb)) => {
                if pa.mean.len() != pb.mean.len() {
                    return Err(Error::shape(pa.mean.len(), pb.mean.len(), "endpoint dimensions"));
                }
                Ok(AnalyticGaussianTransport {
                    mean_a: pa.mean.clone(),
                    std_a: pa.std.clone(),
                    mean_b: pb.mean.clone(),
                    std_b: pb.std.clone(),
                    schedule,
                })
            }
            _ => Err(Error::Unsupported(format!(
                "analytic transport needs Gaussian endpoints, got {} and {}",
                a.kind(),
                b.kind()
            ))),
        }
    }

    /// `(m_t, V_t, gain_t)` for coordinate `j`; `v = drift + gain (x − m)`.
    #[inline]
    fn coeffs(&self, j: usize, t: f64) -> (f64, f64, f64, f64) {
        let s = &self.schedule;
        let (al, be, ga) = (s.alpha(t), s.beta(t), s.gamma(t));
        let (va, vb) = (self.std_a[j].powi(2), self.std_b[j].powi(2));
        let m = al * self.mean_a[j] + be * self.mean_b[j];
        let var = al * al * va + be * be * vb + ga * ga;
        let drift = s.alpha_dot(t) * self.mean_a[j] + s.beta_dot(t) * self.mean_b[j];
        let gain = (s.alpha_dot(t) * al * va + s.beta_dot(t) * be * vb + s.gamma_gamma_dot(t)) / var;
        (m, var, drift, gain)
    }

    /// Marginal mean and variance of `I_t` per coordinate.
    pub fn marginal(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        (0..self.mean_a.len())
            .map(|j| {
                let (m, v, _, _) = self.coeffs(j, t);
                (m, v)
            })
            .unzip()
    }
}

impl TransportField for AnalyticGaussianTransport {
    fn dim(&self) -> usize {
        self.mean_a.len()
    }

    fn velocity(&self, xs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        check_dim(self.dim(), xs)?;
        let mut out = xs.to_owned();
        for j in 0..self.dim() {
            let (m, _, drift, gain) = self.coeffs(j, t);
            out.column_mut(j).mapv_inplace(|x| drift + gain * (x - m));
        }
        Ok(out)
    }

    fn score(&self, xs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        check_dim(self.dim(), xs)?;
        let mut out = xs.to_owned();
        for j in 0..self.dim() {
            let (m, var, _, _) = self.coeffs(j, t);
            out.column_mut(j).mapv_inplace(|x| (x - m) / var);
        }
        Ok(out)
    }

    fn velocity_jvp(&self, _xs: ArrayView2<'_, f64>, t: f64, dirs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut out = dirs.to_owned();
        for j in 0..self.dim() {
            let (_, _, _, gain) = self.coeffs(j, t);
            out.column_mut(j).mapv_inplace(|d| gain * d);
        }
        Ok(out)
    }

    fn divergence_exact(&self, xs: ArrayView2<'_, f64>, t: f64) -> Option<Vec<f64>> {
        let tr: f64 = (0..self.dim()).map(|j| self.coeffs(j, t).3).sum();
        Some(vec![tr; xs.nrows()])
    }
}

/// Learned transport: two networks, the interpolant schedule and the
/// diffusion level. An optional analytic `base` is added to both network
/// outputs (residual parameterization).
#[derive(Clone, Debug)]
pub struct TransportModel {
    pub velocity: Mlp,
    pub score: Mlp,
    pub schedule: Schedule,
    pub sigma: f64,
    pub base: Option<AnalyticGaussianTransport>,
}

impl TransportModel {
    pub fn new(velocity: Mlp, score: Mlp, schedule: Schedule, sigma: f64) -> Result<Self> {
        let d = velocity.input_dim();
        for (net, name) in [(&velocity, "velocity"), (&score, "score")] {
            if net.input_dim() != d || net.output_dim() != d {
                return Err(Error::Shape(format!(
                    "{name} network maps {} → {}, expected {d} → {d}",
                    net.input_dim(),
                    net.output_dim()
                )));
            }
        }
        if !(sigma >= 0.0) {
            return Err(Error::Config(format!("diffusion level must be >= 0, got {sigma}")));
        }
        Ok(TransportModel {
            velocity,
            score,
            schedule,
            sigma,
            base: None,
        })
    }
}

impl TransportField for TransportModel {
    fn dim(&self) -> usize {
        self.velocity.input_dim()
    }

    fn velocity(&self, xs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        let mut out = self.velocity.forward_batch(xs, &[t])?;
        if let Some(b) = &self.base {
            out += &b.velocity(xs, t)?;
        }
        Ok(out)
    }

    fn score(&self, xs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        let mut out = self.score.forward_batch(xs, &[t])?;
        if let Some(b) = &self.base {
            out += &b.score(xs, t)?;
        }
        Ok(out)
    }

    fn velocity_jvp(&self, xs: ArrayView2<'_, f64>, t: f64, dirs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (_, mut tangent) = self.velocity.jvp_batch(xs, &[t], dirs)?;
        if let Some(b) = &self.base {
            tangent += &b.velocity_jvp(xs, t, dirs)?;
        }
        Ok(tangent)
    }
}

/// Row-wise `‖a_i‖²` helper shared by the path code.
pub(crate) fn row_norms_sq(a: &Array2<f64>) -> Vec<f64> {
    a.axis_iter(Axis(0)).map(|r| r.iter().map(|v| v * v).sum()).collect()
}
