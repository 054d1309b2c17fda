//! Closed-form energy systems (k_BT = 1).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::{log_sum_exp, softplus};

/// Anything with an energy and gradient on R^d. Implementations skip shape
/// checks; use [`EnergySystem::energy`] for the checked entry point.
pub trait Energy: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Energy at `x`; the gradient is written into `grad`.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmParams {
    pub dim: usize,
    /// `components × dim`, row-major.
    pub means: Vec<f64>,
    pub std: f64,
    pub seed: u64,
}

impl GmmParams {
    /// Means uniform on `[-2, 2]^d` drawn from `seed`, shared isotropic std.
    pub fn random(dim: usize, components: usize, std: f64, seed: u64) -> Result<Self> {
        if dim == 0 || components == 0 {
            return Err(Error::Config("mixture needs dim > 0 and components > 0".into()));
        }
        if !(std > 0.0) {
            return Err(Error::Config(format!("mixture std must be > 0, got {std}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = (0..dim * components)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        Ok(GmmParams {
            dim,
            means,
            std,
            seed,
        })
    }

    /// 16 components, std softplus(-3), seed 10.
    pub fn sixteen(dim: usize) -> Self {
        Self::random(dim, 16, softplus(-3.0), 10).expect("valid constants")
    }

    /// 40 components, std softplus(-2), seed 0.
    pub fn forty(dim: usize) -> Self {
        Self::random(dim, 40, softplus(-2.0), 0).expect("valid constants")
    }

    pub fn components(&self) -> usize {
        self.means.len() / self.dim
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LjClusterParams {
    pub particles: usize,
    pub epsilon: f64,
    pub sigma: f64,
    /// Multiplies the `½ Σ ‖X_n − X̄‖²` trap.
    pub trap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phi4Params {
    pub side: usize,
    pub m2: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EnergySystem {
    /// `Σ (x_i − μ_i)² / (2σ_i²)`.
    Gaussian(GaussianParams),
    /// `−log` of a uniform-weight isotropic mixture density.
    Gmm(GmmParams),
    /// `h Σ (x_i² − 1)²`.
    DoubleWell { dim: usize, height: f64 },
    /// Lennard-Jones over ordered pairs plus a centered harmonic trap; the
    /// layout is `[x0, y0, z0, x1, ...]`.
    LjCluster(LjClusterParams),
    /// Periodic square lattice, row-major sites.
    Phi4(Phi4Params),
    /// Adds `(k/2)(mean(x) − center)²`.
    Umbrella {
        inner: Box<EnergySystem>,
        k: f64,
        center: f64,
    },
    /// `U(x / scale)`.
    Scaled { inner: Box<EnergySystem>, scale: f64 },
}

impl EnergySystem {
    pub fn gaussian(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::Config(format!(
                "gaussian needs matching non-empty mean/std, got {} and {}",
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("gaussian std entries must be positive".into()));
        }
        Ok(EnergySystem::Gaussian(GaussianParams { mean, std }))
    }

    /// Centered isotropic Gaussian in `dim` dimensions.
    pub fn isotropic(dim: usize, std: f64) -> Result<Self> {
        Self::gaussian(vec![0.0; dim], vec![std; dim])
    }

    pub fn double_well(dim: usize, height: f64) -> Result<Self> {
        if dim == 0 || !(height > 0.0) {
            return Err(Error::Config("double well needs dim > 0 and height > 0".into()));
        }
        Ok(EnergySystem::DoubleWell { dim, height })
    }

    pub fn lj_cluster(particles: usize, epsilon: f64, sigma: f64) -> Result<Self> {
        if particles == 0 || !(sigma > 0.0) || epsilon < 0.0 {
            return Err(Error::Config(
                "lj cluster needs particles > 0, sigma > 0, epsilon >= 0".into(),
            ));
        }
        Ok(EnergySystem::LjCluster(LjClusterParams {
            particles,
            epsilon,
            sigma,
            trap: 1.0,
        }))
    }

    pub fn phi4(side: usize, m2: f64, lambda: f64) -> Result<Self> {
        if side < 2 || lambda < 0.0 {
            return Err(Error::Config("phi4 needs side >= 2 and lambda >= 0".into()));
        }
        Ok(EnergySystem::Phi4(Phi4Params { side, m2, lambda }))
    }

    pub fn with_umbrella(self, k: f64, center: f64) -> Self {
        EnergySystem::Umbrella {
            inner: Box::new(self),
            k,
            center,
        }
    }

    pub fn scaled(self, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::Config("scale must be > 0".into()));
        }
        Ok(EnergySystem::Scaled {
            inner: Box::new(self),
            scale,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EnergySystem::Gaussian(_) => "gaussian",
            EnergySystem::Gmm(_) => "gmm",
            EnergySystem::DoubleWell { .. } => "doublewell",
            EnergySystem::LjCluster(_) => "lj-cluster",
            EnergySystem::Phi4(_) => "phi4",
            EnergySystem::Umbrella { inner, .. } | EnergySystem::Scaled { inner, .. } => {
                inner.kind()
            }
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::shape(self.dim(), x.len(), "state"));
        }
        Ok(())
    }

    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.value(x))
    }

    pub fn energy_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut g = vec![0.0; x.len()];
        self.value_grad(x, &mut g);
        Ok(g)
    }

    /// `log Z` where it is known exactly.
    pub fn log_partition_analytic(&self) -> Result<f64> {
        match self {
            EnergySystem::Gaussian(p) => Ok(p
                .std
                .iter()
                .map(|s| 0.5 * (2.0 * PI).ln() + s.ln())
                .sum()),
            EnergySystem::Gmm(_) => Ok(0.0),
            EnergySystem::Scaled { inner, scale } => {
                Ok(inner.log_partition_analytic()? + inner.dim() as f64 * scale.ln())
            }
            _ => Err(Error::Unavailable("the log partition function")),
        }
    }

    /// Mean magnetization / mean coordinate, the umbrella collective variable.
    pub fn collective_variable(x: &[f64]) -> f64 {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

/// `ΔF = F_b − F_a = log Z_a − log Z_b` from closed forms.
pub fn analytic_delta_f(a: &EnergySystem, b: &EnergySystem) -> Result<f64> {
    Ok(a.log_partition_analytic()? - b.log_partition_analytic()?)
}

fn gmm_value_grad(p: &GmmParams, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let k = p.components();
    let inv_var = 1.0 / (p.std * p.std);
    let logits: Vec<f64> = (0..k)
        .map(|c| {
            let m = p.mean(c);
            -0.5 * inv_var * x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .collect();
    let lse = log_sum_exp(&logits);
    let norm = (k as f64).ln() + p.dim as f64 * (0.5 * (2.0 * PI).ln() + p.std.ln());
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v = 0.0);
        for (c, l) in logits.iter().enumerate() {
            let w = (l - lse).exp();
            if w == 0.0 {
                continue;
            }
            for ((gi, xi), mi) in g.iter_mut().zip(x).zip(p.mean(c)) {
                *gi += w * inv_var * (xi - mi);
            }
        }
    }
    norm - lse
}

fn lj_value_grad(p: &LjClusterParams, x: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
    let n = p.particles;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let s6 = p.sigma.powi(6);
    let mut u = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = [
                x[3 * i] - x[3 * j],
                x[3 * i + 1] - x[3 * j + 1],
                x[3 * i + 2] - x[3 * j + 2],
            ];
            let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            let inv6 = s6 / (r2 * r2 * r2);
            // Each unordered pair appears twice in the ordered sum.
            u += 2.0 * 4.0 * p.epsilon * (inv6 * inv6 - inv6);
            if let Some(g) = grad.as_deref_mut() {
                // d/dr² of 8ε(s¹²/r¹² − s⁶/r⁶), times 2 d for the gradient.
                let du_dr2 = 8.0 * p.epsilon * (-6.0 * inv6 * inv6 + 3.0 * inv6) / r2;
                for a in 0..3 {
                    let c = 2.0 * du_dr2 * d[a];
                    g[3 * i + a] += c;
                    g[3 * j + a] -= c;
                }
            }
        }
    }
    let mut centroid = [0.0; 3];
    for i in 0..n {
        for a in 0..3 {
            centroid[a] += x[3 * i + a] / n as f64;
        }
    }
    for i in 0..n {
        for a in 0..3 {
            let c = x[3 * i + a] - centroid[a];
            u += 0.5 * p.trap * c * c;
            if let Some(g) = grad.as_deref_mut() {
                g[3 * i + a] += p.trap * c;
            }
        }
    }
    u
}

fn phi4_value_grad(p: &Phi4Params, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let l = p.side;
    let mass = 4.0 + p.m2;
    let at = |r: usize, c: usize| x[(r % l) * l + (c % l)];
    let mut u = 0.0;
    for r in 0..l {
        for c in 0..l {
            let phi = at(r, c);
            let fwd = at(r + 1, c) + at(r, c + 1);
            u += -2.0 * phi * fwd + mass * phi * phi + p.lambda * phi * phi * phi * phi;
        }
    }
    if let Some(g) = grad {
        for r in 0..l {
            for c in 0..l {
                let phi = at(r, c);
                let nb = at(r + 1, c) + at(r, c + 1) + at(r + l - 1, c) + at(r, c + l - 1);
                g[r * l + c] = -2.0 * nb + 2.0 * mass * phi + 4.0 * p.lambda * phi * phi * phi;
            }
        }
    }
    u
}

impl Energy for EnergySystem {
    fn dim(&self) -> usize {
        match self {
            EnergySystem::Gaussian(p) => p.mean.len(),
            EnergySystem::Gmm(p) => p.dim,
            EnergySystem::DoubleWell { dim, .. } => *dim,
            EnergySystem::LjCluster(p) => 3 * p.particles,
            EnergySystem::Phi4(p) => p.side * p.side,
            EnergySystem::Umbrella { inner, .. } | EnergySystem::Scaled { inner, .. } => {
                inner.dim()
            }
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self {
            EnergySystem::Gaussian(p) => x
                .iter()
                .zip(&p.mean)
                .zip(&p.std)
                .map(|((xi, m), s)| {
                    let z = (xi - m) / s;
                    0.5 * z * z
                })
                .sum(),
            EnergySystem::Gmm(p) => gmm_value_grad(p, x, None),
            EnergySystem::DoubleWell { height, .. } => {
                x.iter().map(|v| height * (v * v - 1.0).powi(2)).sum()
            }
            EnergySystem::LjCluster(p) => lj_value_grad(p, x, None),
            EnergySystem::Phi4(p) => phi4_value_grad(p, x, None),
            EnergySystem::Umbrella { inner, k, center } => {
                let m = EnergySystem::collective_variable(x) - center;
                inner.value(x) + 0.5 * k * m * m
            }
            EnergySystem::Scaled { inner, scale } => {
                let y: Vec<f64> = x.iter().map(|v| v / scale).collect();
                inner.value(&y)
            }
        }
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            EnergySystem::Gaussian(p) => {
                let mut u = 0.0;
                for (((g, xi), m), s) in grad.iter_mut().zip(x).zip(&p.mean).zip(&p.std) {
                    let z = (xi - m) / s;
                    u += 0.5 * z * z;
                    *g = z / s;
                }
                u
            }
            EnergySystem::Gmm(p) => gmm_value_grad(p, x, Some(grad)),
            EnergySystem::DoubleWell { height, .. } => {
                let mut u = 0.0;
                for (g, v) in grad.iter_mut().zip(x) {
                    let w = v * v - 1.0;
                    u += height * w * w;
                    *g = 4.0 * height * w * v;
                }
                u
            }
            EnergySystem::LjCluster(p) => lj_value_grad(p, x, Some(grad)),
            EnergySystem::Phi4(p) => phi4_value_grad(p, x, Some(grad)),
            EnergySystem::Umbrella { inner, k, center } => {
                let u = inner.value_grad(x, grad);
                let m = EnergySystem::collective_variable(x) - center;
                let push = k * m / x.len() as f64;
                grad.iter_mut().for_each(|g| *g += push);
                u + 0.5 * k * m * m
            }
            EnergySystem::Scaled { inner, scale } => {
                let y: Vec<f64> = x.iter().map(|v| v / scale).collect();
                let u = inner.value_grad(&y, grad);
                grad.iter_mut().for_each(|g| *g /= scale);
                u
            }
        }
    }
}

/// `U_t = (1 − t) U_a + t U_b` with its time derivative and gradient.
#[derive(Clone, Copy)]
pub struct LinearMix<'a> {
    pub a: &'a EnergySystem,
    pub b: &'a EnergySystem,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpolatedEnergy {
    pub energy: f64,
    pub dt_energy: f64,
    pub grad: Vec<f64>,
}

impl<'a> LinearMix<'a> {
    pub fn new(a: &'a EnergySystem, b: &'a EnergySystem, t: f64) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::shape(a.dim(), b.dim(), "interpolated systems"));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Range(format!("t = {t} outside [0, 1]")));
        }
        Ok(LinearMix { a, b, t })
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<InterpolatedEnergy> {
        self.a.check(x)?;
        let mut ga = vec![0.0; x.len()];
        let mut gb = vec![0.0; x.len()];
        let ua = self.a.value_grad(x, &mut ga);
        let ub = self.b.value_grad(x, &mut gb);
        let t = self.t;
        Ok(InterpolatedEnergy {
            energy: (1.0 - t) * ua + t * ub,
            dt_energy: ub - ua,
            grad: ga.iter().zip(&gb).map(|(a, b)| (1.0 - t) * a + t * b).collect(),
        })
    }
}

impl Energy for LinearMix<'_> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let t = self.t;
        // Endpoints are evaluated alone so t ∈ {0, 1} is exact even where
        // the other energy is infinite.
        if t == 0.0 {
            return self.a.value(x);
        }
        if t == 1.0 {
            return self.b.value(x);
        }
        (1.0 - t) * self.a.value(x) + t * self.b.value(x)
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let t = self.t;
        if t == 0.0 {
            return self.a.value_grad(x, grad);
        }
        if t == 1.0 {
            return self.b.value_grad(x, grad);
        }
        let mut gb = vec![0.0; x.len()];
        let ua = self.a.value_grad(x, grad);
        let ub = self.b.value_grad(x, &mut gb);
        for (g, b) in grad.iter_mut().zip(&gb) {
            *g = (1.0 - t) * *g + t * b;
        }
        (1.0 - t) * ua + t * ub
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let g = EnergySystem::isotropic(3, 1.0).unwrap();
        assert_eq!(g.energy(&[0.0; 3]).unwrap(), 0.0);
        assert_eq!(g.energy_grad(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);

        // One pair at r = σ: the LJ term vanishes; the trap is ½·2·(½)² = ¼.
        let lj = EnergySystem::lj_cluster(2, 1.0, 1.0).unwrap();
        let u = lj.energy(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((u - 0.25).abs() < 1e-15);

        let phi = EnergySystem::phi4(4, -1.0, 0.8).unwrap();
        assert_eq!(phi.energy(&[0.0; 16]).unwrap(), 0.0);
        assert_eq!(phi.energy_grad(&[0.0; 16]).unwrap(), vec![0.0; 16]);
        assert!(matches!(phi.energy(&[0.0; 15]), Err(Error::Shape(_))));
    }

    #[test]
    fn phi4_constant_field_by_hand() {
        // Per site: −2·2φ² + (4 + m²)φ² + λφ⁴ with φ = 0.5, m² = −1, λ = 0.8.
        let phi = EnergySystem::phi4(3, -1.0, 0.8).unwrap();
        let per_site = -4.0 * 0.25 + 3.0 * 0.25 + 0.8 * 0.0625;
        let u = phi.energy(&[0.5; 9]).unwrap();
        assert!((u - 9.0 * per_site).abs() < 1e-14);
    }

    #[test]
    fn log_partitions() {
        let a = EnergySystem::isotropic(1, 1.0).unwrap();
        let b = EnergySystem::isotropic(1, 2.0).unwrap();
        assert!((a.log_partition_analytic().unwrap() - 0.918_938_533_204_672_7).abs() < 1e-15);
        assert!((analytic_delta_f(&a, &b).unwrap() + 2f64.ln()).abs() < 1e-15);
        assert_eq!(Energy::dim(&EnergySystem::Gmm(GmmParams::sixteen(4))), 4);
        assert_eq!(
            EnergySystem::Gmm(GmmParams::forty(2)).log_partition_analytic().unwrap(),
            0.0
        );
        let s = a.clone().scaled(20.0).unwrap();
        assert!((s.log_partition_analytic().unwrap() - (0.918_938_533_204_672_7 + 20f64.ln())).abs() < 1e-14);
        assert!(matches!(
            EnergySystem::phi4(4, -1.0, 0.8).unwrap().log_partition_analytic(),
            Err(Error::Unavailable(_))
        ));
    }

    #[test]
    fn interpolated_energy_examples() {
        let a = EnergySystem::isotropic(1, 1.0).unwrap();
        let b = EnergySystem::isotropic(1, 2.0).unwrap();
        let e0 = LinearMix::new(&a, &b, 0.0).unwrap().evaluate(&[1.0]).unwrap();
        assert_eq!((e0.energy, e0.dt_energy), (0.5, 0.125 - 0.5));
        let e1 = LinearMix::new(&a, &b, 1.0).unwrap().evaluate(&[1.0]).unwrap();
        assert_eq!(e1.energy, 0.125);
        let eh = LinearMix::new(&a, &b, 0.5).unwrap().evaluate(&[1.0]).unwrap();
        assert!((eh.energy - 0.3125).abs() < 1e-15);
        assert!(LinearMix::new(&a, &b, 1.5).is_err());
    }

    #[test]
    fn umbrella_adds_harmonic_bias_on_the_mean() {
        let base = EnergySystem::isotropic(2, 1.0).unwrap();
        let u = base.clone().with_umbrella(10.0, 0.6);
        let x = [0.2, 0.4];
        let expected = base.energy(&x).unwrap() + 5.0 * (0.3f64 - 0.6).powi(2);
        assert!((u.energy(&x).unwrap() - expected).abs() < 1e-15);
    }
}
