//! Controlled Langevin paths between two states and their generalized work.
//!
//! A [`TransportField`] supplies the velocity `v_t` and the score model
//! `s_t ≈ ∇U_t`. Paths are Euler–Maruyama discretizations on a
//! [`TimeGrid`]; the work of a path is the log ratio of its forward and
//! backward path densities plus the endpoint energies.

pub mod field;
pub mod kernel;
pub mod ledger;
pub mod ode;
pub mod path;

pub use field::{AnalyticGaussianTransport, LinearFlow, TransportField, TransportModel, ZeroField};
pub use kernel::step_kernel_logpdf;
pub use ledger::{read_works_csv, write_works_csv, WorkLedger};
pub use ode::{divergence, simulate_ode_path, work_integrand_form, work_ode, DivergenceMethod, Quadrature};
pub use path::{simulate_ensemble, simulate_path, work_fbrnd, EnsembleConfig, PathOutcome, PathRecord};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

/// Knots `0 = t_0 ≤ … ≤ t_M = 1`. Zero-length steps are allowed and act as
/// the identity (no motion, no work).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("a time grid needs at least one step".into()));
        }
        let mut knots: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
        knots[steps] = 1.0;
        Ok(TimeGrid { knots })
    }

    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config("a time grid needs at least two knots".into()));
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::Config("time grid must start at 0 and end at 1".into()));
        }
        if knots.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::Config("time grid knots must be non-decreasing".into()));
        }
        Ok(TimeGrid { knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of steps `M`.
    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    /// `Δt_i = t_{i+1} − t_i`.
    pub fn dt(&self, i: usize) -> f64 {
        self.knots[i + 1] - self.knots[i]
    }

    pub fn is_uniform(&self) -> bool {
        let h = 1.0 / self.steps() as f64;
        (0..self.steps()).all(|i| (self.dt(i) - h).abs() < 1e-12)
    }

    /// The same grid with a duplicated final knot.
    pub fn with_zero_step(&self) -> Self {
        let mut knots = self.knots.clone();
        knots.push(1.0);
        TimeGrid { knots }
    }

    pub fn describe(&self) -> String {
        if self.is_uniform() {
            format!("uniform:{}", self.steps())
        } else {
            format!("custom:{}", self.steps())
        }
    }
}
