//! Free-energy differences from learned stochastic-interpolant transport.
//!
//! The crate is organized bottom-up: [`numcore`] (vectors, autodiff,
//! networks, optimizer), [`systems`] (energies), [`sampling`] (MALA and
//! sample files), [`interpolant`] (schedules, losses, training),
//! [`transport`] (path simulation and generalized work) and [`estimators`]
//! (FEP, BAR, IWAE, bounds, the minimum-variance fixed point, TI and
//! umbrella reweighting).

pub mod error;
pub mod estimators;
pub mod interpolant;
pub mod io;
pub mod numcore;
pub mod sampling;
pub mod seeds;
pub mod systems;
pub mod transport;

pub use error::{Error, Result};
