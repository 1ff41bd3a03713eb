//! Heavy-ball SGD on quadratic losses with epoch-based minibatch sampling.
//!
//! The crate pairs a Monte-Carlo integrator with the exact stationary
//! statistics of the linear recursion under anti-correlated minibatch noise:
//!
//! - [`model`]: hyperparameters, spectra and synthetic per-example ensembles;
//! - [`sampling`]: epoch and i.i.d. batch schedules, plus an exact
//!   enumeration oracle for the noise autocorrelation;
//! - [`theory`]: closed-form variances and correlation times, their large/small
//!   eigenvalue limits, and an independent stacked-system oracle;
//! - [`sim`]: the integrator, eigenbasis projection and drift removal;
//! - [`stats`]: autocorrelation, stationary-variance and correlation-time
//!   estimators, PCA, log-log fits.

pub mod error;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod sim;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
pub use model::{Hyperparams, NoiseLevels, QuadraticEnsemble, Spectrum};
pub use rng::StreamId;
