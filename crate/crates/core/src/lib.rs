//! Optical activation functions from an injection-locked Fabry–Pérot laser
//! diode, and a perceptron trained and tested with them.
//!
//! Pipeline: [`laser`] simulates the multimode rate equations, [`xfer`]
//! turns pulse simulations into peak-power transfer curves, [`actfit`]
//! fits the analytic activation to those curves, [`onn`] trains networks
//! using the fitted activations and [`physim`] replays inference through
//! the simulated lasers. [`dataio`] covers datasets, configs and files.

pub mod actfit;
pub mod dataio;
pub mod error;
pub mod laser;
pub mod onn;
pub mod physim;
pub mod waveform;
pub mod xfer;

pub use actfit::ActivationCoeffs;
pub use dataio::{Dataset, RunConfig, Split};
pub use error::{Error, Result};
pub use laser::{LaserParams, Simulator, OMEGA_UNIT};
pub use onn::{MlpModel, TrainConfig};
pub use waveform::{PulseGrid, Waveform};
pub use xfer::TransferCurve;
