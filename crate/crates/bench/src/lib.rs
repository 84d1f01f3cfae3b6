//! Fixtures shared by the criterion benches.

use fpld_core::actfit::ActivationCoeffs;
use fpld_core::laser::{LaserParams, Simulator};
use fpld_core::onn::{init_model, Dims};
use fpld_core::MlpModel;
use ndarray::Array2;

/// Threshold of the default parameter set, so benches skip the L-I sweep.
pub const THRESHOLD_MA: f64 = 6.55561897383574;

pub fn simulator() -> Simulator {
    Simulator::new(LaserParams::default(), 1.1 * THRESHOLD_MA).expect("default parameters")
}

/// A smooth sigmoid-like activation valid on [0, 60] mW.
pub fn activation() -> ActivationCoeffs {
    ActivationCoeffs::new([1.7, 1.3, 0.8, 0.6, 0.35, 1.4, 0.05], 60.0).expect("valid coefficients")
}

pub fn model(hidden: usize) -> MlpModel {
    init_model(Dims::mnist(hidden), activation(), activation(), 0).expect("valid dims")
}

/// Deterministic pseudo-images in [0, 1].
pub fn batch(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, 784), |(i, j)| ((i * 31 + j * 17) % 256) as f64 / 255.0)
}
