//! The analytic activation: evaluation, derivatives and least-squares fits
//! to sampled transfer curves.

mod eval;
mod fit;

pub use eval::{domain_ok, ActivationCoeffs, DOMAIN_SCAN, OVERFLOW_GUARD};
pub use fit::{fit_coefficients, fit_points, heuristic_start, rmse, FitOptions, DOMAIN_PENALTY, QUALITY_FRACTION};
