use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::eval::{coeff_gradient, domain_ok, ActivationCoeffs};
use crate::error::{Error, Result};
use crate::xfer::{TransferCurve, MIN_POINTS};

/// Cost added to coefficient sets that leave the real domain.
pub const DOMAIN_PENALTY: f64 = 1e6;
/// Fits above this fraction of max P_out are flagged.
pub const QUALITY_FRACTION: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iterations: 2000,
            seed: 0,
        }
    }
}

type Vec7 = SVector<f64, 7>;
type Mat7 = SMatrix<f64, 7, 7>;

fn sum_sq(points: &[(f64, f64)], b: &[f64; 7]) -> Option<f64> {
    let mut s = 0.0;
    for &(x, y) in points {
        let (f, _) = coeff_gradient(b, x)?;
        s += (f - y).powi(2);
    }
    s.is_finite().then_some(s)
}

fn penalised_cost(points: &[(f64, f64)], b: &[f64; 7], p_max: f64) -> f64 {
    if !domain_ok(b, p_max) {
        return DOMAIN_PENALTY;
    }
    sum_sq(points, b).unwrap_or(DOMAIN_PENALTY)
}

/// Root-mean-square residual of `b` on `points`.
pub fn rmse(points: &[(f64, f64)], b: &[f64; 7]) -> f64 {
    sum_sq(points, b).map_or(f64::INFINITY, |s| (s / points.len() as f64).sqrt())
}

/// Levenberg–Marquardt with Marquardt diagonal scaling. Steps that leave the
/// domain are charged the penalty and therefore rejected.
fn levenberg_marquardt(
    points: &[(f64, f64)],
    start: [f64; 7],
    p_max: f64,
    max_iterations: usize,
) -> Option<([f64; 7], f64)> {
    let mut b = start;
    let mut cost = penalised_cost(points, &b, p_max);
    if cost >= DOMAIN_PENALTY {
        return None;
    }
    let mut lambda = 1e-3;
    let mut stalls = 0;
    for _ in 0..max_iterations {
        let mut jtj = Mat7::zeros();
        let mut jtr = Vec7::zeros();
        for &(x, y) in points {
            let (f, g) = coeff_gradient(&b, x)?;
            let g = Vec7::from(g);
            jtj += g * g.transpose();
            jtr += g * (f - y);
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for k in 0..7 {
                a[(k, k)] += lambda * (jtj[(k, k)] + 1e-12);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 4.0;
                continue;
            };
            let mut trial = b;
            for k in 0..7 {
                trial[k] -= delta[k];
            }
            let trial_cost = penalised_cost(points, &trial, p_max);
            if trial_cost < cost {
                let gain = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                b = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                stalls = if gain < 1e-12 { stalls + 1 } else { 0 };
                break;
            }
            lambda *= 4.0;
        }
        if !improved || stalls >= 5 || cost < 1e-30 {
            break;
        }
    }
    Some((b, cost))
}

/// Initial guess from the curve shape: end slope, threshold-scaled b5 and
/// unit defaults elsewhere.
pub fn heuristic_start(points: &[(f64, f64)]) -> [f64; 7] {
    let n = points.len();
    let end_slope = (points[n - 1].1 - points[n - 2].1) / (points[n - 1].0 - points[n - 2].0);
    let max_out = points.iter().map(|p| p.1).fold(0.0, f64::max);
    let p_max = points[n - 1].0;
    let mut best = 1;
    let mut best_slope = f64::NEG_INFINITY;
    for i in 1..n - 1 {
        let s = (points[i + 1].1 - points[i - 1].1) / (points[i + 1].0 - points[i - 1].0);
        if s > best_slope {
            best_slope = s;
            best = i;
        }
    }
    let threshold = if points[best].0 > 0.0 { points[best].0 } else { p_max / 4.0 };
    let b5 = (4.0 / threshold).min(0.9 * super::eval::OVERFLOW_GUARD / p_max);
    [max_out / 4.0, std::f64::consts::E, 1.0, 1.0, b5, 1.0, end_slope]
}

fn jitter(start: &[f64; 7], rng: &mut ChaCha8Rng, p_max: f64) -> Option<[f64; 7]> {
    for _ in 0..200 {
        let mut b = *start;
        for v in b.iter_mut() {
            *v *= 4f64.powf(rng.gen_range(-1.0..=1.0));
        }
        if domain_ok(&b, p_max) {
            return Some(b);
        }
    }
    None
}

/// Multi-start least-squares fit of the analytic activation to (P_in, P_out)
/// samples; the domain is [0, max P_in].
pub fn fit_points(points: &[(f64, f64)], opts: &FitOptions) -> Result<ActivationCoeffs> {
    if points.len() < MIN_POINTS {
        return Err(Error::Precondition(format!(
            "fit needs at least {MIN_POINTS} points, got {}",
            points.len()
        )));
    }
    if opts.restarts == 0 {
        return Err(Error::Precondition("restarts must be ≥ 1".into()));
    }
    let p_max = points[points.len() - 1].0;
    if !(p_max > 0.0) {
        return Err(Error::Precondition("curve has no positive input".into()));
    }
    let base = heuristic_start(points);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<[f64; 7]> = (0..opts.restarts)
        .filter_map(|k| if k == 0 { Some(base) } else { jitter(&base, &mut rng, p_max) })
        .collect();
    let best = starts
        .par_iter()
        .filter_map(|s| levenberg_marquardt(points, *s, p_max, opts.max_iterations))
        .filter(|(b, _)| domain_ok(b, p_max))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let Some((b, _)) = best else {
        return Err(Error::FitFailure {
            restarts: opts.restarts,
            best_rmse: f64::INFINITY,
        });
    };
    let mut c = ActivationCoeffs::new(b, p_max)?;
    c.fit_rmse = rmse(points, &b);
    if !c.fit_rmse.is_finite() {
        return Err(Error::FitFailure {
            restarts: opts.restarts,
            best_rmse: c.fit_rmse,
        });
    }
    let max_out = points.iter().map(|p| p.1).fold(0.0, f64::max);
    c.quality_warning = c.fit_rmse > QUALITY_FRACTION * max_out;
    if c.quality_warning {
        log::warn!(
            "activation fit RMSE {:.4} mW exceeds {:.0}% of max output {:.3} mW",
            c.fit_rmse,
            QUALITY_FRACTION * 100.0,
            max_out
        );
    }
    Ok(c)
}

/// Fit one transfer curve; the result carries the curve's identity.
pub fn fit_coefficients(curve: &TransferCurve, restarts: usize) -> Result<ActivationCoeffs> {
    curve.validate()?;
    let opts = FitOptions {
        restarts,
        ..FitOptions::default()
    };
    let mut c = fit_points(&curve.points, &opts)?;
    c.source_hash = curve.content_hash();
    c.detuning = curve.detuning;
    c.fwhm_ps = curve.pulse_fwhm_ps;
    Ok(c)
}
