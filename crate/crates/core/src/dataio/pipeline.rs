use std::path::{Path, PathBuf};

use crate::actfit::{fit_coefficients, ActivationCoeffs};
use crate::error::{Error, Result};
use crate::laser::{compute_threshold_current, LaserParams, Simulator, OMEGA_UNIT};
use crate::onn::CoeffLibrary;
use crate::xfer::{CurveCache, TransferCurve};

use super::{atomic_write, Dataset, RunConfig};

/// Configured laser plus the on-disk artifact layout under `output_dir`:
/// `curves/` (transfer-curve cache) and `coeffs/` (fitted activations).
#[derive(Debug)]
pub struct Pipeline {
    pub config: RunConfig,
    pub threshold_ma: f64,
    pub sim: Simulator,
    cache: CurveCache,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        let params = config.laser()?;
        let threshold_ma = cached_threshold(&params, &config.output_dir)?;
        let sim = Simulator::new(params, config.bias_factor * threshold_ma)?;
        let cache = CurveCache::new(config.output_dir.join("curves"));
        Ok(Self {
            config,
            threshold_ma,
            sim,
            cache,
        })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    pub fn coeff_dir(&self) -> PathBuf {
        self.out("coeffs")
    }

    pub fn cache(&self) -> &CurveCache {
        &self.cache
    }

    pub fn curve(&self, detuning_omega: f64, fwhm_ps: f64) -> Result<TransferCurve> {
        if !(detuning_omega < 0.0) {
            return Err(Error::Precondition(format!(
                "transfer curves need a negative detuning, got {detuning_omega}"
            )));
        }
        self.cache.get_or_compute(
            &self.sim,
            self.config.injected_mode,
            detuning_omega * OMEGA_UNIT,
            fwhm_ps,
            &self.config.power_grid(),
        )
    }

    /// Fitted activation for one (Δω, FWHM); reuses a stored fit when it
    /// was made from the identical curve.
    pub fn coefficients(&self, detuning_omega: f64, fwhm_ps: f64) -> Result<ActivationCoeffs> {
        let curve = self.curve(detuning_omega, fwhm_ps)?;
        let path = self
            .coeff_dir()
            .join(CoeffLibrary::file_name(detuning_omega, fwhm_ps));
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(c) = ActivationCoeffs::from_json(&text) {
                if c.source_hash == curve.content_hash() {
                    return Ok(c);
                }
            }
        }
        let c = fit_coefficients(&curve, self.config.fit_restarts)?;
        atomic_write(&path, c.to_json()?.as_bytes())?;
        Ok(c)
    }

    /// Curves and fits for every configured layer detuning.
    pub fn fit_all(&self) -> Result<CoeffLibrary> {
        let mut lib = CoeffLibrary::default();
        let cfg = &self.config;
        for (list, fwhm) in [
            (&cfg.layer1_detunings, cfg.fwhm_layer1),
            (&cfg.layer2_detunings, cfg.fwhm_layer2),
        ] {
            for &d in list {
                lib.insert(self.coefficients(d, fwhm)?);
            }
        }
        Ok(lib)
    }

    /// Stored fits only; missing ones are a dependency error at lookup.
    pub fn stored_library(&self) -> Result<CoeffLibrary> {
        let dir = self.coeff_dir();
        if !dir.exists() {
            return Ok(CoeffLibrary::default());
        }
        CoeffLibrary::load_dir(&dir)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::load_dir(&self.config.dataset, &self.config.data_dir)
    }
}

/// The threshold sweep costs seconds, so it is memoised per parameter hash.
fn cached_threshold(params: &LaserParams, out: &Path) -> Result<f64> {
    let path = out.join(format!("threshold_{}.txt", params.content_hash()));
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(v) = text.trim().parse::<f64>() {
            return Ok(v);
        }
    }
    let ith = compute_threshold_current(params)?;
    atomic_write(&path, format!("{ith:?}\n").as_bytes())?;
    Ok(ith)
}
