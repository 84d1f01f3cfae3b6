use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Detuning unit used throughout: 1 Ω = 10¹⁰ rad/s.
pub const OMEGA_UNIT: f64 = 1.0e10;
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const PLANCK: f64 = 6.626_070_15e-34;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Physical constants of a multimode Fabry-Perot laser diode.
///
/// All quantities are SI except `output_coupling`, which maps a photon
/// density (m⁻³) onto emitted power in mW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaserParams {
    /// Number of longitudinal modes, odd. Mode indices run over `-h..=h`.
    pub mode_count: usize,
    pub active_volume: f64,
    pub confinement: f64,
    pub group_velocity: f64,
    pub differential_gain: f64,
    pub transparency_density: f64,
    /// Parabolic gain roll-off: modal gain scales with `1 - gain_rolloff * m²`.
    pub gain_rolloff: f64,
    pub gain_compression: f64,
    pub photon_lifetime: f64,
    pub recomb_a: f64,
    pub recomb_b: f64,
    pub recomb_c: f64,
    pub spont_factor: f64,
    pub linewidth_enhancement: f64,
    /// Injection coupling rate k_c (s⁻¹).
    pub injection_coupling: f64,
    /// Fraction of the external drive power reaching the cavity.
    pub input_coupling: f64,
    /// mW emitted per unit photon density (m⁻³).
    pub output_coupling: f64,
    /// Lasing wavelength, used for the photon energy.
    pub wavelength: f64,
}

impl Default for LaserParams {
    fn default() -> Self {
        Self {
            mode_count: 19,
            active_volume: 5.0e-17,
            confinement: 0.3,
            group_velocity: SPEED_OF_LIGHT / 3.7,
            differential_gain: 5.0e-20,
            transparency_density: 1.5e24,
            gain_rolloff: 2.0e-3,
            gain_compression: 1.0e-22,
            photon_lifetime: 2.0e-12,
            recomb_a: 1.0e8,
            recomb_b: 1.0e-16,
            recomb_c: 3.0e-41,
            spont_factor: 1.0e-4,
            linewidth_enhancement: 3.0,
            injection_coupling: 1.0e11,
            input_coupling: 1.25,
            output_coupling: 2.0e-20,
            wavelength: 1.55e-6,
        }
    }
}

impl LaserParams {
    pub fn half_span(&self) -> i32 {
        ((self.mode_count - 1) / 2) as i32
    }

    pub fn photon_energy(&self) -> f64 {
        PLANCK * SPEED_OF_LIGHT / self.wavelength
    }

    /// Relative modal gain `1 - δ_g m²`.
    pub fn gain_profile(&self, mode: i32) -> f64 {
        1.0 - self.gain_rolloff * f64::from(mode * mode)
    }

    /// Carrier density at which the central mode's gain balances its loss,
    /// ignoring compression and spontaneous emission.
    pub fn threshold_density(&self) -> f64 {
        self.transparency_density
            + 1.0 / (self.photon_lifetime * self.confinement * self.group_velocity * self.differential_gain)
    }

    /// Closed-form threshold current (mA) from the recombination balance at
    /// `threshold_density`.
    pub fn analytic_threshold_current(&self) -> f64 {
        let n = self.threshold_density();
        let r = self.recomb_a * n + self.recomb_b * n * n + self.recomb_c * n * n * n;
        ELEMENTARY_CHARGE * self.active_volume * r * 1.0e3
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode_count % 2 == 0 || self.mode_count == 0 {
            return Err(Error::Parameter(format!(
                "mode_count must be odd, got {}",
                self.mode_count
            )));
        }
        let positive = [
            ("active_volume", self.active_volume),
            ("confinement", self.confinement),
            ("group_velocity", self.group_velocity),
            ("differential_gain", self.differential_gain),
            ("transparency_density", self.transparency_density),
            ("gain_rolloff", self.gain_rolloff),
            ("gain_compression", self.gain_compression),
            ("photon_lifetime", self.photon_lifetime),
            ("recomb_a", self.recomb_a),
            ("recomb_b", self.recomb_b),
            ("recomb_c", self.recomb_c),
            ("spont_factor", self.spont_factor),
            ("linewidth_enhancement", self.linewidth_enhancement),
            ("injection_coupling", self.injection_coupling),
            ("input_coupling", self.input_coupling),
            ("output_coupling", self.output_coupling),
            ("wavelength", self.wavelength),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Parameter(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        // Outermost modes must keep positive gain, else the profile is not a
        // single peak at m = 0.
        let edge = self.gain_profile(self.half_span());
        if edge <= 0.0 {
            return Err(Error::Parameter(format!(
                "gain_rolloff {} makes the edge-mode gain non-positive",
                self.gain_rolloff
            )));
        }
        Ok(())
    }

    /// Stable content hash (hex) used to key caches.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("params serialize");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Parses a flat `key = value` file whose keys are the field names.
    /// Missing keys keep their defaults.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let params: LaserParams =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_config_str(&text)
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("params serialize")
    }
}
