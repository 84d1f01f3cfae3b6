use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laser::{LaserParams, OMEGA_UNIT};
use crate::onn::TrainConfig;
use crate::xfer::PowerGrid;

/// Flat `key = value` run configuration shared by every CLI subcommand.
/// Detunings are in units of Ω = 1e10 rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Laser parameter file; built-in defaults when absent.
    pub laser_params: Option<PathBuf>,
    /// Bias current as a multiple of the computed threshold current.
    pub bias_factor: f64,
    pub injected_mode: i32,
    pub layer1_detunings: Vec<f64>,
    pub layer2_detunings: Vec<f64>,
    pub fwhm_layer1: f64,
    pub fwhm_layer2: f64,
    pub p_in_max: f64,
    pub grid_points: usize,
    /// 0 disables refinement around the steepest point.
    pub refine_step: f64,
    pub fit_restarts: usize,
    pub hidden: usize,
    pub dataset: String,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    pub dropout: f64,
    pub runs: usize,
    pub seed: u64,
    /// Test images used by physical-layer evaluation (0 = all).
    pub physical_subset: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            laser_params: None,
            bias_factor: 1.1,
            injected_mode: crate::laser::DEFAULT_INJECTED_MODE,
            layer1_detunings: (20..=40).map(|k| -(k as f64)).collect(),
            layer2_detunings: (15..=40).map(|k| -(k as f64)).collect(),
            fwhm_layer1: 40.0,
            fwhm_layer2: 45.0,
            p_in_max: 100.0,
            grid_points: 41,
            refine_step: 0.05,
            fit_restarts: 8,
            hidden: 10,
            dataset: "mnist".into(),
            data_dir: PathBuf::from("data/mnist"),
            output_dir: PathBuf::from("out"),
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            l2: t.l2,
            dropout: t.dropout,
            runs: t.runs,
            seed: 0,
            physical_subset: 1000,
        }
    }
}

impl RunConfig {
    pub fn from_str_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            // Values are TOML literals; anything unparseable is taken as a string.
            let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(v.clone()));
            table.insert(k.clone(), value);
        }
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_str_with_overrides(&text, overrides)
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for d in self.layer1_detunings.iter().chain(&self.layer2_detunings) {
            if !(*d < 0.0) {
                return bad(format!("detunings must be negative, got {d}"));
            }
        }
        if let Some(p) = &self.laser_params {
            if !p.exists() {
                return bad(format!("laser parameter file {} does not exist", p.display()));
            }
        }
        if !(self.bias_factor > 0.0) {
            return bad("bias_factor must be > 0".into());
        }
        if !(self.fwhm_layer1 > 0.0 && self.fwhm_layer2 > 0.0) {
            return bad("FWHM values must be > 0".into());
        }
        if !(self.p_in_max > 0.0) || self.grid_points < crate::xfer::MIN_POINTS {
            return bad("power grid needs p_in_max > 0 and at least 8 points".into());
        }
        if !(self.refine_step >= 0.0) || self.fit_restarts == 0 || self.hidden == 0 {
            return bad("refine_step ≥ 0, fit_restarts ≥ 1 and hidden ≥ 1 required".into());
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            l2: self.l2,
            dropout: self.dropout,
            runs: self.runs,
            seed: self.seed,
        }
    }

    pub fn laser(&self) -> Result<LaserParams> {
        match &self.laser_params {
            Some(p) => LaserParams::load(p),
            None => Ok(LaserParams::default()),
        }
    }

    pub fn power_grid(&self) -> PowerGrid {
        let refine = (self.refine_step > 0.0).then_some(self.refine_step);
        PowerGrid::uniform(self.p_in_max, self.grid_points, refine)
    }

    pub fn detunings_rad(list: &[f64]) -> Vec<f64> {
        list.iter().map(|d| d * OMEGA_UNIT).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::from_str_with_overrides("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.layer1_detunings = vec![-27.0, -29.5];
        c.seed = 42;
        let back = RunConfig::from_str_with_overrides(&c.to_config_string(), &[]).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn overrides_win() {
        let ov = vec![
            ("epochs".to_string(), "3".to_string()),
            ("dataset".to_string(), "fashion-mnist".to_string()),
            ("layer1_detunings".to_string(), "[-25, -30]".to_string()),
        ];
        let c = RunConfig::from_str_with_overrides("epochs = 50\n", &ov).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.dataset, "fashion-mnist");
        assert_eq!(c.layer1_detunings, vec![-25.0, -30.0]);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_str_with_overrides("layer2_detunings = [5.0]", &[]).is_err());
        assert!(RunConfig::from_str_with_overrides("epochs = 0", &[]).is_err());
        assert!(RunConfig::from_str_with_overrides("bogus = 1", &[]).is_err());
        assert!(RunConfig::from_str_with_overrides("laser_params = \"/nonexistent\"", &[]).is_err());
    }
}
