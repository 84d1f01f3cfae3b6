//! Peak-power transfer functions P_out = Φ(P_in) extracted from pulse
//! simulations, and detuning-indexed families of them.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::fsutil::{atomic_write, split_metadata};
use crate::error::{Error, Result};
use crate::laser::{Simulator, OMEGA_UNIT};
use crate::waveform::{gaussian_pulse, PulseGrid, PS};

pub const MIN_POINTS: usize = 8;

/// Sampled peak-power map for one (Δω, FWHM) operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCurve {
    /// rad/s
    pub detuning: f64,
    pub pulse_fwhm_ps: f64,
    pub bias_ma: f64,
    pub mode: i32,
    /// (P_in peak, P_out peak) in mW, strictly increasing in P_in.
    pub points: Vec<(f64, f64)>,
    pub params_hash: String,
}

impl TransferCurve {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < MIN_POINTS {
            return Err(Error::Precondition(format!(
                "transfer curve needs at least {MIN_POINTS} points, got {}",
                self.points.len()
            )));
        }
        for w in self.points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Precondition(format!(
                    "P_in not strictly increasing at {} -> {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(p) = self
            .points
            .iter()
            .find(|(x, y)| !(x.is_finite() && y.is_finite() && *x >= 0.0 && *y >= 0.0))
        {
            return Err(Error::Precondition(format!("invalid curve point {p:?}")));
        }
        Ok(())
    }

    pub fn inputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn outputs(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    pub fn max_input(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.0)
    }

    pub fn max_output(&self) -> f64 {
        self.outputs().fold(0.0, f64::max)
    }

    pub fn detuning_omega(&self) -> f64 {
        self.detuning / OMEGA_UNIT
    }

    /// Discrete slope at every point: central differences inside, one-sided
    /// at the ends.
    pub fn slopes(&self) -> Vec<f64> {
        let p = &self.points;
        let n = p.len();
        (0..n)
            .map(|i| {
                let (a, b) = match i {
                    0 => (0, 1),
                    i if i == n - 1 => (n - 2, n - 1),
                    i => (i - 1, i + 1),
                };
                (p[b].1 - p[a].1) / (p[b].0 - p[a].0)
            })
            .collect()
    }

    /// Relative output variation (max − min) / max over the top `fraction`
    /// of the input range.
    pub fn saturation_variation(&self, fraction: f64) -> f64 {
        let hi = self.max_input();
        let lo_in = self.points[0].0;
        let cut = hi - fraction * (hi - lo_in);
        let top: Vec<f64> = self.points.iter().filter(|p| p.0 >= cut).map(|p| p.1).collect();
        let max = top.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = top.iter().copied().fold(f64::INFINITY, f64::min);
        if max <= 0.0 {
            0.0
        } else {
            (max - min) / max
        }
    }

    /// Number of distinct slope peaks: the global maximum slope, plus every
    /// other local maximum whose topographic prominence is at least `rel` ×
    /// the global maximum. A sigmoid-like curve has exactly one.
    ///
    /// Prominence of a peak: its height minus the higher of the two lowest
    /// points separating it from taller terrain (or the curve end) on either
    /// side. Plateaus count once, at their left edge.
    pub fn prominent_slope_peaks(&self, rel: f64) -> usize {
        let s = self.slopes();
        let global = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = s.len();
        let mut count = 0;
        for i in 0..n {
            let left_ok = i == 0 || s[i - 1] < s[i];
            let mut j = i + 1;
            while j < n && s[j] == s[i] {
                j += 1;
            }
            let right_ok = j == n || s[j] < s[i];
            if !(left_ok && right_ok) {
                continue;
            }
            let mut left_base = s[i];
            for k in (0..i).rev() {
                if s[k] > s[i] {
                    break;
                }
                left_base = left_base.min(s[k]);
            }
            let mut right_base = s[i];
            for &v in &s[j..] {
                if v > s[i] {
                    break;
                }
                right_base = right_base.min(v);
            }
            let reference = match (i, j) {
                (0, _) => right_base,
                (_, j) if j == n => left_base,
                _ => left_base.max(right_base),
            };
            if s[i] == global || s[i] - reference >= rel * global {
                count += 1;
            }
        }
        count
    }

    /// Short content hash of the sampled points.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (x, y) in &self.points {
            h.update(x.to_bits().to_le_bytes());
            h.update(y.to_bits().to_le_bytes());
        }
        h.update(self.detuning.to_bits().to_le_bytes());
        h.update(self.pulse_fwhm_ps.to_bits().to_le_bytes());
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# detuning_rad_s={}\n", self.detuning));
        out.push_str(&format!("# fwhm_ps={}\n", self.pulse_fwhm_ps));
        out.push_str(&format!("# bias_ma={}\n", self.bias_ma));
        out.push_str(&format!("# mode={}\n", self.mode));
        out.push_str(&format!("# params_hash={}\n", self.params_hash));
        out.push_str("p_in_mw,p_out_mw\n");
        for (x, y) in &self.points {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (meta, body) = split_metadata(text);
        let get = |k: &str| -> Result<&str> {
            meta.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("curve CSV missing `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("curve CSV: bad `{k}`")))
        };
        let mut points = Vec::new();
        for line in body.iter().skip(1) {
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("curve CSV: bad row `{line}`")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("curve CSV: bad number `{s}`")))
            };
            points.push((parse(a)?, parse(b)?));
        }
        let curve = Self {
            detuning: num("detuning_rad_s")?,
            pulse_fwhm_ps: num("fwhm_ps")?,
            bias_ma: num("bias_ma")?,
            mode: get("mode")?
                .parse()
                .map_err(|_| Error::Config("curve CSV: bad `mode`".into()))?,
            points,
            params_hash: get("params_hash")?.to_string(),
        };
        curve.validate()?;
        Ok(curve)
    }
}

/// Input-power grid: a coarse grid plus one optional refinement pass around
/// the steepest coarse interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerGrid {
    pub coarse: Vec<f64>,
    pub refine_step: Option<f64>,
}

impl Default for PowerGrid {
    fn default() -> Self {
        Self::uniform(100.0, 41, Some(0.05))
    }
}

impl PowerGrid {
    pub fn uniform(p_max: f64, points: usize, refine_step: Option<f64>) -> Self {
        let coarse = (0..points)
            .map(|i| p_max * i as f64 / (points - 1) as f64)
            .collect();
        Self {
            coarse,
            refine_step,
        }
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for x in &self.coarse {
            h.update(x.to_bits().to_le_bytes());
        }
        h.update(self.refine_step.unwrap_or(0.0).to_bits().to_le_bytes());
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Precondition("empty P_in grid".into()));
    }
    if grid.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return Err(Error::Precondition("P_in grid must be non-negative".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("P_in grid must be strictly ascending".into()));
    }
    Ok(())
}

fn peak_response(sim: &Simulator, mode: i32, detuning: f64, fwhm: f64, p_in: f64) -> Result<f64> {
    let grid = PulseGrid::default();
    let drive = gaussian_pulse(p_in, fwhm, &grid);
    sim.pulse_response(mode, detuning, &drive)
        .map(|w| w.peak())
        .map_err(|e| Error::AtInput {
            p_in,
            source: Box::new(e),
        })
}

/// One Gaussian-pulse simulation per grid entry; P_out is the peak of the
/// injected-mode output.
pub fn extract_transfer_curve(
    sim: &Simulator,
    mode: i32,
    detuning: f64,
    fwhm_ps: f64,
    p_grid: &[f64],
) -> Result<TransferCurve> {
    check_grid(p_grid)?;
    if !(fwhm_ps > 0.0) {
        return Err(Error::Precondition(format!("FWHM must be > 0, got {fwhm_ps}")));
    }
    PulseGrid::default().check_fwhm(fwhm_ps * PS)?;
    // Relax once before fanning out so workers share the cached state.
    sim.steady_state(mode, detuning)?;
    let outputs: Vec<f64> = p_grid
        .par_iter()
        .map(|&p| peak_response(sim, mode, detuning, fwhm_ps * PS, p))
        .collect::<Result<_>>()?;
    Ok(TransferCurve {
        detuning,
        pulse_fwhm_ps: fwhm_ps,
        bias_ma: sim.bias_ma,
        mode,
        points: p_grid.iter().copied().zip(outputs).collect(),
        params_hash: sim.params.content_hash(),
    })
}

/// Coarse extraction followed by a refinement pass at `grid.refine_step`
/// across the two coarse intervals around the steepest point.
pub fn extract_refined(
    sim: &Simulator,
    mode: i32,
    detuning: f64,
    fwhm_ps: f64,
    grid: &PowerGrid,
) -> Result<TransferCurve> {
    let mut curve = extract_transfer_curve(sim, mode, detuning, fwhm_ps, &grid.coarse)?;
    let Some(step) = grid.refine_step else {
        return Ok(curve);
    };
    let slopes = curve.slopes();
    let i = argmax_first(&slopes);
    let lo = curve.points[i.saturating_sub(1)].0;
    let hi = curve.points[(i + 1).min(curve.points.len() - 1)].0;
    let extra: Vec<f64> = (1..)
        .map(|k| lo + step * k as f64)
        .take_while(|p| *p < hi - 1e-9)
        .filter(|p| !grid.coarse.iter().any(|c| (c - p).abs() < 1e-9))
        .collect();
    if extra.is_empty() {
        return Ok(curve);
    }
    let added = extract_transfer_curve(sim, mode, detuning, fwhm_ps, &extra)?;
    curve.points.extend(added.points);
    curve.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(curve)
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// P_in at the maximum discrete slope; ties go to the smaller input.
pub fn threshold_point(curve: &TransferCurve) -> Result<f64> {
    curve.validate()?;
    let floor = curve.points[0].1;
    let max = curve.max_output();
    if !(max > 2.0 * floor) {
        return Err(Error::NoThreshold {
            ratio: if floor > 0.0 { max / floor } else { 1.0 },
        });
    }
    Ok(curve.points[argmax_first(&curve.slopes())].0)
}

/// Content-addressed on-disk store of transfer curves, one CSV per key.
#[derive(Debug)]
pub struct CurveCache {
    dir: PathBuf,
    warnings: Mutex<Vec<String>>,
}

impl CurveCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            warnings: Mutex::new(Vec::new()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(sim: &Simulator, mode: i32, detuning: f64, fwhm_ps: f64, grid: &PowerGrid) -> String {
        let mut h = Sha256::new();
        h.update(sim.params.content_hash().as_bytes());
        h.update(sim.bias_ma.to_bits().to_le_bytes());
        h.update(mode.to_le_bytes());
        h.update(detuning.to_bits().to_le_bytes());
        h.update(fwhm_ps.to_bits().to_le_bytes());
        h.update(grid.hash().as_bytes());
        h.finalize().iter().take(12).map(|b| format!("{b:02x}")).collect()
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.csv"))
    }

    /// Cache lookup; a missing or unreadable entry is recomputed and
    /// rewritten, with a warning recorded for corrupt ones.
    pub fn get_or_compute(
        &self,
        sim: &Simulator,
        mode: i32,
        detuning: f64,
        fwhm_ps: f64,
        grid: &PowerGrid,
    ) -> Result<TransferCurve> {
        let key = Self::key(sim, mode, detuning, fwhm_ps, grid);
        let path = self.path_for(&key);
        if path.exists() {
            match std::fs::read_to_string(&path)
                .map_err(|e| Error::io(&path, e))
                .and_then(|t| TransferCurve::from_csv(&t))
            {
                Ok(c) => return Ok(c),
                Err(e) => {
                    let msg = format!("corrupt cache entry {}: {e}; recomputing", path.display());
                    log::warn!("{msg}");
                    self.warnings.lock().expect("warnings").push(msg);
                }
            }
        }
        let curve = extract_refined(sim, mode, detuning, fwhm_ps, grid)?;
        atomic_write(&path, curve.to_csv().as_bytes())?;
        Ok(curve)
    }

    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().expect("warnings").clone()
    }
}

/// One curve per detuning (all must be negative), optionally cached.
pub fn generate_family(
    sim: &Simulator,
    mode: i32,
    detunings: &[f64],
    fwhm_ps: f64,
    grid: &PowerGrid,
    cache: Option<&CurveCache>,
) -> Result<Vec<TransferCurve>> {
    if detunings.is_empty() {
        return Err(Error::Precondition("detuning list is empty".into()));
    }
    if let Some(d) = detunings.iter().find(|d| !(**d < 0.0)) {
        return Err(Error::Precondition(format!(
            "family detunings must be negative, got {d}"
        )));
    }
    detunings
        .iter()
        .map(|&d| match cache {
            Some(c) => c.get_or_compute(sim, mode, d, fwhm_ps, grid),
            None => extract_refined(sim, mode, d, fwhm_ps, grid),
        })
        .collect()
}

/// Detunings −from..−to Ω in 1 Ω steps, as rad/s.
pub fn detuning_range(from_omega: i32, to_omega: i32) -> Vec<f64> {
    (from_omega..=to_omega)
        .map(|k| -(k as f64) * OMEGA_UNIT)
        .collect()
}
