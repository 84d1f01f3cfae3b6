//! Uniformly sampled optical power signals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PS: f64 = 1.0e-12;

/// Instantaneous optical power (mW) on a uniform time grid (seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn new(t0: f64, dt: f64, samples: Vec<f64>) -> Result<Self> {
        let w = Self { t0, dt, samples };
        w.validate()?;
        Ok(w)
    }

    pub fn zeros(grid: &PulseGrid) -> Self {
        Self {
            t0: 0.0,
            dt: grid.dt,
            samples: vec![0.0; grid.len()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Precondition(format!("waveform dt must be > 0, got {}", self.dt)));
        }
        if self.samples.len() < 2 {
            return Err(Error::Precondition(format!(
                "waveform needs at least 2 samples, got {}",
                self.samples.len()
            )));
        }
        if let Some((i, v)) = self
            .samples
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::Precondition(format!("waveform sample {i} is {v}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.samples.len().saturating_sub(1))
    }

    /// Linear interpolation; zero outside the sampled support.
    pub fn value_at(&self, t: f64) -> f64 {
        let x = (t - self.t0) / self.dt;
        if x < 0.0 || x.is_nan() {
            return 0.0;
        }
        let i = x.floor() as usize;
        if i + 1 >= self.samples.len() {
            return if i + 1 == self.samples.len() && x == i as f64 {
                self.samples[i]
            } else {
                0.0
            };
        }
        let f = x - i as f64;
        self.samples[i] * (1.0 - f) + self.samples[i + 1] * f
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().copied().fold(0.0, f64::max)
    }

    pub fn same_grid(&self, other: &Waveform) -> bool {
        self.t0 == other.t0 && self.dt == other.dt && self.samples.len() == other.samples.len()
    }

    /// Two-column CSV (`time_ps,power_mw`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_ps,power_mw\n");
        for (i, v) in self.samples.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.time(i) / PS, v));
        }
        out
    }
}

/// Shared time base for one layer of pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseGrid {
    pub window: f64,
    pub dt: f64,
}

impl Default for PulseGrid {
    fn default() -> Self {
        Self {
            window: 400.0 * PS,
            dt: 0.05 * PS,
        }
    }
}

impl PulseGrid {
    pub fn len(&self) -> usize {
        (self.window / self.dt).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the sample at the window centre.
    pub fn center_index(&self) -> usize {
        (self.len() - 1) / 2
    }

    pub fn center(&self) -> f64 {
        self.center_index() as f64 * self.dt
    }

    pub fn check_fwhm(&self, fwhm: f64) -> Result<()> {
        if !(fwhm > 0.0) {
            return Err(Error::Precondition(format!("FWHM must be > 0, got {fwhm}")));
        }
        if self.window < 6.0 * fwhm {
            return Err(Error::Precondition(format!(
                "window {:.1} ps shorter than 6 x FWHM {:.1} ps",
                self.window / PS,
                fwhm / PS
            )));
        }
        Ok(())
    }
}

pub fn gaussian_power(peak: f64, fwhm: f64, center: f64, t: f64) -> f64 {
    let x = (t - center) / fwhm;
    peak * (-4.0 * std::f64::consts::LN_2 * x * x).exp()
}

/// Gaussian pulse centred on the grid's middle sample.
pub fn gaussian_pulse(peak: f64, fwhm: f64, grid: &PulseGrid) -> Waveform {
    let center = grid.center();
    let samples = (0..grid.len())
        .map(|i| {
            if i == grid.center_index() {
                peak
            } else {
                gaussian_power(peak, fwhm, center, i as f64 * grid.dt)
            }
        })
        .collect();
    Waveform {
        t0: 0.0,
        dt: grid.dt,
        samples,
    }
}

/// Peak (max sample, mW) and FWHM (seconds) of a pulse.
///
/// The half level sits halfway between the peak and a floor taken as the
/// median of the first 10% of samples; crossings are linearly interpolated.
pub fn measure_peak_fwhm(w: &Waveform) -> Result<(f64, f64)> {
    if w.samples.len() < 3 {
        return Err(Error::Precondition(format!(
            "FWHM needs at least 3 samples, got {}",
            w.samples.len()
        )));
    }
    let (imax, peak) = w
        .samples
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    let head = (w.samples.len() / 10).max(1);
    let mut lead: Vec<f64> = w.samples[..head].to_vec();
    lead.sort_by(f64::total_cmp);
    let floor = if head % 2 == 1 {
        lead[head / 2]
    } else {
        0.5 * (lead[head / 2 - 1] + lead[head / 2])
    };
    let height = peak - floor;
    if !(height > 1e-12 * peak.abs().max(1e-300)) || height <= 0.0 {
        return Err(Error::Precondition("flat waveform has no FWHM".into()));
    }
    let half = floor + 0.5 * height;
    let s = &w.samples;
    let mut left = None;
    for i in (0..imax).rev() {
        if s[i] <= half {
            let f = (half - s[i]) / (s[i + 1] - s[i]);
            left = Some(i as f64 + f);
            break;
        }
    }
    let mut right = None;
    for i in imax + 1..s.len() {
        if s[i] <= half {
            let f = (s[i - 1] - half) / (s[i - 1] - s[i]);
            right = Some((i - 1) as f64 + f);
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Ok((peak, (r - l) * w.dt)),
        _ => Err(Error::Precondition(
            "pulse does not fall below half maximum inside the window".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gaussian_fwhm() {
        let sigma = 17.0 * PS;
        let fwhm = 2.0 * (2.0 * std::f64::consts::LN_2).sqrt() * sigma;
        let grid = PulseGrid::default();
        let w = gaussian_pulse(1.0, fwhm, &grid);
        let (peak, measured) = measure_peak_fwhm(&w).unwrap();
        assert_eq!(peak, 1.0);
        assert!((measured / PS - 40.03).abs() < 0.1, "{}", measured / PS);
    }

    #[test]
    fn unit_pulse_is_self_consistent() {
        let grid = PulseGrid::default();
        let w = gaussian_pulse(1.0, 40.0 * PS, &grid);
        let (peak, fwhm) = measure_peak_fwhm(&w).unwrap();
        assert_eq!(peak, 1.0);
        assert!((fwhm / PS - 40.0).abs() < 0.1);
    }

    #[test]
    fn flat_and_short_waveforms_are_errors() {
        let zero = Waveform::zeros(&PulseGrid::default());
        assert!(measure_peak_fwhm(&zero).is_err());
        let two = Waveform::new(0.0, PS, vec![0.0, 1.0]).unwrap();
        assert!(measure_peak_fwhm(&two).is_err());
    }

    #[test]
    fn interpolation_and_support() {
        let w = Waveform::new(1.0, 0.5, vec![0.0, 2.0, 4.0]).unwrap();
        assert_eq!(w.value_at(0.9), 0.0);
        assert_eq!(w.value_at(1.25), 1.0);
        assert_eq!(w.value_at(2.0), 4.0);
        assert_eq!(w.value_at(2.01), 0.0);
    }

    #[test]
    fn invalid_waveforms_rejected() {
        assert!(Waveform::new(0.0, 0.0, vec![0.0, 1.0]).is_err());
        assert!(Waveform::new(0.0, 1.0, vec![0.0]).is_err());
        assert!(Waveform::new(0.0, 1.0, vec![0.0, -1.0]).is_err());
    }
}
