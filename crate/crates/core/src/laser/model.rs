//! Multimode rate equations with coherent injection into one side mode.
//!
//! State layout used by the integrator: `y[0] = N`, `y[1 + k] = S_k` for the
//! mode slot `k = m + h` (the injected slot is held at zero), followed by the
//! real and imaginary parts of the injected-mode field `E`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::params::{LaserParams, ELEMENTARY_CHARGE};
use crate::error::{Error, Result};
use crate::waveform::{gaussian_power, Waveform};

/// External optical drive of the injected mode, in mW at the facet.
#[derive(Debug, Clone, PartialEq)]
pub enum Drive {
    Off,
    Cw(f64),
    Gaussian { peak: f64, fwhm: f64, center: f64 },
    Sampled(Waveform),
}

impl Drive {
    pub fn power_at(&self, t: f64) -> f64 {
        match self {
            Drive::Off => 0.0,
            Drive::Cw(p) => *p,
            Drive::Gaussian { peak, fwhm, center } => gaussian_power(*peak, *fwhm, *center, t),
            Drive::Sampled(w) => w.value_at(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSpec {
    /// Cavity mode index receiving the injected light.
    pub mode: i32,
    /// ω_in − ω_m in rad/s.
    pub detuning: f64,
    pub drive: Drive,
}

impl InjectionSpec {
    pub fn new(mode: i32, detuning: f64, drive: Drive) -> Self {
        Self {
            mode,
            detuning,
            drive,
        }
    }

    pub fn idle(mode: i32, detuning: f64) -> Self {
        Self::new(mode, detuning, Drive::Off)
    }

    pub fn validate(&self, params: &LaserParams) -> Result<()> {
        if self.mode.abs() > params.half_span() {
            return Err(Error::Parameter(format!(
                "injected mode {} outside -{h}..={h}",
                self.mode,
                h = params.half_span()
            )));
        }
        if !self.detuning.is_finite() {
            return Err(Error::Parameter("detuning must be finite".into()));
        }
        match &self.drive {
            Drive::Cw(p) if !(*p >= 0.0 && p.is_finite()) => {
                Err(Error::Parameter(format!("CW drive power must be >= 0, got {p}")))
            }
            Drive::Gaussian { peak, fwhm, .. } if !(*peak >= 0.0 && *fwhm > 0.0) => Err(
                Error::Parameter(format!("Gaussian drive needs peak >= 0 and fwhm > 0 ({peak}, {fwhm})")),
            ),
            Drive::Sampled(w) => w.validate(),
            _ => Ok(()),
        }
    }
}

/// Carrier density, per-mode photon densities and injected field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserState {
    /// N (m⁻³).
    pub carrier_density: f64,
    /// S_m (m⁻³) indexed by `m + h`. The injected mode's entry stays 0; its
    /// intensity is `|field|²`.
    pub photon_densities: Vec<f64>,
    /// Injected-mode field in the frame rotating at ω_in, |E|² in m⁻³.
    pub field: Complex64,
    pub injected_mode: i32,
    pub time: f64,
}

impl LaserState {
    pub fn cold(params: &LaserParams, injected_mode: i32) -> Self {
        Self {
            carrier_density: 0.0,
            photon_densities: vec![0.0; params.mode_count],
            field: Complex64::new(0.0, 0.0),
            injected_mode,
            time: 0.0,
        }
    }

    pub fn mode_count(&self) -> usize {
        self.photon_densities.len()
    }

    fn half_span(&self) -> i32 {
        ((self.mode_count() - 1) / 2) as i32
    }

    /// Photon density of mode `m`, reading `|E|²` for the injected mode.
    pub fn mode_density(&self, m: i32) -> f64 {
        if m == self.injected_mode {
            self.field.norm_sqr()
        } else {
            self.photon_densities[(m + self.half_span()) as usize]
        }
    }

    pub fn injected_power(&self, params: &LaserParams) -> f64 {
        params.output_coupling * self.field.norm_sqr()
    }

    pub fn mode_power(&self, params: &LaserParams, m: i32) -> f64 {
        params.output_coupling * self.mode_density(m)
    }

    pub(crate) fn to_vec(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.mode_count() + 3);
        y.push(self.carrier_density);
        y.extend_from_slice(&self.photon_densities);
        y.push(self.field.re);
        y.push(self.field.im);
        y
    }

    pub(crate) fn from_slice(y: &[f64], injected_mode: i32, time: f64) -> Self {
        let m = y.len() - 3;
        Self {
            carrier_density: y[0],
            photon_densities: y[1..=m].to_vec(),
            field: Complex64::new(y[m + 1], y[m + 2]),
            injected_mode,
            time,
        }
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        let y = self.to_vec();
        check_finite_vec(&y, self.half_span(), self.time)
    }
}

/// d/dt of a [`LaserState`], component by component.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRate {
    pub carrier_density: f64,
    pub photon_densities: Vec<f64>,
    pub field: Complex64,
}

pub(crate) fn component_name(index: usize, half_span: i32) -> String {
    let m = 2 * half_span as usize + 1;
    match index {
        0 => "N".to_string(),
        i if i <= m => format!("S[m={}]", i as i32 - 1 - half_span),
        i if i == m + 1 => "Re E".to_string(),
        _ => "Im E".to_string(),
    }
}

fn check_finite_vec(y: &[f64], half_span: i32, time: f64) -> Result<()> {
    if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::IntegrationBlowup {
            time,
            component: component_name(i, half_span),
            value: *v,
        });
    }
    Ok(())
}

/// Right-hand side of the rate equations with everything that does not
/// depend on the state folded into constants.
pub(crate) struct RateModel<'a> {
    p: &'a LaserParams,
    drive: &'a Drive,
    modes: usize,
    inj_slot: usize,
    profile: Vec<f64>,
    pump: f64,
    detuning: f64,
    /// mW of external drive → injected photon density.
    drive_density: f64,
    /// Net loss of the injected mode while the central mode is clamped at
    /// threshold; sets the coherent spontaneous seed.
    seed_rate: f64,
    gamma_vg: f64,
    inv_tp: f64,
}

impl<'a> RateModel<'a> {
    pub(crate) fn new(p: &'a LaserParams, bias_ma: f64, inj: &'a InjectionSpec) -> Self {
        let h = p.half_span();
        let profile: Vec<f64> = (-h..=h).map(|m| p.gain_profile(m)).collect();
        let inj_slot = (inj.mode + h) as usize;
        Self {
            p,
            drive: &inj.drive,
            modes: p.mode_count,
            inj_slot,
            seed_rate: (1.0 - profile[inj_slot]) / p.photon_lifetime,
            profile,
            pump: bias_ma * 1.0e-3 / (ELEMENTARY_CHARGE * p.active_volume),
            detuning: inj.detuning,
            drive_density: p.input_coupling * 1.0e-3 * p.photon_lifetime
                / (p.photon_energy() * p.active_volume),
            gamma_vg: p.confinement * p.group_velocity,
            inv_tp: 1.0 / p.photon_lifetime,
        }
    }

    pub(crate) fn dim(&self) -> usize {
        self.modes + 3
    }

    pub(crate) fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let p = self.p;
        let m = self.modes;
        let n = y[0];
        let (er, ei) = (y[m + 1], y[m + 2]);
        let e2 = er * er + ei * ei;

        let mut total = e2;
        for (k, s) in y[1..=m].iter().enumerate() {
            if k != self.inj_slot {
                total += s;
            }
        }
        let gain = p.differential_gain * (n - p.transparency_density)
            / (1.0 + p.gain_compression * total);
        let spont = p.confinement * p.spont_factor * p.recomb_b * n * n;

        let mut stimulated = 0.0;
        for k in 0..m {
            if k == self.inj_slot {
                dy[1 + k] = 0.0;
                continue;
            }
            let s = y[1 + k];
            let g = gain * self.profile[k];
            stimulated += g * s;
            dy[1 + k] = (self.gamma_vg * g - self.inv_tp) * s + spont;
        }

        let g_inj = gain * self.profile[self.inj_slot];
        stimulated += g_inj * e2;
        let net = self.gamma_vg * g_inj - self.inv_tp;
        let alpha = p.linewidth_enhancement;
        let power = self.drive.power_at(t).max(0.0);
        let inject = p.injection_coupling * (self.drive_density * power).sqrt()
            + 0.5 * (spont * self.seed_rate).sqrt();
        dy[m + 1] = 0.5 * net * (er - alpha * ei) + self.detuning * ei + inject;
        dy[m + 2] = 0.5 * net * (alpha * er + ei) - self.detuning * er;

        let recomb = p.recomb_a * n + p.recomb_b * n * n + p.recomb_c * n * n * n;
        dy[0] = self.pump - recomb - p.group_velocity * stimulated;
    }
}

/// Classical fourth-order Runge-Kutta with reusable stage buffers.
pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

/// Tolerated negative overshoot, relative to the component's scale.
const CLAMP_TOLERANCE: f64 = 1.0e-6;

impl Rk4 {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    pub(crate) fn step(&mut self, model: &RateModel<'_>, t: f64, y: &mut [f64], h: f64) -> Result<()> {
        let n = y.len();
        model.eval(t, y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        model.eval(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        model.eval(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        model.eval(t + h, &self.tmp, &mut self.k4);

        let m = model.modes;
        let photon_scale = y[1..=m].iter().copied().fold(0.0, f64::max);
        let carrier_scale = y[0].abs();
        for i in 0..n {
            let next = y[i] + h / 6.0 * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
            let nonneg = i <= m;
            y[i] = if nonneg && next < 0.0 {
                let scale = if i == 0 { carrier_scale } else { photon_scale.max(y[i].abs()) };
                if next >= -CLAMP_TOLERANCE * scale {
                    0.0
                } else {
                    return Err(Error::NumericalDomain(format!(
                        "{} went negative ({next:e}) at t = {:e} s",
                        component_name(i, ((m - 1) / 2) as i32),
                        t + h
                    )));
                }
            } else {
                next
            };
        }
        check_finite_vec(y, ((m - 1) / 2) as i32, t + h)
    }
}
