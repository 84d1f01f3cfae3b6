use std::collections::HashMap;
use std::sync::Mutex;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::model::{Drive, InjectionSpec, LaserState, RateModel, Rk4, StateRate};
use super::params::LaserParams;
use crate::error::{Error, Result};
use crate::waveform::{Waveform, PS};

pub const DEFAULT_INJECTED_MODE: i32 = -9;
const NS: f64 = 1.0e-9;

/// Integration and settling controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub dt: f64,
    pub dt_max: f64,
    /// Window over which relative changes are measured when relaxing.
    pub relax_window: f64,
    pub relax_tolerance: f64,
    pub relax_limit: f64,
    /// Averaging window and tolerance for CW settling in hysteresis sweeps.
    pub settle_window: f64,
    pub settle_tolerance: f64,
    pub settle_limit: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            dt: 0.05 * PS,
            dt_max: 0.05 * PS,
            relax_window: 1.0 * NS,
            relax_tolerance: 1.0e-8,
            relax_limit: 200.0 * NS,
            settle_window: 0.5 * NS,
            settle_tolerance: 1.0e-4,
            settle_limit: 100.0 * NS,
        }
    }
}

fn check_dt(dt: f64, dt_max: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Precondition(format!("time step must be > 0, got {dt:e}")));
    }
    if dt > dt_max * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "time step {:.4} ps exceeds dt_max {:.4} ps",
            dt / PS,
            dt_max / PS
        )));
    }
    Ok(())
}

/// Time derivative of `state` at time `t`.
pub fn derivatives(
    state: &LaserState,
    params: &LaserParams,
    bias_ma: f64,
    inj: &InjectionSpec,
    t: f64,
) -> Result<StateRate> {
    state.check_finite().map_err(|e| Error::NumericalDomain(e.to_string()))?;
    if state.photon_densities.len() != params.mode_count {
        return Err(Error::Precondition("state mode count differs from params".into()));
    }
    let model = RateModel::new(params, bias_ma, inj);
    let y = state.to_vec();
    let mut dy = vec![0.0; model.dim()];
    model.eval(t, &y, &mut dy);
    let m = params.mode_count;
    Ok(StateRate {
        carrier_density: dy[0],
        photon_densities: dy[1..=m].to_vec(),
        field: Complex64::new(dy[m + 1], dy[m + 2]),
    })
}

/// One RK4 step of size `dt` with the default `dt_max`.
pub fn step(
    state: &LaserState,
    params: &LaserParams,
    bias_ma: f64,
    inj: &InjectionSpec,
    dt: f64,
) -> Result<LaserState> {
    check_dt(dt, SimOptions::default().dt_max)?;
    state.check_finite()?;
    let model = RateModel::new(params, bias_ma, inj);
    let mut y = state.to_vec();
    Rk4::new(model.dim()).step(&model, state.time, &mut y, dt)?;
    Ok(LaserState::from_slice(&y, state.injected_mode, state.time + dt))
}

/// Stationary input-output sweep with a CW drive, up then down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HysteresisLoop {
    pub detuning: f64,
    /// (P_in mW, settled P_out mW) in traversal order, increasing input.
    pub up: Vec<(f64, f64)>,
    /// Same input grid traversed downwards (decreasing input).
    pub down: Vec<(f64, f64)>,
}

impl HysteresisLoop {
    fn down_ascending(&self) -> Vec<(f64, f64)> {
        let mut d = self.down.clone();
        d.reverse();
        d
    }

    /// ∫ |P_up − P_down| dP_in by the trapezoid rule.
    pub fn loop_area(&self) -> f64 {
        let down = self.down_ascending();
        self.up
            .windows(2)
            .zip(down.windows(2))
            .map(|(u, d)| {
                let w = u[1].0 - u[0].0;
                0.5 * w * ((u[0].1 - d[0].1).abs() + (u[1].1 - d[1].1).abs())
            })
            .sum()
    }

    /// Largest |P_up − P_down| relative to the largest output on the loop.
    pub fn max_branch_gap(&self) -> f64 {
        let down = self.down_ascending();
        let scale = self
            .up
            .iter()
            .chain(&down)
            .map(|p| p.1)
            .fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        self.up
            .iter()
            .zip(&down)
            .map(|(u, d)| (u.1 - d.1).abs())
            .fold(0.0, f64::max)
            / scale
    }

    fn jump(branch: &[(f64, f64)]) -> Option<f64> {
        branch
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1).abs(), 0.5 * (w[0].0 + w[1].0)))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, p)| p)
    }

    /// Input power at the largest output step of the up branch.
    pub fn switch_up_power(&self) -> Option<f64> {
        Self::jump(&self.up)
    }

    pub fn switch_down_power(&self) -> Option<f64> {
        Self::jump(&self.down)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# detuning_rad_s={}\nbranch,p_in_mw,p_out_mw\n", self.detuning);
        for (p, q) in &self.up {
            out.push_str(&format!("up,{p},{q}\n"));
        }
        for (p, q) in &self.down {
            out.push_str(&format!("down,{p},{q}\n"));
        }
        out
    }
}

/// One point of a light-current characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiPoint {
    pub current_ma: f64,
    /// Output power of the central (dominant) mode.
    pub power_mw: f64,
    pub carrier_density: f64,
}

pub fn li_csv(points: &[LiPoint]) -> String {
    let mut out = String::from("current_ma,dominant_power_mw,carrier_density_m3\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.current_ma, p.power_mw, p.carrier_density));
    }
    out
}

type SteadyKey = (i32, u64);

/// A biased laser with memoised free-running steady states.
///
/// Every pulse simulation starts from the steady state for its injected mode
/// and detuning; relaxing from a cold start is by far the most expensive part,
/// so results are cached per (mode, detuning). Cache hits are bit-identical
/// to a fresh relaxation because relaxation always starts cold.
#[derive(Debug)]
pub struct Simulator {
    pub params: LaserParams,
    pub bias_ma: f64,
    pub options: SimOptions,
    steady: Mutex<HashMap<SteadyKey, LaserState>>,
}

impl Clone for Simulator {
    fn clone(&self) -> Self {
        Self {
            params: self.params.clone(),
            bias_ma: self.bias_ma,
            options: self.options,
            steady: Mutex::new(self.steady.lock().expect("steady cache").clone()),
        }
    }
}

impl Simulator {
    pub fn new(params: LaserParams, bias_ma: f64) -> Result<Self> {
        Self::with_options(params, bias_ma, SimOptions::default())
    }

    pub fn with_options(params: LaserParams, bias_ma: f64, options: SimOptions) -> Result<Self> {
        params.validate()?;
        if !(bias_ma >= 0.0 && bias_ma.is_finite()) {
            return Err(Error::Precondition(format!("bias current must be >= 0, got {bias_ma}")));
        }
        check_dt(options.dt, options.dt_max)?;
        Ok(Self {
            params,
            bias_ma,
            options,
            steady: Mutex::new(HashMap::new()),
        })
    }

    /// Integrates from `start` until `t_end`, calling `observe` after every
    /// step with the flat state vector.
    fn integrate(
        &self,
        inj: &InjectionSpec,
        y: &mut [f64],
        t_start: f64,
        steps: usize,
        h: f64,
        mut observe: impl FnMut(usize, &[f64]),
    ) -> Result<()> {
        let model = RateModel::new(&self.params, self.bias_ma, inj);
        let mut rk = Rk4::new(model.dim());
        for i in 0..steps {
            rk.step(&model, t_start + i as f64 * h, y, h)?;
            observe(i, y);
        }
        Ok(())
    }

    /// Free-running steady state (no drive) for the given injected mode and
    /// detuning, relaxed from a cold start.
    pub fn steady_state(&self, mode: i32, detuning: f64) -> Result<LaserState> {
        let key = (mode, detuning.to_bits());
        if let Some(s) = self.steady.lock().expect("steady cache").get(&key) {
            return Ok(s.clone());
        }
        let state = self.relax(mode, detuning)?;
        self.steady
            .lock()
            .expect("steady cache")
            .insert(key, state.clone());
        Ok(state)
    }

    fn relax(&self, mode: i32, detuning: f64) -> Result<LaserState> {
        let inj = InjectionSpec::idle(mode, detuning);
        inj.validate(&self.params)?;
        let h = self.options.dt;
        let window_steps = (self.options.relax_window / h).round().max(1.0) as usize;
        let max_windows = (self.options.relax_limit / self.options.relax_window).ceil() as usize;
        let mut y = LaserState::cold(&self.params, mode).to_vec();
        let m = self.params.mode_count;
        let mut t = 0.0;
        for _ in 0..max_windows {
            let prev = y.clone();
            self.integrate(&inj, &mut y, t, window_steps, h, |_, _| {})?;
            t += window_steps as f64 * h;
            let field_scale = (y[m + 1].hypot(y[m + 2])).max(1e-30);
            let change = y
                .iter()
                .zip(&prev)
                .enumerate()
                .map(|(i, (a, b))| {
                    let scale = if i > m { field_scale } else { a.abs().max(1e-30) };
                    (a - b).abs() / scale
                })
                .fold(0.0, f64::max);
            if change < self.options.relax_tolerance {
                return Ok(LaserState::from_slice(&y, mode, 0.0));
            }
        }
        Err(Error::Convergence(format!(
            "no steady state within {:.0} ns at bias {} mA",
            self.options.relax_limit / NS,
            self.bias_ma
        )))
    }

    /// Injected-mode output power κ_out|E|² sampled on the drive's grid,
    /// starting from the undriven steady state at the drive's first sample.
    pub fn pulse_response(&self, mode: i32, detuning: f64, drive: &Waveform) -> Result<Waveform> {
        drive.validate()?;
        let substeps = (drive.dt / self.options.dt_max * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let h = drive.dt / substeps as f64;
        check_dt(h, self.options.dt_max)?;
        let start = self.steady_state(mode, detuning)?;
        let inj = InjectionSpec::new(mode, detuning, Drive::Sampled(drive.clone()));
        inj.validate(&self.params)?;
        let m = self.params.mode_count;
        let kappa = self.params.output_coupling;
        let mut y = start.to_vec();
        let mut samples = Vec::with_capacity(drive.len());
        samples.push(kappa * (y[m + 1] * y[m + 1] + y[m + 2] * y[m + 2]));
        let steps = (drive.len() - 1) * substeps;
        self.integrate(&inj, &mut y, drive.t0, steps, h, |i, y| {
            if (i + 1) % substeps == 0 {
                samples.push(kappa * (y[m + 1] * y[m + 1] + y[m + 2] * y[m + 2]));
            }
        })?;
        Ok(Waveform {
            t0: drive.t0,
            dt: drive.dt,
            samples,
        })
    }

    /// Full state at `t_end` under an arbitrary drive, from the steady state.
    pub fn evolve(&self, inj: &InjectionSpec, t_end: f64) -> Result<LaserState> {
        inj.validate(&self.params)?;
        let start = self.steady_state(inj.mode, inj.detuning)?;
        let h = self.options.dt;
        let steps = (t_end / h).round() as usize;
        let mut y = start.to_vec();
        self.integrate(inj, &mut y, 0.0, steps, h, |_, _| {})?;
        Ok(LaserState::from_slice(&y, inj.mode, steps as f64 * h))
    }

    /// Adiabatic CW sweep 0 → `p_max` → 0 in `n_steps` increments each way.
    pub fn hysteresis_sweep(
        &self,
        mode: i32,
        detuning: f64,
        p_max: f64,
        n_steps: usize,
    ) -> Result<HysteresisLoop> {
        if detuning == 0.0 {
            return Err(Error::Precondition("hysteresis sweep needs a non-zero detuning".into()));
        }
        if n_steps < 10 {
            return Err(Error::Precondition(format!("n_steps must be >= 10, got {n_steps}")));
        }
        if !(p_max >= 0.0) {
            return Err(Error::Precondition(format!("p_max must be >= 0, got {p_max}")));
        }
        let grid: Vec<f64> = (0..=n_steps).map(|i| p_max * i as f64 / n_steps as f64).collect();
        let mut y = self.steady_state(mode, detuning)?.to_vec();
        let mut t = 0.0;
        let mut up = Vec::with_capacity(grid.len());
        for (i, &p) in grid.iter().enumerate() {
            let out = self.settle(mode, detuning, p, &mut y, &mut t, i)?;
            up.push((p, out));
        }
        let mut down = Vec::with_capacity(grid.len());
        for (i, &p) in grid.iter().enumerate().rev() {
            let out = self.settle(mode, detuning, p, &mut y, &mut t, 2 * n_steps + 1 - i)?;
            down.push((p, out));
        }
        Ok(HysteresisLoop { detuning, up, down })
    }

    fn settle(
        &self,
        mode: i32,
        detuning: f64,
        power: f64,
        y: &mut [f64],
        t: &mut f64,
        step_index: usize,
    ) -> Result<f64> {
        let inj = InjectionSpec::new(mode, detuning, Drive::Cw(power));
        let h = self.options.dt;
        let window = (self.options.settle_window / h).round().max(1.0) as usize;
        let max_windows = (self.options.settle_limit / self.options.settle_window).ceil() as usize;
        let m = self.params.mode_count;
        let kappa = self.params.output_coupling;
        let mut previous: Option<f64> = None;
        for _ in 0..max_windows {
            let mut sum = 0.0;
            self.integrate(&inj, y, *t, window, h, |_, y| {
                sum += kappa * (y[m + 1] * y[m + 1] + y[m + 2] * y[m + 2]);
            })?;
            *t += window as f64 * h;
            let mean = sum / window as f64;
            if let Some(prev) = previous {
                if (mean - prev).abs() <= self.options.settle_tolerance * mean.max(1e-6) {
                    return Ok(mean);
                }
            }
            previous = Some(mean);
        }
        Err(Error::Convergence(format!(
            "hysteresis step {step_index} (P_in = {power} mW) did not settle"
        )))
    }

    /// Pulse train from the steady state without resetting between pulses;
    /// returns the output peak of each pulse. Pulses are centred every
    /// `spacing` seconds starting at `spacing / 2`.
    pub fn pulse_train_peaks(
        &self,
        mode: i32,
        detuning: f64,
        peaks: &[f64],
        fwhm: f64,
        spacing: f64,
    ) -> Result<Vec<f64>> {
        let h = self.options.dt;
        let per_pulse = (spacing / h).round() as usize;
        let n = per_pulse * peaks.len() + 1;
        let mut samples = vec![0.0; n];
        for (k, &p) in peaks.iter().enumerate() {
            let center = (k as f64 + 0.5) * spacing;
            let lo = k * per_pulse;
            for (i, s) in samples.iter_mut().enumerate().skip(lo).take(per_pulse + 1) {
                *s += crate::waveform::gaussian_power(p, fwhm, center, i as f64 * h);
            }
        }
        let drive = Waveform::new(0.0, h, samples)?;
        let out = self.pulse_response(mode, detuning, &drive)?;
        Ok((0..peaks.len())
            .map(|k| {
                out.samples[k * per_pulse..(k + 1) * per_pulse]
                    .iter()
                    .copied()
                    .fold(0.0, f64::max)
            })
            .collect())
    }

    /// Dominant-mode output at each bias current.
    pub fn li_curve(params: &LaserParams, currents_ma: &[f64]) -> Result<Vec<LiPoint>> {
        use rayon::prelude::*;
        currents_ma
            .par_iter()
            .map(|&i| {
                let s = relax_to_steady_state(params, i)?;
                Ok(LiPoint {
                    current_ma: i,
                    power_mw: s.mode_power(params, 0),
                    carrier_density: s.carrier_density,
                })
            })
            .collect()
    }
}

/// Steady state with no injection, relaxed from a cold start.
pub fn relax_to_steady_state(params: &LaserParams, bias_ma: f64) -> Result<LaserState> {
    Simulator::new(params.clone(), bias_ma)?.steady_state(DEFAULT_INJECTED_MODE, 0.0)
}

/// Injected-mode emission for `inj.drive`, which must be a sampled waveform.
pub fn simulate_pulse_response(
    params: &LaserParams,
    bias_ma: f64,
    inj: &InjectionSpec,
) -> Result<Waveform> {
    let Drive::Sampled(drive) = &inj.drive else {
        return Err(Error::Precondition(
            "pulse response needs a sampled, finite-support drive".into(),
        ));
    };
    Simulator::new(params.clone(), bias_ma)?.pulse_response(inj.mode, inj.detuning, drive)
}

pub fn stationary_hysteresis_sweep(
    params: &LaserParams,
    bias_ma: f64,
    mode: i32,
    detuning: f64,
    p_max: f64,
    n_steps: usize,
) -> Result<HysteresisLoop> {
    Simulator::new(params.clone(), bias_ma)?.hysteresis_sweep(mode, detuning, p_max, n_steps)
}

/// Threshold current (mA) from the zero-power intercept of the linear,
/// above-threshold part of the L-I curve.
pub fn compute_threshold_current(params: &LaserParams) -> Result<f64> {
    params.validate()?;
    let estimate = params.analytic_threshold_current();
    let currents: Vec<f64> = (1..=20).map(|k| estimate * 0.1 * k as f64).collect();
    let li = Simulator::li_curve(params, &currents)?;
    threshold_from_li(&li)
}

/// Intercept of a line fitted to the lasing branch of an L-I curve.
pub fn threshold_from_li(li: &[LiPoint]) -> Result<f64> {
    let p_max = li.iter().map(|p| p.power_mw).fold(0.0, f64::max);
    let p_min = li.iter().map(|p| p.power_mw).fold(f64::INFINITY, f64::min);
    if !(p_max > 100.0 * p_min.max(1e-12)) {
        return Err(Error::Parameter(
            "L-I curve never rises above the spontaneous floor".into(),
        ));
    }
    let fit = |pts: &[&LiPoint]| -> Option<f64> {
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.current_ma).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.power_mw).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.current_ma - mx) * (p.power_mw - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.current_ma - mx).powi(2)).sum();
        let slope = sxy / sxx;
        (slope > 0.0).then(|| mx - my / slope)
    };
    let upper: Vec<&LiPoint> = li.iter().filter(|p| p.power_mw >= 0.3 * p_max).collect();
    let first = fit(&upper).ok_or_else(|| Error::Parameter("L-I branch not increasing".into()))?;
    // Refit on points clearly above the first estimate.
    let refined: Vec<&LiPoint> = li.iter().filter(|p| p.current_ma >= 1.2 * first).collect();
    Ok(fit(&refined).unwrap_or(first))
}
