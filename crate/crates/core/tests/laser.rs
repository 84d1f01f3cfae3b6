use fpld_core::laser::*;
use fpld_core::waveform::{gaussian_pulse, measure_peak_fwhm, PulseGrid, Waveform, PS};
use fpld_core::Error;
use num_complex::Complex64;
use proptest::prelude::*;

/// Threshold from a brute-force 0.1 mA L-I sweep over 0.1–13 mA with the
/// default parameters (computed once, frozen).
const FINE_SWEEP_THRESHOLD_MA: f64 = 6.558341489220225;
/// `compute_threshold_current` on the default parameters (regression).
const THRESHOLD_MA: f64 = 6.55561897383574;

fn bias() -> f64 {
    1.1 * THRESHOLD_MA
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn empty_cavity_is_a_fixed_point() {
    let p = LaserParams::default();
    let s = LaserState::cold(&p, -9);
    let d = derivatives(&s, &p, 0.0, &InjectionSpec::idle(-9, 0.0), 0.0).unwrap();
    assert_eq!(d.carrier_density, 0.0);
    assert!(d.photon_densities.iter().all(|&x| x == 0.0));
    assert_eq!(d.field, Complex64::new(0.0, 0.0));
}

#[test]
fn injection_seeds_the_field() {
    let p = LaserParams::default();
    let s = LaserState::cold(&p, -9);
    let inj = InjectionSpec::new(-9, -25.0 * OMEGA_UNIT, Drive::Cw(1.0));
    let d = derivatives(&s, &p, 0.0, &inj, 0.0).unwrap();
    assert!(d.field.re > 0.0);
}

#[test]
fn non_finite_state_rejected() {
    let p = LaserParams::default();
    let mut s = LaserState::cold(&p, -9);
    s.carrier_density = f64::NAN;
    let err = derivatives(&s, &p, 5.0, &InjectionSpec::idle(-9, 0.0), 0.0).unwrap_err();
    assert!(matches!(err, Error::NumericalDomain(_)), "{err}");
}

#[test]
fn step_size_checked() {
    let p = LaserParams::default();
    let s = LaserState::cold(&p, -9);
    let inj = InjectionSpec::idle(-9, 0.0);
    assert!(step(&s, &p, 5.0, &inj, 0.0).is_err());
    assert!(step(&s, &p, 5.0, &inj, 0.2 * PS).is_err());
    assert!(step(&s, &p, 5.0, &inj, 0.05 * PS).is_ok());
}

#[test]
fn steady_state_derivatives_vanish() {
    let p = LaserParams::default();
    let s = relax_to_steady_state(&p, bias()).unwrap();
    let d = derivatives(&s, &p, bias(), &InjectionSpec::idle(-9, 0.0), 0.0).unwrap();
    let pump = bias() * 1e-3 / (ELEMENTARY_CHARGE * p.active_volume);
    assert!(d.carrier_density.abs() < 1e-6 * pump, "dN/dt = {}", d.carrier_density);
    for (k, (&ds, &sv)) in d.photon_densities.iter().zip(&s.photon_densities).enumerate() {
        if sv > 0.0 {
            let scale = sv / p.photon_lifetime;
            assert!(ds.abs() < 1e-6 * scale, "mode slot {k}: {ds} vs {scale}");
        }
    }
    let field_scale = s.field.norm() / p.photon_lifetime;
    assert!(d.field.norm() < 1e-6 * field_scale.max(f64::MIN_POSITIVE));
}

#[test]
fn steady_state_persists_for_1000_steps() {
    let p = LaserParams::default();
    let s0 = relax_to_steady_state(&p, bias()).unwrap();
    let inj = InjectionSpec::idle(-9, 0.0);
    let mut s = s0.clone();
    for _ in 0..1000 {
        s = step(&s, &p, bias(), &inj, 0.05 * PS).unwrap();
    }
    assert!(rel(s.carrier_density, s0.carrier_density) < 1e-5);
    for (a, b) in s.photon_densities.iter().zip(&s0.photon_densities) {
        if *b > 0.0 {
            assert!(rel(*a, *b) < 1e-5, "{a} vs {b}");
        }
    }
}

#[test]
fn free_running_spectrum() {
    let p = LaserParams::default();
    let off = relax_to_steady_state(&p, 0.0).unwrap();
    assert!(off.mode_power(&p, 0) < 1e-3);
    // Park the injection slot on another mode so S_{-9} is a real density.
    let sim = Simulator::new(p.clone(), bias()).unwrap();
    let on = sim.steady_state(5, 0.0).unwrap();
    let dominant = (-9..=9)
        .max_by(|&a, &b| on.mode_density(a).total_cmp(&on.mode_density(b)))
        .unwrap();
    assert_eq!(dominant, 0);
    assert!(on.mode_density(0) > 10.0 * on.mode_density(-9));
    let high = relax_to_steady_state(&p, 2.0 * THRESHOLD_MA).unwrap();
    assert!(high.mode_density(0) > on.mode_density(0));
    assert!(off.mode_density(0) < on.mode_density(0));
}

#[test]
fn threshold_matches_fine_sweep() {
    let p = LaserParams::default();
    let ith = compute_threshold_current(&p).unwrap();
    assert!(rel(ith, THRESHOLD_MA) < 1e-9, "{ith}");
    assert!((ith - FINE_SWEEP_THRESHOLD_MA).abs() < 0.01);
    // The threshold lies where the L-I slope climbs from 10% to 90% of its
    // lasing value.
    let currents: Vec<f64> = (50..=90).map(|k| 0.1 * k as f64).collect();
    let li = Simulator::li_curve(&p, &currents).unwrap();
    let slopes: Vec<(f64, f64)> = li
        .windows(2)
        .map(|w| (w[1].current_ma, (w[1].power_mw - w[0].power_mw) / 0.1))
        .collect();
    let lasing = slopes.last().unwrap().1;
    let lo = slopes.iter().find(|s| s.1 > 0.1 * lasing).unwrap().0;
    let hi = slopes.iter().find(|s| s.1 > 0.9 * lasing).unwrap().0;
    assert!(lo - 0.1 <= ith && ith <= hi, "{ith} outside [{lo}, {hi}]");
    // L-I is monotone above threshold.
    for w in li.windows(2).filter(|w| w[0].current_ma > ith) {
        assert!(w[1].power_mw > w[0].power_mw);
    }
}

#[test]
fn longer_photon_lifetime_lowers_threshold() {
    let p = LaserParams::default();
    let mut q = p.clone();
    q.photon_lifetime *= 2.0;
    assert!(compute_threshold_current(&q).unwrap() < compute_threshold_current(&p).unwrap());
}

#[test]
fn undriven_pulse_response_sits_at_floor() {
    let grid = PulseGrid::default();
    let p = LaserParams::default();
    let inj = InjectionSpec::new(-9, -25.0 * OMEGA_UNIT, Drive::Sampled(Waveform::zeros(&grid)));
    let out = simulate_pulse_response(&p, bias(), &inj).unwrap();
    assert!(out.peak() < 1e-2);
}

#[test]
fn pulse_response_broadens_and_is_deterministic() {
    let grid = PulseGrid::default();
    let p = LaserParams::default();
    let drive = gaussian_pulse(40.0, 40.0 * PS, &grid);
    let inj = InjectionSpec::new(-9, -25.0 * OMEGA_UNIT, Drive::Sampled(drive));
    let a = simulate_pulse_response(&p, bias(), &inj).unwrap();
    let b = simulate_pulse_response(&p, bias(), &inj).unwrap();
    assert_eq!(a, b);
    let (peak, fwhm) = measure_peak_fwhm(&a).unwrap();
    assert!(peak > 100.0 * a.samples[0], "{peak}");
    assert!(fwhm > 40.0 * PS, "{}", fwhm / PS);
}

#[test]
fn pulse_response_requires_sampled_drive() {
    let p = LaserParams::default();
    let inj = InjectionSpec::new(-9, -25.0 * OMEGA_UNIT, Drive::Cw(1.0));
    assert!(simulate_pulse_response(&p, bias(), &inj).is_err());
}

fn response_at(dt_ps: f64) -> Waveform {
    let grid = PulseGrid {
        window: 400.0 * PS,
        dt: 0.1 * PS,
    };
    let opts = SimOptions {
        dt: dt_ps * PS,
        dt_max: dt_ps * PS,
        ..SimOptions::default()
    };
    let sim = Simulator::with_options(LaserParams::default(), bias(), opts).unwrap();
    sim.pulse_response(-9, -25.0 * OMEGA_UNIT, &gaussian_pulse(10.0, 40.0 * PS, &grid))
        .unwrap()
}

#[test]
fn rk4_converges_at_fourth_order() {
    let w: Vec<Waveform> = [0.1, 0.05, 0.025].iter().map(|&h| response_at(h)).collect();
    let diff = |a: &Waveform, b: &Waveform| {
        a.samples
            .iter()
            .zip(&b.samples)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let order = (diff(&w[0], &w[1]) / diff(&w[1], &w[2])).log2();
    assert!(order >= 3.5, "measured order {order}");
    // Halving the step moves the peak by far less than 0.1%.
    assert!(rel(w[1].peak(), w[2].peak()) < 1e-3);
}

#[test]
fn hysteresis_only_for_negative_detuning() {
    let sim = Simulator::new(LaserParams::default(), bias()).unwrap();
    let neg = sim.hysteresis_sweep(-9, -25.0 * OMEGA_UNIT, 2.0, 40).unwrap();
    assert!(neg.loop_area() > 0.0);
    let (up, down) = (neg.switch_up_power().unwrap(), neg.switch_down_power().unwrap());
    assert!(up > down, "up {up} down {down}");
    let pos = sim.hysteresis_sweep(-9, 25.0 * OMEGA_UNIT, 2.0, 40).unwrap();
    assert!(pos.max_branch_gap() < 0.01);
}

#[test]
fn zero_power_sweep_stays_at_floor() {
    let sim = Simulator::new(LaserParams::default(), bias()).unwrap();
    let lp = sim.hysteresis_sweep(-9, -25.0 * OMEGA_UNIT, 0.0, 10).unwrap();
    assert!(lp.up.iter().chain(&lp.down).all(|&(p, q)| p == 0.0 && q < 1e-2));
    assert!(sim.hysteresis_sweep(-9, -25.0 * OMEGA_UNIT, 2.0, 5).is_err());
    assert!(sim.hysteresis_sweep(-9, 0.0, 2.0, 20).is_err());
}

#[test]
fn pulsed_drive_does_not_latch() {
    let sim = Simulator::new(LaserParams::default(), bias()).unwrap();
    let d = -25.0 * OMEGA_UNIT;
    let peaks: Vec<f64> = (0..=10)
        .chain((0..10).rev())
        .map(|i| 2.0 * i as f64)
        .collect();
    let out = sim.pulse_train_peaks(-9, d, &peaks, 40.0 * PS, 1500.0 * PS).unwrap();
    let max = out.iter().copied().fold(0.0, f64::max);
    let gap = (0..10).map(|i| (out[i] - out[20 - i]).abs()).fold(0.0, f64::max) / max;
    assert!(gap < 0.02, "pulsed up/down gap {gap}");
    let cw = sim.hysteresis_sweep(-9, d, 2.0, 40).unwrap();
    assert!(cw.max_branch_gap() > 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn trajectories_stay_non_negative(
        power in 0.0f64..60.0,
        detuning in -45.0f64..45.0,
        current in 0.0f64..15.0,
    ) {
        let p = LaserParams::default();
        let inj = InjectionSpec::new(-9, detuning * OMEGA_UNIT, Drive::Cw(power));
        let mut s = LaserState::cold(&p, -9);
        s.carrier_density = p.transparency_density;
        for _ in 0..2000 {
            s = step(&s, &p, current, &inj, 0.05 * PS).unwrap();
            prop_assert!(s.carrier_density >= 0.0);
            prop_assert!(s.photon_densities.iter().all(|&x| x >= 0.0));
            prop_assert!(s.field.norm_sqr() >= 0.0);
        }
    }
}
