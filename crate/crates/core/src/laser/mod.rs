//! Multimode Fabry-Perot laser diode under intramodal optical injection.

mod model;
mod params;
mod sim;

pub use model::{Drive, InjectionSpec, LaserState, StateRate};
pub use params::{LaserParams, ELEMENTARY_CHARGE, OMEGA_UNIT, PLANCK, SPEED_OF_LIGHT};
pub use sim::{
    compute_threshold_current, derivatives, li_csv, relax_to_steady_state,
    simulate_pulse_response, stationary_hysteresis_sweep, step, threshold_from_li,
    HysteresisLoop, LiPoint, SimOptions, Simulator, DEFAULT_INJECTED_MODE,
};
