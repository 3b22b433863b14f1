//! Waveguide-division pinching-antenna NOMA downlink simulator.
//!
//! Each of `K` dielectric waveguides serves one NOMA user cluster through `N`
//! movable pinching antennas (PAs). The library jointly optimizes per-user
//! transmit powers and PA positions with a penalty-based block-coordinate
//! solver, schedules users onto waveguides with a swap-matching algorithm,
//! and drives seeded experiment sweeps against reference schemes (fixed ULA,
//! random placement, TDMA, exhaustive scheduling).

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod pdd;
pub mod rates;
pub mod scheduling;
pub mod scenario;
pub mod wmmse;

pub use error::{Error, Result};
pub use rates::{decoding_order, rate_report, sinr, Matching, OrderMode, RateReport, UserRate};
pub use scenario::{
    channel_vector, dbm_to_watts, effective_channel, pa_user_distance, sample_users,
    waveguide_response, ChannelGains, PinchingLayout, Point3, PowerAllocation, Scenario,
    ScenarioParams, UserSet, SPEED_OF_LIGHT,
};
pub use wmmse::{
    mse, update_equalizers, update_weights, wmmse_objective, EqualizerSet, PathRows, WeightSet,
};
