//! System geometry, physical constants, and channel evaluation.
//!
//! A [`Scenario`] pins the deployment: `K` dielectric waveguides parallel to
//! the x-axis at height `d`, each feeding `N` pinching antennas (PAs) whose
//! x-positions are the optimization variable, serving `M` single-antenna
//! users on the ground plane. Channel amplitudes follow the free-space
//! line-of-sight model; the in-waveguide response adds the guided phase
//! accumulated between the feed point and each PA.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Propagation speed used for wavelength derivation (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A point in the deployment coordinate system (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Euclidean distance to another point.
    pub fn dist(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// Raw scenario parameters as they appear in configuration.
///
/// Powers are given in dBm here; [`ScenarioParams::build`] converts to watts
/// so that everything downstream works in SI units.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioParams {
    /// Carrier frequency (Hz).
    pub carrier_hz: f64,
    /// Effective refractive index of the dielectric waveguide.
    pub n_eff: f64,
    /// Number of waveguides.
    pub num_waveguides: usize,
    /// Number of PAs per waveguide.
    pub pas_per_waveguide: usize,
    /// Number of users.
    pub num_users: usize,
    /// Waveguide length (m).
    pub waveguide_len: f64,
    /// Lateral span parameter between waveguides (m).
    pub waveguide_spacing: f64,
    /// Waveguide height above the user plane (m).
    pub height: f64,
    /// Minimum PA spacing as a multiple of the wavelength.
    pub min_spacing_wavelengths: f64,
    /// Noise power (dBm).
    pub noise_dbm: f64,
    /// Maximum BS transmit power (dBm).
    pub p_max_dbm: f64,
    /// Per-user QoS rate floor (bit/s/Hz).
    pub r_min: f64,
    /// Per-waveguide user quota.
    pub quota: usize,
    /// Inner-loop convergence threshold (fractional AL decrement).
    pub eps_inner: f64,
    /// Outer-loop convergence threshold on the residual max-norm.
    pub eps_outer: f64,
    /// Initial penalty factor.
    pub rho_init: f64,
    /// Base RNG seed.
    pub seed: u64,
}

impl Default for ScenarioParams {
    /// The default desk-scale parameter set used throughout the test suites.
    fn default() -> Self {
        Self {
            carrier_hz: 6.0e9,
            n_eff: 1.4,
            num_waveguides: 3,
            pas_per_waveguide: 8,
            num_users: 6,
            waveguide_len: 10.0,
            waveguide_spacing: 10.0,
            height: 3.0,
            min_spacing_wavelengths: 0.5,
            noise_dbm: -90.0,
            p_max_dbm: 15.0,
            r_min: 0.05,
            quota: 3,
            eps_inner: 1e-4,
            eps_outer: 1e-5,
            rho_init: 1e-4,
            seed: 0,
        }
    }
}

impl ScenarioParams {
    /// Validate and derive the immutable [`Scenario`].
    pub fn build(&self) -> Result<Scenario> {
        Scenario::new(self.clone())
    }
}

/// Convert a power level in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Immutable deployment description: geometry, physical constants, and
/// algorithm tolerances. All powers in watts, all lengths in meters.
#[derive(Debug, Clone)]
pub struct Scenario {
    params: ScenarioParams,
    /// Signal wavelength λ = c/f (m).
    pub wavelength: f64,
    /// Guided wavelength λ_g = λ/n_eff (m).
    pub guided_wavelength: f64,
    /// Effective refractive index.
    pub n_eff: f64,
    /// Free-space wavenumber κ = 2π/λ (rad/m).
    pub kappa: f64,
    /// Amplitude constant η = λ/(4π) (m).
    pub eta: f64,
    /// Number of waveguides K.
    pub num_waveguides: usize,
    /// PAs per waveguide N.
    pub pas_per_waveguide: usize,
    /// Number of users M.
    pub num_users: usize,
    /// Waveguide length L (m).
    pub waveguide_len: f64,
    /// Lateral span parameter W (m).
    pub waveguide_spacing: f64,
    /// Waveguide height d (m).
    pub height: f64,
    /// Minimum PA spacing Δ (m).
    pub min_spacing: f64,
    /// Noise power σ² (W).
    pub noise_power: f64,
    /// Max BS transmit power P_max (W).
    pub p_max: f64,
    /// QoS rate floor R_min (bit/s/Hz).
    pub r_min: f64,
    /// Per-waveguide quota q̄.
    pub quota: usize,
    /// Inner-loop threshold ε₁.
    pub eps_inner: f64,
    /// Outer-loop threshold ε₂.
    pub eps_outer: f64,
    /// Initial penalty ρ₀.
    pub rho_init: f64,
    /// Base RNG seed.
    pub seed: u64,
}

impl Scenario {
    fn new(params: ScenarioParams) -> Result<Self> {
        if params.carrier_hz <= 0.0 || params.n_eff <= 0.0 {
            return Err(Error::InvalidInput(
                "carrier frequency and n_eff must be positive".into(),
            ));
        }
        if params.num_waveguides == 0 || params.pas_per_waveguide == 0 || params.num_users == 0 {
            return Err(Error::InvalidInput(
                "waveguide, PA, and user counts must be positive".into(),
            ));
        }
        let wavelength = SPEED_OF_LIGHT / params.carrier_hz;
        let min_spacing = params.min_spacing_wavelengths * wavelength;
        if params.num_waveguides * params.quota < params.num_users {
            return Err(Error::QuotaInfeasible {
                users: params.num_users,
                waveguides: params.num_waveguides,
                quota: params.quota,
            });
        }
        if min_spacing * (params.pas_per_waveguide as f64 - 1.0) > params.waveguide_len {
            return Err(Error::InvalidInput(format!(
                "layout infeasible: spacing {} x {} PAs exceeds length {}",
                min_spacing, params.pas_per_waveguide, params.waveguide_len
            )));
        }
        Ok(Self {
            wavelength,
            guided_wavelength: wavelength / params.n_eff,
            n_eff: params.n_eff,
            kappa: 2.0 * std::f64::consts::PI / wavelength,
            eta: wavelength / (4.0 * std::f64::consts::PI),
            num_waveguides: params.num_waveguides,
            pas_per_waveguide: params.pas_per_waveguide,
            num_users: params.num_users,
            waveguide_len: params.waveguide_len,
            waveguide_spacing: params.waveguide_spacing,
            height: params.height,
            min_spacing,
            noise_power: dbm_to_watts(params.noise_dbm),
            p_max: dbm_to_watts(params.p_max_dbm),
            r_min: params.r_min,
            quota: params.quota,
            eps_inner: params.eps_inner,
            eps_outer: params.eps_outer,
            rho_init: params.rho_init,
            seed: params.seed,
            params,
        })
    }

    /// The parameter block this scenario was built from.
    pub fn params(&self) -> &ScenarioParams {
        &self.params
    }

    /// Default parameter set.
    pub fn default_desk() -> Scenario {
        ScenarioParams::default().build().expect("defaults valid")
    }

    /// Per-PA amplitude target η/√N: the channel amplitude constant after
    /// splitting waveguide power equally across the N active PAs.
    pub fn per_pa_amplitude(&self) -> f64 {
        self.eta / (self.pas_per_waveguide as f64).sqrt()
    }

    /// y-coordinate of waveguide `k` (0-based). Waveguides span
    /// `[-W/2, W/2]` evenly; for K=3 this gives -W/2, 0, +W/2.
    pub fn waveguide_y(&self, k: usize) -> f64 {
        let kf = self.num_waveguides as f64;
        if self.num_waveguides == 1 {
            0.0
        } else {
            -self.waveguide_spacing / 2.0
                + (k as f64) * self.waveguide_spacing / (kf - 1.0)
        }
    }

    /// Feed point of waveguide `k` (x = 0 end).
    pub fn feed_point(&self, k: usize) -> Point3 {
        Point3::new(0.0, self.waveguide_y(k), self.height)
    }

    /// Position of PA `n` on waveguide `k` for a given x-coordinate.
    pub fn pa_position(&self, k: usize, x: f64) -> Point3 {
        Point3::new(x, self.waveguide_y(k), self.height)
    }

    /// Lateral offset term ψ between a user and waveguide `k`:
    /// √((yᵘ − yᵂ_k)² + d²). Independent of the PA index.
    pub fn lateral_offset(&self, user: &Point3, k: usize) -> f64 {
        let dy = user.y - self.waveguide_y(k);
        (dy * dy + self.height * self.height).sqrt()
    }
}

/// User drop: `M` positions on the ground plane.
#[derive(Debug, Clone)]
pub struct UserSet {
    pub positions: Vec<Point3>,
}

impl UserSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Draw `M` users i.i.d. uniform over the service rectangle
/// x ∈ (0, L), y ∈ (−KW/2, KW/2), z = 0. Deterministic for a fixed seed.
pub fn sample_users(scenario: &Scenario, seed: u64) -> UserSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_span = scenario.num_waveguides as f64 * scenario.waveguide_spacing / 2.0;
    let positions = (0..scenario.num_users)
        .map(|_| {
            let x = rng.gen_range(0.0..scenario.waveguide_len);
            let y = rng.gen_range(-half_span..half_span);
            Point3::new(x, y, 0.0)
        })
        .collect();
    UserSet { positions }
}

/// Per-waveguide ordered PA x-positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PinchingLayout {
    /// `x[k][n]` is the x-coordinate of PA `n` on waveguide `k`.
    pub x: Vec<Vec<f64>>,
}

impl PinchingLayout {
    /// Uniform layout: spacing max(Δ, L/N) starting at L/(2N), recentered
    /// if the chain would overrun the waveguide end.
    pub fn uniform(scenario: &Scenario) -> Self {
        let n = scenario.pas_per_waveguide;
        let len = scenario.waveguide_len;
        let spacing = scenario.min_spacing.max(len / n as f64);
        let span = spacing * (n as f64 - 1.0);
        let mut start = len / (2.0 * n as f64);
        if start + span > len {
            start = (len - span) / 2.0;
        }
        let row: Vec<f64> = (0..n).map(|i| start + spacing * i as f64).collect();
        Self {
            x: vec![row; scenario.num_waveguides],
        }
    }

    /// Check the box constraint 0 ≤ x ≤ L and adjacent spacing ≥ Δ.
    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        if self.x.len() != scenario.num_waveguides {
            return Err(Error::InvalidInput("layout waveguide count mismatch".into()));
        }
        for (k, row) in self.x.iter().enumerate() {
            if row.len() != scenario.pas_per_waveguide {
                return Err(Error::InvalidInput(format!(
                    "waveguide {k}: expected {} PAs, got {}",
                    scenario.pas_per_waveguide,
                    row.len()
                )));
            }
            for (n, &x) in row.iter().enumerate() {
                if !(0.0..=scenario.waveguide_len).contains(&x) || !x.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "PA ({k},{n}) position {x} outside [0, {}]",
                        scenario.waveguide_len
                    )));
                }
            }
            for n in 0..row.len().saturating_sub(1) {
                // Allow a hair of slack for solver round-off.
                if row[n + 1] - row[n] < scenario.min_spacing - 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "PAs ({k},{n})-({k},{}) spaced {:.6} < Δ={:.6}",
                        n + 1,
                        row[n + 1] - row[n],
                        scenario.min_spacing
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-user transmit powers (W).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub p: Vec<f64>,
}

impl PowerAllocation {
    /// Equal split of the full budget.
    pub fn equal_split(scenario: &Scenario) -> Self {
        Self {
            p: vec![scenario.p_max / scenario.num_users as f64; scenario.num_users],
        }
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        if self.p.len() != scenario.num_users {
            return Err(Error::InvalidInput("power vector length mismatch".into()));
        }
        if self.p.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidInput("negative or non-finite power".into()));
        }
        let total: f64 = self.p.iter().sum();
        if total > scenario.p_max * (1.0 + 1e-9) {
            return Err(Error::InvalidInput(format!(
                "total power {total:.6e} exceeds budget {:.6e}",
                scenario.p_max
            )));
        }
        Ok(())
    }
}

/// Distance between a user and a PA position.
pub fn pa_user_distance(user: &Point3, pa: &Point3) -> f64 {
    user.dist(pa)
}

/// Free-space channel vector between the PAs of waveguide `k` and a user:
/// entry n is η·e^{−jκ·dist}/dist.
pub fn channel_vector(
    scenario: &Scenario,
    user: &Point3,
    layout: &PinchingLayout,
    k: usize,
) -> Vec<Complex64> {
    layout.x[k]
        .iter()
        .map(|&x| {
            let d = pa_user_distance(user, &scenario.pa_position(k, x));
            let phase = -scenario.kappa * d;
            Complex64::from_polar(scenario.eta / d, phase)
        })
        .collect()
}

/// In-waveguide response of waveguide `k`: entry n is
/// (1/√N)·e^{−j·(2π/λ_g)·x_n} — a unit-modulus guided phase times the equal
/// power split across the N PAs.
pub fn waveguide_response(
    scenario: &Scenario,
    layout: &PinchingLayout,
    k: usize,
) -> Vec<Complex64> {
    let amp = 1.0 / (scenario.pas_per_waveguide as f64).sqrt();
    let kg = 2.0 * std::f64::consts::PI / scenario.guided_wavelength;
    layout.x[k].iter().map(|&x| Complex64::from_polar(amp, -kg * x)).collect()
}

/// Effective scalar channel hᵀg from waveguide `k` to a user. Each PA
/// contributes amplitude η/(√N·dist) at total phase κ(dist + n_eff·x).
pub fn effective_channel(
    scenario: &Scenario,
    user: &Point3,
    layout: &PinchingLayout,
    k: usize,
) -> Complex64 {
    let amp = scenario.per_pa_amplitude();
    layout.x[k]
        .iter()
        .map(|&x| {
            let d = pa_user_distance(user, &scenario.pa_position(k, x));
            let phase = -scenario.kappa * (d + scenario.n_eff * x);
            Complex64::from_polar(amp / d, phase)
        })
        .sum()
}

/// Effective channels from every waveguide to every user, computed once per
/// (users, layout) pair and shared by SINR, scheduling, and solver code.
#[derive(Debug, Clone)]
pub struct ChannelGains {
    /// `c[m][k]`: effective channel from waveguide k to user m.
    pub c: Vec<Vec<Complex64>>,
}

impl ChannelGains {
    pub fn compute(scenario: &Scenario, users: &UserSet, layout: &PinchingLayout) -> Self {
        let c = users
            .positions
            .iter()
            .map(|u| {
                (0..scenario.num_waveguides)
                    .map(|k| effective_channel(scenario, u, layout, k))
                    .collect()
            })
            .collect();
        Self { c }
    }

    /// |hᵀg|² gain of waveguide `k` toward user `m`.
    pub fn gain(&self, m: usize, k: usize) -> f64 {
        self.c[m][k].norm_sqr()
    }
}
