//! Closed-form block updates: the pinching-coefficient block U (a diagonal
//! plus rank-one linear system per user/waveguide pair) and the phase block θ
//! (per-index majorize-minimize step with a Lipschitz gradient surrogate).

use num_complex::Complex64;

use crate::rates::Matching;
use crate::scenario::{PowerAllocation, Scenario};

use super::aux::{AuxState, DualState, Geometry, PddScales};

/// Minimize the u-terms of the AL for every (receiver, waveguide) pair:
///   ‖R·u + ζ‖² + Σ_g ‖q + ρλ_q − √p_g·1ᵀu‖²
/// with R = diag(r_n) and ζ_n = ρλ_u − (η/√N)e^{−jθ}. The normal matrix is
/// diag(r²) + (Σ_g p_g)·11ᵀ, inverted by Sherman-Morrison.
pub fn solve_u(
    scales: &PddScales,
    geo: &Geometry,
    matching: &Matching,
    power: &PowerAllocation,
    aux: &mut AuxState,
    duals: &DualState,
) {
    let (mu, kw, np) = (aux.num_users, aux.num_waveguides, aux.pas);
    let amp = scales.amp;
    let rho = duals.rho;
    for m in 0..mu {
        for i in 0..kw {
            let p_sum: f64 = matching.clusters[i].iter().map(|&g| power.p[g]).sum();
            // rhs = Σ_g √p_g (q + ρλ_q)·1 − Rᴴζ
            let mut rhs_ones = Complex64::new(0.0, 0.0);
            for &g in &matching.clusters[i] {
                let idx = aux.qidx(m, g);
                rhs_ones += power.p[g].sqrt() * (aux.q[idx] + rho * duals.lambda_q[idx]);
            }
            let mut d_inv_rhs = vec![Complex64::new(0.0, 0.0); np];
            let mut d_inv_ones = vec![0.0; np];
            let mut ones_d_inv_rhs = Complex64::new(0.0, 0.0);
            let mut ones_d_inv_ones = 0.0;
            for n in 0..np {
                let idx = aux.uidx(m, i, n);
                let r = geo.dist(m, i, n);
                let zeta =
                    rho * duals.lambda_u[idx] - Complex64::from_polar(amp, -aux.theta[idx]);
                let rhs_n = rhs_ones - r * zeta;
                let d = r * r;
                d_inv_rhs[n] = rhs_n / d;
                d_inv_ones[n] = 1.0 / d;
                ones_d_inv_rhs += rhs_n / d;
                ones_d_inv_ones += 1.0 / d;
            }
            let correction = p_sum / (1.0 + p_sum * ones_d_inv_ones) * ones_d_inv_rhs;
            for n in 0..np {
                let idx = aux.uidx(m, i, n);
                aux.u[idx] = d_inv_rhs[n] - correction * d_inv_ones[n];
            }
        }
    }
}

/// Value of the u-block objective for one (m, i) pair; used by tests and the
/// stationarity oracle.
pub fn u_block_objective(
    scales: &PddScales,
    geo: &Geometry,
    matching: &Matching,
    power: &PowerAllocation,
    aux: &AuxState,
    duals: &DualState,
    m: usize,
    i: usize,
    u: &[Complex64],
) -> f64 {
    let amp = scales.amp;
    let rho = duals.rho;
    let mut acc = 0.0;
    let mut u_sum = Complex64::new(0.0, 0.0);
    for (n, &un) in u.iter().enumerate() {
        let idx = aux.uidx(m, i, n);
        let r = geo.dist(m, i, n);
        let zeta = rho * duals.lambda_u[idx] - Complex64::from_polar(amp, -aux.theta[idx]);
        acc += (un * r + zeta).norm_sqr();
        u_sum += un;
    }
    for &g in &matching.clusters[i] {
        let idx = aux.qidx(m, g);
        acc += (aux.q[idx] + rho * duals.lambda_q[idx] - power.p[g].sqrt() * u_sum).norm_sqr();
    }
    acc
}

/// Lipschitz-surrogate data for the θ update at one index.
#[derive(Debug, Clone, Copy)]
pub struct ThetaSurrogate {
    /// Lipschitz gradient constant ϱ = (η/√N)·|λ_u + u·r/ρ|.
    pub lipschitz: f64,
    /// ∇L^EC at the expansion point.
    pub grad_at_expansion: f64,
    /// L^EC value at the expansion point.
    pub value_at_expansion: f64,
    /// Expansion point θ^(t−1).
    pub expansion: f64,
}

/// Oscillatory part of the θ objective: L^EC(θ) = −(η/√N)·Re{z·e^{jθ}} with
/// z = λ_u + u·r/ρ.
pub fn l_ec(amp: f64, z: Complex64, theta: f64) -> f64 {
    -amp * (z * Complex64::from_polar(1.0, theta)).re
}

/// d/dθ of L^EC.
pub fn l_ec_grad(amp: f64, z: Complex64, theta: f64) -> f64 {
    amp * (z.re * theta.sin() + z.im * theta.cos())
}

/// Surrogate upper bound of L^EC around the expansion point.
pub fn l_ec_surrogate(s: &ThetaSurrogate, theta: f64) -> f64 {
    let d = theta - s.expansion;
    s.value_at_expansion + s.grad_at_expansion * d + 0.5 * s.lipschitz * d * d
}

/// Build the surrogate data at the current θ for one index.
#[allow(clippy::too_many_arguments)]
pub fn theta_surrogate(
    scenario: &Scenario,
    scales: &PddScales,
    geo: &Geometry,
    aux: &AuxState,
    duals: &DualState,
    m: usize,
    i: usize,
    n: usize,
) -> ThetaSurrogate {
    let _ = scenario;
    let amp = scales.amp;
    let idx = aux.uidx(m, i, n);
    let r = geo.dist(m, i, n);
    let z = duals.lambda_u[idx] + aux.u[idx] * r / duals.rho;
    let theta0 = aux.theta[idx];
    ThetaSurrogate {
        lipschitz: amp * z.norm(),
        grad_at_expansion: l_ec_grad(amp, z, theta0),
        value_at_expansion: l_ec(amp, z, theta0),
        expansion: theta0,
    }
}

/// Per-index majorize-minimize phase update: exact minimizer of the penalty
/// quadratic plus the Lipschitz surrogate,
///   θ⁺ = (ϱθ⁰ − λ_θ + (κ/ρ)(r + n_eff·x) − ∇L^EC(θ⁰)) / (ϱ + 1/ρ).
pub fn solve_theta(
    scenario: &Scenario,
    scales: &PddScales,
    geo: &Geometry,
    layout_x: &[Vec<f64>],
    aux: &mut AuxState,
    duals: &DualState,
) {
    let (mu, kw, np) = (aux.num_users, aux.num_waveguides, aux.pas);
    let rho = duals.rho;
    for m in 0..mu {
        for i in 0..kw {
            for n in 0..np {
                let idx = aux.uidx(m, i, n);
                let sur = theta_surrogate_inline(scenario, scales, geo, aux, duals, m, i, n);
                let target = scenario.kappa
                    * (geo.dist(m, i, n) + scenario.n_eff * layout_x[i][n]);
                let numer = sur.lipschitz * sur.expansion - duals.lambda_theta[idx]
                    + target / rho
                    - sur.grad_at_expansion;
                aux.theta[idx] = numer / (sur.lipschitz + 1.0 / rho);
            }
        }
    }
}

#[inline]
fn theta_surrogate_inline(
    scenario: &Scenario,
    scales: &PddScales,
    geo: &Geometry,
    aux: &AuxState,
    duals: &DualState,
    m: usize,
    i: usize,
    n: usize,
) -> ThetaSurrogate {
    theta_surrogate(scenario, scales, geo, aux, duals, m, i, n)
}

/// θ-block objective at one index: penalty quadratic plus L^EC. The update
/// minimizes the surrogate version of this.
#[allow(clippy::too_many_arguments)]
pub fn theta_block_objective(
    scenario: &Scenario,
    scales: &PddScales,
    geo: &Geometry,
    layout_x: &[Vec<f64>],
    aux: &AuxState,
    duals: &DualState,
    m: usize,
    i: usize,
    n: usize,
    theta: f64,
) -> f64 {
    let idx = aux.uidx(m, i, n);
    let rho = duals.rho;
    let amp = scales.amp;
    let r = geo.dist(m, i, n);
    let target = scenario.kappa * (r + scenario.n_eff * layout_x[i][n]);
    let z = duals.lambda_u[idx] + aux.u[idx] * r / rho;
    let quad = theta - target + rho * duals.lambda_theta[idx];
    quad * quad / (2.0 * rho) + l_ec(amp, z, theta)
}
