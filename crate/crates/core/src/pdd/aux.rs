//! Auxiliary variables, equality-constraint residuals, and the augmented
//! Lagrangian value for the penalty solver.
//!
//! For every receiving user m, waveguide i, and PA n the solver carries a
//! pinching coefficient `u[m,i,n]` and a modified phase `theta[m,i,n]`; for
//! every (receiver m, transmitter g) pair a path response `q[m,g]`. The
//! residuals tie them to the physical model:
//!
//!   b_u = u·r − (η/√N)·e^{−jθ}
//!   b_θ = θ − κ(r + n_eff·x)
//!   b_q = q − √p·Σ_n u
//!
//! where r is the PA-user distance. All three vanish exactly when the
//! auxiliary variables describe the true channel.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rates::Matching;
use crate::scenario::{PinchingLayout, PowerAllocation, Scenario, UserSet};
use crate::wmmse::{EqualizerSet, PathRows, WeightSet};

use super::model::LinkStructure;

/// Amplitude/noise unit system of the solver state.
///
/// The physical per-PA amplitude η/√N is around 1e-3 while phases are
/// thousands of radians, so a single residual max-norm over SI-valued blocks
/// is meaningless. Measuring amplitudes in units of η/√N itself puts
/// u-residuals at O(1)·relative, θ-residuals in radians, and q-residuals at
/// the O(√p)-scale — all comparable — and keeps the Table-I penalty factor
/// sensibly calibrated. The change of units leaves every SINR, rate, and MSE
/// value untouched.
#[derive(Debug, Clone, Copy)]
pub struct PddScales {
    /// Per-PA amplitude constant in solver units.
    pub amp: f64,
    /// Noise power in solver units.
    pub noise: f64,
}

impl PddScales {
    /// Amplitude-normalized units: the per-PA constant is the unit, so
    /// amp = 1 and the noise power is scaled by its square.
    pub fn normalized(scenario: &Scenario) -> Self {
        let a = scenario.per_pa_amplitude();
        Self {
            amp: 1.0,
            noise: scenario.noise_power / (a * a),
        }
    }

    /// Plain SI units.
    pub fn physical(scenario: &Scenario) -> Self {
        Self {
            amp: scenario.per_pa_amplitude(),
            noise: scenario.noise_power,
        }
    }
}

/// Auxiliary variable block (U, θ, Q), flattened.
#[derive(Debug, Clone)]
pub struct AuxState {
    pub num_users: usize,
    pub num_waveguides: usize,
    pub pas: usize,
    /// u[m,i,n]: pinching coefficient of waveguide i, PA n toward user m.
    pub u: Vec<Complex64>,
    /// θ[m,i,n]: modified phase, stored unwrapped on the real line.
    pub theta: Vec<f64>,
    /// q[m,g]: path response of user m receiving user g's signal.
    pub q: Vec<Complex64>,
}

impl AuxState {
    #[inline]
    pub fn uidx(&self, m: usize, i: usize, n: usize) -> usize {
        (m * self.num_waveguides + i) * self.pas + n
    }

    #[inline]
    pub fn qidx(&self, m: usize, g: usize) -> usize {
        m * self.num_users + g
    }
}

/// Dual variables and penalty factor.
#[derive(Debug, Clone)]
pub struct DualState {
    pub lambda_u: Vec<Complex64>,
    pub lambda_theta: Vec<f64>,
    pub lambda_q: Vec<Complex64>,
    pub rho: f64,
}

impl DualState {
    pub fn zeros(aux: &AuxState, rho: f64) -> Self {
        Self {
            lambda_u: vec![Complex64::new(0.0, 0.0); aux.u.len()],
            lambda_theta: vec![0.0; aux.theta.len()],
            lambda_q: vec![Complex64::new(0.0, 0.0); aux.q.len()],
            rho,
        }
    }
}

/// Residual arrays plus their joint max-norm.
#[derive(Debug, Clone)]
pub struct ResidualSet {
    pub b_u: Vec<Complex64>,
    pub b_theta: Vec<f64>,
    pub b_q: Vec<Complex64>,
    pub inf_norm: f64,
}

/// Geometry cache for a fixed (users, layout) pair.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub num_users: usize,
    pub num_waveguides: usize,
    pub pas: usize,
    /// r[m,i,n]: user-to-PA distance.
    pub r: Vec<f64>,
    /// psi[m,i]: lateral offset √((yᵘ−yᵂ)² + d²).
    pub psi: Vec<f64>,
}

impl Geometry {
    pub fn compute(scenario: &Scenario, users: &UserSet, layout: &PinchingLayout) -> Self {
        let (mu, kw, np) = (
            scenario.num_users,
            scenario.num_waveguides,
            scenario.pas_per_waveguide,
        );
        let mut r = vec![0.0; mu * kw * np];
        let mut psi = vec![0.0; mu * kw];
        for (m, user) in users.positions.iter().enumerate() {
            for i in 0..kw {
                let lat = scenario.lateral_offset(user, i);
                psi[m * kw + i] = lat;
                for (n, &x) in layout.x[i].iter().enumerate() {
                    let dx = x - user.x;
                    r[(m * kw + i) * np + n] = (dx * dx + lat * lat).sqrt();
                }
            }
        }
        Self {
            num_users: mu,
            num_waveguides: kw,
            pas: np,
            r,
            psi,
        }
    }

    #[inline]
    pub fn dist(&self, m: usize, i: usize, n: usize) -> f64 {
        self.r[(m * self.num_waveguides + i) * self.pas + n]
    }

    #[inline]
    pub fn lateral(&self, m: usize, i: usize) -> f64 {
        self.psi[m * self.num_waveguides + i]
    }
}

/// Residual-zeroing auxiliary state for a given geometry and power: θ from
/// the phase definition, u from the channel amplitudes, q from √p·Σu.
pub fn init_aux(
    scenario: &Scenario,
    scales: &PddScales,
    geo: &Geometry,
    layout: &PinchingLayout,
    power: &PowerAllocation,
    matching: &Matching,
) -> AuxState {
    let (mu, kw, np) = (geo.num_users, geo.num_waveguides, geo.pas);
    let amp = scales.amp;
    let mut u = vec![Complex64::new(0.0, 0.0); mu * kw * np];
    let mut theta = vec![0.0; mu * kw * np];
    for m in 0..mu {
        for i in 0..kw {
            for n in 0..np {
                let idx = (m * kw + i) * np + n;
                let r = geo.dist(m, i, n);
                let th = scenario.kappa * (r + scenario.n_eff * layout.x[i][n]);
                theta[idx] = th;
                u[idx] = Complex64::from_polar(amp / r, -th);
            }
        }
    }
    let mut q = vec![Complex64::new(0.0, 0.0); mu * mu];
    for m in 0..mu {
        for g in 0..mu {
            let i = matching.waveguide_of_user[g];
            let sum: Complex64 = (0..np).map(|n| u[(m * kw + i) * np + n]).sum();
            q[m * mu + g] = power.p[g].sqrt() * sum;
        }
    }
    AuxState {
        num_users: mu,
        num_waveguides: kw,
        pas: np,
        u,
        theta,
        q,
    }
}

/// Evaluate the three residual blocks against the current geometry, layout,
/// and power.
pub fn residuals(
    scenario: &Scenario,
    scales: &PddScales,
    geo: &Geometry,
    layout: &PinchingLayout,
    power: &PowerAllocation,
    matching: &Matching,
    aux: &AuxState,
) -> Result<ResidualSet> {
    let (mu, kw, np) = (geo.num_users, geo.num_waveguides, geo.pas);
    if aux.u.len() != mu * kw * np || aux.q.len() != mu * mu {
        return Err(Error::InvalidInput("aux shape mismatch".into()));
    }
    let amp = scales.amp;
    let mut b_u = vec![Complex64::new(0.0, 0.0); mu * kw * np];
    let mut b_theta = vec![0.0; mu * kw * np];
    let mut inf = 0.0f64;
    for m in 0..mu {
        for i in 0..kw {
            for n in 0..np {
                let idx = (m * kw + i) * np + n;
                let r = geo.dist(m, i, n);
                let bu = aux.u[idx] * r - Complex64::from_polar(amp, -aux.theta[idx]);
                let bt = aux.theta[idx]
                    - scenario.kappa * (r + scenario.n_eff * layout.x[i][n]);
                b_u[idx] = bu;
                b_theta[idx] = bt;
                inf = inf.max(bu.norm()).max(bt.abs());
            }
        }
    }
    let mut b_q = vec![Complex64::new(0.0, 0.0); mu * mu];
    for m in 0..mu {
        for g in 0..mu {
            let i = matching.waveguide_of_user[g];
            let sum: Complex64 = (0..np).map(|n| aux.u[(m * kw + i) * np + n]).sum();
            let bq = aux.q[m * mu + g] - power.p[g].sqrt() * sum;
            b_q[m * mu + g] = bq;
            inf = inf.max(bq.norm());
        }
    }
    Ok(ResidualSet {
        b_u,
        b_theta,
        b_q,
        inf_norm: inf,
    })
}

/// Penalty part of the AL: (1/2ρ)·Σ(‖b_u + ρλ_u‖² + ‖b_θ + ρλ_θ‖² + ‖b_q + ρλ_q‖²).
pub fn penalty_value(res: &ResidualSet, duals: &DualState) -> f64 {
    let rho = duals.rho;
    let mut acc = 0.0;
    for (b, l) in res.b_u.iter().zip(&duals.lambda_u) {
        acc += (b + rho * l).norm_sqr();
    }
    for (b, l) in res.b_theta.iter().zip(&duals.lambda_theta) {
        let t = b + rho * l;
        acc += t * t;
    }
    for (b, l) in res.b_q.iter().zip(&duals.lambda_q) {
        acc += (b + rho * l).norm_sqr();
    }
    acc / (2.0 * rho)
}

/// Full AL value: weighted WMMSE objective in Q-variables plus the penalty.
#[allow(clippy::too_many_arguments)]
pub fn al_objective(
    scenario: &Scenario,
    scales: &PddScales,
    links: &LinkStructure,
    matching: &Matching,
    aux: &AuxState,
    v: &EqualizerSet,
    w: &WeightSet,
    res: &ResidualSet,
    duals: &DualState,
) -> f64 {
    let rows = rows_from_q(aux);
    let mses = mse_rows_structured(scenario, scales, links, &rows, matching, v);
    weighted_objective(links, w, &mses) + penalty_value(res, duals)
}

/// Path rows view of the Q block.
pub fn rows_from_q(aux: &AuxState) -> PathRows {
    let mu = aux.num_users;
    PathRows {
        rows: (0..mu)
            .map(|m| aux.q[m * mu..(m + 1) * mu].to_vec())
            .collect(),
    }
}

/// MSE per user with an explicit interference structure (NOMA or TDMA).
pub fn mse_rows_structured(
    scenario: &Scenario,
    scales: &PddScales,
    links: &LinkStructure,
    rows: &PathRows,
    _matching: &Matching,
    v: &EqualizerSet,
) -> Vec<f64> {
    (0..scenario.num_users)
        .map(|m| {
            let vm = v.v[m];
            let q_own = rows.rows[m][m];
            let mut total = q_own.norm_sqr();
            for &g in &links.interferers[m] {
                total += rows.rows[m][g].norm_sqr();
            }
            vm.norm_sqr() * (total + scales.noise) + 1.0 - 2.0 * (vm * q_own).re
        })
        .collect()
}

/// Weighted WMMSE objective Σ τ_m(ω_m e_m − log₂ ω_m).
pub fn weighted_objective(links: &LinkStructure, w: &WeightSet, mses: &[f64]) -> f64 {
    links
        .time_share
        .iter()
        .zip(w.w.iter().zip(mses))
        .map(|(&tau, (&wm, &em))| tau * (wm * em - wm.log2()))
        .sum()
}

/// Non-decreasing-objective equalizer/weight refresh on the Q rows: v is the
/// exact MSE argmin; ω moves to 1+γ only when that does not increase the
/// user's objective term (the guard keeps inner sweeps monotone even when a
/// user's MSE grew during the previous block updates).
pub fn refresh_equalizers_weights(
    scenario: &Scenario,
    scales: &PddScales,
    links: &LinkStructure,
    aux: &AuxState,
    v: &mut EqualizerSet,
    w: &mut WeightSet,
) {
    let rows = rows_from_q(aux);
    for m in 0..scenario.num_users {
        let q_own = rows.rows[m][m];
        let own = q_own.norm_sqr();
        let mut interf = scales.noise;
        for &g in &links.interferers[m] {
            interf += rows.rows[m][g].norm_sqr();
        }
        v.v[m] = q_own.conj() / (own + interf);
        let e = {
            let vm = v.v[m];
            vm.norm_sqr() * (own + interf) + 1.0 - 2.0 * (vm * q_own).re
        };
        let w_cand = 1.0 + own / interf;
        let term = |omega: f64| omega * e - omega.log2();
        if term(w_cand) <= term(w.w[m]) {
            w.w[m] = w_cand;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{decoding_order, OrderMode};
    use crate::scenario::{sample_users, ScenarioParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(
        n: usize,
        m: usize,
        seed: u64,
    ) -> (
        Scenario,
        UserSet,
        PinchingLayout,
        PowerAllocation,
        Matching,
        Geometry,
    ) {
        let scenario = ScenarioParams {
            pas_per_waveguide: n,
            num_users: m,
            ..Default::default()
        }
        .build()
        .unwrap();
        let users = sample_users(&scenario, seed);
        let layout = PinchingLayout::uniform(&scenario);
        let power = PowerAllocation::equal_split(&scenario);
        let gains = crate::scenario::ChannelGains::compute(&scenario, &users, &layout);
        let assignment: Vec<usize> = (0..m).map(|u| u % scenario.num_waveguides).collect();
        let mut matching =
            Matching::from_assignment(&assignment, scenario.num_waveguides).unwrap();
        decoding_order(&scenario, &gains, &power, &mut matching, OrderMode::GainSorted);
        let geo = Geometry::compute(&scenario, &users, &layout);
        (scenario, users, layout, power, matching, geo)
    }

    #[test]
    fn init_aux_zeroes_all_residuals() {
        let (s, _u, layout, power, matching, geo) = setup(4, 4, 3);
        let aux = init_aux(&s, &PddScales::physical(&s), &geo, &layout, &power, &matching);
        let res = residuals(&s, &PddScales::physical(&s), &geo, &layout, &power, &matching, &aux).unwrap();
        assert!(
            res.inf_norm < 1e-14,
            "definitional zero violated: {}",
            res.inf_norm
        );
    }

    #[test]
    fn q_set_to_sqrtp_sum_u_zeroes_bq() {
        let (s, _u, layout, power, matching, geo) = setup(4, 4, 4);
        let mut aux = init_aux(&s, &PddScales::physical(&s), &geo, &layout, &power, &matching);
        // Scramble u, then rebuild q from it: b_q must still vanish.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for u in aux.u.iter_mut() {
            *u *= Complex64::new(rng.gen_range(0.5..1.5), rng.gen_range(-0.2..0.2));
        }
        for m in 0..4 {
            for g in 0..4 {
                let i = matching.waveguide_of_user[g];
                let sum: Complex64 = (0..geo.pas).map(|n| aux.u[aux.uidx(m, i, n)]).sum();
                let idx = aux.qidx(m, g);
                aux.q[idx] = power.p[g].sqrt() * sum;
            }
        }
        let res = residuals(&s, &PddScales::physical(&s), &geo, &layout, &power, &matching, &aux).unwrap();
        let bq_max = res.b_q.iter().map(|b| b.norm()).fold(0.0f64, f64::max);
        assert!(bq_max < 1e-16);
    }

    #[test]
    fn theta_residual_matches_per_index_oracle() {
        let (s, users, layout, power, matching, geo) = setup(4, 4, 5);
        let mut aux = init_aux(&s, &PddScales::physical(&s), &geo, &layout, &power, &matching);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for t in aux.theta.iter_mut() {
            *t += rng.gen_range(-1.0..1.0);
        }
        let res = residuals(&s, &PddScales::physical(&s), &geo, &layout, &power, &matching, &aux).unwrap();
        for m in 0..4 {
            for i in 0..s.num_waveguides {
                for n in 0..s.pas_per_waveguide {
                    let idx = aux.uidx(m, i, n);
                    let user = users.positions[m];
                    let pa = s.pa_position(i, layout.x[i][n]);
                    let oracle = aux.theta[idx]
                        - s.kappa * (user.dist(&pa) + s.n_eff * layout.x[i][n]);
                    assert!((res.b_theta[idx] - oracle).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn al_equals_wmmse_objective_at_zero_residuals_zero_duals() {
        let (s, _u, layout, power, matching, geo) = setup(8, 6, 6);
        let aux = init_aux(&s, &PddScales::physical(&s), &geo, &layout, &power, &matching);
        let duals = DualState::zeros(&aux, s.rho_init);
        let links = LinkStructure::noma(&s, &matching);
        let rows = rows_from_q(&aux);
        let mut v = EqualizerSet {
            v: vec![Complex64::new(0.0, 0.0); 6],
        };
        let mut w = WeightSet { w: vec![1.0; 6] };
        refresh_equalizers_weights(&s, &PddScales::physical(&s), &links, &aux, &mut v, &mut w);
        let res = residuals(&s, &PddScales::physical(&s), &geo, &layout, &power, &matching, &aux).unwrap();
        let al = al_objective(&s, &PddScales::physical(&s), &links, &matching, &aux, &v, &w, &res, &duals);
        let mses = mse_rows_structured(&s, &PddScales::physical(&s), &links, &rows, &matching, &v);
        let wmmse = weighted_objective(&links, &w, &mses);
        assert!((al - wmmse).abs() < 1e-10 * (1.0 + wmmse.abs()));
        // And since residuals vanish and rows equal the physical model, the
        // plain WMMSE identity applies.
        let obj = crate::wmmse::wmmse_objective(&w, &mses);
        assert!((wmmse - obj).abs() < 1e-12 * (1.0 + obj.abs()));
    }

    #[test]
    fn penalty_scales_inversely_with_rho() {
        let (s, _u, layout, power, matching, geo) = setup(4, 4, 7);
        let mut aux = init_aux(&s, &PddScales::physical(&s), &geo, &layout, &power, &matching);
        aux.u[0] += Complex64::new(1e-3, 0.0);
        let res = residuals(&s, &PddScales::physical(&s), &geo, &layout, &power, &matching, &aux).unwrap();
        let d1 = DualState::zeros(&aux, 1e-4);
        let d2 = DualState::zeros(&aux, 5e-5);
        let p1 = penalty_value(&res, &d1);
        let p2 = penalty_value(&res, &d2);
        assert!((p2 / p1 - 2.0).abs() < 1e-12, "1/(2ρ) scaling violated");
    }

    #[test]
    fn al_matches_term_by_term_expansion_oracle() {
        let (s, _u, layout, power, matching, geo) = setup(4, 4, 8);
        let mut aux = init_aux(&s, &PddScales::physical(&s), &geo, &layout, &power, &matching);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for u in aux.u.iter_mut() {
            *u += Complex64::new(rng.gen_range(-1e-4..1e-4), rng.gen_range(-1e-4..1e-4));
        }
        for q in aux.q.iter_mut() {
            *q += Complex64::new(rng.gen_range(-1e-5..1e-5), rng.gen_range(-1e-5..1e-5));
        }
        let mut duals = DualState::zeros(&aux, s.rho_init);
        for l in duals.lambda_u.iter_mut() {
            *l = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        for l in duals.lambda_theta.iter_mut() {
            *l = rng.gen_range(-1.0..1.0);
        }
        for l in duals.lambda_q.iter_mut() {
            *l = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let links = LinkStructure::noma(&s, &matching);
        let mut v = EqualizerSet {
            v: vec![Complex64::new(0.0, 0.0); 4],
        };
        let mut w = WeightSet { w: vec![1.0; 4] };
        refresh_equalizers_weights(&s, &PddScales::physical(&s), &links, &aux, &mut v, &mut w);
        let res = residuals(&s, &PddScales::physical(&s), &geo, &layout, &power, &matching, &aux).unwrap();
        let al = al_objective(&s, &PddScales::physical(&s), &links, &matching, &aux, &v, &w, &res, &duals);

        // Oracle: direct summation of every term.
        let rho = duals.rho;
        let mut oracle = 0.0;
        for m in 0..4usize {
            let vm = v.v[m];
            let q_own = aux.q[aux.qidx(m, m)];
            let mut tot = q_own.norm_sqr() + s.noise_power;
            for &g in &links.interferers[m] {
                tot += aux.q[aux.qidx(m, g)].norm_sqr();
            }
            let e = vm.norm_sqr() * tot + 1.0 - 2.0 * (vm * q_own).re;
            oracle += w.w[m] * e - w.w[m].log2();
        }
        let mut pen = 0.0;
        for idx in 0..aux.u.len() {
            pen += (res.b_u[idx] + rho * duals.lambda_u[idx]).norm_sqr();
            let t = res.b_theta[idx] + rho * duals.lambda_theta[idx];
            pen += t * t;
        }
        for idx in 0..aux.q.len() {
            pen += (res.b_q[idx] + rho * duals.lambda_q[idx]).norm_sqr();
        }
        oracle += pen / (2.0 * rho);
        assert!(
            (al - oracle).abs() < 1e-9 * (1.0 + oracle.abs()),
            "al={al} oracle={oracle}"
        );
    }
}
