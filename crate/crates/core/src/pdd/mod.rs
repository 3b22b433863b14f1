//! Penalty-based block-coordinate solver for joint power allocation and
//! pinching beamforming under a fixed user-to-waveguide matching.
//!
//! Inner loop: refresh equalizers/weights, then update the blocks
//! {Q,P} → X → U → θ, each of which provably never increases the augmented
//! Lagrangian. Outer loop: grow the duals when the residual max-norm fell by
//! the 0.8 factor, otherwise shrink the penalty, until ‖B‖∞ drops below the
//! outer threshold.

pub mod aux;
pub mod closed_form;
pub mod model;
pub mod placement;
pub mod pq;

pub use aux::{
    al_objective, init_aux, penalty_value, residuals, rows_from_q, AuxState, DualState, Geometry,
    PddScales, ResidualSet,
};
pub use closed_form::{solve_theta, solve_u, theta_surrogate, ThetaSurrogate};
pub use model::{scheme_rate_report, AccessScheme, LinkStructure};
pub use placement::{solve_x, x_coefficients, XCoefficients};
pub use pq::{solve_pq, PhysicalFeasibility, PqOptions, PqReport};

use num_complex::Complex64;

use crate::error::Result;
use crate::kernel::Tolerance;
use crate::rates::Matching;
use crate::scenario::{ChannelGains, PinchingLayout, PowerAllocation, Scenario, UserSet};
use crate::wmmse::{EqualizerSet, WeightSet};

/// Knobs of the penalty solver.
#[derive(Debug, Clone)]
pub struct PddOptions {
    pub scheme: AccessScheme,
    /// Skip the placement block (random-placement reference runs).
    pub optimize_layout: bool,
    pub enforce_qos: bool,
    pub enforce_sic: bool,
    pub inner_cap: usize,
    pub outer_cap: usize,
    pub qcqp_tol: Tolerance,
}

impl Default for PddOptions {
    fn default() -> Self {
        Self {
            scheme: AccessScheme::Noma,
            optimize_layout: true,
            enforce_qos: true,
            enforce_sic: true,
            inner_cap: 24,
            outer_cap: 300,
            qcqp_tol: Tolerance::default(),
        }
    }
}

/// One row of the convergence trace (one inner sweep).
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub outer: usize,
    pub sweep: usize,
    pub al: f64,
    pub sum_rate: f64,
    pub residual_inf: f64,
    pub rho: f64,
}

/// Solver result: final iterate, trace, and convergence diagnostics.
#[derive(Debug, Clone)]
pub struct PddOutcome {
    pub power: PowerAllocation,
    pub layout: PinchingLayout,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
    pub final_residual: f64,
    pub outer_iterations: usize,
    pub sweeps: usize,
    /// Physical-model sum rate at the final iterate.
    pub sum_rate: f64,
    /// Sum rate implied by the auxiliary path responses Q.
    pub q_implied_sum_rate: f64,
    /// Count of {Q,P} updates rejected or infeasible (diagnostics).
    pub pq_rejections: usize,
}

/// Dual/penalty outer step: grow λ when the residual norm dropped enough,
/// otherwise shrink ρ.
/// Penalty floor: below this the block updates freeze numerically. Once it
/// is reached, the dual step runs whenever the residual still moves at all
/// (a no-op shrink would deadlock the outer loop), but not when the iterate
/// has stopped responding — unchecked multiplier growth on a frozen residual
/// diverges.
pub const RHO_FLOOR: f64 = 3e-9;

pub fn outer_update(res: &ResidualSet, duals: &mut DualState, prev_inf_norm: f64) {
    let improved = res.inf_norm <= 0.8 * prev_inf_norm;
    if improved || duals.rho <= RHO_FLOOR {
        let rho = duals.rho;
        for (l, b) in duals.lambda_u.iter_mut().zip(&res.b_u) {
            *l += b / rho;
        }
        for (l, b) in duals.lambda_theta.iter_mut().zip(&res.b_theta) {
            *l += b / rho;
        }
        for (l, b) in duals.lambda_q.iter_mut().zip(&res.b_q) {
            *l += b / rho;
        }
    } else {
        duals.rho = (0.8 * duals.rho).max(RHO_FLOOR);
    }
}

/// Physical QoS/SIC feasibility of the current iterate.
pub fn physical_feasibility(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    matching: &Matching,
    scheme: AccessScheme,
) -> PhysicalFeasibility {
    let report = scheme_rate_report(scenario, gains, power, matching, scheme);
    let gamma: Vec<f64> = report.per_user.iter().map(|u| u.sinr).collect();
    let qos_ok: Vec<bool> = report.per_user.iter().map(|u| u.qos_ok).collect();
    let sic_ok = matching
        .clusters
        .iter()
        .map(|cluster| {
            let qk = cluster.len();
            let mut ok = vec![true; qk * qk];
            if scheme == AccessScheme::Noma {
                for (pos_j, &uj) in cluster.iter().enumerate() {
                    let k = matching.waveguide_of_user[uj];
                    for (pos_g, &ug) in cluster.iter().enumerate().skip(pos_j) {
                        if pos_g == pos_j {
                            continue;
                        }
                        let g_to_j = crate::rates::sinr(
                            scenario, gains, power, matching, ug, uj, k,
                        )
                        .unwrap_or(0.0);
                        ok[pos_g * qk + pos_j] = g_to_j >= gamma[uj] * (1.0 - 1e-9);
                    }
                }
            }
            ok
        })
        .collect();
    PhysicalFeasibility {
        gamma,
        qos_ok,
        sic_ok,
    }
}

/// Sum rate implied by the Q block (τ·log₂(1+γ) with γ in Q variables).
pub fn q_implied_sum_rate(
    scenario: &Scenario,
    scales: &PddScales,
    links: &LinkStructure,
    aux: &AuxState,
) -> f64 {
    (0..scenario.num_users)
        .map(|m| {
            let own = aux.q[aux.qidx(m, m)].norm_sqr();
            let mut interf = scales.noise;
            for &g in &links.interferers[m] {
                interf += aux.q[aux.qidx(m, g)].norm_sqr();
            }
            links.time_share[m] * (1.0 + own / interf).log2()
        })
        .sum()
}

/// Run the full penalty solver for a fixed matching.
///
/// `init` provides a warm start; otherwise the uniform layout and equal
/// power split are used, with the auxiliary variables initialized to zero
/// every residual. The trace has one row per inner sweep.
pub fn pdd_solve(
    scenario: &Scenario,
    users: &UserSet,
    matching: &Matching,
    init: Option<(PowerAllocation, PinchingLayout)>,
    opts: &PddOptions,
) -> Result<PddOutcome> {
    matching.validate(scenario)?;
    let (mut power, mut layout) = match init {
        Some((p, l)) => {
            p.validate(scenario)?;
            l.validate(scenario)?;
            (p, l)
        }
        None => (
            PowerAllocation::equal_split(scenario),
            PinchingLayout::uniform(scenario),
        ),
    };

    let links = LinkStructure::build(scenario, matching, opts.scheme);
    let scales = PddScales::normalized(scenario);
    let mut geo = Geometry::compute(scenario, users, &layout);
    let mut gains = ChannelGains::compute(scenario, users, &layout);
    let mut aux = init_aux(scenario, &scales, &geo, &layout, &power, matching);
    let mut duals = DualState::zeros(&aux, scenario.rho_init);
    let mut v = EqualizerSet {
        v: vec![Complex64::new(0.0, 0.0); scenario.num_users],
    };
    let mut w = WeightSet {
        w: vec![1.0; scenario.num_users],
    };
    let user_x: Vec<f64> = users.positions.iter().map(|p| p.x).collect();
    let pq_opts = PqOptions {
        enforce_qos: opts.enforce_qos,
        enforce_sic: opts.enforce_sic,
        tol: opts.qcqp_tol,
    };

    let mut trace = Vec::new();
    let mut sweeps = 0usize;
    let mut prev_inf = f64::INFINITY;
    let mut converged = false;
    let mut final_residual = f64::INFINITY;
    let mut outer_done = 0usize;
    let mut pq_rejections = 0usize;
    let mut stagnant_outers = 0usize;
    let mut best: Option<(f64, PowerAllocation, PinchingLayout, f64, f64)> = None;

    'outer: for outer in 0..opts.outer_cap {
        let mut al_prev = f64::INFINITY;
        for _ in 0..opts.inner_cap {
            aux::refresh_equalizers_weights(scenario, &scales, &links, &aux, &mut v, &mut w);

            // Physical feasibility snapshot of the previous iterate: its
            // own-signal SINRs set the SIC floors, and constraints the
            // physics currently violates are left to the report flags.
            let phys = physical_feasibility(scenario, &gains, &power, matching, opts.scheme);
            let report = solve_pq(
                scenario, &scales, &links, matching, &mut aux, &mut power, &v, &w, &duals,
                &phys, &pq_opts,
            )?;
            if !report.accepted {
                pq_rejections += 1;
            }

            if opts.optimize_layout {
                layout = solve_x(scenario, &scales, &geo, &layout, &aux, &duals, &user_x)?;
                geo = Geometry::compute(scenario, users, &layout);
                gains = ChannelGains::compute(scenario, users, &layout);
            }

            solve_u(&scales, &geo, matching, &power, &mut aux, &duals);
            solve_theta(scenario, &scales, &geo, &layout.x, &mut aux, &duals);

            let res = residuals(scenario, &scales, &geo, &layout, &power, matching, &aux)?;
            let al =
                al_objective(scenario, &scales, &links, matching, &aux, &v, &w, &res, &duals);
            sweeps += 1;
            let phys = scheme_rate_report(scenario, &gains, &power, matching, opts.scheme);
            trace.push(TraceRow {
                outer,
                sweep: sweeps,
                al,
                sum_rate: phys.sum_rate,
                residual_inf: res.inf_norm,
                rho: duals.rho,
            });

            if al_prev.is_finite() {
                let decrement = (al_prev - al) / al_prev.abs().max(1.0);
                if decrement < scenario.eps_inner {
                    break;
                }
            }
            al_prev = al;
        }

        let res = residuals(scenario, &scales, &geo, &layout, &power, matching, &aux)?;
        final_residual = res.inf_norm;
        outer_done = outer + 1;
        let is_best = best.as_ref().map_or(true, |(b, ..)| res.inf_norm < *b);
        if is_best {
            let phys = scheme_rate_report(scenario, &gains, &power, matching, opts.scheme);
            best = Some((
                res.inf_norm,
                power.clone(),
                layout.clone(),
                phys.sum_rate,
                q_implied_sum_rate(scenario, &scales, &links, &aux),
            ));
        }
        if res.inf_norm < scenario.eps_outer {
            // Residual threshold met; additionally require the Q-implied and
            // physical rates to agree before declaring convergence, since a
            // q-block residual at the threshold can still move interference
            // terms that sit near the noise floor.
            let phys = scheme_rate_report(scenario, &gains, &power, matching, opts.scheme);
            let q_rate = q_implied_sum_rate(scenario, &scales, &links, &aux);
            if (phys.sum_rate - q_rate).abs() < 5e-4 {
                converged = true;
                break 'outer;
            }
        }
        let best_res = best.as_ref().map_or(f64::INFINITY, |(b, ..)| *b);
        if duals.rho <= RHO_FLOOR {
            // At the floor the only remaining mechanism is dual ascent. A
            // residual that stops responding (or runs away as multipliers
            // accumulate) marks the block fixed point for this instance.
            let flat = (prev_inf - res.inf_norm).abs() <= 1e-3 * prev_inf.min(res.inf_norm);
            let diverging = res.inf_norm > 10.0 * best_res;
            if flat {
                stagnant_outers += 1;
            } else {
                stagnant_outers = 0;
            }
            if stagnant_outers >= 20 || diverging {
                break 'outer;
            }
        } else {
            stagnant_outers = 0;
        }
        outer_update(&res, &mut duals, prev_inf);
        prev_inf = res.inf_norm;
    }

    if !converged {
        // Return the best feasible iterate seen rather than wherever the
        // last dual/penalty action left the state.
        if let Some((res, p_best, l_best, rate, q_rate)) = best {
            return Ok(PddOutcome {
                sum_rate: rate,
                q_implied_sum_rate: q_rate,
                power: p_best,
                layout: l_best,
                trace,
                converged: false,
                final_residual: res,
                outer_iterations: outer_done,
                sweeps,
                pq_rejections,
            });
        }
    }
    let phys = scheme_rate_report(scenario, &gains, &power, matching, opts.scheme);
    Ok(PddOutcome {
        sum_rate: phys.sum_rate,
        q_implied_sum_rate: q_implied_sum_rate(scenario, &scales, &links, &aux),
        power,
        layout,
        trace,
        converged,
        final_residual,
        outer_iterations: outer_done,
        sweeps,
        pq_rejections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{decoding_order, OrderMode};
    use crate::scenario::{sample_users, ScenarioParams};

    fn scenario(n: usize, m: usize) -> Scenario {
        ScenarioParams {
            pas_per_waveguide: n,
            num_users: m,
            ..Default::default()
        }
        .build()
        .unwrap()
    }

    fn ordered_matching(s: &Scenario, users: &UserSet, layout: &PinchingLayout) -> Matching {
        let gains = ChannelGains::compute(s, users, layout);
        let power = PowerAllocation::equal_split(s);
        let assignment: Vec<usize> =
            (0..s.num_users).map(|u| u % s.num_waveguides).collect();
        let mut matching = Matching::from_assignment(&assignment, s.num_waveguides).unwrap();
        decoding_order(s, &gains, &power, &mut matching, OrderMode::GainSorted);
        matching
    }

    #[test]
    fn outer_update_dual_branch() {
        let s = scenario(2, 2);
        let users = sample_users(&s, 1);
        let layout = PinchingLayout::uniform(&s);
        let power = PowerAllocation::equal_split(&s);
        let matching = ordered_matching(&s, &users, &layout);
        let geo = Geometry::compute(&s, &users, &layout);
        let sc = PddScales::physical(&s);
        let mut aux = init_aux(&s, &sc, &geo, &layout, &power, &matching);
        aux.u[0] += Complex64::new(0.07, 0.0) / geo.dist(0, 0, 0);
        let mut duals = DualState::zeros(&aux, 1e-4);
        let res = residuals(&s, &sc, &geo, &layout, &power, &matching, &aux).unwrap();
        // 0.07-ish residual after a 0.10 previous: dual update, rho kept.
        outer_update(&res, &mut duals, 0.10);
        assert_eq!(duals.rho, 1e-4);
        assert!(duals.lambda_u[0].norm() > 0.0);
    }

    #[test]
    fn outer_update_penalty_branch() {
        let s = scenario(2, 2);
        let users = sample_users(&s, 2);
        let layout = PinchingLayout::uniform(&s);
        let power = PowerAllocation::equal_split(&s);
        let matching = ordered_matching(&s, &users, &layout);
        let geo = Geometry::compute(&s, &users, &layout);
        let sc = PddScales::physical(&s);
        let mut aux = init_aux(&s, &sc, &geo, &layout, &power, &matching);
        aux.u[0] += Complex64::new(0.09, 0.0) / geo.dist(0, 0, 0);
        let mut duals = DualState::zeros(&aux, 1e-4);
        let res = residuals(&s, &sc, &geo, &layout, &power, &matching, &aux).unwrap();
        // 0.09 after 0.10: not enough decrease, shrink rho, keep duals.
        outer_update(&res, &mut duals, 0.10);
        assert!((duals.rho - 0.8e-4).abs() < 1e-15);
        assert!(duals.lambda_u.iter().all(|l| l.norm() == 0.0));
    }

    #[test]
    fn outer_update_zero_residual_noop() {
        let s = scenario(2, 2);
        let users = sample_users(&s, 3);
        let layout = PinchingLayout::uniform(&s);
        let power = PowerAllocation::equal_split(&s);
        let matching = ordered_matching(&s, &users, &layout);
        let geo = Geometry::compute(&s, &users, &layout);
        let sc = PddScales::physical(&s);
        let aux = init_aux(&s, &sc, &geo, &layout, &power, &matching);
        let mut duals = DualState::zeros(&aux, 1e-4);
        let res = residuals(&s, &sc, &geo, &layout, &power, &matching, &aux).unwrap();
        outer_update(&res, &mut duals, 0.10);
        assert_eq!(duals.rho, 1e-4);
        // Residuals are definitional zeros up to round-off, so the dual step
        // B/ρ moves λ by at most that round-off.
        assert!(duals.lambda_u.iter().all(|l| l.norm() < 1e-12));
        assert!(duals.lambda_theta.iter().all(|l| l.abs() < 1e-12));
    }

    #[test]
    fn small_instance_converges_and_traces_monotone_inner_al() {
        let s = ScenarioParams {
            pas_per_waveguide: 2,
            num_users: 2,
            ..Default::default()
        }
        .build()
        .unwrap();
        let users = sample_users(&s, 7);
        let layout = PinchingLayout::uniform(&s);
        let matching = ordered_matching(&s, &users, &layout);
        let out = pdd_solve(&s, &users, &matching, None, &PddOptions::default()).unwrap();
        assert!(out.converged, "residual {}", out.final_residual);
        assert!(out.final_residual < s.eps_outer);
        // AL monotone within each inner loop.
        for pair in out.trace.windows(2) {
            if pair[0].outer == pair[1].outer {
                assert!(
                    pair[1].al <= pair[0].al + 1e-10 * pair[0].al.abs().max(1.0),
                    "AL rose within inner loop: {} -> {}",
                    pair[0].al,
                    pair[1].al
                );
            }
        }
        // Physical and Q-implied rates agree at convergence.
        assert!(
            (out.sum_rate - out.q_implied_sum_rate).abs() < 1e-3,
            "physical {} vs q-implied {}",
            out.sum_rate,
            out.q_implied_sum_rate
        );
        // Feasibility of the returned iterate.
        out.layout.validate(&s).unwrap();
        out.power.validate(&s).unwrap();
    }

    #[test]
    fn layout_frozen_when_disabled() {
        let s = scenario(4, 3);
        let users = sample_users(&s, 9);
        let layout = PinchingLayout::uniform(&s);
        let matching = ordered_matching(&s, &users, &layout);
        let opts = PddOptions {
            optimize_layout: false,
            outer_cap: 5,
            ..Default::default()
        };
        let out = pdd_solve(&s, &users, &matching, None, &opts).unwrap();
        assert_eq!(out.layout, PinchingLayout::uniform(&s));
    }
}
