//! Joint path-response / power block: a convex QCQP over (Q, s) with s = √p,
//! minimizing the weighted MSE terms plus the q-consistency penalty subject
//! to the power budget and the SCA-linearized QoS and SIC constraints.
//!
//! The SINR constraints are nonconvex in Q; each |q|² on the favorable side
//! is replaced by its first-order Taylor lower bound at the previous iterate
//! (2Re{q⁰*q} − |q⁰|²), and the SIC ratio floor uses the physical SINR of the
//! previous inner iterate. When the linearized set turns out infeasible, or
//! the solution would raise the AL, the block keeps the previous point and
//! lets the other blocks make progress.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernel::{solve_qcqp, QcqpProblem, QuadForm, Tolerance};
use crate::rates::Matching;
use crate::scenario::{PowerAllocation, Scenario};
use crate::wmmse::{EqualizerSet, WeightSet};

use super::aux::{AuxState, DualState, PddScales};
use super::model::{AccessScheme, LinkStructure};

#[derive(Debug, Clone, Copy)]
pub struct PqOptions {
    pub enforce_qos: bool,
    pub enforce_sic: bool,
    pub tol: Tolerance,
}

/// Physical-model feasibility snapshot of the previous inner iterate: which
/// QoS/SIC constraints the physics currently satisfies. Rows the physics
/// violates cannot be repaired inside the Q-block (pinning them just locks a
/// permanent consistency gap), so they are reported through the rate flags
/// instead of being enforced in Q-space.
#[derive(Debug, Clone)]
pub struct PhysicalFeasibility {
    /// Own-signal SINR per user.
    pub gamma: Vec<f64>,
    /// Per user: physical rate meets the QoS floor.
    pub qos_ok: Vec<bool>,
    /// Per cluster, row-major (pos_g, pos_j): γ_{g→j} ≥ γ_{j→j} physically.
    pub sic_ok: Vec<Vec<bool>>,
}

impl Default for PqOptions {
    fn default() -> Self {
        Self {
            enforce_qos: true,
            enforce_sic: true,
            tol: Tolerance::default(),
        }
    }
}

/// Outcome statistics of one {Q, P} block update.
#[derive(Debug, Clone, Copy)]
pub struct PqReport {
    /// Whether the candidate replaced the previous iterate.
    pub accepted: bool,
    /// Linearized feasible set was empty; previous iterate kept.
    pub infeasible: bool,
    pub kkt_residual: f64,
    /// Objective value (Q,P-dependent AL terms) after the update.
    pub objective: f64,
    /// QoS/SIC rows skipped because the expansion point violated them.
    pub rows_dropped: usize,
}

struct VarMap {
    num_users: usize,
}

impl VarMap {
    #[inline]
    fn qr(&self, m: usize, g: usize) -> usize {
        2 * (m * self.num_users + g)
    }
    #[inline]
    fn qi(&self, m: usize, g: usize) -> usize {
        2 * (m * self.num_users + g) + 1
    }
    #[inline]
    fn s(&self, g: usize) -> usize {
        2 * self.num_users * self.num_users + g
    }
    #[inline]
    fn len(&self) -> usize {
        2 * self.num_users * self.num_users + self.num_users
    }
}

/// Assemble the QCQP for the current state. `gamma_prev[m]` is the
/// physical own-signal SINR of user m at the previous inner iterate.
#[allow(clippy::too_many_arguments)]
fn assemble(
    scenario: &Scenario,
    scales: &PddScales,
    links: &LinkStructure,
    matching: &Matching,
    aux: &AuxState,
    v: &EqualizerSet,
    w: &WeightSet,
    duals: &DualState,
    phys: &PhysicalFeasibility,
    opts: &PqOptions,
) -> (QcqpProblem, Vec<f64>, usize) {
    let mu = scenario.num_users;
    let vm = VarMap { num_users: mu };
    let n = vm.len();
    let sigma2 = scales.noise;
    let pen = 1.0 / (2.0 * duals.rho);

    let mut p = vec![0.0; n * n];
    let mut c = vec![0.0; n];
    let mut d = 0.0;

    // Weighted MSE terms.
    for m in 0..mu {
        let tw = links.time_share[m] * w.w[m];
        let vmc = v.v[m];
        let vsq = vmc.norm_sqr();
        let mut add_quad = |g: usize| {
            let re = vm.qr(m, g);
            let im = vm.qi(m, g);
            p[re * n + re] += 2.0 * tw * vsq;
            p[im * n + im] += 2.0 * tw * vsq;
        };
        add_quad(m);
        for &g in &links.interferers[m] {
            add_quad(g);
        }
        c[vm.qr(m, m)] += -2.0 * tw * vmc.re;
        c[vm.qi(m, m)] += 2.0 * tw * vmc.im;
        d += tw * (1.0 + vsq * sigma2) - links.time_share[m] * w.w[m].log2();
    }

    // Consistency penalty (1/2ρ)·|q − s_g·U + ρλ_q|² for every (m, g).
    for m in 0..mu {
        for g in 0..mu {
            let i = matching.waveguide_of_user[g];
            let u_sum: Complex64 = (0..aux.pas).map(|nn| aux.u[aux.uidx(m, i, nn)]).sum();
            let lam = duals.rho * duals.lambda_q[aux.qidx(m, g)];
            let (re, im, s) = (vm.qr(m, g), vm.qi(m, g), vm.s(g));
            p[re * n + re] += 2.0 * pen;
            p[im * n + im] += 2.0 * pen;
            p[s * n + s] += 2.0 * pen * u_sum.norm_sqr();
            p[re * n + s] += -2.0 * pen * u_sum.re;
            p[s * n + re] += -2.0 * pen * u_sum.re;
            p[im * n + s] += -2.0 * pen * u_sum.im;
            p[s * n + im] += -2.0 * pen * u_sum.im;
            c[re] += 2.0 * pen * lam.re;
            c[im] += 2.0 * pen * lam.im;
            c[s] += -2.0 * pen * (u_sum.re * lam.re + u_sum.im * lam.im);
            d += pen * lam.norm_sqr();
        }
    }

    let mut constraints = Vec::new();

    // Power budget Σ s² ≤ P_max.
    {
        let mut pc = vec![0.0; n * n];
        for g in 0..mu {
            let s = vm.s(g);
            pc[s * n + s] = 2.0;
        }
        constraints.push(QuadForm {
            p: pc,
            c: vec![0.0; n],
            d: -scenario.p_max,
        });
    }
    // s_g ≥ 0.
    for g in 0..mu {
        let mut lc = vec![0.0; n];
        lc[vm.s(g)] = -1.0;
        constraints.push(QuadForm::linear(lc, 0.0));
    }

    // Linearized QoS: 2Re{q⁰*q} − |q⁰|² ≥ floor·(interference + σ²). A row
    // whose expansion point already violates it cannot be linearized from
    // here (the warm start would be infeasible and every step rejected), so
    // it is dropped for this sweep and revisited at the next expansion.
    let mut dropped = 0usize;
    if opts.enforce_qos {
        for m in 0..mu {
            let floor = links.sinr_floor[m];
            if floor <= 0.0 {
                continue;
            }
            if !phys.qos_ok[m] {
                dropped += 1;
                continue;
            }
            let q0 = aux.q[aux.qidx(m, m)];
            let interference: f64 = links.interferers[m]
                .iter()
                .map(|&g| aux.q[aux.qidx(m, g)].norm_sqr())
                .sum();
            if q0.norm_sqr() < floor * (interference + sigma2) {
                dropped += 1;
                continue;
            }
            let mut pc = vec![0.0; n * n];
            for &g in &links.interferers[m] {
                let re = vm.qr(m, g);
                let im = vm.qi(m, g);
                pc[re * n + re] += 2.0 * floor;
                pc[im * n + im] += 2.0 * floor;
            }
            let mut lc = vec![0.0; n];
            lc[vm.qr(m, m)] = -2.0 * q0.re;
            lc[vm.qi(m, m)] = -2.0 * q0.im;
            constraints.push(QuadForm {
                p: pc,
                c: lc,
                d: q0.norm_sqr() + floor * sigma2,
            });
        }
    }

    // Linearized SIC: for each cluster, every later-decoded user g must hold
    // the earlier user j's signal at the previous own-SINR of j.
    if opts.enforce_sic && links.scheme == AccessScheme::Noma {
        for (k, cluster) in matching.clusters.iter().enumerate() {
            let qk = cluster.len();
            for (pos_j, &uj) in cluster.iter().enumerate() {
                // The hair of slack keeps the expansion point strictly
                // interior (the g = j row is tight there by construction), so
                // the barrier method can move at all.
                let floor = phys.gamma[uj] * (1.0 - 1e-6);
                if floor <= 0.0 {
                    continue;
                }
                for (pos_g, &ug) in cluster.iter().enumerate().skip(pos_j) {
                    if !phys.sic_ok[k][pos_g * qk + pos_j] {
                        dropped += 1;
                        continue;
                    }
                    let q0 = aux.q[aux.qidx(ug, uj)];
                    // Same expansion-feasibility rule as the QoS rows.
                    let mut interference = sigma2;
                    for &ujp in &cluster[pos_j + 1..] {
                        interference += aux.q[aux.qidx(ug, ujp)].norm_sqr();
                    }
                    for (kp, other) in matching.clusters.iter().enumerate() {
                        if kp == matching.waveguide_of_user[ug] {
                            continue;
                        }
                        for &t in other {
                            interference += aux.q[aux.qidx(ug, t)].norm_sqr();
                        }
                    }
                    if q0.norm_sqr() < floor * interference {
                        dropped += 1;
                        continue;
                    }
                    let mut pc = vec![0.0; n * n];
                    for &ujp in &cluster[pos_j + 1..] {
                        let re = vm.qr(ug, ujp);
                        let im = vm.qi(ug, ujp);
                        pc[re * n + re] += 2.0 * floor;
                        pc[im * n + im] += 2.0 * floor;
                    }
                    for (kp, other) in matching.clusters.iter().enumerate() {
                        if kp == matching.waveguide_of_user[ug] {
                            continue;
                        }
                        for &t in other {
                            let re = vm.qr(ug, t);
                            let im = vm.qi(ug, t);
                            pc[re * n + re] += 2.0 * floor;
                            pc[im * n + im] += 2.0 * floor;
                        }
                    }
                    let mut lc = vec![0.0; n];
                    lc[vm.qr(ug, uj)] = -2.0 * q0.re;
                    lc[vm.qi(ug, uj)] = -2.0 * q0.im;
                    constraints.push(QuadForm {
                        p: pc,
                        c: lc,
                        d: q0.norm_sqr() + floor * sigma2,
                    });
                }
            }
        }
    }

    // Warm start at the previous iterate.
    let mut x0 = vec![0.0; n];
    for m in 0..mu {
        for g in 0..mu {
            let q = aux.q[aux.qidx(m, g)];
            x0[vm.qr(m, g)] = q.re;
            x0[vm.qi(m, g)] = q.im;
        }
    }
    (
        QcqpProblem {
            n,
            objective: QuadForm { p, c, d },
            constraints,
            // One block of 2M real variables per receiving user, coupled
            // only through the M amplitude variables s.
            arrow: Some(crate::kernel::qcqp::ArrowPattern {
                block_len: 2 * mu,
                num_blocks: mu,
                border_len: mu,
            }),
        },
        x0,
        dropped,
    )
}

/// One {Q, P} block update. Mutates `aux.q` and `power` only when the
/// candidate does not increase the (Q,P)-dependent AL terms.
#[allow(clippy::too_many_arguments)]
pub fn solve_pq(
    scenario: &Scenario,
    scales: &PddScales,
    links: &LinkStructure,
    matching: &Matching,
    aux: &mut AuxState,
    power: &mut PowerAllocation,
    v: &EqualizerSet,
    w: &WeightSet,
    duals: &DualState,
    phys: &PhysicalFeasibility,
    opts: &PqOptions,
) -> Result<PqReport> {
    let mu = scenario.num_users;
    let vm = VarMap { num_users: mu };
    let (problem, mut x0, rows_dropped) = assemble(
        scenario, scales, links, matching, aux, v, w, duals, phys, opts,
    );
    // Strictly interior warm start: zero powers would pin the start on the
    // s ≥ 0 boundary and a saturated budget on the power constraint, forcing
    // a phase-one solve whose interior answer always loses to the boundary
    // point. The nudges move the AL by less than the acceptance slack.
    let eps_s = 1e-8 * scenario.p_max.sqrt();
    let mut s_sq = 0.0;
    for g in 0..mu {
        let sv = power.p[g].sqrt().max(eps_s);
        x0[vm.s(g)] = sv;
        s_sq += sv * sv;
    }
    let budget = scenario.p_max * (1.0 - 1e-12);
    if s_sq > budget {
        let shrink = (budget / s_sq).sqrt();
        for g in 0..mu {
            x0[vm.s(g)] *= shrink;
        }
    }
    let baseline = problem.objective.eval(&x0);

    let sol = match solve_qcqp(&problem, Some(&x0), &opts.tol) {
        Ok(sol) => sol,
        Err(Error::Infeasible { max_violation }) => {
            if std::env::var("WDPASS_PQ_DEBUG").is_ok() {
                eprintln!("PQDBG infeasible: viol={max_violation:.3e}");
            }
            return Ok(PqReport {
                accepted: false,
                infeasible: true,
                kkt_residual: f64::NAN,
                objective: baseline,
                rows_dropped,
            })
        }
        Err(Error::MaxIterations { .. }) => {
            return Ok(PqReport {
                accepted: false,
                infeasible: false,
                kkt_residual: f64::NAN,
                objective: baseline,
                rows_dropped,
            })
        }
        Err(e) => return Err(e),
    };

    if sol.objective > baseline + 1e-10 * baseline.abs().max(1.0) {
        if let Ok(path) = std::env::var("WDPASS_PQ_DUMP") {
            if !std::path::Path::new(&path).exists() && sol.objective - baseline > 1.0 {
                let mut out = String::new();
                out.push_str(&format!("{} {}\n", problem.n, problem.constraints.len()));
                if let Some(a) = problem.arrow {
                    out.push_str(&format!("arrow {} {} {}\n", a.block_len, a.num_blocks, a.border_len));
                } else {
                    out.push_str("dense\n");
                }
                let dump_form = |out: &mut String, q: &crate::kernel::QuadForm| {
                    out.push_str(&format!("{}\n", q.p.len()));
                    for v in &q.p { out.push_str(&format!("{v:.17e} ")); }
                    out.push('\n');
                    for v in &q.c { out.push_str(&format!("{v:.17e} ")); }
                    out.push('\n');
                    out.push_str(&format!("{:.17e}\n", q.d));
                };
                dump_form(&mut out, &problem.objective);
                for con in &problem.constraints { dump_form(&mut out, con); }
                for v in &x0 { out.push_str(&format!("{v:.17e} ")); }
                out.push('\n');
                let _ = std::fs::write(&path, out);
            }
        }
        if std::env::var("WDPASS_PQ_DEBUG").is_ok() {
            eprintln!(
                "PQDBG reject: sol={:.9e} base={:.9e} diff={:.3e} kkt={:.2e} viol={:.2e}",
                sol.objective,
                baseline,
                sol.objective - baseline,
                sol.kkt_residual,
                sol.max_violation
            );
        }
        return Ok(PqReport {
            accepted: false,
            infeasible: false,
            kkt_residual: sol.kkt_residual,
            objective: baseline,
            rows_dropped,
        });
    }

    for m in 0..mu {
        for g in 0..mu {
            let idx = aux.qidx(m, g);
            aux.q[idx] = Complex64::new(sol.x[vm.qr(m, g)], sol.x[vm.qi(m, g)]);
        }
    }
    for g in 0..mu {
        let s = sol.x[vm.s(g)].max(0.0);
        power.p[g] = s * s;
    }
    Ok(PqReport {
        accepted: true,
        infeasible: false,
        kkt_residual: sol.kkt_residual,
        objective: sol.objective,
        rows_dropped,
    })
}
