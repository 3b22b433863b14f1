//! Reference schemes: fixed-position ULA with digital beamforming, random
//! PA placement, per-cluster TDMA, and exhaustive user-to-waveguide search.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pdd::{pdd_solve, AccessScheme, PddOptions, PddOutcome};
use crate::rates::{decoding_order, Matching, OrderMode, RateReport, UserRate};
use crate::scenario::{ChannelGains, PinchingLayout, Point3, PowerAllocation, Scenario, UserSet};
use crate::scheduling::{init_matching, swap_matching, SwapOptions};

/// Fixed uniform linear array along the y-axis at half-wavelength spacing,
/// one antenna per waveguide, centered on the feed line.
#[derive(Debug, Clone)]
pub struct UlaConfig {
    pub positions: Vec<Point3>,
}

impl UlaConfig {
    pub fn new(scenario: &Scenario) -> Self {
        let k = scenario.num_waveguides;
        let spacing = scenario.wavelength / 2.0;
        let positions = (0..k)
            .map(|a| {
                let y = (a as f64 - (k as f64 - 1.0) / 2.0) * spacing;
                Point3::new(0.0, y, scenario.height)
            })
            .collect();
        Self { positions }
    }

    /// Free-space LoS channel from the array to a user (η·e^{−jκd}/d per
    /// antenna; no waveguide phase).
    pub fn channel(&self, scenario: &Scenario, user: &Point3) -> Vec<Complex64> {
        self.positions
            .iter()
            .map(|p| {
                let d = user.dist(p);
                Complex64::from_polar(scenario.eta / d, -scenario.kappa * d)
            })
            .collect()
    }
}

/// Per-user beamforming vectors for the ULA reference.
#[derive(Debug, Clone)]
pub struct Beamformers {
    /// w[m] ∈ ℂ^K.
    pub w: Vec<Vec<Complex64>>,
}

fn dot(h: &[Complex64], w: &[Complex64]) -> Complex64 {
    h.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Signals that interfere with user m decoding its own stream under NOMA:
/// same-cluster users decoded later, plus every other cluster.
fn ula_interferers(matching: &Matching, m: usize) -> Vec<usize> {
    let k = matching.waveguide_of_user[m];
    let pos = matching.decode_position(m);
    let mut out: Vec<usize> = matching.clusters[k][pos + 1..].to_vec();
    for (kp, cluster) in matching.clusters.iter().enumerate() {
        if kp != k {
            out.extend_from_slice(cluster);
        }
    }
    out
}

fn ula_rate_report(
    scenario: &Scenario,
    channels: &[Vec<Complex64>],
    beams: &Beamformers,
    matching: &Matching,
) -> RateReport {
    let mut per_user: Vec<UserRate> = (0..scenario.num_users)
        .map(|m| UserRate {
            user: m,
            waveguide: matching.waveguide_of_user[m],
            position: matching.decode_position(m),
            sinr: 0.0,
            rate: 0.0,
            qos_ok: false,
            sic_ok: true,
        })
        .collect();
    let mut cluster_sum = vec![0.0; scenario.num_waveguides];
    for m in 0..scenario.num_users {
        let own = dot(&channels[m], &beams.w[m]).norm_sqr();
        let mut interf = scenario.noise_power;
        for g in ula_interferers(matching, m) {
            interf += dot(&channels[m], &beams.w[g]).norm_sqr();
        }
        let gamma = own / interf;
        let rate = (1.0 + gamma).log2();
        per_user[m].sinr = gamma;
        per_user[m].rate = rate;
        per_user[m].qos_ok = rate >= scenario.r_min;
        cluster_sum[matching.waveguide_of_user[m]] += rate;
    }
    RateReport {
        sum_rate: cluster_sum.iter().sum(),
        per_user,
        cluster_sum,
    }
}

/// Iterative WMMSE transmit beamforming under the NOMA interference
/// structure: scalar equalizer and weight updates, then per-stream MMSE
/// beamformers with a bisected power multiplier.
fn wmmse_beamforming(
    scenario: &Scenario,
    channels: &[Vec<Complex64>],
    matching: &Matching,
    iterations: usize,
) -> Beamformers {
    let mu = scenario.num_users;
    let k = scenario.num_waveguides;
    // Matched-filter start at equal power.
    let mut w: Vec<Vec<Complex64>> = (0..mu)
        .map(|m| {
            let norm = channels[m].iter().map(|h| h.norm_sqr()).sum::<f64>().sqrt();
            let scale = (scenario.p_max / mu as f64).sqrt() / norm.max(1e-30);
            channels[m].iter().map(|h| h.conj() * scale).collect()
        })
        .collect();

    for _ in 0..iterations {
        // Scalar MMSE equalizers and weights.
        let mut v = vec![Complex64::new(0.0, 0.0); mu];
        let mut om = vec![1.0; mu];
        for m in 0..mu {
            let own = dot(&channels[m], &w[m]);
            let mut total = own.norm_sqr() + scenario.noise_power;
            for g in ula_interferers(matching, m) {
                total += dot(&channels[m], &w[g]).norm_sqr();
            }
            v[m] = own.conj() / total;
            let j = total - own.norm_sqr();
            om[m] = 1.0 + own.norm_sqr() / j;
        }
        // Beamformers: w_g = (A_g + μI)⁻¹ h_g* ω_g v_g*, with μ bisected to
        // meet the power budget. A_g sums ω|v|² h h^H over every user that
        // hears stream g as own-or-interference.
        let hears_g = |g: usize, m: usize| -> bool {
            m == g || ula_interferers(matching, m).contains(&g)
        };
        let solve_all = |mu_reg: f64, w_out: &mut Vec<Vec<Complex64>>| {
            for g in 0..mu {
                let mut a = vec![Complex64::new(0.0, 0.0); k * k];
                for m in 0..mu {
                    if !hears_g(g, m) {
                        continue;
                    }
                    let coef = om[m] * v[m].norm_sqr();
                    for r in 0..k {
                        for c in 0..k {
                            a[r * k + c] += coef * channels[m][r].conj() * channels[m][c];
                        }
                    }
                }
                for r in 0..k {
                    a[r * k + r] += Complex64::new(mu_reg, 0.0);
                }
                let rhs: Vec<Complex64> = (0..k)
                    .map(|r| channels[g][r].conj() * om[g] * v[g].conj())
                    .collect();
                w_out[g] = solve_hermitian(&a, k, &rhs);
            }
        };
        let power_used = |w: &Vec<Vec<Complex64>>| -> f64 {
            w.iter()
                .map(|wg| wg.iter().map(|x| x.norm_sqr()).sum::<f64>())
                .sum()
        };
        let mut cand = w.clone();
        solve_all(0.0, &mut cand);
        if power_used(&cand) <= scenario.p_max {
            w = cand;
        } else {
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            loop {
                solve_all(hi, &mut cand);
                if power_used(&cand) <= scenario.p_max {
                    break;
                }
                hi *= 10.0;
                if hi > 1e18 {
                    break;
                }
            }
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                solve_all(mid, &mut cand);
                if power_used(&cand) > scenario.p_max {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            solve_all(hi, &mut cand);
            w = cand;
        }
    }
    Beamformers { w }
}

/// Dense Hermitian solve via Gaussian elimination with partial pivoting
/// (K is 3 here; no need for anything fancier).
fn solve_hermitian(a: &[Complex64], n: usize, b: &[Complex64]) -> Vec<Complex64> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r * n + col].norm() > m[piv * n + col].norm() {
                piv = r;
            }
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            x.swap(col, piv);
        }
        let d = m[col * n + col];
        if d.norm() < 1e-300 {
            continue;
        }
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            for c in col..n {
                let v = m[col * n + c];
                m[r * n + c] -= f * v;
            }
            let xv = x[col];
            x[r] -= f * xv;
        }
    }
    for col in (0..n).rev() {
        let d = m[col * n + col];
        if d.norm() < 1e-300 {
            x[col] = Complex64::new(0.0, 0.0);
            continue;
        }
        let mut acc = x[col];
        for c in col + 1..n {
            acc -= m[col * n + c] * x[c];
        }
        x[col] = acc / d;
    }
    x
}

/// ULA matching: deferred acceptance on channel norms, then the swap loop
/// evaluated under fixed matched-filter beams, then a final beam design.
pub fn fixed_ula_sumrate(scenario: &Scenario, users: &UserSet) -> Result<(Matching, RateReport)> {
    let ula = UlaConfig::new(scenario);
    let channels: Vec<Vec<Complex64>> = users
        .positions
        .iter()
        .map(|u| ula.channel(scenario, u))
        .collect();
    // Fake per-"waveguide" gains from the array norm; identical across
    // clusters so the deferred acceptance spreads users by quota.
    let gains = ChannelGains {
        c: channels
            .iter()
            .map(|h| {
                let norm: f64 = h.iter().map(|x| x.norm_sqr()).sum::<f64>();
                vec![Complex64::new(norm.sqrt(), 0.0); scenario.num_waveguides]
            })
            .collect(),
    };
    let power = PowerAllocation::equal_split(scenario);
    let initial = init_matching(scenario, &gains, &power)?;

    // Swap scan with beams fixed at the current design; rebuild the beams
    // once a stable matching is found.
    let mut matching = initial;
    let mut beams = wmmse_beamforming(scenario, &channels, &matching, 40);
    for _round in 0..4 {
        let mut changed = false;
        'scan: loop {
            let report = ula_rate_report(scenario, &channels, &beams, &matching);
            for m in 0..scenario.num_users {
                for j in m + 1..scenario.num_users {
                    let (k, i) = (
                        matching.waveguide_of_user[m],
                        matching.waveguide_of_user[j],
                    );
                    if k == i {
                        continue;
                    }
                    let mut cand = matching.swapped(m, j);
                    sort_by_norm(&channels, &mut cand);
                    let after = ula_rate_report(scenario, &channels, &beams, &cand);
                    let before_vals = [
                        report.per_user[m].rate,
                        report.per_user[j].rate,
                        report.cluster_sum[k],
                        report.cluster_sum[i],
                    ];
                    let after_vals = [
                        after.per_user[m].rate,
                        after.per_user[j].rate,
                        after.cluster_sum[k],
                        after.cluster_sum[i],
                    ];
                    if after_vals.iter().zip(&before_vals).all(|(a, b)| a >= b)
                        && after_vals.iter().zip(&before_vals).any(|(a, b)| a > b)
                    {
                        matching = cand;
                        changed = true;
                        continue 'scan;
                    }
                }
            }
            break;
        }
        beams = wmmse_beamforming(scenario, &channels, &matching, 60);
        if !changed {
            break;
        }
    }
    let report = ula_rate_report(scenario, &channels, &beams, &matching);
    Ok((matching, report))
}

fn sort_by_norm(channels: &[Vec<Complex64>], matching: &mut Matching) {
    for cluster in matching.clusters.iter_mut() {
        cluster.sort_by(|&a, &b| {
            let na: f64 = channels[a].iter().map(|x| x.norm_sqr()).sum();
            let nb: f64 = channels[b].iter().map(|x| x.norm_sqr()).sum();
            na.partial_cmp(&nb).unwrap().then(a.cmp(&b))
        });
    }
}

/// Uniformly sample a feasible sorted layout: order statistics on
/// [0, L − (N−1)Δ] shifted by the spacing ladder.
pub fn random_layout(scenario: &Scenario, seed: u64) -> PinchingLayout {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = scenario.pas_per_waveguide;
    let span = scenario.waveguide_len - scenario.min_spacing * (n as f64 - 1.0);
    let x = (0..scenario.num_waveguides)
        .map(|_| {
            let mut base: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..span)).collect();
            base.sort_by(|a, b| a.partial_cmp(b).unwrap());
            base.iter()
                .enumerate()
                .map(|(i, &b)| b + scenario.min_spacing * i as f64)
                .collect()
        })
        .collect();
    PinchingLayout { x }
}

/// Random-placement reference: draw X, schedule with the swap loop, then run
/// the power/path-response machinery with the layout frozen.
pub fn rpp_solve(
    scenario: &Scenario,
    users: &UserSet,
    seed: u64,
) -> Result<(Matching, PddOutcome)> {
    let layout = random_layout(scenario, seed);
    layout.validate(scenario)?;
    let power = PowerAllocation::equal_split(scenario);
    let gains = ChannelGains::compute(scenario, users, &layout);
    let initial = init_matching(scenario, &gains, &power)?;
    let stable = swap_matching(
        scenario,
        &gains,
        &power,
        &initial,
        &SwapOptions::for_scenario(scenario),
    )?;
    let opts = PddOptions {
        optimize_layout: false,
        ..Default::default()
    };
    let out = pdd_solve(scenario, users, &stable.matching, Some((power, layout)), &opts)?;
    Ok((stable.matching, out))
}

/// TDMA reference: the same matching/PDD pipeline with the TDMA rate model.
pub fn oma_solve(scenario: &Scenario, users: &UserSet) -> Result<(Matching, PddOutcome)> {
    let layout = PinchingLayout::uniform(scenario);
    let power = PowerAllocation::equal_split(scenario);
    let gains = ChannelGains::compute(scenario, users, &layout);
    let initial = init_matching(scenario, &gains, &power)?;
    let stable = swap_matching(
        scenario,
        &gains,
        &power,
        &initial,
        &SwapOptions::for_scenario(scenario),
    )?;
    let opts = PddOptions {
        scheme: AccessScheme::OmaTdma,
        enforce_sic: false,
        ..Default::default()
    };
    let out = pdd_solve(scenario, users, &stable.matching, None, &opts)?;
    Ok((stable.matching, out))
}

/// Number of quota-respecting assignments of `users` labeled users onto
/// `waveguides` labeled waveguides.
pub fn assignment_count(users: usize, waveguides: usize, quota: usize) -> u128 {
    fn rec(remaining: usize, waveguides: &mut Vec<usize>, quota: usize) -> u128 {
        if remaining == 0 {
            return 1;
        }
        let mut total = 0u128;
        for k in 0..waveguides.len() {
            if waveguides[k] < quota {
                waveguides[k] += 1;
                total += rec(remaining - 1, waveguides, quota);
                waveguides[k] -= 1;
            }
        }
        total
    }
    rec(users, &mut vec![0; waveguides], quota)
}

fn enumerate_assignments(scenario: &Scenario) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut counts = vec![0usize; scenario.num_waveguides];
    let mut current = vec![0usize; scenario.num_users];
    fn rec(
        m: usize,
        scenario: &Scenario,
        counts: &mut Vec<usize>,
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if m == scenario.num_users {
            out.push(current.clone());
            return;
        }
        for k in 0..scenario.num_waveguides {
            if counts[k] < scenario.quota {
                counts[k] += 1;
                current[m] = k;
                rec(m + 1, scenario, counts, current, out);
                counts[k] -= 1;
            }
        }
    }
    rec(0, scenario, &mut counts, &mut current, &mut out);
    out
}

/// Exhaustive scheduling: run the penalty solver for every quota-feasible
/// assignment and keep the best. Assignments run in parallel; ties resolve
/// to the lowest enumeration index for determinism.
pub fn exhaustive_schedule(
    scenario: &Scenario,
    users: &UserSet,
    opts: &PddOptions,
) -> Result<(Matching, PddOutcome)> {
    let count = assignment_count(scenario.num_users, scenario.num_waveguides, scenario.quota);
    if scenario.num_users > 9 || count > 20_000 {
        return Err(Error::TooLarge {
            assignments: count,
            users: scenario.num_users,
        });
    }
    let assignments = enumerate_assignments(scenario);
    let layout = PinchingLayout::uniform(scenario);
    let power = PowerAllocation::equal_split(scenario);
    let gains = ChannelGains::compute(scenario, users, &layout);

    let results: Vec<(usize, Matching, PddOutcome)> = assignments
        .par_iter()
        .enumerate()
        .filter_map(|(idx, assignment)| {
            let mut matching =
                Matching::from_assignment(assignment, scenario.num_waveguides).ok()?;
            decoding_order(scenario, &gains, &power, &mut matching, OrderMode::GainSorted);
            let out = pdd_solve(scenario, users, &matching, None, opts).ok()?;
            Some((idx, matching, out))
        })
        .collect();
    results
        .into_iter()
        .min_by(|(ia, _, a), (ib, _, b)| {
            b.sum_rate
                .partial_cmp(&a.sum_rate)
                .unwrap()
                .then(ia.cmp(ib))
        })
        .map(|(_, m, o)| (m, o))
        .ok_or_else(|| Error::InvalidInput("no feasible assignment".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{sample_users, ScenarioParams};

    fn desk(n: usize, m: usize) -> Scenario {
        ScenarioParams {
            pas_per_waveguide: n,
            num_users: m,
            ..Default::default()
        }
        .build()
        .unwrap()
    }

    #[test]
    fn ula_single_user_matched_filter_rate() {
        // One user: the WMMSE beamformer converges to MRT at full power, so
        // the rate must hit log₂(1 + P‖h‖²/σ²).
        let s = ScenarioParams {
            num_users: 1,
            pas_per_waveguide: 2,
            ..Default::default()
        }
        .build()
        .unwrap();
        let users = sample_users(&s, 3);
        let (_m, report) = fixed_ula_sumrate(&s, &users).unwrap();
        let ula = UlaConfig::new(&s);
        let h = ula.channel(&s, &users.positions[0]);
        let hnorm: f64 = h.iter().map(|x| x.norm_sqr()).sum();
        let bound = (1.0 + s.p_max * hnorm / s.noise_power).log2();
        assert!(
            (report.sum_rate - bound).abs() < 1e-3 * bound,
            "rate {} vs MRT bound {bound}",
            report.sum_rate
        );
    }

    #[test]
    fn ula_zero_power_zero_rate() {
        let s = desk(2, 2);
        let users = sample_users(&s, 5);
        let ula = UlaConfig::new(&s);
        let channels: Vec<Vec<Complex64>> = users
            .positions
            .iter()
            .map(|u| ula.channel(&s, u))
            .collect();
        let matching = Matching::from_assignment(&[0, 1], 3).unwrap();
        let beams = Beamformers {
            w: vec![vec![Complex64::new(0.0, 0.0); 3]; 2],
        };
        let report = ula_rate_report(&s, &channels, &beams, &matching);
        assert_eq!(report.sum_rate, 0.0);
    }

    #[test]
    fn ula_never_exceeds_interference_free_bound() {
        let s = desk(2, 4);
        let users = sample_users(&s, 7);
        let (_m, report) = fixed_ula_sumrate(&s, &users).unwrap();
        let ula = UlaConfig::new(&s);
        let bound: f64 = users
            .positions
            .iter()
            .map(|u| {
                let h = ula.channel(&s, u);
                let hnorm: f64 = h.iter().map(|x| x.norm_sqr()).sum();
                (1.0 + s.p_max * hnorm / s.noise_power).log2()
            })
            .sum();
        assert!(report.sum_rate <= bound);
    }

    #[test]
    fn random_layout_reproducible_and_feasible() {
        let s = desk(8, 6);
        let a = random_layout(&s, 9);
        let b = random_layout(&s, 9);
        assert_eq!(a, b);
        for seed in 0..50 {
            random_layout(&s, seed).validate(&s).unwrap();
        }
    }

    #[test]
    fn oma_singletons_equal_noma() {
        // One user per cluster: no intra interference either way, τ = 1.
        let s = ScenarioParams {
            num_users: 3,
            pas_per_waveguide: 2,
            ..Default::default()
        }
        .build()
        .unwrap();
        let users = sample_users(&s, 11);
        let (_m, oma) = oma_solve(&s, &users).unwrap();
        // NOMA run with the same (necessarily singleton) matching.
        let layout = PinchingLayout::uniform(&s);
        let power = PowerAllocation::equal_split(&s);
        let gains = ChannelGains::compute(&s, &users, &layout);
        let initial = init_matching(&s, &gains, &power).unwrap();
        let stable = swap_matching(&s, &gains, &power, &initial, &SwapOptions::for_scenario(&s))
            .unwrap();
        let noma = pdd_solve(&s, &users, &stable.matching, None, &PddOptions::default()).unwrap();
        // Same model, same machinery: rates should agree to solver noise.
        assert!(
            (oma.sum_rate - noma.sum_rate).abs() < 0.05 * noma.sum_rate.max(1.0),
            "oma {} vs noma {}",
            oma.sum_rate,
            noma.sum_rate
        );
    }

    #[test]
    fn assignment_counts_match_combinatorics() {
        assert_eq!(assignment_count(2, 2, 1), 2);
        assert_eq!(assignment_count(4, 2, 2), 6);
        // M=6, K=3, q̄=3: 60 + 360 + 90 = 510.
        assert_eq!(assignment_count(6, 3, 3), 510);
        let s = ScenarioParams {
            num_users: 4,
            num_waveguides: 2,
            quota: 2,
            pas_per_waveguide: 2,
            ..Default::default()
        }
        .build()
        .unwrap();
        assert_eq!(enumerate_assignments(&s).len(), 6);
    }

    #[test]
    fn exhaustive_refuses_oversized() {
        let s = ScenarioParams {
            num_users: 10,
            quota: 4,
            pas_per_waveguide: 2,
            ..Default::default()
        }
        .build()
        .unwrap();
        let users = sample_users(&s, 1);
        match exhaustive_schedule(&s, &users, &PddOptions::default()) {
            Err(Error::TooLarge { users: m, .. }) => assert_eq!(m, 10),
            other => panic!("expected refusal, got {:?}", other.map(|(m, _)| m)),
        }
    }
}
