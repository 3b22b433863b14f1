//! User-to-waveguide scheduling: gain-based deferred acceptance for the
//! initial assignment, then swap matching until two-sided exchange
//! stability.
//!
//! Preference values are achievable rates under the current (P, X), so a
//! swap's effect on *everyone* (externalities) is captured by re-evaluating
//! the rate report under the candidate matching. A swap is applied only when
//! no involved party loses and at least one strictly gains.

use crate::error::{Error, Result};
use crate::rates::{decoding_order, rate_report, Matching, OrderMode, RateReport};
use crate::scenario::{ChannelGains, PowerAllocation, Scenario};

/// Channel-gain preference table: `score[m][k]` = |hᵀg|² of waveguide k at
/// user m, with derived rank lists (ties broken by lower index).
#[derive(Debug, Clone)]
pub struct PreferenceTable {
    pub score: Vec<Vec<f64>>,
    /// Waveguides in descending preference per user.
    pub user_ranking: Vec<Vec<usize>>,
    /// Users in descending preference per waveguide.
    pub waveguide_ranking: Vec<Vec<usize>>,
}

impl PreferenceTable {
    pub fn from_gains(scenario: &Scenario, gains: &ChannelGains) -> Self {
        let mu = scenario.num_users;
        let kw = scenario.num_waveguides;
        let score: Vec<Vec<f64>> = (0..mu)
            .map(|m| (0..kw).map(|k| gains.gain(m, k)).collect())
            .collect();
        let user_ranking = (0..mu)
            .map(|m| {
                let mut order: Vec<usize> = (0..kw).collect();
                order.sort_by(|&a, &b| {
                    score[m][b].partial_cmp(&score[m][a]).unwrap().then(a.cmp(&b))
                });
                order
            })
            .collect();
        let waveguide_ranking = (0..kw)
            .map(|k| {
                let mut order: Vec<usize> = (0..mu).collect();
                order.sort_by(|&a, &b| {
                    score[b][k].partial_cmp(&score[a][k]).unwrap().then(a.cmp(&b))
                });
                order
            })
            .collect();
        Self {
            score,
            user_ranking,
            waveguide_ranking,
        }
    }

    /// Rank of user m in waveguide k's list (lower = preferred).
    fn user_rank(&self, k: usize, m: usize) -> usize {
        self.waveguide_ranking[k].iter().position(|&u| u == m).unwrap()
    }
}

/// Preference value of a matched user: its achievable own-signal rate.
pub fn preference_value_user(report: &RateReport, m: usize) -> f64 {
    report.per_user[m].rate
}

/// Preference value of a waveguide: the sum rate of its cluster.
pub fn preference_value_waveguide(report: &RateReport, k: usize) -> f64 {
    report.cluster_sum[k]
}

/// Deferred acceptance over gain-based preference lists: unassigned users
/// propose to their best non-rejecting waveguide; each waveguide keeps its
/// best-ranked proposals up to the quota and rejects the rest.
pub fn init_matching(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
) -> Result<Matching> {
    if scenario.num_waveguides * scenario.quota < scenario.num_users {
        return Err(Error::QuotaInfeasible {
            users: scenario.num_users,
            waveguides: scenario.num_waveguides,
            quota: scenario.quota,
        });
    }
    let prefs = PreferenceTable::from_gains(scenario, gains);
    let mu = scenario.num_users;
    let kw = scenario.num_waveguides;
    let mut accepted: Vec<Vec<usize>> = vec![Vec::new(); kw];
    let mut rejected_by: Vec<Vec<bool>> = vec![vec![false; kw]; mu];
    let mut assigned = vec![false; mu];

    loop {
        // Every unassigned user proposes to its best non-rejecting waveguide.
        let mut proposals: Vec<Vec<usize>> = vec![Vec::new(); kw];
        let mut any = false;
        for m in 0..mu {
            if assigned[m] {
                continue;
            }
            if let Some(&k) = prefs.user_ranking[m].iter().find(|&&k| !rejected_by[m][k]) {
                proposals[k].push(m);
                any = true;
            } else {
                return Err(Error::QuotaInfeasible {
                    users: mu,
                    waveguides: kw,
                    quota: scenario.quota,
                });
            }
        }
        if !any {
            break;
        }
        for k in 0..kw {
            if proposals[k].is_empty() {
                continue;
            }
            // Pool current holds with new proposals, keep the quota best.
            let mut pool = accepted[k].clone();
            pool.extend_from_slice(&proposals[k]);
            pool.sort_by_key(|&m| prefs.user_rank(k, m));
            pool.dedup();
            let keep: Vec<usize> = pool.iter().copied().take(scenario.quota).collect();
            for &m in &pool[keep.len().min(pool.len())..] {
                rejected_by[m][k] = true;
                assigned[m] = false;
            }
            for &m in &keep {
                assigned[m] = true;
            }
            accepted[k] = keep;
        }
    }

    let mut assignment = vec![0usize; mu];
    for (k, cluster) in accepted.iter().enumerate() {
        for &m in cluster {
            assignment[m] = k;
        }
    }
    let mut matching = Matching::from_assignment(&assignment, kw)?;
    decoding_order(scenario, gains, power, &mut matching, OrderMode::GainSorted);
    matching.validate(scenario)?;
    Ok(matching)
}

/// Before/after preference values of the four parties involved in a swap.
#[derive(Debug, Clone)]
pub struct SwapRecord {
    pub users: (usize, usize),
    pub waveguides: (usize, usize),
    pub before: [f64; 4],
    pub after: [f64; 4],
}

/// Swap-evaluation knobs.
#[derive(Debug, Clone)]
pub struct SwapOptions {
    /// Allow moves into unfilled waveguides (swap with a virtual empty user).
    pub vacancy_moves: bool,
    /// Decode-order mode re-applied after each candidate swap.
    pub order_mode: OrderMode,
    /// Hard cap on accepted swaps.
    pub max_swaps: usize,
}

impl SwapOptions {
    pub fn for_scenario(scenario: &Scenario) -> Self {
        Self {
            vacancy_moves: true,
            order_mode: OrderMode::GainSorted,
            max_swaps: scenario.num_users * scenario.num_users * scenario.num_waveguides * 1000,
        }
    }
}

fn evaluated(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    matching: &Matching,
    order_mode: OrderMode,
) -> (Matching, RateReport) {
    let mut m = matching.clone();
    decoding_order(scenario, gains, power, &mut m, order_mode);
    let report = rate_report(scenario, gains, power, &m);
    (m, report)
}

/// Does exchanging the waveguides of users m and j form a swap-blocking
/// pair? Evaluation holds (P, X) fixed and re-runs the rate report under the
/// swapped matching, so externalities on both clusters are captured.
#[allow(clippy::too_many_arguments)]
pub fn is_swap_blocking(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    matching: &Matching,
    report: &RateReport,
    m: usize,
    j: usize,
    order_mode: OrderMode,
) -> Option<SwapRecord> {
    let k = matching.waveguide_of_user[m];
    let i = matching.waveguide_of_user[j];
    if k == i {
        return None;
    }
    let (_, swapped_report) = evaluated(
        scenario,
        gains,
        power,
        &matching.swapped(m, j),
        order_mode,
    );
    let before = [
        preference_value_user(report, m),
        preference_value_user(report, j),
        preference_value_waveguide(report, k),
        preference_value_waveguide(report, i),
    ];
    let after = [
        preference_value_user(&swapped_report, m),
        preference_value_user(&swapped_report, j),
        preference_value_waveguide(&swapped_report, k),
        preference_value_waveguide(&swapped_report, i),
    ];
    let none_worse = after.iter().zip(&before).all(|(a, b)| a >= b);
    let some_better = after.iter().zip(&before).any(|(a, b)| a > b);
    if none_worse && some_better {
        Some(SwapRecord {
            users: (m, j),
            waveguides: (k, i),
            before,
            after,
        })
    } else {
        None
    }
}

/// Vacancy variant: user m moves alone to waveguide i with an open slot.
/// Involved parties are m, the source waveguide, and the target waveguide.
fn is_move_blocking(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    matching: &Matching,
    report: &RateReport,
    m: usize,
    i: usize,
    order_mode: OrderMode,
) -> bool {
    let k = matching.waveguide_of_user[m];
    if k == i || matching.clusters[i].len() >= scenario.quota {
        return false;
    }
    let (_, moved_report) = evaluated(scenario, gains, power, &matching.moved(m, i), order_mode);
    let before = [
        preference_value_user(report, m),
        preference_value_waveguide(report, k),
        preference_value_waveguide(report, i),
    ];
    let after = [
        preference_value_user(&moved_report, m),
        preference_value_waveguide(&moved_report, k),
        preference_value_waveguide(&moved_report, i),
    ];
    after.iter().zip(&before).all(|(a, b)| a >= b)
        && after.iter().zip(&before).any(|(a, b)| a > b)
}

/// Result of the swap-matching loop.
#[derive(Debug, Clone)]
pub struct SwapOutcome {
    pub matching: Matching,
    pub swaps: Vec<SwapRecord>,
    pub moves: usize,
    pub scans: usize,
}

/// Scan user pairs lexicographically and apply swap-blocking exchanges
/// (restarting the scan after each) until a full scan accepts nothing.
/// The output is two-sided exchange-stable under the fixed (P, X).
pub fn swap_matching(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    initial: &Matching,
    opts: &SwapOptions,
) -> Result<SwapOutcome> {
    initial.validate(scenario)?;
    let (mut matching, mut report) = evaluated(scenario, gains, power, initial, opts.order_mode);
    let mut swaps = Vec::new();
    let mut moves = 0usize;
    let mut scans = 0usize;

    'outer: loop {
        scans += 1;
        for m in 0..scenario.num_users {
            for j in m + 1..scenario.num_users {
                if matching.waveguide_of_user[m] == matching.waveguide_of_user[j] {
                    continue;
                }
                if let Some(record) = is_swap_blocking(
                    scenario,
                    gains,
                    power,
                    &matching,
                    &report,
                    m,
                    j,
                    opts.order_mode,
                ) {
                    let (next, next_report) = evaluated(
                        scenario,
                        gains,
                        power,
                        &matching.swapped(m, j),
                        opts.order_mode,
                    );
                    matching = next;
                    report = next_report;
                    swaps.push(record);
                    if swaps.len() + moves > opts.max_swaps {
                        return Err(Error::SwapCapExceeded {
                            cap: opts.max_swaps,
                        });
                    }
                    continue 'outer;
                }
            }
        }
        if opts.vacancy_moves {
            for m in 0..scenario.num_users {
                for i in 0..scenario.num_waveguides {
                    if is_move_blocking(
                        scenario,
                        gains,
                        power,
                        &matching,
                        &report,
                        m,
                        i,
                        opts.order_mode,
                    ) {
                        let (next, next_report) = evaluated(
                            scenario,
                            gains,
                            power,
                            &matching.moved(m, i),
                            opts.order_mode,
                        );
                        matching = next;
                        report = next_report;
                        moves += 1;
                        if swaps.len() + moves > opts.max_swaps {
                            return Err(Error::SwapCapExceeded {
                                cap: opts.max_swaps,
                            });
                        }
                        continue 'outer;
                    }
                }
            }
        }
        break;
    }
    Ok(SwapOutcome {
        matching,
        swaps,
        moves,
        scans,
    })
}

/// Exhaustive certification scan: count swap-blocking pairs remaining.
pub fn count_blocking_pairs(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    matching: &Matching,
    order_mode: OrderMode,
) -> usize {
    let report = rate_report(scenario, gains, power, matching);
    let mut count = 0;
    for m in 0..scenario.num_users {
        for j in m + 1..scenario.num_users {
            if matching.waveguide_of_user[m] == matching.waveguide_of_user[j] {
                continue;
            }
            if is_swap_blocking(
                scenario, gains, power, matching, &report, m, j, order_mode,
            )
            .is_some()
            {
                count += 1;
            }
        }
    }
    count
}
