//! User-to-waveguide matching structure, SIC decoding orders, SINR, and
//! per-user rate reports for the NOMA downlink.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{ChannelGains, PowerAllocation, Scenario};

/// User-to-waveguide assignment together with the per-cluster decoding order.
///
/// `clusters[k]` lists the users of waveguide `k` in decode order: position 0
/// is decoded first (and therefore cancelled by everyone decoded later).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    pub waveguide_of_user: Vec<usize>,
    pub clusters: Vec<Vec<usize>>,
}

impl Matching {
    /// Build from an assignment map, decode order initially by user index.
    pub fn from_assignment(assignment: &[usize], num_waveguides: usize) -> Result<Self> {
        let mut clusters = vec![Vec::new(); num_waveguides];
        for (m, &k) in assignment.iter().enumerate() {
            if k >= num_waveguides {
                return Err(Error::InvalidInput(format!(
                    "user {m} assigned to waveguide {k} out of range"
                )));
            }
            clusters[k].push(m);
        }
        Ok(Self {
            waveguide_of_user: assignment.to_vec(),
            clusters,
        })
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        if self.waveguide_of_user.len() != scenario.num_users
            || self.clusters.len() != scenario.num_waveguides
        {
            return Err(Error::InvalidInput("matching shape mismatch".into()));
        }
        let mut seen = vec![false; scenario.num_users];
        for (k, cluster) in self.clusters.iter().enumerate() {
            if cluster.len() > scenario.quota {
                return Err(Error::InvalidInput(format!(
                    "cluster {k} exceeds quota: {} > {}",
                    cluster.len(),
                    scenario.quota
                )));
            }
            for &m in cluster {
                if seen[m] {
                    return Err(Error::InvalidInput(format!("user {m} in two clusters")));
                }
                seen[m] = true;
                if self.waveguide_of_user[m] != k {
                    return Err(Error::InvalidInput(format!(
                        "user {m}: map says {} but listed in cluster {k}",
                        self.waveguide_of_user[m]
                    )));
                }
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::InvalidInput("user missing from all clusters".into()));
        }
        Ok(())
    }

    /// Decode position of user `m` within its cluster.
    pub fn decode_position(&self, m: usize) -> usize {
        let k = self.waveguide_of_user[m];
        self.clusters[k].iter().position(|&u| u == m).expect("member")
    }

    /// Exchange the waveguides of users `m` and `j` (decode orders must be
    /// recomputed afterwards).
    pub fn swapped(&self, m: usize, j: usize) -> Matching {
        let mut out = self.clone();
        let km = out.waveguide_of_user[m];
        let kj = out.waveguide_of_user[j];
        out.waveguide_of_user[m] = kj;
        out.waveguide_of_user[j] = km;
        out.clusters[km].retain(|&u| u != m);
        out.clusters[kj].retain(|&u| u != j);
        out.clusters[kj].push(m);
        out.clusters[km].push(j);
        out
    }

    /// Move user `m` to waveguide `i` (vacancy move).
    pub fn moved(&self, m: usize, i: usize) -> Matching {
        let mut out = self.clone();
        let k = out.waveguide_of_user[m];
        out.waveguide_of_user[m] = i;
        out.clusters[k].retain(|&u| u != m);
        out.clusters[i].push(m);
        out
    }
}

/// How decode orders are chosen inside each cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OrderMode {
    /// Sort by ascending effective gain |hᵀg|²: weakest user decoded first.
    #[default]
    GainSorted,
    /// Try every permutation per cluster and keep the sum-rate maximizer.
    Exhaustive,
}

/// Recompute `matching.clusters` decode orders in place.
///
/// Inter-cluster interference does not depend on other clusters' orders, so
/// exhaustive mode optimizes each cluster independently.
pub fn decoding_order(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    matching: &mut Matching,
    mode: OrderMode,
) {
    match mode {
        OrderMode::GainSorted => {
            for (k, cluster) in matching.clusters.iter_mut().enumerate() {
                cluster.sort_by(|&a, &b| {
                    gains
                        .gain(a, k)
                        .partial_cmp(&gains.gain(b, k))
                        .unwrap()
                        .then(a.cmp(&b))
                });
            }
        }
        OrderMode::Exhaustive => {
            // Gain-sorted start so ties resolve deterministically.
            decoding_order(scenario, gains, power, matching, OrderMode::GainSorted);
            for k in 0..matching.clusters.len() {
                let members = matching.clusters[k].clone();
                if members.len() < 2 {
                    continue;
                }
                let mut best = members.clone();
                let mut best_rate = f64::NEG_INFINITY;
                permutations(&members, &mut |perm| {
                    matching.clusters[k] = perm.to_vec();
                    let rate = cluster_sum_rate(scenario, gains, power, matching, k);
                    if rate > best_rate + 1e-15 {
                        best_rate = rate;
                        best = perm.to_vec();
                    }
                });
                matching.clusters[k] = best;
            }
        }
    }
}

fn permutations(items: &[usize], visit: &mut impl FnMut(&[usize])) {
    let mut buf = items.to_vec();
    heap_permute(&mut buf, items.len(), visit);
}

fn heap_permute(buf: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k <= 1 {
        visit(buf);
        return;
    }
    for i in 0..k {
        heap_permute(buf, k - 1, visit);
        if k % 2 == 0 {
            buf.swap(i, k - 1);
        } else {
            buf.swap(0, k - 1);
        }
    }
}

/// SINR of user `m` (served by waveguide `k`) decoding the signal of user `l`
/// of the same cluster. Requires π_k(m) ≥ π_k(l).
pub fn sinr(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    matching: &Matching,
    m: usize,
    l: usize,
    k: usize,
) -> Result<f64> {
    if matching.waveguide_of_user[m] != k || matching.waveguide_of_user[l] != k {
        return Err(Error::NotCoClustered {
            decoder: m,
            signal: l,
            waveguide: k,
        });
    }
    let pos_l = matching.decode_position(l);
    let pos_m = matching.decode_position(m);
    if pos_m < pos_l {
        return Err(Error::InvalidInput(format!(
            "user {m} decodes before user {l}; SINR undefined"
        )));
    }
    Ok(sinr_unchecked(scenario, gains, power, matching, m, l, k, pos_l))
}

/// SINR with positions already validated. The channel is always the one
/// toward the decoder `m`; intra interference sums signals decoded after `l`.
#[allow(clippy::too_many_arguments)]
fn sinr_unchecked(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    matching: &Matching,
    m: usize,
    l: usize,
    k: usize,
    pos_l: usize,
) -> f64 {
    let own_gain = gains.gain(m, k);
    let numerator = power.p[l] * own_gain;
    let mut intra = 0.0;
    for &lp in &matching.clusters[k][pos_l + 1..] {
        intra += power.p[lp] * own_gain;
    }
    let mut inter = 0.0;
    for (kp, cluster) in matching.clusters.iter().enumerate() {
        if kp == k {
            continue;
        }
        let g = gains.gain(m, kp);
        for &i in cluster {
            inter += power.p[i] * g;
        }
    }
    numerator / (intra + inter + scenario.noise_power)
}

fn cluster_sum_rate(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    matching: &Matching,
    k: usize,
) -> f64 {
    matching.clusters[k]
        .iter()
        .enumerate()
        .map(|(pos, &m)| {
            let g = sinr_unchecked(scenario, gains, power, matching, m, m, k, pos);
            (1.0 + g).log2()
        })
        .sum()
}

/// Per-user rate entry of a [`RateReport`].
#[derive(Debug, Clone)]
pub struct UserRate {
    pub user: usize,
    pub waveguide: usize,
    /// Decode position within the cluster (0 = decoded first).
    pub position: usize,
    /// Own-signal SINR γ_{m→m}.
    pub sinr: f64,
    /// Own-signal rate log₂(1+γ) (bit/s/Hz).
    pub rate: f64,
    /// R ≥ R_min.
    pub qos_ok: bool,
    /// Every later-decoded cluster member can decode this user's signal at
    /// least as fast as the user itself (constraint 7f).
    pub sic_ok: bool,
}

/// Rates, flags, and totals for a full (layout, power, matching) state.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub per_user: Vec<UserRate>,
    pub cluster_sum: Vec<f64>,
    pub sum_rate: f64,
}

impl RateReport {
    pub fn rate_of(&self, m: usize) -> f64 {
        self.per_user[m].rate
    }
}

/// Evaluate per-user own-signal rates, QoS flags, SIC decodability flags, and
/// cluster / total sum rates. Violations are reported via flags, not errors.
pub fn rate_report(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    matching: &Matching,
) -> RateReport {
    let mut per_user: Vec<UserRate> = (0..scenario.num_users)
        .map(|m| UserRate {
            user: m,
            waveguide: matching.waveguide_of_user[m],
            position: 0,
            sinr: 0.0,
            rate: 0.0,
            qos_ok: false,
            sic_ok: true,
        })
        .collect();
    let mut cluster_sum = vec![0.0; scenario.num_waveguides];

    for (k, cluster) in matching.clusters.iter().enumerate() {
        for (pos, &l) in cluster.iter().enumerate() {
            let gapp = sinr_unchecked(scenario, gains, power, matching, l, l, k, pos);
            let rate = (1.0 + gapp).log2();
            per_user[l].position = pos;
            per_user[l].sinr = g_clean(gapp);
            per_user[l].rate = rate;
            per_user[l].qos_ok = rate >= scenario.r_min;
            cluster_sum[k] += rate;
            // SIC: every later-decoded member m must decode l's signal at a
            // rate no smaller than l's own rate.
            for &m in &cluster[pos + 1..] {
                let g_ml = sinr_unchecked(scenario, gains, power, matching, m, l, k, pos);
                if (1.0 + g_ml).log2() < rate {
                    per_user[l].sic_ok = false;
                }
            }
        }
    }
    let sum_rate = cluster_sum.iter().sum();
    RateReport {
        per_user,
        cluster_sum,
        sum_rate,
    }
}

fn g_clean(g: f64) -> f64 {
    if g.is_finite() {
        g
    } else {
        0.0
    }
}
