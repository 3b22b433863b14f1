//! Access-scheme abstraction: which signals interfere with each user and how
//! the per-user rate contributes to the objective. NOMA keeps SIC-residual
//! intra-cluster interference; the TDMA variant removes intra-cluster
//! interference entirely and scales each rate by the cluster time share.

use serde::{Deserialize, Serialize};

use crate::rates::{rate_report, Matching, RateReport, UserRate};
use crate::scenario::{ChannelGains, PowerAllocation, Scenario};

/// Multiple-access scheme driving the solver's rate model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AccessScheme {
    /// Power-domain NOMA with SIC inside each cluster.
    #[default]
    Noma,
    /// Per-cluster TDMA: equal time shares, no intra-cluster interference,
    /// inter-cluster interference at the all-active level.
    OmaTdma,
}

/// Per-user interference sets, objective time shares, and QoS thresholds.
#[derive(Debug, Clone)]
pub struct LinkStructure {
    pub scheme: AccessScheme,
    /// Users whose signals appear as interference in user m's MSE/SINR.
    pub interferers: Vec<Vec<usize>>,
    /// Objective weight τ_m (1 for NOMA, 1/|cluster| for TDMA).
    pub time_share: Vec<f64>,
    /// SINR floor per user: 2^(R_min/τ) − 1.
    pub sinr_floor: Vec<f64>,
}

impl LinkStructure {
    pub fn noma(scenario: &Scenario, matching: &Matching) -> Self {
        let mut interferers = vec![Vec::new(); scenario.num_users];
        for (k, cluster) in matching.clusters.iter().enumerate() {
            for (pos, &m) in cluster.iter().enumerate() {
                // Same-cluster users decoded after m.
                interferers[m].extend_from_slice(&cluster[pos + 1..]);
                for (kp, other) in matching.clusters.iter().enumerate() {
                    if kp != k {
                        interferers[m].extend_from_slice(other);
                    }
                }
            }
        }
        let r_floor = 2f64.powf(scenario.r_min) - 1.0;
        Self {
            scheme: AccessScheme::Noma,
            interferers,
            time_share: vec![1.0; scenario.num_users],
            sinr_floor: vec![r_floor; scenario.num_users],
        }
    }

    pub fn oma(scenario: &Scenario, matching: &Matching) -> Self {
        let mut interferers = vec![Vec::new(); scenario.num_users];
        let mut time_share = vec![1.0; scenario.num_users];
        let mut sinr_floor = vec![0.0; scenario.num_users];
        for (k, cluster) in matching.clusters.iter().enumerate() {
            let tau = 1.0 / cluster.len().max(1) as f64;
            for &m in cluster {
                for (kp, other) in matching.clusters.iter().enumerate() {
                    if kp != k {
                        interferers[m].extend_from_slice(other);
                    }
                }
                time_share[m] = tau;
                sinr_floor[m] = 2f64.powf(scenario.r_min / tau) - 1.0;
            }
        }
        Self {
            scheme: AccessScheme::OmaTdma,
            interferers,
            time_share,
            sinr_floor,
        }
    }

    pub fn build(scenario: &Scenario, matching: &Matching, scheme: AccessScheme) -> Self {
        match scheme {
            AccessScheme::Noma => Self::noma(scenario, matching),
            AccessScheme::OmaTdma => Self::oma(scenario, matching),
        }
    }
}

/// Physical-model rate report under the given access scheme. NOMA delegates
/// to the SIC report; TDMA computes τ·log₂(1+γ) with intra interference
/// removed.
pub fn scheme_rate_report(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    matching: &Matching,
    scheme: AccessScheme,
) -> RateReport {
    match scheme {
        AccessScheme::Noma => rate_report(scenario, gains, power, matching),
        AccessScheme::OmaTdma => {
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
                let tau = 1.0 / cluster.len().max(1) as f64;
                for (pos, &m) in cluster.iter().enumerate() {
                    let mut inter = 0.0;
                    for (kp, other) in matching.clusters.iter().enumerate() {
                        if kp == k {
                            continue;
                        }
                        let g = gains.gain(m, kp);
                        for &i in other {
                            inter += power.p[i] * g;
                        }
                    }
                    let g = power.p[m] * gains.gain(m, k) / (inter + scenario.noise_power);
                    let rate = tau * (1.0 + g).log2();
                    per_user[m].position = pos;
                    per_user[m].sinr = g;
                    per_user[m].rate = rate;
                    per_user[m].qos_ok = rate >= scenario.r_min;
                    cluster_sum[k] += rate;
                }
            }
            let sum_rate = cluster_sum.iter().sum();
            RateReport {
                per_user,
                cluster_sum,
                sum_rate,
            }
        }
    }
}
