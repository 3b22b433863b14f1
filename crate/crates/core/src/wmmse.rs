//! WMMSE reformulation of the sum-rate objective: per-user MSE, optimal
//! scalar equalizers, and rate weights.
//!
//! Everything here works on *path-response rows*: for a receiving user `m`,
//! `rows[m][g]` is the complex response √p_g·c carrying user g's signal to
//! user m. Rows are built either from the physical channel model or, inside
//! the penalty solver, from the auxiliary path-response variables, so the
//! same identities apply in both spaces.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rates::Matching;
use crate::scenario::{ChannelGains, PowerAllocation, Scenario};

/// Per-user scalar channel equalizers.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerSet {
    pub v: Vec<Complex64>,
}

/// Per-user rate weights; ω ≥ 1 whenever set by [`update_weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub w: Vec<f64>,
}

/// Path-response rows: `rows[m][g]` carries user g's signal toward user m.
#[derive(Debug, Clone)]
pub struct PathRows {
    pub rows: Vec<Vec<Complex64>>,
}

impl PathRows {
    /// Rows from the physical model: √p_g · (effective channel from user g's
    /// waveguide to user m).
    pub fn physical(
        scenario: &Scenario,
        gains: &ChannelGains,
        power: &PowerAllocation,
        matching: &Matching,
    ) -> Self {
        let rows = (0..scenario.num_users)
            .map(|m| {
                (0..scenario.num_users)
                    .map(|g| {
                        let k = matching.waveguide_of_user[g];
                        power.p[g].sqrt() * gains.c[m][k]
                    })
                    .collect()
            })
            .collect();
        Self { rows }
    }
}

/// Interference decomposition for one receiving user.
#[derive(Debug, Clone, Copy)]
pub struct LinkTerms {
    /// |q_{m,m}|² — own-signal power term.
    pub own: f64,
    /// Σ over same-cluster users decoded after m.
    pub intra_after: f64,
    /// Σ over users of other clusters.
    pub inter: f64,
}

impl LinkTerms {
    /// Interference-plus-noise term J (own signal excluded).
    pub fn j_value(&self, noise: f64) -> f64 {
        self.intra_after + self.inter + noise
    }

    /// Own-signal SINR in row variables.
    pub fn sinr(&self, noise: f64) -> f64 {
        self.own / self.j_value(noise)
    }
}

/// Split user m's row into own / residual-intra / inter powers.
pub fn link_terms(rows: &PathRows, matching: &Matching, m: usize) -> LinkTerms {
    let k = matching.waveguide_of_user[m];
    let pos = matching.decode_position(m);
    let mut own = 0.0;
    let mut intra_after = 0.0;
    let mut inter = 0.0;
    for (g, q) in rows.rows[m].iter().enumerate() {
        let kg = matching.waveguide_of_user[g];
        if kg != k {
            inter += q.norm_sqr();
        } else if g == m {
            own = q.norm_sqr();
        } else if matching.decode_position(g) > pos {
            intra_after += q.norm_sqr();
        }
    }
    LinkTerms {
        own,
        intra_after,
        inter,
    }
}

/// Per-user mean square error e = |v|²(own + residual-intra + inter + σ²)
/// + 1 − 2Re{v·q_{m,m}}.
pub fn mse_rows(
    scenario: &Scenario,
    rows: &PathRows,
    matching: &Matching,
    v: &EqualizerSet,
) -> Vec<f64> {
    (0..scenario.num_users)
        .map(|m| {
            let t = link_terms(rows, matching, m);
            let vm = v.v[m];
            let q_own = rows.rows[m][m];
            vm.norm_sqr() * (t.own + t.intra_after + t.inter + scenario.noise_power) + 1.0
                - 2.0 * (vm * q_own).re
        })
        .collect()
}

/// MSE from the physical channel model.
pub fn mse(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    matching: &Matching,
    v: &EqualizerSet,
) -> Vec<f64> {
    let rows = PathRows::physical(scenario, gains, power, matching);
    mse_rows(scenario, &rows, matching, v)
}

/// MMSE equalizers: v = q*_{m,m} / (own + J). Exact argmin of the MSE.
pub fn update_equalizers_rows(
    scenario: &Scenario,
    rows: &PathRows,
    matching: &Matching,
) -> EqualizerSet {
    let v = (0..scenario.num_users)
        .map(|m| {
            let t = link_terms(rows, matching, m);
            let denom = t.own + t.j_value(scenario.noise_power);
            rows.rows[m][m].conj() / denom
        })
        .collect();
    EqualizerSet { v }
}

/// MMSE equalizers from the physical channel model.
pub fn update_equalizers(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    matching: &Matching,
) -> EqualizerSet {
    let rows = PathRows::physical(scenario, gains, power, matching);
    update_equalizers_rows(scenario, &rows, matching)
}

/// Optimal weights ω = 1 + γ; equals 1/e(v_opt) exactly.
pub fn update_weights_rows(
    scenario: &Scenario,
    rows: &PathRows,
    matching: &Matching,
) -> Result<WeightSet> {
    let w = (0..scenario.num_users)
        .map(|m| {
            let t = link_terms(rows, matching, m);
            let j = t.j_value(scenario.noise_power);
            if j <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "degenerate interference-plus-noise term J={j} for user {m}"
                )));
            }
            Ok(1.0 + t.own / j)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightSet { w })
}

/// Optimal weights from the physical channel model.
pub fn update_weights(
    scenario: &Scenario,
    gains: &ChannelGains,
    power: &PowerAllocation,
    matching: &Matching,
) -> Result<WeightSet> {
    let rows = PathRows::physical(scenario, gains, power, matching);
    update_weights_rows(scenario, &rows, matching)
}

/// WMMSE objective Σ_m (ω_m·e_m − log₂ ω_m). At the optimal (v, ω) this
/// equals (number of users) − (sum rate in bit/s/Hz).
pub fn wmmse_objective(weights: &WeightSet, mses: &[f64]) -> f64 {
    weights
        .w
        .iter()
        .zip(mses)
        .map(|(&w, &e)| w * e - w.log2())
        .sum()
}
