//! Experiment runner: seeded sweeps over scenario parameters, scheme
//! dispatch, and deterministic CSV emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{exhaustive_schedule, fixed_ula_sumrate, oma_solve, rpp_solve};
use crate::error::{Error, Result};
use crate::pdd::{pdd_solve, scheme_rate_report, AccessScheme, PddOptions, PddOutcome, TraceRow};
use crate::rates::Matching;
use crate::scenario::{sample_users, ChannelGains, PowerAllocation, Scenario, ScenarioParams, UserSet};
use crate::scheduling::{init_matching, swap_matching, SwapOptions};

/// Swept scenario parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Maximum BS transmit power (grid values in dBm).
    PMaxDbm,
    /// Waveguide length (m).
    WaveguideLen,
    /// PAs per waveguide.
    PasPerWaveguide,
    /// Number of users.
    NumUsers,
}

impl SweepVariable {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "p_max_dbm" | "p_max" => Ok(Self::PMaxDbm),
            "waveguide_len" | "l" => Ok(Self::WaveguideLen),
            "pas_per_waveguide" | "n" => Ok(Self::PasPerWaveguide),
            "num_users" | "m" => Ok(Self::NumUsers),
            other => Err(Error::Config(format!("unknown sweep variable '{other}'"))),
        }
    }

    pub fn apply(&self, params: &mut ScenarioParams, value: f64) {
        match self {
            Self::PMaxDbm => params.p_max_dbm = value,
            Self::WaveguideLen => params.waveguide_len = value,
            Self::PasPerWaveguide => params.pas_per_waveguide = value.round() as usize,
            Self::NumUsers => params.num_users = value.round() as usize,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::PMaxDbm => "p_max_dbm",
            Self::WaveguideLen => "waveguide_len",
            Self::PasPerWaveguide => "pas_per_waveguide",
            Self::NumUsers => "num_users",
        }
    }
}

/// Comparison scheme identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Noma,
    Oma,
    Rpp,
    Ula,
    Exhaustive,
}

impl Scheme {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "noma" => Ok(Self::Noma),
            "oma" => Ok(Self::Oma),
            "rpp" => Ok(Self::Rpp),
            "ula" => Ok(Self::Ula),
            "exhaustive" => Ok(Self::Exhaustive),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Noma => "noma",
            Self::Oma => "oma",
            Self::Rpp => "rpp",
            Self::Ula => "ula",
            Self::Exhaustive => "exhaustive",
        }
    }
}

/// Full experiment description. The TOML config file mirrors these fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Base scenario; the sweep variable overrides one field per run.
    #[serde(default)]
    pub scenario: ScenarioParams,
    pub sweep: SweepVariable,
    pub grid: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Record wall-clock times in the CSV. Off by default so repeated runs
    /// produce byte-identical output files.
    #[serde(default)]
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("empty sweep grid".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("no schemes selected".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds listed".into()));
        }
        Ok(())
    }
}

/// One experiment outcome row.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub seed: u64,
    pub sum_rate: f64,
    pub per_user_rates: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

/// Aggregate result of a sweep.
#[derive(Debug)]
pub struct ExperimentSummary {
    pub rows: Vec<ResultRow>,
    pub csv_path: PathBuf,
    pub meta_path: PathBuf,
    pub failures: usize,
}

/// The full primary pipeline for one drop: gain-based initial matching,
/// swap matching to stability, then the penalty solver.
pub fn matching_pdd(
    scenario: &Scenario,
    users: &UserSet,
    opts: &PddOptions,
) -> Result<(Matching, PddOutcome)> {
    let layout = crate::scenario::PinchingLayout::uniform(scenario);
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
    let outcome = pdd_solve(scenario, users, &stable.matching, None, opts)?;
    Ok((stable.matching, outcome))
}

fn run_one(scheme: Scheme, params: &ScenarioParams, seed: u64) -> Result<ResultRow> {
    let scenario = params.build()?;
    let users = sample_users(&scenario, seed);
    let started = Instant::now();
    let (sum_rate, per_user, iterations, residual, converged) = match scheme {
        Scheme::Noma => {
            let (matching, out) = matching_pdd(&scenario, &users, &PddOptions::default())?;
            let rates = per_user_rates(&scenario, &users, &matching, &out, AccessScheme::Noma);
            (out.sum_rate, rates, out.sweeps, out.final_residual, out.converged)
        }
        Scheme::Oma => {
            let (matching, out) = oma_solve(&scenario, &users)?;
            let rates =
                per_user_rates(&scenario, &users, &matching, &out, AccessScheme::OmaTdma);
            (out.sum_rate, rates, out.sweeps, out.final_residual, out.converged)
        }
        Scheme::Rpp => {
            let (matching, out) = rpp_solve(&scenario, &users, seed)?;
            let rates = per_user_rates(&scenario, &users, &matching, &out, AccessScheme::Noma);
            (out.sum_rate, rates, out.sweeps, out.final_residual, out.converged)
        }
        Scheme::Ula => {
            let (_m, report) = fixed_ula_sumrate(&scenario, &users)?;
            let rates = report.per_user.iter().map(|u| u.rate).collect();
            (report.sum_rate, rates, 0, 0.0, true)
        }
        Scheme::Exhaustive => {
            let (matching, out) = exhaustive_schedule(&scenario, &users, &PddOptions::default())?;
            let rates = per_user_rates(&scenario, &users, &matching, &out, AccessScheme::Noma);
            (out.sum_rate, rates, out.sweeps, out.final_residual, out.converged)
        }
    };
    Ok(ResultRow {
        scheme,
        sweep_value: f64::NAN, // filled by the caller
        seed,
        sum_rate,
        per_user_rates: per_user,
        iterations,
        residual,
        converged,
        wall_time_s: started.elapsed().as_secs_f64(),
        error: None,
    })
}

fn per_user_rates(
    scenario: &Scenario,
    users: &UserSet,
    matching: &Matching,
    out: &PddOutcome,
    scheme: AccessScheme,
) -> Vec<f64> {
    let gains = ChannelGains::compute(scenario, users, &out.layout);
    let report = scheme_rate_report(scenario, &gains, &out.power, matching, scheme);
    report.per_user.iter().map(|u| u.rate).collect()
}

/// Run the configured sweep. Rows execute in parallel, then land in the CSV
/// ordered by (scheme, sweep index, seed) so repeated runs are
/// byte-identical when timing capture is off.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;

    let mut jobs = Vec::new();
    for (vi, &value) in config.grid.iter().enumerate() {
        for &scheme in &config.schemes {
            for &seed in &config.seeds {
                jobs.push((vi, value, scheme, seed));
            }
        }
    }

    let mut rows: Vec<(usize, ResultRow)> = jobs
        .par_iter()
        .map(|&(vi, value, scheme, seed)| {
            let mut params = config.scenario.clone();
            config.sweep.apply(&mut params, value);
            let row = match run_one(scheme, &params, seed) {
                Ok(mut row) => {
                    row.sweep_value = value;
                    row
                }
                Err(e) => ResultRow {
                    scheme,
                    sweep_value: value,
                    seed,
                    sum_rate: f64::NAN,
                    per_user_rates: Vec::new(),
                    iterations: 0,
                    residual: f64::NAN,
                    converged: false,
                    wall_time_s: 0.0,
                    error: Some(e.to_string()),
                },
            };
            (vi, row)
        })
        .collect();

    rows.sort_by(|(via, ra), (vib, rb)| {
        ra.scheme
            .name()
            .cmp(rb.scheme.name())
            .then(via.cmp(vib))
            .then(ra.seed.cmp(&rb.seed))
    });
    let rows: Vec<ResultRow> = rows.into_iter().map(|(_, r)| r).collect();
    let failures = rows.iter().filter(|r| r.error.is_some()).count();

    let csv_path = config.out_dir.join("results.csv");
    let mut csv = String::new();
    csv.push_str("scheme,sweep_variable,sweep_value,seed,sum_rate,per_user_rates,iterations,residual,converged,wall_time_s,error\n");
    for row in &rows {
        let rates = row
            .per_user_rates
            .iter()
            .map(|r| format!("{r:.9}"))
            .collect::<Vec<_>>()
            .join(";");
        let wall = if config.timing { row.wall_time_s } else { 0.0 };
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.9},{},{},{:.3e},{},{:.3},{}",
            row.scheme.name(),
            config.sweep.name(),
            row.sweep_value,
            row.seed,
            row.sum_rate,
            rates,
            row.iterations,
            row.residual,
            row.converged,
            wall,
            row.error.clone().unwrap_or_default().replace(',', ";"),
        );
    }
    std::fs::write(&csv_path, csv)?;

    let meta_path = config.out_dir.join("results.meta.toml");
    let meta = toml::to_string_pretty(config).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&meta_path, meta)?;

    Ok(ExperimentSummary {
        rows,
        csv_path,
        meta_path,
        failures,
    })
}

/// Write the solver trace as CSV with columns
/// (iteration, al, sum_rate, residual_inf_norm, rho).
pub fn emit_convergence_trace(trace: &[TraceRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = String::from("iteration,al,sum_rate,residual_inf_norm,rho\n");
    for row in trace {
        let _ = writeln!(
            out,
            "{},{:.12e},{:.9},{:.6e},{:.6e}",
            row.sweep, row.al, row.sum_rate, row.residual_inf, row.rho
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Per-(scheme, value) mean sum rates from result rows; used by the compare
/// command and trend tests.
pub fn mean_sum_rates(rows: &[ResultRow]) -> Vec<(Scheme, f64, f64)> {
    let mut keys: Vec<(Scheme, f64)> = Vec::new();
    for r in rows {
        if r.error.is_none() && !keys.iter().any(|(s, v)| *s == r.scheme && *v == r.sweep_value) {
            keys.push((r.scheme, r.sweep_value));
        }
    }
    keys.sort_by(|a, b| {
        a.0.name()
            .cmp(b.0.name())
            .then(a.1.partial_cmp(&b.1).unwrap())
    });
    keys.into_iter()
        .map(|(s, v)| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.scheme == s && r.sweep_value == v && r.error.is_none())
                .map(|r| r.sum_rate)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
            (s, v, mean)
        })
        .collect()
}
