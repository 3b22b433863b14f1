//! Command-line front end: run experiment sweeps, emit solver traces, and
//! compare scheme means from a results file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wdpass::experiment::{
    emit_convergence_trace, matching_pdd, mean_sum_rates, run_experiment, ExperimentConfig,
    ResultRow, Scheme, SweepVariable,
};
use wdpass::pdd::PddOptions;
use wdpass::{sample_users, ScenarioParams};

#[derive(Parser)]
#[command(
    name = "wdpass",
    about = "Waveguide-division pinching-antenna NOMA downlink simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded sweep and write results.csv plus a metadata sidecar.
    Run {
        /// TOML experiment config; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Replace the seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Sweep spec `<variable>=<v1,v2,...>`, e.g. `p_max_dbm=0,5,10,15`.
        #[arg(long)]
        sweep: Option<String>,
        /// Comma-separated scheme list (noma,oma,rpp,ula,exhaustive).
        #[arg(long)]
        schemes: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Record wall-clock times (makes output non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Solve one drop with the full pipeline and write the convergence trace.
    Trace {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print per-(scheme, value) mean sum rates from a results.csv.
    Compare {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> Result<ExitCode, Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            sweep,
            schemes,
            out,
            timing,
        } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig {
                    scenario: ScenarioParams::default(),
                    sweep: SweepVariable::PMaxDbm,
                    grid: vec![ScenarioParams::default().p_max_dbm],
                    schemes: vec![Scheme::Noma],
                    seeds: vec![0],
                    out_dir: PathBuf::from("results"),
                    timing: false,
                },
            };
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            if let Some(spec) = sweep {
                let (name, grid) = spec
                    .split_once('=')
                    .ok_or("sweep must be <variable>=<v1,v2,...>")?;
                cfg.sweep = SweepVariable::parse(name)?;
                cfg.grid = grid
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<Result<_, _>>()?;
            }
            if let Some(list) = schemes {
                cfg.schemes = list
                    .split(',')
                    .map(|s| Scheme::parse(s.trim()))
                    .collect::<Result<_, _>>()?;
            }
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            cfg.timing = cfg.timing || timing;

            let summary = run_experiment(&cfg)?;
            println!(
                "wrote {} rows to {} ({} failures)",
                summary.rows.len(),
                summary.csv_path.display(),
                summary.failures
            );
            for (scheme, value, mean) in mean_sum_rates(&summary.rows) {
                println!(
                    "  {:<11} {}={:<8} mean sum rate {:.4} bit/s/Hz",
                    scheme.name(),
                    cfg.sweep.name(),
                    value,
                    mean
                );
            }
            if summary.failures > 0 {
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Trace { config, seed, out } => {
            let params = match config {
                Some(path) => ExperimentConfig::load(&path)?.scenario,
                None => ScenarioParams::default(),
            };
            let scenario = params.build()?;
            let users = sample_users(&scenario, seed);
            let (_matching, outcome) = matching_pdd(&scenario, &users, &PddOptions::default())?;
            emit_convergence_trace(&outcome.trace, &out)?;
            println!(
                "seed {seed}: converged={} residual={:.3e} sum rate {:.4} bit/s/Hz ({} sweeps) -> {}",
                outcome.converged,
                outcome.final_residual,
                outcome.sum_rate,
                outcome.sweeps,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { input } => {
            let rows = read_results_csv(&input)?;
            for (scheme, value, mean) in mean_sum_rates(&rows) {
                println!(
                    "{:<11} value={:<10} mean sum rate {:.4} bit/s/Hz",
                    scheme.name(),
                    value,
                    mean
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read_results_csv(path: &PathBuf) -> Result<Vec<ResultRow>, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 11 {
            continue;
        }
        let error = if fields[10].is_empty() {
            None
        } else {
            Some(fields[10].to_string())
        };
        rows.push(ResultRow {
            scheme: Scheme::parse(fields[0])?,
            sweep_value: fields[2].parse()?,
            seed: fields[3].parse()?,
            sum_rate: fields[4].parse()?,
            per_user_rates: fields[5]
                .split(';')
                .filter(|v| !v.is_empty())
                .map(|v| v.parse())
                .collect::<Result<_, _>>()?,
            iterations: fields[6].parse()?,
            residual: fields[7].parse()?,
            converged: fields[8].parse()?,
            wall_time_s: fields[9].parse()?,
            error,
        });
    }
    Ok(rows)
}
