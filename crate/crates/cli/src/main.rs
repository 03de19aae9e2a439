//! Command-line front end: scenario generation, single solves,
//! Monte-Carlo sweeps, convergence probes, and exhaustive-search
//! comparisons.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use urllc_sched::model::{check_feasible, ScheduleIoError};
use urllc_sched::oracle::{self, OracleError};
use urllc_sched::sca::{self, ScaStatus, SolveOutcome, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE_WATTS};
use urllc_sched::scenario::{generate_instance, ConfigError, ProblemInstance, ScenarioConfig};
use urllc_sched_cli::presets::{preset_config, preset_sweep, Preset};
use urllc_sched_cli::sweep::{emit, run_convergence_probe, run_sweep, HarnessError, SweepSpec};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    ScheduleIo(#[from] ScheduleIoError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

/// Robust downlink packet scheduling: worst-case sum-power minimization
/// over an OFDMA grid under finite-blocklength rate, deadline, and
/// reliability constraints.
#[derive(Parser)]
#[command(name = "urllc-sched", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct SolverOpts {
    /// Convergence tolerance on the total-power change, in watts.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE_WATTS)]
    tol: f64,
    /// Iteration cap for the outer loop.
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    max_iter: u32,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a scenario config template, or a preset's config.
    Gen {
        /// Start from a named preset instead of the annotated template.
        #[arg(long, value_parser = Preset::from_str)]
        preset: Option<Preset>,
        /// Use the full-size grid (64 frequency bins) for presets.
        #[arg(long)]
        paper_scale: bool,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output path.
        #[arg(long, default_value = "scenario.toml")]
        out: PathBuf,
    },
    /// Solve one scenario; writes the schedule and prints a report.
    /// Exits 2 when no feasible schedule exists.
    Solve {
        /// Scenario config (TOML).
        config: PathBuf,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Schedule output path.
        #[arg(long, default_value = "schedule.txt")]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverOpts,
    },
    /// Monte-Carlo parameter sweep; writes sweep.csv and plot.py.
    Sweep {
        /// Sweep spec (TOML). Mutually exclusive with --preset.
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        /// Named sweep preset (fig2, fig3, fig5, fig6).
        #[arg(long, value_parser = Preset::from_str)]
        preset: Option<Preset>,
        /// Use the full-size grid and 100 trials for presets.
        #[arg(long)]
        paper_scale: bool,
        /// Override the base config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the trial count per swept value.
        #[arg(long)]
        trials: Option<u32>,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverOpts,
    },
    /// Solve once and write the per-iteration trace to trace.csv.
    /// Exits 2 when no feasible schedule exists.
    Probe {
        /// Scenario config (TOML). Mutually exclusive with --preset.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Named preset; fig4 is the dedicated convergence probe.
        #[arg(long, value_parser = Preset::from_str)]
        preset: Option<Preset>,
        /// Use the full-size grid for presets.
        #[arg(long)]
        paper_scale: bool,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverOpts,
    },
    /// Compare against exhaustive search on a tiny scenario.
    Oracle {
        /// Scenario config (TOML); the assignment space must be small.
        config: PathBuf,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        solver: SolverOpts,
    },
}

const CONFIG_TEMPLATE: &str = r#"# Scenario for the robust packet scheduler.
#
# The grid has num_freq_bins x num_slots PRBs; each PRB may carry at
# most one user. Users must receive payload_bits within their first
# deadline_slots slots, decoded with error probability at most
# error_prob, for every channel estimation error up to error_bound.

num_freq_bins = 4
num_slots = 3
num_users = 2

# PRB bandwidth in Hz and noise power spectral density in dBm/Hz.
prb_bandwidth_hz = 180e3
noise_psd_dbm_per_hz = -169.0

# Cell radius and per-user distances from the base station, in meters.
cell_radius_m = 200.0
user_distances_m = [100.0, 150.0]

# Channel estimation error bound (same scale as the unit-variance
# channel estimate) and per-PRB transmit power cap in dBm.
error_bound = 0.05
p_max_dbm = 23.0

# Seed for the channel draw.
rng_seed = 7

# One QoS block per user: payload in bits, deadline in slots (one-based,
# at most num_slots), decoding error probability in (0, 0.5).
[[qos]]
payload_bits = 20.0
deadline_slots = 2
error_prob = 1e-6

[[qos]]
payload_bits = 30.0
deadline_slots = 3
error_prob = 1e-5
"#;

fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

fn write_file(path: &PathBuf, body: String) -> Result<(), CliError> {
    std::fs::write(path, body).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn status_name(s: ScaStatus) -> &'static str {
    match s {
        ScaStatus::Converged => "converged",
        ScaStatus::Infeasible => "infeasible",
        ScaStatus::IterationCap => "iteration cap",
        ScaStatus::RoundingFailed => "rounding failed",
    }
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    Ok(cfg)
}

fn print_outcome(inst: &ProblemInstance, out: &SolveOutcome) {
    println!("status: {}", status_name(out.status));
    println!("iterations: {}", out.iterations);
    println!("newton steps: {}", out.newton_steps);
    if out.p_tot_watts.is_finite() {
        if out.p_tot_watts > 0.0 {
            println!(
                "total power: {:.6e} W ({:.2} dBm)",
                out.p_tot_watts,
                watts_to_dbm(out.p_tot_watts)
            );
        } else {
            println!("total power: 0 W");
        }
        if let Ok(rep) = check_feasible(inst, &out.schedule) {
            for (k, q) in inst.qos.iter().enumerate() {
                println!(
                    "user {}: rate {:.3} of {} bits over {} PRBs",
                    k + 1,
                    rep.per_user_rate[k],
                    q.payload_bits,
                    out.schedule
                        .assign
                        .iter_indexed()
                        .filter(|&((_, _, ik), &a)| ik == k && a != 0)
                        .count()
                );
            }
        }
    } else {
        println!("total power: unbounded (no feasible schedule)");
    }
}

fn trace_csv(out: &SolveOutcome) -> String {
    let mut s = String::from("iter,p_tot_w,delta_w,max_frac\n");
    for row in &out.trace {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            row.iteration, row.p_tot_watts, row.delta_watts, row.max_fractionality
        );
    }
    s
}

fn run() -> Result<i32, CliError> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Gen {
            preset,
            paper_scale,
            seed,
            out,
        } => {
            let body = match preset {
                None => {
                    let mut t = CONFIG_TEMPLATE.to_string();
                    if let Some(s) = seed {
                        t = t.replace("rng_seed = 7", &format!("rng_seed = {s}"));
                    }
                    t
                }
                Some(p) => {
                    let mut cfg = preset_config(p, paper_scale);
                    if let Some(s) = seed {
                        cfg.rng_seed = s;
                    }
                    toml::to_string_pretty(&cfg)
                        .expect("a validated config always serializes")
                }
            };
            write_file(&out, body)?;
            println!("wrote {}", out.display());
            Ok(0)
        }
        Cmd::Solve {
            config,
            seed,
            out,
            solver,
        } => {
            let cfg = load_config(&config, seed)?;
            let inst = generate_instance(&cfg)?;
            let outcome = sca::run(&inst, solver.tol, solver.max_iter);
            print_outcome(&inst, &outcome);
            if outcome.p_tot_watts.is_finite() {
                outcome.schedule.save(&out)?;
                println!("schedule: {}", out.display());
                Ok(0)
            } else {
                Ok(2)
            }
        }
        Cmd::Sweep {
            spec,
            preset,
            paper_scale,
            seed,
            trials,
            out,
            solver,
        } => {
            let mut spec = match (spec, preset) {
                (Some(path), None) => SweepSpec::load(&path)?,
                (None, Some(p)) => preset_sweep(p, paper_scale).ok_or_else(|| {
                    CliError::Usage(format!(
                        "preset {p} is a convergence probe; run it with the probe subcommand"
                    ))
                })?,
                _ => {
                    return Err(CliError::Usage(
                        "sweep needs exactly one of --spec or --preset".into(),
                    ))
                }
            };
            if let Some(s) = seed {
                spec.base.rng_seed = s;
            }
            if let Some(t) = trials {
                spec.trials = t;
            }
            let result = run_sweep(&spec, solver.tol, solver.max_iter)?;
            println!(
                "sweep over {} ({} trials per value)",
                spec.swept_parameter.label(),
                spec.trials
            );
            for row in &result.rows {
                println!(
                    "  {} = {}: mean p_tot {:.6e} W, std {:.3e}, infeasible {}, mean iters {:.1}",
                    spec.swept_parameter.label(),
                    row.swept,
                    row.mean_ptot_w,
                    row.std,
                    row.infeasible,
                    row.mean_iterations
                );
            }
            for path in emit(&result, &out)? {
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
        Cmd::Probe {
            config,
            preset,
            paper_scale,
            seed,
            out,
            solver,
        } => {
            let mut cfg = match (config, preset) {
                (Some(path), None) => ScenarioConfig::load(&path)?,
                (None, Some(p)) => preset_config(p, paper_scale),
                (None, None) => preset_config(Preset::Fig4, paper_scale),
                _ => {
                    return Err(CliError::Usage(
                        "probe takes at most one of --config or --preset".into(),
                    ))
                }
            };
            if let Some(s) = seed {
                cfg.rng_seed = s;
            }
            let outcome = run_convergence_probe(&cfg, solver.tol, solver.max_iter)?;
            let inst = generate_instance(&cfg)?;
            print_outcome(&inst, &outcome);
            let path = out.join("trace.csv");
            write_file(&path, trace_csv(&outcome))?;
            println!("wrote {}", path.display());
            Ok(if outcome.p_tot_watts.is_finite() { 0 } else { 2 })
        }
        Cmd::Oracle {
            config,
            seed,
            solver,
        } => {
            let cfg = load_config(&config, seed)?;
            let inst = generate_instance(&cfg)?;
            let oracle_res = oracle::exhaustive_solve(&inst)?;
            if oracle_res.feasible_found {
                println!(
                    "oracle: p_tot {:.9e} W over {} assignments",
                    oracle_res.best_p_tot, oracle_res.assignments_searched
                );
            } else {
                println!(
                    "oracle: no feasible assignment ({} searched)",
                    oracle_res.assignments_searched
                );
            }
            let outcome = sca::run(&inst, solver.tol, solver.max_iter);
            println!(
                "solver: p_tot {:.9e} W, status {}, {} iterations",
                outcome.p_tot_watts,
                status_name(outcome.status),
                outcome.iterations
            );
            if oracle_res.feasible_found && outcome.p_tot_watts.is_finite() {
                println!(
                    "ratio solver/oracle: {:.6}",
                    outcome.p_tot_watts / oracle_res.best_p_tot
                );
            }
            Ok(0)
        }
    }
}

fn main() {
    match run() {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
