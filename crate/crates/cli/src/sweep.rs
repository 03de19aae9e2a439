//! Parameter sweeps over Monte-Carlo channel draws.
//!
//! A sweep varies one scenario parameter over a list of values and, for
//! each value, solves `trials` independently drawn instances. Trial `t`
//! uses the same derived seed at every swept value, so the values are
//! compared on identical channel draws (paired samples); this makes the
//! reported trends far less noisy than independent draws would be.
//!
//! Aggregation is deterministic regardless of how trials are scheduled
//! across threads: results are collected in trial order and reduced by
//! fixed-shape pairwise summation.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use urllc_sched::sca::{self, ScaStatus, SolveOutcome};
use urllc_sched::scenario::{generate_instance, ConfigError, ScenarioConfig};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse sweep spec: {0}")]
    Parse(String),
    #[error("invalid sweep spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Which scenario parameter a sweep varies.
///
/// Serialized names follow the conventional symbols; the plain field
/// names are accepted as aliases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweptParameter {
    /// Payload of every user, in bits.
    #[serde(rename = "payload_B", alias = "payload_bits")]
    PayloadBits,
    /// Number of active users; the base config must carry distances and
    /// QoS for the largest value, and a prefix of its users is kept.
    #[serde(rename = "num_users_K", alias = "num_users")]
    NumUsers,
    /// Deadline of the first user, in slots.
    #[serde(rename = "deadline_D1", alias = "deadline_first_user")]
    DeadlineFirstUser,
    /// Decoding error probability of every user.
    #[serde(rename = "error_prob_eps", alias = "error_prob_\u{3b5}", alias = "error_prob")]
    ErrorProb,
    /// Channel estimation error bound.
    #[serde(rename = "error_bound_delta", alias = "error_bound_\u{3b4}", alias = "error_bound")]
    ErrorBound,
}

impl SweptParameter {
    pub fn label(self) -> &'static str {
        match self {
            SweptParameter::PayloadBits => "payload_B",
            SweptParameter::NumUsers => "num_users_K",
            SweptParameter::DeadlineFirstUser => "deadline_D1",
            SweptParameter::ErrorProb => "error_prob_eps",
            SweptParameter::ErrorBound => "error_bound_delta",
        }
    }
}

/// A sweep: base scenario, the parameter to vary, its values, and the
/// Monte-Carlo trial count per value.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub swept_parameter: SweptParameter,
    pub values: Vec<f64>,
    pub trials: u32,
}

impl SweepSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let spec: SweepSpec =
            toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.base.validate()?;
        if self.values.is_empty() {
            return Err(HarnessError::Invalid("values must be nonempty".into()));
        }
        if self.trials < 1 {
            return Err(HarnessError::Invalid("trials must be at least 1".into()));
        }
        for &v in &self.values {
            // Surface a bad value before any trial runs.
            apply_value(&self.base, self.swept_parameter, v)?;
        }
        Ok(())
    }
}

/// Aggregates for one swept value. Means cover feasible trials only;
/// `infeasible` counts the excluded ones.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub swept: f64,
    pub mean_ptot_w: f64,
    pub std: f64,
    pub infeasible: u32,
    pub mean_iterations: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub swept_parameter: SweptParameter,
    pub rows: Vec<SweepRow>,
}

/// Seed for trial `t`: a splitmix64-style mix of the base seed and the
/// trial index. Independent of the swept value, so every value sees the
/// same channel draws, and appending trials or values never changes
/// existing ones.
pub fn trial_seed(base_seed: u64, trial: u32) -> u64 {
    let mut z = base_seed.wrapping_add((trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn require_integer(v: f64, what: &str) -> Result<usize, HarnessError> {
    if v.fract() != 0.0 || v < 1.0 || v > 1e9 {
        return Err(HarnessError::Invalid(format!(
            "{what} must be a positive integer, got {v}"
        )));
    }
    Ok(v as usize)
}

/// Returns the base config with one parameter replaced by the swept
/// value.
fn apply_value(
    base: &ScenarioConfig,
    param: SweptParameter,
    value: f64,
) -> Result<ScenarioConfig, HarnessError> {
    let mut cfg = base.clone();
    match param {
        SweptParameter::PayloadBits => {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(HarnessError::Invalid(format!(
                    "payload_B must be >= 0, got {value}"
                )));
            }
            for q in &mut cfg.qos {
                q.payload_bits = value;
            }
        }
        SweptParameter::NumUsers => {
            let k = require_integer(value, "num_users_K")?;
            if k > base.num_users {
                return Err(HarnessError::Invalid(format!(
                    "num_users_K {k} exceeds the {} users configured in base",
                    base.num_users
                )));
            }
            cfg.num_users = k;
            cfg.user_distances_m.truncate(k);
            cfg.qos.truncate(k);
        }
        SweptParameter::DeadlineFirstUser => {
            let d = require_integer(value, "deadline_D1")?;
            if d > base.num_slots {
                return Err(HarnessError::Invalid(format!(
                    "deadline_D1 {d} exceeds num_slots {}",
                    base.num_slots
                )));
            }
            cfg.qos[0].deadline_slots = d as u32;
        }
        SweptParameter::ErrorProb => {
            if !(value > 0.0 && value < 0.5) {
                return Err(HarnessError::Invalid(format!(
                    "error_prob_eps must lie in (0, 0.5), got {value}"
                )));
            }
            for q in &mut cfg.qos {
                q.error_prob = value;
            }
        }
        SweptParameter::ErrorBound => {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(HarnessError::Invalid(format!(
                    "error_bound_delta must be >= 0, got {value}"
                )));
            }
            cfg.error_bound = value;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

struct TrialOutcome {
    p_tot_watts: f64,
    iterations: u32,
}

/// Fixed-shape pairwise sum: the reduction tree depends only on the
/// slice length, never on thread scheduling.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn aggregate(swept: f64, outcomes: &[TrialOutcome]) -> SweepRow {
    let feasible: Vec<&TrialOutcome> = outcomes
        .iter()
        .filter(|t| t.p_tot_watts.is_finite())
        .collect();
    let infeasible = (outcomes.len() - feasible.len()) as u32;
    let n = feasible.len();
    if n == 0 {
        return SweepRow {
            swept,
            mean_ptot_w: f64::NAN,
            std: f64::NAN,
            infeasible,
            mean_iterations: f64::NAN,
        };
    }
    let p: Vec<f64> = feasible.iter().map(|t| t.p_tot_watts).collect();
    let mean = pairwise_sum(&p) / n as f64;
    let sq: Vec<f64> = p.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let std = if n > 1 {
        (pairwise_sum(&sq) / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let iters: Vec<f64> = feasible.iter().map(|t| t.iterations as f64).collect();
    let mean_iterations = pairwise_sum(&iters) / n as f64;
    SweepRow {
        swept,
        mean_ptot_w: mean,
        std,
        infeasible,
        mean_iterations,
    }
}

/// Runs the sweep: for each value and trial, draws an instance and
/// solves it. Trials run in parallel; a trial that produces no feasible
/// schedule is counted, never fatal. Deterministic for a fixed spec.
pub fn run_sweep(
    spec: &SweepSpec,
    tol_watts: f64,
    max_iterations: u32,
) -> Result<SweepResult, HarnessError> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.values.len());
    for &value in &spec.values {
        let cfg = apply_value(&spec.base, spec.swept_parameter, value)?;
        let outcomes: Vec<TrialOutcome> = (0..spec.trials)
            .into_par_iter()
            .map(|trial| {
                let mut c = cfg.clone();
                c.rng_seed = trial_seed(spec.base.rng_seed, trial);
                let trial_run = generate_instance(&c)
                    .map(|inst| sca::run(&inst, tol_watts, max_iterations));
                match trial_run {
                    Ok(out) => TrialOutcome {
                        p_tot_watts: out.p_tot_watts,
                        iterations: out.iterations,
                    },
                    // The per-value config was validated up front; a draw
                    // cannot fail, but stay non-fatal per the contract.
                    Err(_) => TrialOutcome {
                        p_tot_watts: f64::INFINITY,
                        iterations: 0,
                    },
                }
            })
            .collect();
        rows.push(aggregate(value, &outcomes));
    }
    Ok(SweepResult {
        swept_parameter: spec.swept_parameter,
        rows,
    })
}

/// One full solve with its per-iteration trace.
pub fn run_convergence_probe(
    cfg: &ScenarioConfig,
    tol_watts: f64,
    max_iterations: u32,
) -> Result<SolveOutcome, HarnessError> {
    let inst = generate_instance(cfg)?;
    Ok(sca::run(&inst, tol_watts, max_iterations))
}

/// CSV body for a sweep result. Floats use Rust's shortest-roundtrip
/// formatting: locale-independent, always '.' for decimals.
pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from("swept,mean_ptot_w,std,infeasible,iters\n");
    for r in &result.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.swept, r.mean_ptot_w, r.std, r.infeasible, r.mean_iterations
        ));
    }
    out
}

fn plot_script(param_label: &str) -> String {
    format!(
        r#"#!/usr/bin/env python3
"""Plot mean total power against the swept parameter from sweep.csv."""
import csv
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "sweep.csv"
xs, ys, errs = [], [], []
with open(path) as f:
    for row in csv.DictReader(f):
        xs.append(float(row["swept"]))
        ys.append(float(row["mean_ptot_w"]))
        errs.append(float(row["std"]))

plt.errorbar(xs, ys, yerr=errs, marker="o", capsize=3)
plt.xlabel("{param_label}")
plt.ylabel("mean total power [W]")
plt.grid(True, alpha=0.4)
plt.tight_layout()
plt.savefig("sweep.png", dpi=150)
print("wrote sweep.png")
"#
    )
}

/// Writes `sweep.csv` and `plot.py` into `out_dir`; returns the paths.
pub fn emit(result: &SweepResult, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = out_dir.as_ref();
    let write = |name: &str, body: String| -> Result<PathBuf, HarnessError> {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(path)
    };
    let csv = write("sweep.csv", sweep_csv(result))?;
    let plot = write("plot.py", plot_script(result.swept_parameter.label()))?;
    Ok(vec![csv, plot])
}

/// True when the outcome delivered a feasible schedule.
pub fn is_feasible_outcome(out: &SolveOutcome) -> bool {
    out.p_tot_watts.is_finite()
        && matches!(out.status, ScaStatus::Converged | ScaStatus::IterationCap)
}
