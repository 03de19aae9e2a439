//! Outer successive-convex-approximation loop.
//!
//! Each pass anchors the sqrt penalty at the previous assignment mass,
//! solves the convex restriction, then updates the anchors and the
//! reweighting multipliers `W = 1/(I + xi)`. The reweighted exclusivity
//! constraint `sum_k W I <= 1` penalizes fractional sharing a little more
//! on every pass, which drives the relaxation toward binary assignments;
//! exactly binary points are fixpoints of the update. The loop stops when
//! the total power changes by less than the tolerance between passes,
//! after which assignments are rounded and powers restored by exact
//! per-user waterfilling.

use crate::fbl;
use crate::model::{self, Schedule};
use crate::oracle;
use crate::scenario::ProblemInstance;
use crate::subproblem::{self, ConvexSubproblem, SubproblemSolution, SubproblemStatus};
use crate::tensor::Tensor3;

pub const DEFAULT_TOLERANCE_WATTS: f64 = 1e-6;
pub const DEFAULT_MAX_ITERATIONS: u32 = 200;
/// Reweighting offset xi in `W = 1/(I + xi)`.
pub const DEFAULT_XI: f64 = 0.01;
/// Assignment shares at or above this round to 1 (per-PRB argmax only).
pub const ROUND_THRESHOLD: f64 = 0.5;
/// How many times a run may loosen an infeasible restriction before
/// declaring the instance infeasible.
const MAX_RESTORATIONS: u32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum ScaError {
    #[error("user {user} has positive payload but no usable PRB before its deadline")]
    Unservable { user: usize },
    #[error("convex restriction infeasible at iteration {iteration}")]
    SubproblemInfeasible { iteration: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaStatus {
    Converged,
    Infeasible,
    IterationCap,
    RoundingFailed,
}

#[derive(Clone, Copy, Debug)]
pub struct TraceRow {
    pub iteration: u32,
    pub p_tot_watts: f64,
    pub delta_watts: f64,
    /// max over eligible entries of min(I, 1 - I); 0 when fully binary.
    pub max_fractionality: f64,
}

#[derive(Clone, Debug)]
pub struct ScaState {
    pub iteration: u32,
    pub assign_frac: Tensor3<f64>,
    pub power: Tensor3<f64>,
    /// Per-user assignment mass, the next pass's sqrt anchor.
    pub x: Vec<f64>,
    pub weights: Tensor3<f64>,
    pub p_tot_trace: Vec<f64>,
    pub delta_watts: f64,
    pub xi: f64,
    mask: Tensor3<bool>,
    newton_steps: u32,
}

impl ScaState {
    pub fn max_fractionality(&self) -> f64 {
        let mut worst = 0.0f64;
        for (idx, &v) in self.assign_frac.iter_indexed() {
            if self.mask[idx] {
                worst = worst.max(v.min(1.0 - v));
            }
        }
        worst
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub schedule: Schedule,
    /// Total transmit power of `schedule`; infinite when no feasible
    /// schedule was produced.
    pub p_tot_watts: f64,
    pub iterations: u32,
    pub trace: Vec<TraceRow>,
    pub status: ScaStatus,
    pub newton_steps: u32,
}

/// Entries a user may ever hold: before the deadline, positive payload,
/// positive worst-case gain (a zero gain can never carry bits, so
/// excluding it loses nothing).
fn eligibility_mask(inst: &ProblemInstance) -> Tensor3<bool> {
    let (m, n, k) = inst.dims();
    Tensor3::from_fn(m, n, k, |im, in_, ik| {
        let q = &inst.qos[ik];
        q.payload_bits > 0.0
            && (in_ as u32) < q.deadline_slots
            && inst.gains[(im, in_, ik)] > 0.0
    })
}

fn reweight(i_frac: &Tensor3<f64>, xi: f64) -> Tensor3<f64> {
    let (m, n, k) = i_frac.dims();
    Tensor3::from_fn(m, n, k, |im, in_, ik| 1.0 / (i_frac[(im, in_, ik)] + xi))
}

/// Unit weights and a greedy binary starting assignment: users in
/// deadline order take turns claiming their best-gain free PRB until each
/// holds its share of the grid (scaled by how much of the frame its
/// deadline leaves open) or nothing claimable remains.
pub fn initialize(inst: &ProblemInstance) -> Result<ScaState, ScaError> {
    let (m, n, k) = inst.dims();
    let mask = eligibility_mask(inst);

    let mut active: Vec<usize> = Vec::new();
    for ik in 0..k {
        if inst.qos[ik].payload_bits <= 0.0 {
            continue;
        }
        let mut any = false;
        for im in 0..m {
            for in_ in 0..n {
                if mask[(im, in_, ik)] {
                    any = true;
                }
            }
        }
        if !any {
            return Err(ScaError::Unservable { user: ik });
        }
        active.push(ik);
    }
    active.sort_by_key(|&ik| (inst.qos[ik].deadline_slots, ik));

    let mut assign_frac = Tensor3::zeros(m, n, k);
    let mut x = vec![0.0f64; k];
    if !active.is_empty() {
        let share = (m * n) / active.len();
        let mut target = vec![0usize; k];
        for &ik in &active {
            let elig_slots = (inst.qos[ik].deadline_slots as usize).min(n);
            let mut elig_count = 0usize;
            for im in 0..m {
                for in_ in 0..n {
                    if mask[(im, in_, ik)] {
                        elig_count += 1;
                    }
                }
            }
            target[ik] = (share * elig_slots / n).max(1).min(elig_count);
        }
        let mut taken = vec![false; m * n];
        let mut counts = vec![0usize; k];
        loop {
            let mut progressed = false;
            for &ik in &active {
                if counts[ik] >= target[ik] {
                    continue;
                }
                let mut best: Option<((usize, usize), f64)> = None;
                for im in 0..m {
                    for in_ in 0..n {
                        if taken[im * n + in_] || !mask[(im, in_, ik)] {
                            continue;
                        }
                        let g = inst.gains[(im, in_, ik)];
                        if best.map_or(true, |(_, bg)| g > bg) {
                            best = Some(((im, in_), g));
                        }
                    }
                }
                if let Some(((im, in_), _)) = best {
                    taken[im * n + in_] = true;
                    assign_frac[(im, in_, ik)] = 1.0;
                    counts[ik] += 1;
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        for &ik in &active {
            x[ik] = counts[ik] as f64;
        }
    }

    Ok(ScaState {
        iteration: 0,
        assign_frac,
        power: Tensor3::zeros(m, n, k),
        x,
        weights: Tensor3::filled(m, n, k, 1.0),
        p_tot_trace: vec![0.0],
        delta_watts: 1.0,
        xi: DEFAULT_XI,
        mask,
        newton_steps: 0,
    })
}

/// One outer pass: solve the restriction anchored at the current state,
/// then refresh anchors, weights, and the convergence gap.
pub fn iterate(state: &ScaState, inst: &ProblemInstance) -> Result<ScaState, ScaError> {
    let (_, _, k) = inst.dims();
    let sp = ConvexSubproblem {
        gains: inst.gains.clone(),
        mask: state.mask.clone(),
        weights: state.weights.clone(),
        payload_bits: inst.qos.iter().map(|q| q.payload_bits).collect(),
        q_factor: inst
            .qos
            .iter()
            .map(|q| {
                if q.payload_bits > 0.0 {
                    fbl::q_inverse(q.error_prob) / fbl::LN2
                } else {
                    0.0
                }
            })
            .collect(),
        x_anchor: state
            .x
            .iter()
            .map(|&x| if x > 0.0 { x } else { 1.0 })
            .collect(),
        p_max_watts: inst.p_max_watts,
    };
    let warm_sol;
    let warm = if state.iteration == 0 {
        None
    } else {
        warm_sol = SubproblemSolution {
            assign_frac: state.assign_frac.clone(),
            power: state.power.clone(),
            objective_watts: *state.p_tot_trace.last().expect("trace never empty"),
            kkt_residual: 0.0,
            newton_steps: 0,
            status: SubproblemStatus::Optimal,
        };
        Some(&warm_sol)
    };
    let sol = subproblem::solve(&sp, warm);
    if sol.status == SubproblemStatus::Infeasible {
        return Err(ScaError::SubproblemInfeasible { iteration: state.iteration + 1 });
    }

    let mut x = vec![0.0f64; k];
    for ((_, _, ik), v) in sol.assign_frac.iter_indexed() {
        x[ik] += *v;
    }
    let weights = reweight(&sol.assign_frac, state.xi);
    let p_tot = sol.objective_watts;
    let prev = *state.p_tot_trace.last().expect("trace never empty");
    let mut p_tot_trace = state.p_tot_trace.clone();
    p_tot_trace.push(p_tot);
    Ok(ScaState {
        iteration: state.iteration + 1,
        assign_frac: sol.assign_frac,
        power: sol.power,
        x,
        weights,
        p_tot_trace,
        delta_watts: (p_tot - prev).abs(),
        xi: state.xi,
        mask: state.mask.clone(),
        newton_steps: state.newton_steps + sol.newton_steps,
    })
}

/// A copy of `state` with unit weights and sqrt anchors at each user's
/// full eligible mass: the loosest restriction the scheme allows, used
/// to recover from an infeasible reweighted subproblem.
fn loosen(state: &ScaState) -> ScaState {
    let (m, n, k) = state.weights.dims();
    let mut eligible = vec![0.0f64; k];
    for ((_, _, ik), &open) in state.mask.iter_indexed() {
        if open {
            eligible[ik] += 1.0;
        }
    }
    let mut out = state.clone();
    out.weights = Tensor3::from_fn(m, n, k, |_, _, _| 1.0);
    out.x = eligible;
    out
}

/// Round assignment shares: on each PRB the largest share wins if it
/// reaches the threshold (ties to the lowest user index); everything else
/// drops to zero.
pub fn binarize(i_frac: &Tensor3<f64>, threshold: f64) -> Tensor3<u8> {
    let (m, n, k) = i_frac.dims();
    let mut out = Tensor3::zeros(m, n, k);
    for im in 0..m {
        for in_ in 0..n {
            let mut best: Option<(usize, f64)> = None;
            for ik in 0..k {
                let v = i_frac[(im, in_, ik)];
                if v > 0.0 && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((ik, v));
                }
            }
            if let Some((ik, v)) = best {
                if v >= threshold {
                    out[(im, in_, ik)] = 1;
                }
            }
        }
    }
    out
}

/// Keep the rounded assignment, rebuild powers exactly by per-user
/// waterfilling. `None` when some user's demand is unattainable on the
/// PRBs the rounding left it.
/// Greedy completion when the rounded assignment cannot carry some
/// user's payload: give that user the eligible PRB where its fractional
/// share was largest and re-check everyone, moving each PRB at most
/// once. Returns the polished schedule of the first assignment where
/// every waterfilling succeeds.
fn repair_rounding(
    inst: &ProblemInstance,
    frac: &Tensor3<f64>,
    rounded: &Tensor3<u8>,
) -> Option<Schedule> {
    let (m, n, k) = inst.dims();
    let mask = eligibility_mask(inst);
    let mut assign = rounded.clone();
    let mut moved = vec![false; m * n];

    let shortfall_user = |assign: &Tensor3<u8>| -> Option<usize> {
        (0..k).find(|&ik| {
            let q = &inst.qos[ik];
            if q.payload_bits <= 0.0 {
                return false;
            }
            let gains: Vec<f64> = assign
                .iter_indexed()
                .filter(|&((_, _, j), &a)| j == ik && a == 1)
                .map(|(idx, _)| inst.gains[idx])
                .collect();
            if gains.is_empty() {
                return true;
            }
            oracle::min_power_fixed_assignment(
                &gains,
                q.payload_bits,
                q.error_prob,
                inst.p_max_watts,
            )
            .is_none()
        })
    };

    for _ in 0..m * n {
        let ik = match shortfall_user(&assign) {
            Some(u) => u,
            None => return polish_powers(inst, &assign),
        };
        // Best not-yet-moved PRB this user may hold but does not.
        let mut best: Option<((usize, usize), f64)> = None;
        for im in 0..m {
            for in_ in 0..n {
                if moved[im * n + in_]
                    || !mask[(im, in_, ik)]
                    || assign[(im, in_, ik)] == 1
                {
                    continue;
                }
                let share = frac[(im, in_, ik)];
                if best.map_or(true, |(_, s)| share > s) {
                    best = Some(((im, in_), share));
                }
            }
        }
        let ((im, in_), _) = best?;
        moved[im * n + in_] = true;
        for j in 0..k {
            assign[(im, in_, j)] = u8::from(j == ik);
        }
    }
    None
}

fn polish_powers(inst: &ProblemInstance, assign: &Tensor3<u8>) -> Option<Schedule> {
    let (m, n, k) = inst.dims();
    let mut schedule = Schedule {
        assign: assign.clone(),
        power: Tensor3::zeros(m, n, k),
    };
    for ik in 0..k {
        let q = &inst.qos[ik];
        if q.payload_bits <= 0.0 {
            continue;
        }
        let mut slots: Vec<(usize, usize)> = Vec::new();
        let mut gains: Vec<f64> = Vec::new();
        for im in 0..m {
            for in_ in 0..n {
                if schedule.assign[(im, in_, ik)] == 1 {
                    slots.push((im, in_));
                    gains.push(inst.gains[(im, in_, ik)]);
                }
            }
        }
        if gains.is_empty() {
            return None;
        }
        let (powers, _) = oracle::min_power_fixed_assignment(
            &gains,
            q.payload_bits,
            q.error_prob,
            inst.p_max_watts,
        )?;
        for ((im, in_), p) in slots.into_iter().zip(powers) {
            schedule.power[(im, in_, ik)] = p;
        }
    }
    Some(schedule)
}

/// Full pipeline: initialize, iterate until the total-power gap drops
/// below `tol_watts` (or `max_iter`), then round and polish.
pub fn run(inst: &ProblemInstance, tol_watts: f64, max_iter: u32) -> SolveOutcome {
    assert!(tol_watts > 0.0, "tolerance must be positive");
    let (m, n, k) = inst.dims();
    let mut trace: Vec<TraceRow> = Vec::new();

    let mut state = match initialize(inst) {
        Ok(s) => s,
        Err(_) => {
            return SolveOutcome {
                schedule: Schedule::empty(m, n, k),
                p_tot_watts: f64::INFINITY,
                iterations: 0,
                trace,
                status: ScaStatus::Infeasible,
                newton_steps: 0,
            };
        }
    };

    let mut converged = false;
    let mut stalled = false;
    let mut restorations = 0u32;
    while state.iteration < max_iter {
        state = match iterate(&state, inst) {
            Ok(s) => s,
            // An infeasible restriction does not prove the instance
            // infeasible: the sqrt tangent under-reaches when the anchor
            // sits far below the needed assignment mass, and after a
            // reweight a point sharing PRBs evenly violates the new
            // weighted budget outright. Loosen both once (unit weights,
            // anchors at full eligible mass) and continue from the same
            // iterate; only when loosening is exhausted or itself comes
            // back infeasible is the instance declared infeasible.
            Err(_) => {
                let loosened = if restorations < MAX_RESTORATIONS {
                    restorations += 1;
                    iterate(&loosen(&state), inst).ok()
                } else {
                    None
                };
                match loosened {
                    Some(s) => s,
                    None => {
                        stalled = true;
                        break;
                    }
                }
            }
        };
        trace.push(TraceRow {
            iteration: state.iteration,
            p_tot_watts: *state.p_tot_trace.last().expect("trace never empty"),
            delta_watts: state.delta_watts,
            max_fractionality: state.max_fractionality(),
        });
        if state.delta_watts < tol_watts {
            converged = true;
            break;
        }
    }

    let assign = binarize(&state.assign_frac, ROUND_THRESHOLD);
    let polished = polish_powers(inst, &assign)
        .or_else(|| repair_rounding(inst, &state.assign_frac, &assign));
    let (schedule, p_tot_watts, status) = match polished {
        Some(s) => {
            let report = model::check_feasible(inst, &s).expect("schedule dims match instance");
            if report.feasible {
                let p = model::total_power(&s);
                let st = if converged {
                    ScaStatus::Converged
                } else {
                    ScaStatus::IterationCap
                };
                (s, p, st)
            } else if stalled {
                (Schedule::empty(m, n, k), f64::INFINITY, ScaStatus::Infeasible)
            } else {
                (s, f64::INFINITY, ScaStatus::RoundingFailed)
            }
        }
        None if stalled => {
            // The restriction chain died and no binary completion
            // carries the payloads: report the instance infeasible.
            (Schedule::empty(m, n, k), f64::INFINITY, ScaStatus::Infeasible)
        }
        None => {
            let mut s = Schedule::empty(m, n, k);
            s.assign = assign;
            (s, f64::INFINITY, ScaStatus::RoundingFailed)
        }
    };

    SolveOutcome {
        schedule,
        p_tot_watts,
        iterations: state.iteration,
        trace,
        status,
        newton_steps: state.newton_steps,
    }
}
