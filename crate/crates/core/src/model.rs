//! Schedules and feasibility checking.
//!
//! A schedule is a binary PRB assignment plus per-PRB powers. Feasibility
//! means: each PRB carries at most one user, no assignment past a user's
//! deadline, powers within `[0, I * p_max]`, and every user's
//! finite-blocklength rate over its assigned PRBs covering its payload.

use std::fmt::Write as _;
use std::path::Path;

use crate::fbl;
use crate::scenario::ProblemInstance;
use crate::tensor::Tensor3;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("schedule dims {found:?} do not match instance dims {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
}

#[derive(Debug, thiserror::Error)]
pub enum ScheduleIoError {
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("schedule parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Binary assignment and power tensors for an M x N x K grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    /// `assign[m][n][k]` is 1 when PRB (m, n) carries user k.
    pub assign: Tensor3<u8>,
    /// Transmit power in watts; zero wherever `assign` is zero.
    pub power: Tensor3<f64>,
}

impl Schedule {
    pub fn empty(m: usize, n: usize, k: usize) -> Self {
        Schedule {
            assign: Tensor3::zeros(m, n, k),
            power: Tensor3::zeros(m, n, k),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.assign.dims()
    }

    /// Text form: dimensions plus one line per scheduled PRB with
    /// one-based indices and the power in watts.
    pub fn to_text(&self) -> String {
        let (m, n, k) = self.dims();
        let mut out = String::new();
        let _ = writeln!(out, "schedule v1");
        let _ = writeln!(out, "dims {m} {n} {k}");
        let _ = writeln!(out, "# entry <freq bin> <slot> <user> <power watts>, one-based");
        for ((im, in_, ik), &a) in self.assign.iter_indexed() {
            if a != 0 {
                let p = self.power[(im, in_, ik)];
                let _ = writeln!(out, "entry {} {} {} {}", im + 1, in_ + 1, ik + 1, p);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ScheduleIoError> {
        let perr = |line: usize, msg: String| ScheduleIoError::Parse { line, msg };
        let mut lines = text.lines().enumerate();
        let mut dims: Option<(usize, usize, usize)> = None;

        let (ln, first) = lines
            .next()
            .ok_or_else(|| perr(1, "empty file".into()))?;
        if first.trim() != "schedule v1" {
            return Err(perr(ln + 1, format!("expected 'schedule v1', got '{first}'")));
        }
        let mut schedule: Option<Schedule> = None;
        for (ln, raw) in lines {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("dims") => {
                    if dims.is_some() {
                        return Err(perr(ln + 1, "duplicate dims line".into()));
                    }
                    let vals: Vec<usize> = tok
                        .map(|t| t.parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| perr(ln + 1, format!("bad dims: {e}")))?;
                    if vals.len() != 3 || vals.contains(&0) {
                        return Err(perr(ln + 1, "dims needs three positive integers".into()));
                    }
                    dims = Some((vals[0], vals[1], vals[2]));
                    schedule = Some(Schedule::empty(vals[0], vals[1], vals[2]));
                }
                Some("entry") => {
                    let s = schedule
                        .as_mut()
                        .ok_or_else(|| perr(ln + 1, "entry before dims".into()))?;
                    let (m, n, k) = s.dims();
                    let fields: Vec<&str> = tok.collect();
                    if fields.len() != 4 {
                        return Err(perr(ln + 1, "entry needs 4 fields".into()));
                    }
                    let im: usize = fields[0]
                        .parse()
                        .map_err(|e| perr(ln + 1, format!("bad freq bin: {e}")))?;
                    let in_: usize = fields[1]
                        .parse()
                        .map_err(|e| perr(ln + 1, format!("bad slot: {e}")))?;
                    let ik: usize = fields[2]
                        .parse()
                        .map_err(|e| perr(ln + 1, format!("bad user: {e}")))?;
                    let p: f64 = fields[3]
                        .parse()
                        .map_err(|e| perr(ln + 1, format!("bad power: {e}")))?;
                    if im < 1 || im > m || in_ < 1 || in_ > n || ik < 1 || ik > k {
                        return Err(perr(ln + 1, format!("entry indices out of range: {line}")));
                    }
                    if !(p >= 0.0) || !p.is_finite() {
                        return Err(perr(ln + 1, format!("power must be finite and >= 0: {p}")));
                    }
                    let idx = (im - 1, in_ - 1, ik - 1);
                    if s.assign[idx] != 0 {
                        return Err(perr(ln + 1, format!("duplicate entry: {line}")));
                    }
                    s.assign[idx] = 1;
                    s.power[idx] = p;
                }
                Some(other) => {
                    return Err(perr(ln + 1, format!("unknown record '{other}'")));
                }
                None => {}
            }
        }
        schedule.ok_or_else(|| perr(1, "missing dims line".into()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScheduleIoError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| ScheduleIoError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScheduleIoError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScheduleIoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }
}

/// Which constraint a feasibility violation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    /// User rate below payload.
    Payload,
    /// More than one user on a PRB.
    PrbSingleUser,
    /// Assignment past the user's deadline.
    Deadline,
    /// Power outside `[0, I * p_max]`.
    PowerCap,
    /// Assignment entry not 0/1.
    AssignmentBinary,
}

/// Location of a violation: a user, a PRB, or a single tensor entry
/// (all zero-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationSite {
    User(usize),
    Prb(usize, usize),
    Entry(usize, usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Violation {
    pub kind: ConstraintKind,
    pub site: ViolationSite,
}

#[derive(Clone, Debug)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Rate used for the feasibility verdict (dispersion approximated as 1).
    pub per_user_rate: Vec<f64>,
    /// Exact-dispersion rate, for diagnostics only.
    pub per_user_rate_exact: Vec<f64>,
    pub violated: Vec<Violation>,
}

/// Total transmit power of a schedule in watts.
pub fn total_power(schedule: &Schedule) -> f64 {
    schedule
        .assign
        .iter_indexed()
        .map(|(idx, &a)| a as f64 * schedule.power[idx])
        .sum()
}

/// Rate-constraint slack floor: payload must be met up to
/// `1e-9 * max(1, B_k)` to absorb float roundoff, never more.
fn rate_tolerance(payload_bits: f64) -> f64 {
    1e-9 * payload_bits.max(1.0)
}

/// Verifies a schedule against an instance.
///
/// The verdict uses the same rate expression the optimizer constrains
/// (`fbl_rate_approx`); the exact-dispersion rates are reported alongside
/// for diagnostics.
pub fn check_feasible(
    inst: &ProblemInstance,
    schedule: &Schedule,
) -> Result<FeasibilityReport, ModelError> {
    let dims = inst.dims();
    if schedule.dims() != dims || schedule.power.dims() != dims {
        return Err(ModelError::DimensionMismatch {
            expected: dims,
            found: schedule.dims(),
        });
    }
    let (m, n, k) = dims;
    let p_max = inst.p_max_watts;
    let power_tol = 1e-9 * p_max.max(1.0);
    let mut violated = Vec::new();
    let mut user_snrs: Vec<Vec<f64>> = vec![Vec::new(); k];

    for im in 0..m {
        for in_ in 0..n {
            let mut users_here = 0u32;
            for ik in 0..k {
                let idx = (im, in_, ik);
                let a = schedule.assign[idx];
                let p = schedule.power[idx];
                if a > 1 {
                    violated.push(Violation {
                        kind: ConstraintKind::AssignmentBinary,
                        site: ViolationSite::Entry(im, in_, ik),
                    });
                }
                if a != 0 {
                    users_here += 1;
                    if in_ as u32 >= inst.qos[ik].deadline_slots {
                        violated.push(Violation {
                            kind: ConstraintKind::Deadline,
                            site: ViolationSite::Entry(im, in_, ik),
                        });
                    }
                    user_snrs[ik].push(inst.gains[idx] * p);
                }
                let cap = if a != 0 { p_max } else { 0.0 };
                if p < -power_tol || p > cap + power_tol {
                    violated.push(Violation {
                        kind: ConstraintKind::PowerCap,
                        site: ViolationSite::Entry(im, in_, ik),
                    });
                }
            }
            if users_here > 1 {
                violated.push(Violation {
                    kind: ConstraintKind::PrbSingleUser,
                    site: ViolationSite::Prb(im, in_),
                });
            }
        }
    }

    let mut per_user_rate = Vec::with_capacity(k);
    let mut per_user_rate_exact = Vec::with_capacity(k);
    for ik in 0..k {
        let q = &inst.qos[ik];
        let rate = fbl::fbl_rate_approx(&user_snrs[ik], q.error_prob);
        let rate_exact = fbl::fbl_rate_exact(&user_snrs[ik], q.error_prob);
        if rate < q.payload_bits - rate_tolerance(q.payload_bits) {
            violated.push(Violation {
                kind: ConstraintKind::Payload,
                site: ViolationSite::User(ik),
            });
        }
        per_user_rate.push(rate);
        per_user_rate_exact.push(rate_exact);
    }

    Ok(FeasibilityReport {
        feasible: violated.is_empty(),
        per_user_rate,
        per_user_rate_exact,
        violated,
    })
}

/// Maps a binary assignment and lifted powers back to schedule powers:
/// `P = p` where assigned, 0 elsewhere.
///
/// Panics if `assign` contains anything but 0/1; callers round first.
pub fn recover_solution(assign: &Tensor3<u8>, lifted_power: &Tensor3<f64>) -> Schedule {
    assert_eq!(
        assign.dims(),
        lifted_power.dims(),
        "recover_solution: dims mismatch"
    );
    let (m, n, k) = assign.dims();
    let mut power = Tensor3::zeros(m, n, k);
    for (idx, &a) in assign.iter_indexed() {
        assert!(a <= 1, "recover_solution: non-binary assignment at {idx:?}");
        if a == 1 {
            power[idx] = lifted_power[idx];
        }
    }
    Schedule {
        assign: assign.clone(),
        power,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::QosTriple;

    /// 1x1x1 instance with unit gain and an analytically obvious optimum.
    pub(crate) fn unit_instance(payload_bits: f64, error_prob: f64, p_max: f64) -> ProblemInstance {
        ProblemInstance {
            num_freq_bins: 1,
            num_slots: 1,
            num_users: 1,
            gains: Tensor3::filled(1, 1, 1, 1.0),
            qos: vec![QosTriple {
                payload_bits,
                deadline_slots: 1,
                error_prob,
            }],
            p_max_watts: p_max,
        }
    }

    #[test]
    fn unit_schedule_feasible() {
        // c = 1, B = 1 bit, penalty-free error prob 0.5: p = 1 gives
        // log2(1 + 1) = 1 bit exactly.
        let inst = unit_instance(1.0, 0.5, 10.0);
        let mut s = Schedule::empty(1, 1, 1);
        s.assign[(0, 0, 0)] = 1;
        s.power[(0, 0, 0)] = 1.0;
        let rep = check_feasible(&inst, &s).unwrap();
        assert!(rep.feasible, "{:?}", rep.violated);
        assert!((rep.per_user_rate[0] - 1.0).abs() < 1e-12);
        assert!((total_power(&s) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_schedule_misses_payload() {
        let inst = unit_instance(1.0, 0.5, 10.0);
        let s = Schedule::empty(1, 1, 1);
        let rep = check_feasible(&inst, &s).unwrap();
        assert!(!rep.feasible);
        assert_eq!(rep.violated.len(), 1);
        assert_eq!(rep.violated[0].kind, ConstraintKind::Payload);
        assert_eq!(rep.violated[0].site, ViolationSite::User(0));
        assert_eq!(rep.per_user_rate[0], 0.0);
    }

    #[test]
    fn zero_payload_empty_schedule_feasible() {
        let inst = unit_instance(0.0, 0.5, 10.0);
        let s = Schedule::empty(1, 1, 1);
        let rep = check_feasible(&inst, &s).unwrap();
        assert!(rep.feasible);
    }

    #[test]
    fn deadline_violation_detected() {
        let inst = ProblemInstance {
            num_freq_bins: 1,
            num_slots: 2,
            num_users: 1,
            gains: Tensor3::filled(1, 2, 1, 1000.0),
            qos: vec![QosTriple {
                payload_bits: 1.0,
                deadline_slots: 1,
                error_prob: 0.4,
            }],
            p_max_watts: 10.0,
        };
        let mut s = Schedule::empty(1, 2, 1);
        s.assign[(0, 1, 0)] = 1; // slot 2, past deadline 1
        s.power[(0, 1, 0)] = 1.0;
        let rep = check_feasible(&inst, &s).unwrap();
        assert!(!rep.feasible);
        assert!(rep
            .violated
            .iter()
            .any(|v| v.kind == ConstraintKind::Deadline
                && v.site == ViolationSite::Entry(0, 1, 0)));
    }

    #[test]
    fn shared_prb_detected() {
        let inst = ProblemInstance {
            num_freq_bins: 1,
            num_slots: 1,
            num_users: 2,
            gains: Tensor3::filled(1, 1, 2, 1000.0),
            qos: vec![
                QosTriple { payload_bits: 0.0, deadline_slots: 1, error_prob: 0.4 },
                QosTriple { payload_bits: 0.0, deadline_slots: 1, error_prob: 0.4 },
            ],
            p_max_watts: 10.0,
        };
        let mut s = Schedule::empty(1, 1, 2);
        s.assign[(0, 0, 0)] = 1;
        s.assign[(0, 0, 1)] = 1;
        let rep = check_feasible(&inst, &s).unwrap();
        assert!(rep
            .violated
            .iter()
            .any(|v| v.kind == ConstraintKind::PrbSingleUser && v.site == ViolationSite::Prb(0, 0)));
    }

    #[test]
    fn power_cap_detected() {
        let inst = unit_instance(0.0, 0.4, 1.0);
        let mut s = Schedule::empty(1, 1, 1);
        s.assign[(0, 0, 0)] = 1;
        s.power[(0, 0, 0)] = 1.5;
        let rep = check_feasible(&inst, &s).unwrap();
        assert!(rep
            .violated
            .iter()
            .any(|v| v.kind == ConstraintKind::PowerCap));
        // Power on an unassigned entry is also a cap violation.
        let mut s2 = Schedule::empty(1, 1, 1);
        s2.power[(0, 0, 0)] = 0.5;
        let rep2 = check_feasible(&inst, &s2).unwrap();
        assert!(rep2
            .violated
            .iter()
            .any(|v| v.kind == ConstraintKind::PowerCap));
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let inst = unit_instance(1.0, 0.4, 1.0);
        let s = Schedule::empty(2, 1, 1);
        assert!(matches!(
            check_feasible(&inst, &s),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn recover_keeps_assigned_powers() {
        let mut assign = Tensor3::<u8>::zeros(2, 2, 2);
        assign[(0, 0, 0)] = 1;
        assign[(1, 1, 1)] = 1;
        let lifted = Tensor3::from_fn(2, 2, 2, |m, n, k| (m + n + k) as f64 + 0.25);
        let s = recover_solution(&assign, &lifted);
        assert_eq!(s.power[(0, 0, 0)], 0.25);
        assert_eq!(s.power[(1, 1, 1)], 3.25);
        assert_eq!(s.power[(0, 1, 0)], 0.0);
        assert!((total_power(&s) - 3.5).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "non-binary")]
    fn recover_rejects_non_binary() {
        let mut assign = Tensor3::<u8>::zeros(1, 1, 1);
        assign[(0, 0, 0)] = 2;
        let lifted = Tensor3::<f64>::zeros(1, 1, 1);
        recover_solution(&assign, &lifted);
    }

    #[test]
    fn text_roundtrip() {
        let mut s = Schedule::empty(3, 2, 2);
        s.assign[(0, 1, 1)] = 1;
        s.power[(0, 1, 1)] = 0.1;
        s.assign[(2, 0, 0)] = 1;
        s.power[(2, 0, 0)] = 1.0 / 3.0;
        let text = s.to_text();
        let back = Schedule::from_text(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn text_rejects_malformed() {
        assert!(Schedule::from_text("").is_err());
        assert!(Schedule::from_text("schedule v1\n").is_err());
        assert!(Schedule::from_text("schedule v1\ndims 1 1\n").is_err());
        assert!(Schedule::from_text("schedule v1\ndims 1 1 1\nentry 2 1 1 0.5\n").is_err());
        assert!(Schedule::from_text("schedule v1\ndims 1 1 1\nentry 1 1 1 -0.5\n").is_err());
        assert!(Schedule::from_text(
            "schedule v1\ndims 1 1 1\nentry 1 1 1 0.5\nentry 1 1 1 0.25\n"
        )
        .is_err());
    }
}
