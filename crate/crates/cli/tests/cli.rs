//! End-to-end tests of the command-line binary: every subcommand is
//! exercised through a real process, checking exit codes, emitted
//! files, and report lines.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use urllc_sched::model::Schedule;
use urllc_sched::scenario::ScenarioConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_urllc-sched"))
}

fn workdir() -> TempDir {
    tempfile::tempdir().unwrap()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A small two-user scenario with mid-cell users; comfortably feasible.
const EASY: &str = r#"
num_freq_bins = 3
num_slots = 2
num_users = 2
prb_bandwidth_hz = 180e3
noise_psd_dbm_per_hz = -169.0
cell_radius_m = 200.0
user_distances_m = [100.0, 120.0]
error_bound = 0.05
p_max_dbm = 23.0
rng_seed = 11
[[qos]]
payload_bits = 6.0
deadline_slots = 2
error_prob = 1e-3
[[qos]]
payload_bits = 9.0
deadline_slots = 2
error_prob = 1e-4
"#;

/// Same grid, but a payload no power level can carry.
const HOPELESS: &str = r#"
num_freq_bins = 2
num_slots = 2
num_users = 2
prb_bandwidth_hz = 180e3
noise_psd_dbm_per_hz = -169.0
cell_radius_m = 200.0
user_distances_m = [200.0, 200.0]
error_bound = 0.05
p_max_dbm = 23.0
rng_seed = 3
[[qos]]
payload_bits = 500.0
deadline_slots = 2
error_prob = 1e-6
[[qos]]
payload_bits = 500.0
deadline_slots = 2
error_prob = 1e-6
"#;

fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn gen_template_is_a_loadable_config() {
    let dir = workdir();
    let out_path = dir.path().join("scenario.toml");
    let out = bin()
        .args(["gen", "--out"])
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "gen failed: {}", stderr_of(&out));
    let cfg = ScenarioConfig::load(&out_path).expect("template should parse and validate");
    assert_eq!(cfg.num_users, cfg.qos.len());
}

#[test]
fn gen_preset_applies_seed_override() {
    let dir = workdir();
    let out_path = dir.path().join("fig2.toml");
    let out = bin()
        .args(["gen", "--preset", "fig2", "--seed", "4242", "--out"])
        .arg(&out_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "gen failed: {}", stderr_of(&out));
    let cfg = ScenarioConfig::load(&out_path).unwrap();
    assert_eq!(cfg.rng_seed, 4242);
}

#[test]
fn solve_writes_a_feasible_schedule() {
    let dir = workdir();
    let cfg_path = write_cfg(dir.path(), "easy.toml", EASY);
    let sched_path = dir.path().join("schedule.txt");
    let out = bin()
        .arg("solve")
        .arg(&cfg_path)
        .args(["--out"])
        .arg(&sched_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("status: converged"), "report:\n{text}");
    assert!(text.contains("total power:"), "report:\n{text}");

    let sched = Schedule::load(&sched_path).expect("saved schedule should round-trip");
    let cfg = ScenarioConfig::load(&cfg_path).unwrap();
    let inst = urllc_sched::scenario::generate_instance(&cfg).unwrap();
    let report = urllc_sched::model::check_feasible(&inst, &sched).unwrap();
    assert!(report.feasible, "violations: {:?}", report.violated);
}

#[test]
fn solve_exits_two_when_nothing_fits() {
    let dir = workdir();
    let cfg_path = write_cfg(dir.path(), "hopeless.toml", HOPELESS);
    let out = bin()
        .arg("solve")
        .arg(&cfg_path)
        .args(["--out"])
        .arg(dir.path().join("schedule.txt"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stdout: {}", stdout_of(&out));
    assert!(stdout_of(&out).contains("no feasible schedule"));
}

#[test]
fn probe_writes_iteration_trace() {
    let dir = workdir();
    let cfg_path = write_cfg(dir.path(), "easy.toml", EASY);
    let out = bin()
        .args(["probe", "--config"])
        .arg(&cfg_path)
        .args(["--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iter,p_tot_w,delta_w,max_frac"));
    let first = lines.next().expect("at least one iteration row");
    assert_eq!(first.split(',').count(), 4);
}

#[test]
fn oracle_reports_both_sides_of_the_comparison() {
    let dir = workdir();
    let cfg_path = write_cfg(dir.path(), "easy.toml", EASY);
    let out = bin().arg("oracle").arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("oracle: p_tot"), "report:\n{text}");
    assert!(text.contains("solver: p_tot"), "report:\n{text}");
    assert!(text.contains("ratio solver/oracle:"), "report:\n{text}");
}

#[test]
fn sweep_preset_emits_csv_and_plot_script() {
    let dir = workdir();
    let out = bin()
        .args(["sweep", "--preset", "fig2", "--trials", "2", "--max-iter", "40", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("swept,mean_ptot_w,std,infeasible,iters\n"));
    assert!(dir.path().join("plot.py").exists());
}

#[test]
fn sweep_requires_exactly_one_source() {
    let out = bin().arg("sweep").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("exactly one of --spec or --preset"));
}

#[test]
fn sweep_rejects_probe_only_preset() {
    let out = bin().args(["sweep", "--preset", "fig4"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("convergence probe"));
}
