//! Monte-Carlo harness around the scheduler: parameter sweeps with
//! paired random draws, convergence probes, and CSV/plot-script output.

pub mod presets;
pub mod sweep;

pub use presets::{preset_config, preset_sweep, Preset};
pub use sweep::{
    run_convergence_probe, run_sweep, trial_seed, HarnessError, SweepResult, SweepRow, SweepSpec,
    SweptParameter,
};
