//! Scenario configuration and worst-case instance generation.
//!
//! Channel estimates are drawn i.i.d. circularly-symmetric complex
//! Gaussian per (PRB, slot, user); the true channel is the estimate plus
//! a bounded error `|e| <= delta`. Scheduling is done against the
//! worst-case error, which for magnitude-based SNR is the one pointing
//! against the estimate, giving effective gain
//!
//! ```text
//! c = alpha * max(|h_hat| - delta, 0)^2 / sigma^2     [1/W]
//! ```
//!
//! with distance-dependent path loss `alpha` and per-PRB noise power
//! `sigma^2`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::tensor::Tensor3;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Per-user QoS requirement triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosTriple {
    /// Payload to deliver within the deadline, in bits.
    pub payload_bits: f64,
    /// Last usable slot, one-based: slots n with n <= deadline are eligible.
    pub deadline_slots: u32,
    /// Decoding error probability target.
    pub error_prob: f64,
}

/// Full scenario description, loadable from a TOML file.
///
/// Unknown keys are rejected so a typo cannot silently fall back to a
/// default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Frequency bins per slot (M).
    pub num_freq_bins: usize,
    /// Slots in the scheduling window (N).
    pub num_slots: usize,
    /// Users (K).
    pub num_users: usize,
    /// PRB bandwidth in Hz.
    pub prb_bandwidth_hz: f64,
    /// Noise power spectral density in dBm/Hz.
    pub noise_psd_dbm_per_hz: f64,
    /// Cell radius in meters; user distances may not exceed it.
    pub cell_radius_m: f64,
    /// Per-user distance from the base station in meters (length K).
    pub user_distances_m: Vec<f64>,
    /// Channel estimation error bound (delta), same scale as the
    /// unit-variance channel estimate.
    pub error_bound: f64,
    /// Per-PRB transmit power cap in dBm.
    pub p_max_dbm: f64,
    /// Seed for the channel draw.
    pub rng_seed: u64,
    /// Per-user QoS (length K).
    pub qos: Vec<QosTriple>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.num_freq_bins == 0 || self.num_slots == 0 || self.num_users == 0 {
            return fail("num_freq_bins, num_slots and num_users must be at least 1".into());
        }
        if !(self.prb_bandwidth_hz > 0.0) {
            return fail(format!("prb_bandwidth_hz must be positive, got {}", self.prb_bandwidth_hz));
        }
        if !self.noise_psd_dbm_per_hz.is_finite() || !self.p_max_dbm.is_finite() {
            return fail("noise_psd_dbm_per_hz and p_max_dbm must be finite".into());
        }
        if !(self.cell_radius_m > 0.0) {
            return fail(format!("cell_radius_m must be positive, got {}", self.cell_radius_m));
        }
        if self.user_distances_m.len() != self.num_users {
            return fail(format!(
                "user_distances_m has {} entries for {} users",
                self.user_distances_m.len(),
                self.num_users
            ));
        }
        for (k, &d) in self.user_distances_m.iter().enumerate() {
            if !(d > 0.0 && d <= self.cell_radius_m) {
                return fail(format!(
                    "user {} distance {} outside (0, {}]",
                    k + 1,
                    d,
                    self.cell_radius_m
                ));
            }
        }
        if !(self.error_bound >= 0.0 && self.error_bound.is_finite()) {
            return fail(format!("error_bound must be >= 0, got {}", self.error_bound));
        }
        if self.qos.len() != self.num_users {
            return fail(format!(
                "qos has {} entries for {} users",
                self.qos.len(),
                self.num_users
            ));
        }
        for (k, q) in self.qos.iter().enumerate() {
            if !(q.payload_bits >= 0.0 && q.payload_bits.is_finite()) {
                return fail(format!(
                    "user {} payload_bits must be >= 0, got {}",
                    k + 1,
                    q.payload_bits
                ));
            }
            if q.deadline_slots < 1 || q.deadline_slots as usize > self.num_slots {
                return fail(format!(
                    "user {} deadline_slots {} outside 1..={}",
                    k + 1,
                    q.deadline_slots,
                    self.num_slots
                ));
            }
            if !(q.error_prob > 0.0 && q.error_prob < 0.5) {
                return fail(format!(
                    "user {} error_prob must lie in (0, 0.5), got {}",
                    k + 1,
                    q.error_prob
                ));
            }
        }
        Ok(())
    }

    /// Per-PRB power cap in watts.
    pub fn p_max_watts(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm)
    }

    /// Noise power over one PRB in watts.
    pub fn noise_power_watts(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_per_hz) * self.prb_bandwidth_hz
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0 - 3.0)
}

/// Distance-based path loss gain `10^(-(35.3 + 37.6 log10 d) / 10)`.
pub fn path_loss_gain(distance_m: f64) -> f64 {
    assert!(distance_m > 0.0, "path_loss_gain: distance must be positive");
    10f64.powf(-(35.3 + 37.6 * distance_m.log10()) / 10.0)
}

/// Worst-case estimation error for estimate `h_hat` under bound `delta`:
/// the error pointing against the estimate, `e* = -(h_hat / |h_hat|) *
/// delta`. When the bound exceeds the estimate's magnitude the adversary
/// nulls the channel exactly with `e* = -h_hat`; overshooting past zero
/// would only help the link.
pub fn worst_case_error(h_hat: Complex64, delta: f64) -> Complex64 {
    assert!(delta >= 0.0, "worst_case_error: delta must be >= 0");
    let mag = h_hat.norm();
    if mag <= delta {
        -h_hat
    } else {
        -(h_hat / mag) * delta
    }
}

/// Worst-case squared channel magnitude: `max(|h_hat| - delta, 0)^2`.
///
/// The clamp matters: with `|h_hat| < delta` the adversary can null the
/// channel entirely, and the unclamped square would spuriously reward it.
pub fn worst_case_gain(h_hat: Complex64, delta: f64) -> f64 {
    let g = (h_hat.norm() - delta).max(0.0);
    g * g
}

/// A generated problem instance: worst-case effective gains plus QoS.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub num_freq_bins: usize,
    pub num_slots: usize,
    pub num_users: usize,
    /// Effective worst-case gain `c[m][n][k]` in 1/W: SNR = c * power.
    pub gains: Tensor3<f64>,
    pub qos: Vec<QosTriple>,
    /// Per-PRB power cap in watts.
    pub p_max_watts: f64,
}

impl ProblemInstance {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.num_freq_bins, self.num_slots, self.num_users)
    }
}

/// Draws channel estimates and builds the worst-case instance.
///
/// Draws are ordered user-major, so enlarging K keeps the channels of
/// existing users unchanged for the same seed.
pub fn generate_instance(cfg: &ScenarioConfig) -> Result<ProblemInstance, ConfigError> {
    cfg.validate()?;
    let (m, n, k) = (cfg.num_freq_bins, cfg.num_slots, cfg.num_users);
    let sigma2 = cfg.noise_power_watts();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.rng_seed);
    // Unit-variance complex Gaussian: each component has variance 1/2.
    let comp = Normal::new(0.0f64, std::f64::consts::FRAC_1_SQRT_2)
        .expect("normal distribution parameters are valid");

    let mut gains = Tensor3::zeros(m, n, k);
    for ik in 0..k {
        let alpha = path_loss_gain(cfg.user_distances_m[ik]);
        let scale = alpha / sigma2;
        for im in 0..m {
            for in_ in 0..n {
                let h = Complex64::new(comp.sample(&mut rng), comp.sample(&mut rng));
                gains[(im, in_, ik)] = scale * worst_case_gain(h, cfg.error_bound);
            }
        }
    }
    Ok(ProblemInstance {
        num_freq_bins: m,
        num_slots: n,
        num_users: k,
        gains,
        qos: cfg.qos.clone(),
        p_max_watts: cfg.p_max_watts(),
    })
}
