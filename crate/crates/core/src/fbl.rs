//! Finite-blocklength achievable rate over a set of scheduled PRBs.
//!
//! Over `x` channel uses with per-use SNRs `rho_j` and decoding error
//! target `eps`, the achievable number of bits is approximately
//!
//! ```text
//! R = sum_j log2(1 + rho_j) - sqrt(sum_j V(rho_j)) * Qinv(eps) / ln 2
//! ```
//!
//! with channel dispersion `V(rho) = 1 - (1 + rho)^-2` and `Qinv` the
//! inverse Gaussian tail. At the SNRs where scheduling operates, `V` is
//! close to 1, which gives the simpler penalty `sqrt(x) * Qinv(eps) / ln 2`
//! used by the optimizer; the exact-dispersion form stays available for
//! diagnostics and never falls below it.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

pub const LN2: f64 = std::f64::consts::LN_2;

/// Gaussian tail probability `Q(x) = P(Z > x)` for standard normal `Z`.
pub fn q(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

fn gaussian_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn q_inverse_cache() -> &'static Mutex<HashMap<u64, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Inverse Gaussian tail: returns `z` with `q(z) = eps`.
///
/// Solved by bisection on `q` followed by Newton refinement, so the
/// result inherits the full accuracy of `erfc` rather than that of a
/// fitted rational approximation. Values are cached per distinct `eps`.
///
/// Panics if `eps` is outside `(0, 1)`.
pub fn q_inverse(eps: f64) -> f64 {
    assert!(
        eps > 0.0 && eps < 1.0,
        "q_inverse: eps must lie in (0, 1), got {eps}"
    );
    if let Some(&z) = q_inverse_cache().lock().unwrap().get(&eps.to_bits()) {
        return z;
    }
    let z = q_inverse_uncached(eps);
    q_inverse_cache().lock().unwrap().insert(eps.to_bits(), z);
    z
}

fn q_inverse_uncached(eps: f64) -> f64 {
    if eps == 0.5 {
        return 0.0;
    }
    if eps > 0.5 {
        return -q_inverse_uncached(1.0 - eps);
    }
    // q is strictly decreasing; bracket [lo, hi] with q(hi) <= eps <= q(lo).
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while q(hi) > eps {
        hi *= 2.0;
        assert!(hi < 1e4, "q_inverse: failed to bracket eps={eps}");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if q(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut z = 0.5 * (lo + hi);
    // Newton polish on q(z) - eps; q'(z) = -pdf(z).
    for _ in 0..4 {
        let err = q(z) - eps;
        let d = gaussian_pdf(z);
        if d == 0.0 {
            break;
        }
        let step = err / d;
        if !step.is_finite() || step.abs() < 1e-300 {
            break;
        }
        z += step;
    }
    z
}

fn shannon_sum_bits(snrs: &[f64]) -> f64 {
    snrs.iter().map(|&r| (1.0 + r).ln() / LN2).sum()
}

/// Channel dispersion `V(rho) = 1 - (1 + rho)^-2`.
pub fn dispersion(snr: f64) -> f64 {
    let a = 1.0 + snr;
    1.0 - 1.0 / (a * a)
}

/// Exact-dispersion finite-blocklength rate in bits over the given SNRs.
///
/// Empty input yields 0.
pub fn fbl_rate_exact(snrs: &[f64], error_prob: f64) -> f64 {
    debug_assert!(snrs.iter().all(|&r| r >= 0.0));
    if snrs.is_empty() {
        return 0.0;
    }
    let v: f64 = snrs.iter().map(|&r| dispersion(r)).sum();
    shannon_sum_bits(snrs) - v.sqrt() * q_inverse(error_prob) / LN2
}

/// Finite-blocklength rate with the dispersion approximated as 1 per
/// channel use, the form the optimizer constrains. Empty input yields 0.
pub fn fbl_rate_approx(snrs: &[f64], error_prob: f64) -> f64 {
    debug_assert!(snrs.iter().all(|&r| r >= 0.0));
    if snrs.is_empty() {
        return 0.0;
    }
    shannon_sum_bits(snrs) - (snrs.len() as f64).sqrt() * q_inverse(error_prob) / LN2
}
