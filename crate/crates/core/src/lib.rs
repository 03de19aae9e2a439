//! Worst-case robust minimum-power scheduling for an OFDMA downlink.
//!
//! A base station must deliver `B_k` bits to each of `K` users within
//! per-user slot deadlines over an `M x N` grid of physical resource
//! blocks, hitting per-user decoding error targets under short-packet
//! (finite-blocklength) rates and bounded channel estimation error.
//! The optimization picks a binary PRB assignment and per-PRB powers
//! minimizing total transmit power.
//!
//! Modules:
//! - [`scenario`]: channel/QoS configuration, worst-case effective gains;
//! - [`fbl`]: finite-blocklength rate expressions and the Gaussian tail
//!   inverse they depend on;
//! - [`model`]: schedules, feasibility checking, lifted-variable recovery;
//! - [`subproblem`]: the convex restriction solved at every reweighting
//!   step, with its interior-point solver;
//! - [`sca`]: the successive convex approximation driver and rounding;
//! - [`oracle`]: exhaustive search reference for tiny instances.

pub mod fbl;
pub mod model;
pub mod oracle;
pub mod scenario;
pub mod sca;
pub mod subproblem;
pub mod tensor;
