//! Entanglement-based quantum key distribution: a time-tagged source and
//! free-space channel simulator plus the two-party protocol stack that turns
//! detection streams into secret keys.
//!
//! Module map:
//! - [`quantum`]: density matrices, measurement settings and analytic figures of merit.
//! - [`sim`]: Monte-Carlo generation of detection streams from source, channel and weather.
//! - [`timesync`]: clock-offset recovery and coincidence matching.
//! - [`protocol`]: frame statistics, gating, sifting, daylight analytics and key-rate accounting.
//! - [`cascade`]: CASCADE reconciliation with exact leakage accounting.
//! - [`extract`]: Trevisan and Toeplitz privacy amplification.
//! - [`netlink`]: the classical channel, its wire format and transports.
//! - [`rng`]: named, seed-derived random sub-streams.

// NaN-rejecting range checks are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bits;
pub mod cascade;
pub mod extract;
pub mod netlink;
pub mod protocol;
pub mod quantum;
pub mod rng;
pub mod sim;
pub mod timesync;

pub use quantum::{Outcome, Party, SettingLabel, TwoQubitState};
pub use sim::TimeTagEvent;
pub use timesync::CoincidenceRecord;
