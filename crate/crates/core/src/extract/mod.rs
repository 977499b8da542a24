//! Privacy amplification: output-length accounting and two extractor
//! backends, Trevisan (primary) and Toeplitz hashing (cross-check).

use std::f64::consts::SQRT_2;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod design;
pub mod field;
pub mod gf2poly;
pub mod toeplitz;
pub mod trevisan;

pub use design::{block_design, nw_weak_design, DesignKind, WeakDesign};
pub use toeplitz::toeplitz_extract;
pub use trevisan::{trevisan_extract, TrevisanParams};

use crate::protocol::binary_entropy;
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("seed has {got} bits, {expected} required")]
    SeedLength { expected: usize, got: usize },
    #[error("{0} is not a prime power")]
    NotPrimePower(u64),
    #[error("invalid extractor parameters: {0}")]
    Param(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Trevisan,
    Toeplitz,
}

impl Backend {
    pub fn code(self) -> u8 {
        match self {
            Backend::Trevisan => 0,
            Backend::Toeplitz => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Backend::Trevisan),
            1 => Some(Backend::Toeplitz),
            _ => None,
        }
    }
}

/// Extraction request: n input bits to m output bits at error eps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorParams {
    pub n: usize,
    pub m: usize,
    pub eps: f64,
    pub backend: Backend,
    pub design: DesignKind,
}

impl ExtractorParams {
    pub fn trevisan(&self) -> Result<TrevisanParams, ExtractError> {
        TrevisanParams::new(self.n, self.m, self.eps, self.design)
    }

    /// Seed bits required by the backend.
    pub fn seed_len(&self) -> Result<usize, ExtractError> {
        if self.m == 0 {
            return Ok(0);
        }
        match self.backend {
            Backend::Trevisan => Ok(self.trevisan()?.seed_len()),
            Backend::Toeplitz => Ok(self.n + self.m - 1),
        }
    }
}

/// Extract with the configured backend.
pub fn extract(x: &[bool], params: &ExtractorParams, seed: &[bool]) -> Result<Vec<bool>, ExtractError> {
    if x.len() != params.n {
        return Err(ExtractError::Param(format!("input has {} bits, parameters expect {}", x.len(), params.n)));
    }
    if params.m > params.n {
        return Err(ExtractError::Param(format!("output length {} exceeds input length {}", params.m, params.n)));
    }
    if params.m == 0 {
        return Ok(Vec::new());
    }
    match params.backend {
        Backend::Trevisan => trevisan_extract(x, &params.trevisan()?, seed),
        Backend::Toeplitz => toeplitz_extract(x, params.m, seed),
    }
}

/// Seed bits drawn from the run's PA-seed sub-stream for block `index`.
pub fn random_seed(len: usize, run_seed: u64, index: u64) -> Vec<bool> {
    let mut r = rng::substream(run_seed, rng::streams::PA_SEED, index);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let w = r.next_u64();
        out.extend((0..64).map(|k| (w >> k) & 1 == 1).take(len - out.len()));
    }
    out
}

/// Finite-run safety margin ⌈4·log₂(1/ε)⌉.
pub fn safety_margin(eps: f64) -> usize {
    (4.0 * (1.0 / eps).log2()).ceil().max(0.0) as usize
}

/// Secure output length ⌊n·(1 − f·h(Q) − h(Q + S/(2√2)))⌋ − margin, clamped
/// at 0. No key is produced above the QBER threshold or when the statistics
/// are inconsistent (entropy argument above 1).
pub fn output_length(n_corrected: usize, q: f64, s: f64, f_ec: f64, eps: f64) -> usize {
    output_length_with_threshold(n_corrected, q, s, f_ec, eps, 0.11)
}

pub fn output_length_with_threshold(n: usize, q: f64, s: f64, f_ec: f64, eps: f64, qber_max: f64) -> usize {
    if !(0.0..=qber_max).contains(&q) || !(s >= 0.0) {
        return 0;
    }
    let arg = q + s / (2.0 * SQRT_2);
    if arg > 1.0 + 1e-12 {
        return 0;
    }
    let r = 1.0 - f_ec * binary_entropy(q) - binary_entropy(arg.min(1.0));
    if r <= 0.0 {
        return 0;
    }
    ((n as f64 * r).floor() as usize).saturating_sub(safety_margin(eps))
}
