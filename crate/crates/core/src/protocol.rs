//! Frame-level protocol logic: coincidence statistics, CHSH gating,
//! sifting, QBER estimation by public disclosure, daylight analytics and
//! secure-rate accounting.
//!
//! Frames are gated twice. A frame whose CHSH value falls below the local
//! bound of 2 is dropped outright. Otherwise the (A_k, B_0) records are sifted
//! into key bits, a fixed fraction is disclosed to estimate the QBER, and
//! the frame is dropped if that estimate exceeds the threshold.

use std::f64::consts::SQRT_2;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::{Outcome, SettingLabel};
use crate::rng::{self, streams};
use crate::timesync::CoincidenceRecord;

/// Local-realistic bound on the CHSH value.
pub const CLASSICAL_CHSH_BOUND: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("no coincidences recorded for basis pair {0}")]
    EmptyBasisPair(String),
    #[error("{name} = {value} is outside its domain {domain}")]
    Domain { name: &'static str, value: f64, domain: &'static str },
    #[error("frame too sparse: {found} CHSH records, at least {required} required")]
    FrameTooSparse { found: usize, required: usize },
    #[error("inconsistent statistics: entropy argument Q + S/(2√2) = {0} exceeds 1")]
    InconsistentStats(f64),
    #[error("illegal key stage transition {from:?} -> {to:?}")]
    StageOrder { from: KeyStage, to: KeyStage },
    #[error("disclosure position {pos} out of range for {n} sifted bits")]
    BadPosition { pos: u32, n: usize },
}

fn domain(name: &'static str, value: f64, domain: &'static str) -> ProtocolError {
    ProtocolError::Domain { name, value, domain }
}

/// Outcome-pair counts for one setting pair, real-valued so that expected
/// counts from analytic scaling share the type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts4 {
    pub pp: f64,
    pub mm: f64,
    pub mp: f64,
    pub pm: f64,
}

impl Counts4 {
    pub fn new(pp: f64, mm: f64, mp: f64, pm: f64) -> Self {
        Self { pp, mm, mp, pm }
    }

    pub fn total(&self) -> f64 {
        self.pp + self.mm + self.mp + self.pm
    }

    pub fn add(&mut self, a: Outcome, b: Outcome) {
        match (a, b) {
            (Outcome::Plus, Outcome::Plus) => self.pp += 1.0,
            (Outcome::Minus, Outcome::Minus) => self.mm += 1.0,
            (Outcome::Minus, Outcome::Plus) => self.mp += 1.0,
            (Outcome::Plus, Outcome::Minus) => self.pm += 1.0,
        }
    }

    pub fn plus(&self, o: &Counts4) -> Counts4 {
        Counts4::new(self.pp + o.pp, self.mm + o.mm, self.mp + o.mp, self.pm + o.pm)
    }

    pub fn scaled(&self, k: f64) -> Counts4 {
        Counts4::new(self.pp * k, self.mm * k, self.mp * k, self.pm * k)
    }
}

/// Counts indexed by (Alice setting index, Bob setting index).
pub type CountTable = [[Counts4; 2]; 3];

/// Correlation coefficient E = (n++ + n−− − n−+ − n+−)/total.
pub fn correlation(c: &Counts4) -> Result<f64, ProtocolError> {
    let total = c.total();
    if !(total > 0.0) {
        return Err(ProtocolError::EmptyBasisPair(String::new()));
    }
    Ok((c.pp + c.mm - c.mp - c.pm) / total)
}

/// Q = (1 − E)/2.
pub fn qber_from_e(e: f64) -> Result<f64, ProtocolError> {
    if !(e.abs() <= 1.0) {
        return Err(domain("E", e, "[-1, 1]"));
    }
    Ok((1.0 - e) / 2.0)
}

/// Setting pairs entering the CHSH combination, with their signs.
pub const CHSH_TERMS: [(SettingLabel, SettingLabel, f64); 4] = [
    (SettingLabel::A0, SettingLabel::B0, 1.0),
    (SettingLabel::A0, SettingLabel::B1, 1.0),
    (SettingLabel::A1, SettingLabel::B0, -1.0),
    (SettingLabel::A1, SettingLabel::B1, 1.0),
];

/// CHSH value and its standard error from a count table.
///
/// Each correlation is a mean of ±1 outcomes, so Var(E) = (1 − E²)/N; the
/// four terms are independent and add in quadrature.
pub fn chsh_from_counts(counts: &CountTable) -> Result<(f64, f64), ProtocolError> {
    let mut s = 0.0;
    let mut var = 0.0;
    for (a, b, sign) in CHSH_TERMS {
        let c = &counts[a.index() as usize][b.index() as usize];
        let e = correlation(c).map_err(|_| ProtocolError::EmptyBasisPair(format!("({}, {})", a.name(), b.name())))?;
        s += sign * e;
        var += (1.0 - e * e) / c.total();
    }
    Ok((s, var.sqrt()))
}

/// CHSH value and error of a frame.
pub fn chsh(frame: &FrameStats) -> Result<(f64, f64), ProtocolError> {
    chsh_from_counts(&frame.counts)
}

/// Tally outcome-pair counts by setting pair.
pub fn tally(records: &[CoincidenceRecord]) -> CountTable {
    let mut t = CountTable::default();
    for r in records {
        t[r.setting_a.index() as usize][r.setting_b.index() as usize].add(r.outcome_a, r.outcome_b);
    }
    t
}

/// Whether a record contributes to the CHSH estimate.
pub fn is_chsh_record(r: &CoincidenceRecord) -> bool {
    r.setting_a != SettingLabel::Ak
}

/// Whether a record yields a sifted key bit.
pub fn is_key_record(r: &CoincidenceRecord) -> bool {
    r.setting_a == SettingLabel::Ak && r.setting_b == SettingLabel::B0
}

/// Sift (A_k, B_0) records into Alice's and Bob's key bits, in record order.
pub fn sift(records: &[CoincidenceRecord]) -> (Vec<bool>, Vec<bool>) {
    records.iter().filter(|r| is_key_record(r)).map(|r| (r.outcome_a.bit(), r.outcome_b.bit())).unzip()
}

/// Number of bits disclosed out of `n`: ⌈frac · n⌉.
pub fn disclosure_count(n: usize, frac: f64) -> usize {
    ((frac * n as f64).ceil() as usize).min(n)
}

/// Sorted disclosure positions drawn from the frame's disclosure sub-stream.
pub fn disclosure_positions(n: usize, frac: f64, run_seed: u64, frame_id: u64) -> Vec<u32> {
    let k = disclosure_count(n, frac);
    let mut rng = rng::substream(run_seed, streams::DISCLOSURE, frame_id);
    let mut pos: Vec<u32> = index::sample(&mut rng, n, k).into_iter().map(|i| i as u32).collect();
    pos.sort_unstable();
    pos
}

/// Bits at the given positions.
pub fn select(bits: &[bool], positions: &[u32]) -> Result<Vec<bool>, ProtocolError> {
    positions
        .iter()
        .map(|&p| bits.get(p as usize).copied().ok_or(ProtocolError::BadPosition { pos: p, n: bits.len() }))
        .collect()
}

/// Bits with the given (sorted) positions removed.
pub fn remove_positions(bits: &[bool], positions: &[u32]) -> Vec<bool> {
    let mut out = Vec::with_capacity(bits.len().saturating_sub(positions.len()));
    let mut it = positions.iter().peekable();
    for (i, &b) in bits.iter().enumerate() {
        if it.peek().is_some_and(|&&p| p as usize == i) {
            it.next();
        } else {
            out.push(b);
        }
    }
    out
}

/// Per-frame verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Ok,
    BellFail,
    QberFail,
    Sparse,
}

impl FrameStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameStatus::Ok => "ok",
            FrameStatus::BellFail => "bell_fail",
            FrameStatus::QberFail => "qber_fail",
            FrameStatus::Sparse => "sparse",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            FrameStatus::Ok => 0,
            FrameStatus::BellFail => 1,
            FrameStatus::QberFail => 2,
            FrameStatus::Sparse => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => FrameStatus::Ok,
            1 => FrameStatus::BellFail,
            2 => FrameStatus::QberFail,
            3 => FrameStatus::Sparse,
            _ => return None,
        })
    }
}

/// Statistics and verdict of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub frame_id: u64,
    pub duration_s: f64,
    pub counts: CountTable,
    /// Correlations per setting pair, where the pair has counts.
    pub correlations: [[Option<f64>; 2]; 3],
    pub s: Option<f64>,
    pub s_err: Option<f64>,
    pub q_est: Option<f64>,
    pub n_chsh: usize,
    pub n_sifted: usize,
    pub n_disclosed: usize,
    pub n_disclosed_errors: usize,
    pub status: FrameStatus,
}

impl FrameStats {
    pub fn from_counts(frame_id: u64, duration_s: f64, counts: CountTable) -> Self {
        let mut correlations = [[None; 2]; 3];
        for (a, row) in counts.iter().enumerate() {
            for (b, c) in row.iter().enumerate() {
                correlations[a][b] = correlation(c).ok();
            }
        }
        let n_chsh = counts[1..].iter().flatten().map(|c| c.total()).sum::<f64>() as usize;
        Self {
            frame_id,
            duration_s,
            counts,
            correlations,
            s: None,
            s_err: None,
            q_est: None,
            n_chsh,
            n_sifted: counts[0][0].total() as usize,
            n_disclosed: 0,
            n_disclosed_errors: 0,
            status: FrameStatus::Sparse,
        }
    }

    pub fn accepted(&self) -> bool {
        self.status == FrameStatus::Ok
    }
}

/// Stage of a key buffer; transitions only move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyStage {
    Sifted,
    Disclosed,
    Corrected,
    Secure,
}

/// A key bit string with its processing stage and leakage ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyBuffer {
    pub bits: Vec<bool>,
    pub stage: KeyStage,
    pub leaked_bits: u64,
    pub frame_ids: Vec<u64>,
    /// QBER estimate carried along for efficiency accounting.
    pub qber_est: f64,
}

impl KeyBuffer {
    pub fn sifted(bits: Vec<bool>, frame_id: u64) -> Self {
        Self { bits, stage: KeyStage::Sifted, leaked_bits: 0, frame_ids: vec![frame_id], qber_est: 0.0 }
    }

    /// Move to a later stage with new bits and additional leakage.
    pub fn advance(&mut self, to: KeyStage, bits: Vec<bool>, extra_leak: u64) -> Result<(), ProtocolError> {
        if to <= self.stage {
            return Err(ProtocolError::StageOrder { from: self.stage, to });
        }
        self.stage = to;
        self.bits = bits;
        self.leaked_bits += extra_leak;
        Ok(())
    }

    /// Append another buffer of the same stage.
    pub fn append(&mut self, other: &KeyBuffer) -> Result<(), ProtocolError> {
        if other.stage != self.stage {
            return Err(ProtocolError::StageOrder { from: self.stage, to: other.stage });
        }
        self.bits.extend_from_slice(&other.bits);
        self.leaked_bits += other.leaked_bits;
        self.frame_ids.extend_from_slice(&other.frame_ids);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Frame gating parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameConfig {
    pub disclosure_frac: f64,
    pub qber_max: f64,
    pub min_chsh_records: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self { disclosure_frac: 0.30, qber_max: 0.11, min_chsh_records: 100 }
    }
}

/// Result of processing one frame: statistics and, if accepted, both
/// parties' post-disclosure keys.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub stats: FrameStats,
    pub keys: Option<(KeyBuffer, KeyBuffer)>,
}

/// Outcome of the CHSH gate.
pub fn chsh_gate(stats: &mut FrameStats, cfg: &FrameConfig) -> Result<bool, ProtocolError> {
    if stats.n_chsh < cfg.min_chsh_records {
        stats.status = FrameStatus::Sparse;
        return Err(ProtocolError::FrameTooSparse { found: stats.n_chsh, required: cfg.min_chsh_records });
    }
    let (s, s_err) = match chsh_from_counts(&stats.counts) {
        Ok(v) => v,
        Err(e) => {
            stats.status = FrameStatus::Sparse;
            return Err(e);
        }
    };
    stats.s = Some(s);
    stats.s_err = Some(s_err);
    if s < CLASSICAL_CHSH_BOUND {
        stats.status = FrameStatus::BellFail;
        return Ok(false);
    }
    Ok(true)
}

/// QBER estimate from the disclosed samples; an empty sample estimates 0.
pub fn estimate_qber(disclosed_a: &[bool], disclosed_b: &[bool]) -> (f64, usize) {
    let errors = crate::bits::hamming(disclosed_a, disclosed_b);
    let q = if disclosed_a.is_empty() { 0.0 } else { errors as f64 / disclosed_a.len() as f64 };
    (q, errors)
}

/// Process the coincidence records of one frame.
///
/// Errors with [`ProtocolError::FrameTooSparse`] when fewer than
/// `min_chsh_records` CHSH records are present.
pub fn process_frame(
    records: &[CoincidenceRecord],
    cfg: &FrameConfig,
    run_seed: u64,
    frame_id: u64,
    duration_s: f64,
) -> Result<FrameOutcome, ProtocolError> {
    let mut stats = FrameStats::from_counts(frame_id, duration_s, tally(records));
    if !chsh_gate(&mut stats, cfg)? {
        return Ok(FrameOutcome { stats, keys: None });
    }
    let (a_bits, b_bits) = sift(records);
    let positions = disclosure_positions(a_bits.len(), cfg.disclosure_frac, run_seed, frame_id);
    let (q, errors) = estimate_qber(&select(&a_bits, &positions)?, &select(&b_bits, &positions)?);
    stats.q_est = Some(q);
    stats.n_disclosed = positions.len();
    stats.n_disclosed_errors = errors;
    if q > cfg.qber_max {
        stats.status = FrameStatus::QberFail;
        return Ok(FrameOutcome { stats, keys: None });
    }
    stats.status = FrameStatus::Ok;
    let make = |bits: &[bool]| {
        let mut k = KeyBuffer::sifted(bits.to_vec(), frame_id);
        k.qber_est = q;
        k.advance(KeyStage::Disclosed, remove_positions(bits, &positions), 0).map(|_| k)
    };
    let keys = (make(&a_bits)?, make(&b_bits)?);
    Ok(FrameOutcome { stats, keys: Some(keys) })
}

/// Binary entropy h(x) = −x log₂ x − (1−x) log₂(1−x), with h(0) = h(1) = 0.
pub fn binary_entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Asymptotic secure fraction r = 1 − f·h(Q) − h(Q + S/(2√2)).
///
/// Returns `Ok(None)` when no key can be extracted (Q above 11% or r ≤ 0).
pub fn secure_fraction(q: f64, s: f64, f_ec: f64) -> Result<Option<f64>, ProtocolError> {
    secure_fraction_with_threshold(q, s, f_ec, 0.11)
}

/// [`secure_fraction`] with an explicit QBER threshold.
pub fn secure_fraction_with_threshold(q: f64, s: f64, f_ec: f64, qber_max: f64) -> Result<Option<f64>, ProtocolError> {
    if !(0.0..=0.5).contains(&q) {
        return Err(domain("Q", q, "[0, 0.5]"));
    }
    if !(0.0..=2.0 * SQRT_2 + 1e-12).contains(&s) {
        return Err(domain("S", s, "[0, 2√2]"));
    }
    if !(f_ec >= 0.0 && f_ec.is_finite()) {
        return Err(domain("f_EC", f_ec, "[0, ∞)"));
    }
    let arg = q + s / (2.0 * SQRT_2);
    if arg > 1.0 + 1e-12 {
        return Err(ProtocolError::InconsistentStats(arg));
    }
    if q > qber_max {
        return Ok(None);
    }
    let r = 1.0 - f_ec * binary_entropy(q) - binary_entropy(arg.min(1.0));
    Ok((r > 0.0).then_some(r))
}

/// Daylight counts: n_night + n_acc(120 W/m²) · I/120.
pub fn daylight_counts(n_night: &Counts4, n_acc_ref: &Counts4, irradiance: f64) -> Result<Counts4, ProtocolError> {
    daylight_counts_ref(n_night, n_acc_ref, irradiance, crate::sim::SUN_REF_IRRADIANCE)
}

/// [`daylight_counts`] with an explicit reference irradiance.
pub fn daylight_counts_ref(
    n_night: &Counts4,
    n_acc_ref: &Counts4,
    irradiance: f64,
    ref_irradiance: f64,
) -> Result<Counts4, ProtocolError> {
    if !(irradiance >= 0.0) {
        return Err(domain("irradiance", irradiance, "[0, ∞)"));
    }
    if !(ref_irradiance > 0.0) {
        return Err(domain("reference irradiance", ref_irradiance, "(0, ∞)"));
    }
    Ok(n_night.plus(&n_acc_ref.scaled(irradiance / ref_irradiance)))
}

/// SNR gain from the coincidence window: (window / (T_rep/2))⁻¹.
pub fn window_factor(window_ns: f64, rep_period_ns: f64) -> Result<f64, ProtocolError> {
    if !(window_ns > 0.0) {
        return Err(domain("window", window_ns, "(0, ∞)"));
    }
    if !(rep_period_ns > 0.0) {
        return Err(domain("repetition period", rep_period_ns, "(0, ∞)"));
    }
    Ok(rep_period_ns / 2.0 / window_ns)
}

/// SNR gain from the pair probability: 1/p_pair.
pub fn pair_factor(p_pair: f64) -> Result<f64, ProtocolError> {
    if !(p_pair > 0.0 && p_pair <= 1.0) {
        return Err(domain("p_pair", p_pair, "(0, 1]"));
    }
    Ok(1.0 / p_pair)
}

/// Coincidence SNR from singles SNR: singles_snr · (p_pair · window/(T_rep/2))⁻¹.
pub fn coincidence_snr(singles_snr: f64, p_pair: f64, window_ns: f64, rep_period_ns: f64) -> Result<f64, ProtocolError> {
    if !(singles_snr > 0.0) {
        return Err(domain("singles SNR", singles_snr, "(0, ∞)"));
    }
    Ok(singles_snr * pair_factor(p_pair)? * window_factor(window_ns, rep_period_ns)?)
}

/// Aggregated rates and discard statistics of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub wall_time_s: f64,
    pub frames_total: usize,
    pub frames_accepted: usize,
    pub frames_bell_fail: usize,
    pub frames_qber_fail: usize,
    pub frames_sparse: usize,
    pub blocks_total: usize,
    pub blocks_failed: usize,
    pub sifted_bits: u64,
    pub disclosed_bits: u64,
    pub corrected_bits: u64,
    pub secure_bits: u64,
    pub leaked_bits: u64,
    pub sifted_bps: f64,
    pub corrected_bps: f64,
    pub secure_bps: f64,
    /// Mean CHSH value over frames where it was computed.
    pub mean_s: f64,
    /// QBER pooled over all disclosed samples.
    pub mean_q: f64,
    /// Leaked bits over the Shannon limit Σ n·h(Q) of the corrected keys.
    pub f_ec_realized: f64,
}

/// Aggregate frame statistics and key buffers into a rate report.
///
/// Sifted bits count every frame that passed the CHSH gate; corrected and
/// secure bits come from buffers at those stages. Rates are over wall time.
pub fn rate_report(frames: &[FrameStats], keys: &[KeyBuffer], wall_time_s: f64) -> RateReport {
    let mut r = RateReport { wall_time_s, frames_total: frames.len(), ..Default::default() };
    let (mut s_sum, mut s_n) = (0.0, 0usize);
    let (mut disclosed, mut errors) = (0usize, 0usize);
    for f in frames {
        match f.status {
            FrameStatus::Ok => r.frames_accepted += 1,
            FrameStatus::BellFail => r.frames_bell_fail += 1,
            FrameStatus::QberFail => r.frames_qber_fail += 1,
            FrameStatus::Sparse => r.frames_sparse += 1,
        }
        if let Some(s) = f.s {
            s_sum += s;
            s_n += 1;
        }
        if f.q_est.is_some() {
            r.sifted_bits += f.n_sifted as u64;
            disclosed += f.n_disclosed;
            errors += f.n_disclosed_errors;
        }
    }
    r.disclosed_bits = disclosed as u64;
    r.mean_s = if s_n > 0 { s_sum / s_n as f64 } else { 0.0 };
    r.mean_q = if disclosed > 0 { errors as f64 / disclosed as f64 } else { 0.0 };
    let mut shannon = 0.0;
    let mut corrected_leak = 0u64;
    for k in keys {
        match k.stage {
            KeyStage::Corrected => {
                r.corrected_bits += k.len() as u64;
                corrected_leak += k.leaked_bits;
                shannon += k.len() as f64 * binary_entropy(k.qber_est);
            }
            KeyStage::Secure => r.secure_bits += k.len() as u64,
            _ => {}
        }
    }
    r.leaked_bits = corrected_leak;
    r.f_ec_realized = if shannon > 0.0 { corrected_leak as f64 / shannon } else { 0.0 };
    if wall_time_s > 0.0 {
        r.sifted_bps = r.sifted_bits as f64 / wall_time_s;
        r.corrected_bps = r.corrected_bits as f64 / wall_time_s;
        r.secure_bps = r.secure_bits as f64 / wall_time_s;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::TwoQubitState;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(sa: SettingLabel, oa: bool, sb: SettingLabel, ob: bool, t: u64) -> CoincidenceRecord {
        CoincidenceRecord {
            setting_a: sa,
            outcome_a: Outcome::from_bit(oa),
            setting_b: sb,
            outcome_b: Outcome::from_bit(ob),
            delta: 0,
            frame_id: 0,
            tick_a: t,
        }
    }

    #[test]
    fn correlation_examples() {
        assert_eq!(correlation(&Counts4::new(50.0, 50.0, 0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(correlation(&Counts4::new(25.0, 25.0, 25.0, 25.0)).unwrap(), 0.0);
        assert!((correlation(&Counts4::new(48.0, 46.0, 3.0, 3.0)).unwrap() - 0.88).abs() < 1e-12);
        assert!(matches!(correlation(&Counts4::default()), Err(ProtocolError::EmptyBasisPair(_))));
    }

    #[test]
    fn qber_examples() {
        assert_eq!(qber_from_e(1.0).unwrap(), 0.0);
        assert_eq!(qber_from_e(0.0).unwrap(), 0.5);
        assert!((qber_from_e(0.8568).unwrap() - 0.0716).abs() < 1e-12);
        assert!(qber_from_e(1.1).is_err());
    }

    #[test]
    fn chsh_examples() {
        let mut t = CountTable::default();
        for (a, b, sign) in CHSH_TERMS {
            t[a.index() as usize][b.index() as usize] =
                if sign > 0.0 { Counts4::new(100.0, 100.0, 0.0, 0.0) } else { Counts4::new(0.0, 0.0, 100.0, 100.0) };
        }
        assert_eq!(chsh_from_counts(&t).unwrap().0, 4.0);
        let uniform = [[Counts4::new(25.0, 25.0, 25.0, 25.0); 2]; 3];
        assert_eq!(chsh_from_counts(&uniform).unwrap().0, 0.0);
        let mut missing = uniform;
        missing[2][1] = Counts4::default();
        assert!(matches!(chsh_from_counts(&missing), Err(ProtocolError::EmptyBasisPair(_))));
    }

    fn sample_counts(rng: &mut ChaCha8Rng, state: &TwoQubitState, n_per_pair: usize) -> CountTable {
        let mut t = CountTable::default();
        for (a, b, _) in CHSH_TERMS {
            let p = state.joint_outcome_probs(a.angle_deg(), b.angle_deg());
            let c = &mut t[a.index() as usize][b.index() as usize];
            for _ in 0..n_per_pair {
                let u: f64 = rng.random();
                let k = if u < p[0] { 0 } else if u < p[0] + p[1] { 1 } else if u < p[0] + p[1] + p[2] { 2 } else { 3 };
                match k {
                    0 => c.pp += 1.0,
                    1 => c.pm += 1.0,
                    2 => c.mp += 1.0,
                    _ => c.mm += 1.0,
                }
            }
        }
        t
    }

    #[test]
    fn monte_carlo_chsh_matches_model() {
        let w = TwoQubitState::werner_from_fidelity(0.942).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (s, s_err) = chsh_from_counts(&sample_counts(&mut rng, &w, 25_000)).unwrap();
        assert!((s - w.chsh_expected()).abs() <= 3.0 * s_err, "{s} ± {s_err}");
    }

    #[test]
    fn s_err_matches_resampling_spread() {
        let w = TwoQubitState::werner_from_fidelity(0.942).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut values = Vec::new();
        let mut errs = Vec::new();
        for _ in 0..1000 {
            let (s, e) = chsh_from_counts(&sample_counts(&mut rng, &w, 250)).unwrap();
            values.push(s);
            errs.push(e);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt();
        let predicted = errs.iter().sum::<f64>() / errs.len() as f64;
        assert!((sd - predicted).abs() / predicted < 0.15, "{sd} vs {predicted}");
    }

    fn perfect_frame(n_key: usize, n_chsh_each: usize) -> Vec<CoincidenceRecord> {
        let mut out = Vec::new();
        let mut t = 0;
        for i in 0..n_key {
            t += 1;
            out.push(rec(SettingLabel::Ak, i % 3 == 0, SettingLabel::B0, i % 3 == 0, t));
        }
        for (a, b, sign) in CHSH_TERMS {
            for i in 0..n_chsh_each {
                t += 1;
                let oa = i % 2 == 0;
                let ob = if sign > 0.0 { oa } else { !oa };
                // Mix in some disagreement so that S sits near 2.7.
                let ob = if i % 25 == 0 { !ob } else { ob };
                out.push(rec(a, oa, b, ob, t));
            }
        }
        out
    }

    #[test]
    fn perfect_frame_accepted() {
        let records = perfect_frame(1000, 100);
        let out = process_frame(&records, &FrameConfig::default(), 1, 0, 6.0).unwrap();
        assert_eq!(out.stats.status, FrameStatus::Ok);
        assert!(out.stats.s.unwrap() > 2.0);
        assert_eq!(out.stats.q_est, Some(0.0));
        let (ka, kb) = out.keys.unwrap();
        assert_eq!(ka.len(), 700);
        assert_eq!(ka.bits, kb.bits);
        assert_eq!(ka.stage, KeyStage::Disclosed);
    }

    #[test]
    fn noise_frame_fails_bell() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut records = Vec::new();
        for i in 0..2000 {
            let a = [SettingLabel::Ak, SettingLabel::A0, SettingLabel::A1][rng.random_range(0..3)];
            let b = [SettingLabel::B0, SettingLabel::B1][rng.random_range(0..2)];
            records.push(rec(a, rng.random(), b, rng.random(), i));
        }
        let out = process_frame(&records, &FrameConfig::default(), 1, 0, 6.0).unwrap();
        assert_eq!(out.stats.status, FrameStatus::BellFail);
        assert!(out.keys.is_none());
    }

    #[test]
    fn sparse_frame_rejected() {
        let records = perfect_frame(100, 10);
        assert!(matches!(
            process_frame(&records, &FrameConfig::default(), 1, 0, 6.0),
            Err(ProtocolError::FrameTooSparse { found: 40, required: 100 })
        ));
    }

    #[test]
    fn high_qber_frame_rejected() {
        let mut records = perfect_frame(1000, 100);
        for r in records.iter_mut().filter(|r| is_key_record(r)).step_by(5) {
            r.outcome_b = Outcome::from_bit(!r.outcome_b.bit());
        }
        let out = process_frame(&records, &FrameConfig::default(), 1, 0, 6.0).unwrap();
        assert_eq!(out.stats.status, FrameStatus::QberFail);
    }

    #[test]
    fn secure_fraction_examples() {
        assert!((secure_fraction(0.0, 2.0 * SQRT_2, 1.0).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let r = secure_fraction(0.0716, 2.409, 1.2).unwrap().unwrap();
        assert!((r - 0.165).abs() < 0.002, "{r}");
        assert_eq!(secure_fraction(0.12, 2.409, 1.2).unwrap(), None);
        assert!(matches!(secure_fraction(0.05, 2.8, 1.2), Err(ProtocolError::InconsistentStats(_))));
        assert!(secure_fraction(0.6, 2.0, 1.2).is_err());
        assert!(secure_fraction(0.1, 3.0, 1.2).is_err());
    }

    #[test]
    fn analytic_factors() {
        assert!((window_factor(1.3, 3.125).unwrap() - 1.202).abs() < 0.002);
        assert!((pair_factor(0.2236).unwrap() - 4.47).abs() < 0.03);
        let snr = coincidence_snr(10.0, 0.2236, 1.3, 3.125).unwrap();
        assert!((snr - 53.8).abs() < 0.1, "{snr}");
        assert!(coincidence_snr(0.0, 0.2, 1.3, 3.125).is_err());
    }

    #[test]
    fn daylight_examples() {
        let night = Counts4::new(100.0, 90.0, 5.0, 6.0);
        let acc = Counts4::new(2.0, 2.0, 2.0, 2.0);
        assert_eq!(daylight_counts(&night, &acc, 0.0).unwrap(), night);
        assert_eq!(daylight_counts(&night, &acc, 240.0).unwrap(), night.plus(&acc.scaled(2.0)));
        assert!(daylight_counts(&night, &acc, -1.0).is_err());
    }

    #[test]
    fn rate_report_examples() {
        assert_eq!(rate_report(&[], &[], 0.0), RateReport::default());
        let mut f = FrameStats::from_counts(0, 6.0, CountTable::default());
        f.status = FrameStatus::Ok;
        f.n_sifted = 1000;
        f.q_est = Some(0.0);
        let r = rate_report(&[f], &[], 6.0);
        assert!((r.sifted_bps - 166.67).abs() < 0.01);
        assert_eq!(r.frames_accepted, 1);
    }

    #[test]
    fn key_stage_only_moves_forward() {
        let mut k = KeyBuffer::sifted(vec![true], 0);
        k.advance(KeyStage::Corrected, vec![true], 5).unwrap();
        assert!(k.advance(KeyStage::Disclosed, vec![], 0).is_err());
        assert_eq!(k.leaked_bits, 5);
    }

    proptest! {
        #[test]
        fn entropy_symmetric(x in 0.0001f64..0.9999) {
            prop_assert!((binary_entropy(x) - binary_entropy(1.0 - x)).abs() < 1e-12);
        }

        #[test]
        fn secure_fraction_monotone_in_s_and_f(q in 0.0f64..0.11, s1 in 2.0f64..2.5, s2 in 2.0f64..2.5, f1 in 1.0f64..1.5, f2 in 1.0f64..1.5) {
            let (s_lo, s_hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
            let (f_lo, f_hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
            let r = |s: f64, f: f64| secure_fraction(q, s, f).unwrap().unwrap_or(0.0);
            prop_assert!(r(s_hi, f_lo) >= r(s_lo, f_lo) - 1e-12);
            prop_assert!(r(s_lo, f_hi) <= r(s_lo, f_lo) + 1e-12);
        }

        #[test]
        fn secure_fraction_monotone_in_q_where_reachable(q1 in 0.0f64..0.11, q2 in 0.0f64..0.11, u in 0.0f64..1.0, f in 1.0f64..1.5) {
            let (lo, hi) = if q1 < q2 { (q1, q2) } else { (q2, q1) };
            let s = 2.0 * u * SQRT_2 * (1.0 - 2.0 * hi);
            let r_lo = secure_fraction(lo, s, f).unwrap().unwrap_or(0.0);
            let r_hi = secure_fraction(hi, s, f).unwrap().unwrap_or(0.0);
            prop_assert!(r_hi <= r_lo + 1e-12);
        }

        #[test]
        fn daylight_total_linear(i1 in 0.0f64..1000.0, i2 in 0.0f64..1000.0, n in 0.0f64..1e4, a in 0.0f64..1e3) {
            let night = Counts4::new(n, n / 2.0, n / 10.0, n / 20.0);
            let acc = Counts4::new(a, a, a / 2.0, a / 3.0);
            let t1 = daylight_counts(&night, &acc, i1).unwrap().total();
            let t2 = daylight_counts(&night, &acc, i2).unwrap().total();
            let slope = acc.total() / 120.0;
            prop_assert!((t2 - t1 - slope * (i2 - i1)).abs() <= 1e-9 * (1.0 + t1.abs() + t2.abs()));
        }

        #[test]
        fn shuffling_records_keeps_s(seed in 0u64..200) {
            let records = perfect_frame(300, 60);
            let mut shuffled = records.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut rng);
            let a = process_frame(&records, &FrameConfig::default(), 3, 0, 6.0).unwrap();
            let b = process_frame(&shuffled, &FrameConfig::default(), 3, 0, 6.0).unwrap();
            prop_assert_eq!(a.stats.s, b.stats.s);
            prop_assert_eq!(a.stats.q_est, b.stats.q_est);
        }
    }
}
