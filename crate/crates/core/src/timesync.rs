//! Clock alignment and coincidence matching.
//!
//! The coarse clock reference leaves a residual offset of tens of
//! nanoseconds between the two time taggers. It is recovered per acquisition
//! from the cross-correlation of public detector channels. Key and test
//! events are then paired within the acceptance window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::{Outcome, Party, SettingLabel};
use crate::sim::{TimeTagEvent, TICK_PS};

/// Half-width, in ticks, of the sliding sum used to locate the correlation peak.
pub const PEAK_SUM_HALF_WIDTH: i64 = 5;
/// Half-width, in ticks, of the region averaged to refine the peak position.
pub const REFINE_HALF_WIDTH: i64 = 12;
/// Required ratio of the peak to the median of the sliding sums.
pub const PEAK_TO_MEDIAN: f64 = 5.0;
/// Required ratio of the peak to the strongest sliding sum away from it.
pub const PEAK_TO_SIDELOBE: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("no significant coincidence peak (peak {peak}, median {median}, sidelobe {sidelobe})")]
    SyncFailed { peak: u64, median: f64, sidelobe: u64 },
    #[error("{0} stream is not sorted by tick")]
    Unsorted(&'static str),
    #[error("invalid window {0} ns")]
    InvalidWindow(f64),
}

/// Bob's clock relative to Alice's: `tick_B = tick_A + offset + drift·t`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClockModel {
    pub offset_ticks: i64,
    pub drift_ticks_per_s: f64,
}

/// A matched pair of detections with the parties' settings and outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoincidenceRecord {
    pub setting_a: SettingLabel,
    pub outcome_a: Outcome,
    pub setting_b: SettingLabel,
    pub outcome_b: Outcome,
    /// `tick_B − offset − tick_A`.
    pub delta: i64,
    pub frame_id: u64,
    /// Alice's detection tick, used for time ordering.
    pub tick_a: u64,
}

/// A matched pair of indices into the two streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexPair {
    pub a: usize,
    pub b: usize,
    pub delta: i64,
}

/// Offset-report record appended to the frame log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetReport {
    pub acq: u64,
    pub offset_ticks: Option<i64>,
    pub sync: String,
}

impl OffsetReport {
    pub fn new(acq: u64, result: &Result<i64, SyncError>) -> Self {
        match result {
            Ok(k) => Self { acq, offset_ticks: Some(*k), sync: "ok".into() },
            Err(_) => Self { acq, offset_ticks: None, sync: "failed".into() },
        }
    }
}

/// Convert a duration in nanoseconds to whole ticks, rounding down.
pub fn ns_to_ticks(ns: f64) -> i64 {
    ((ns * 1000.0).round() as i64).div_euclid(TICK_PS)
}

/// Largest |Δ| in ticks accepted by a total window of `window_ns`.
pub fn half_window_ticks(window_ns: f64) -> Result<i64, SyncError> {
    if !(window_ns > 0.0 && window_ns.is_finite()) {
        return Err(SyncError::InvalidWindow(window_ns));
    }
    let window_ps = (window_ns * 1000.0).round() as i64;
    Ok((window_ps / 2).div_euclid(TICK_PS))
}

fn is_sorted(t: &[u64]) -> bool {
    t.windows(2).all(|w| w[0] <= w[1])
}

/// Recover the tick offset of Bob's clock from public detection ticks.
///
/// The differences `t_B − t_A` within ±`search_half_width_ns` are binned at
/// one tick. The peak is located on sums over ±5 bins, must stand out
/// against both the median sum and the strongest sum more than 12 ticks away,
/// and is refined by the rounded mean of the differences within ±12 ticks.
pub fn recover_offset(public_a: &[u64], public_b: &[u64], search_half_width_ns: f64) -> Result<i64, SyncError> {
    if !(search_half_width_ns > 0.0) {
        return Err(SyncError::InvalidWindow(search_half_width_ns));
    }
    if !is_sorted(public_a) {
        return Err(SyncError::Unsorted("Alice"));
    }
    if !is_sorted(public_b) {
        return Err(SyncError::Unsorted("Bob"));
    }
    let w = ns_to_ticks(search_half_width_ns);
    let reach = w + REFINE_HALF_WIDTH;
    let width = (2 * reach + 1) as usize;
    let mut hist = vec![0u64; width];
    let mut diffs: Vec<i64> = Vec::new();

    let mut lo = 0usize;
    for &tb in public_b {
        let tb = tb as i64;
        while lo < public_a.len() && (public_a[lo] as i64) < tb - reach {
            lo += 1;
        }
        let mut i = lo;
        while i < public_a.len() && (public_a[i] as i64) <= tb + reach {
            let d = tb - public_a[i] as i64;
            hist[(d + reach) as usize] += 1;
            diffs.push(d);
            i += 1;
        }
    }

    let bin = |d: i64| hist[(d + reach) as usize];
    let mut sums = Vec::with_capacity((2 * w + 1) as usize);
    let mut s: u64 = (-w - PEAK_SUM_HALF_WIDTH..=-w + PEAK_SUM_HALF_WIDTH).map(bin).sum();
    for c in -w..=w {
        if c > -w {
            s = s + bin(c + PEAK_SUM_HALF_WIDTH) - bin(c - 1 - PEAK_SUM_HALF_WIDTH);
        }
        sums.push(s);
    }
    let (peak_idx, &peak) = sums
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.cmp(y.1).then(y.0.cmp(&x.0)))
        .expect("non-empty search range");
    let peak_c = peak_idx as i64 - w;
    let mut sorted = sums.clone();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    let sidelobe = sums
        .iter()
        .enumerate()
        .filter(|(k, _)| (*k as i64 - w - peak_c).abs() > REFINE_HALF_WIDTH)
        .map(|(_, &v)| v)
        .max()
        .unwrap_or(0);
    if (peak as f64) < PEAK_TO_MEDIAN * median.max(1.0) || (peak as f64) < PEAK_TO_SIDELOBE * sidelobe as f64 {
        return Err(SyncError::SyncFailed { peak, median, sidelobe });
    }

    let (sum, count) = diffs
        .iter()
        .filter(|&&d| (d - peak_c).abs() <= REFINE_HALF_WIDTH)
        .fold((0i64, 0i64), |(s, c), &d| (s + d, c + 1));
    Ok((2 * sum + count).div_euclid(2 * count))
}

/// Event-level wrapper around [`recover_offset`].
pub fn recover_offset_events(
    public_a: &[TimeTagEvent],
    public_b: &[TimeTagEvent],
    search_half_width_ns: f64,
) -> Result<i64, SyncError> {
    let a: Vec<u64> = public_a.iter().map(|e| e.tick).collect();
    let b: Vec<u64> = public_b.iter().map(|e| e.tick).collect();
    recover_offset(&a, &b, search_half_width_ns)
}

/// Greedy two-pointer matching of sorted tick streams with
/// `|t_A − (t_B − offset)| ≤ half_window`. A compatible head pair is matched
/// and both pointers advance; otherwise the earlier event is dropped. Each
/// event is used at most once and the result is a maximum-cardinality
/// matching, ordered by time.
pub fn match_ticks(a: &[u64], b: &[u64], offset: i64, half_window: i64) -> Result<Vec<IndexPair>, SyncError> {
    if !is_sorted(a) {
        return Err(SyncError::Unsorted("Alice"));
    }
    if !is_sorted(b) {
        return Err(SyncError::Unsorted("Bob"));
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let ta = a[i] as i64;
        let tb = b[j] as i64 - offset;
        let delta = tb - ta;
        if delta.abs() <= half_window {
            out.push(IndexPair { a: i, b: j, delta });
            i += 1;
            j += 1;
        } else if ta < tb {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(out)
}

/// Match two event streams into coincidence records.
pub fn match_coincidences(
    stream_a: &[TimeTagEvent],
    stream_b: &[TimeTagEvent],
    offset: i64,
    window_ns: f64,
    frame_id: u64,
) -> Result<Vec<CoincidenceRecord>, SyncError> {
    let hw = half_window_ticks(window_ns)?;
    let a: Vec<u64> = stream_a.iter().map(|e| e.tick).collect();
    let b: Vec<u64> = stream_b.iter().map(|e| e.tick).collect();
    let pairs = match_ticks(&a, &b, offset, hw)?;
    Ok(pairs
        .into_iter()
        .filter_map(|p| {
            let (sa, oa) = SettingLabel::from_channel(Party::Alice, stream_a[p.a].channel)?;
            let (sb, ob) = SettingLabel::from_channel(Party::Bob, stream_b[p.b].channel)?;
            Some(CoincidenceRecord {
                setting_a: sa,
                outcome_a: oa,
                setting_b: sb,
                outcome_b: ob,
                delta: p.delta,
                frame_id,
                tick_a: stream_a[p.a].tick,
            })
        })
        .collect())
}
