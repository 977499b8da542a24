//! Monte-Carlo generation of time-tagged detection streams.
//!
//! A quantum-dot source fires at the pump repetition rate and emits a pair
//! with probability `p_pair`. Each photon independently survives its arm; a
//! surviving photon picks a measurement setting by the configured basis
//! probabilities and an outcome drawn from the Born-rule probabilities of the
//! (channel-depolarized) two-qubit state. Detection times carry Gaussian
//! jitter at 1 ps resolution and are then quantized to 81 ps TDC ticks.
//! Dark counts, beacon leakage and sunlight add Poisson background on every
//! detector.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::{Outcome, Party, QuantumError, SettingLabel, TwoQubitState};
use crate::rng::{self, streams};
use crate::timesync::ClockModel;

/// TDC resolution in picoseconds.
pub const TICK_PS: i64 = 81;
/// Time origin of every stream, so that jitter and negative clock offsets
/// never produce negative ticks.
pub const EPOCH_PS: i64 = 1_000_000_000;
/// Irradiance at which `sun_rate_ref` is specified.
pub const SUN_REF_IRRADIANCE: f64 = 120.0;
/// Ratio between a Gaussian's FWHM and its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.355;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameter {field}: {reason}")]
    InvalidParam { field: String, reason: String },
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed event stream at line {line}: {reason}")]
    Stream { line: usize, reason: String },
    #[error("weather series is empty")]
    EmptyWeather,
}

fn invalid(field: &str, reason: impl Into<String>) -> SimError {
    SimError::InvalidParam { field: field.to_string(), reason: reason.into() }
}

fn check_prob(field: &str, v: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} is not a probability in [0, 1]")))
    }
}

fn check_nonneg(field: &str, v: f64) -> Result<(), SimError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} must be finite and non-negative")))
    }
}

/// Quantum-dot source parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceParams {
    /// Pump repetition rate in Hz.
    pub rep_rate_hz: f64,
    pub eta_prep: f64,
    pub eta_blink: f64,
    /// Fidelity of the emitted pair to |φ⁺⟩ (Werner model).
    pub fidelity: f64,
    /// Biexciton and exciton wavelengths in nm (metadata only).
    pub lambda_xx_nm: f64,
    pub lambda_x_nm: f64,
    /// Second-order autocorrelations at zero delay; used only when `multiphoton` is on.
    pub g2_xx: f64,
    pub g2_x: f64,
    /// Add an uncorrelated extra-photon term proportional to g².
    pub multiphoton: bool,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            rep_rate_hz: 320e6,
            eta_prep: 0.86,
            eta_blink: 0.26,
            fidelity: 0.942,
            lambda_xx_nm: 784.75,
            lambda_x_nm: 782.86,
            g2_xx: 0.013,
            g2_x: 0.022,
            multiphoton: false,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.rep_rate_hz > 0.0 && self.rep_rate_hz.is_finite()) {
            return Err(invalid("rep_rate_hz", "must be positive"));
        }
        check_prob("eta_prep", self.eta_prep)?;
        check_prob("eta_blink", self.eta_blink)?;
        if !(0.25..=1.0).contains(&self.fidelity) {
            return Err(invalid("fidelity", "must lie in [0.25, 1]"));
        }
        check_nonneg("g2_xx", self.g2_xx)?;
        check_nonneg("g2_x", self.g2_x)?;
        Ok(())
    }

    /// Pump period in picoseconds.
    pub fn period_ps(&self) -> f64 {
        1e12 / self.rep_rate_hz
    }
}

/// Probability that a pump pulse yields a usable pair: η_prep · η_blink.
pub fn pair_probability(src: &SourceParams) -> f64 {
    src.eta_prep * src.eta_blink
}

/// Arm, link, detector and background parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    /// Collection and optics transmission of Alice's local arm, excluding detectors.
    pub alice_arm_efficiency: f64,
    /// Dark counts per detector on Alice's side, in cps.
    pub alice_dark_rate: f64,
    /// Collection and receiver optics transmission of Bob's arm, excluding
    /// the free-space link, coupling and detectors.
    pub bob_arm_efficiency: f64,
    pub link_efficiency: f64,
    pub coupling_mean: f64,
    /// Stationary RMS of the coupling relative to its mean.
    pub coupling_rms_frac: f64,
    pub coupling_min: f64,
    pub coupling_max: f64,
    pub coupling_corr_time_s: f64,
    pub detector_efficiency: f64,
    pub jitter_fwhm_ps: f64,
    /// Per-detector rates on Bob's side, in cps.
    pub dark_rate: f64,
    pub beacon_rate: f64,
    /// Sunlight counts per detector at 120 W/m².
    pub sun_rate_ref: f64,
    /// Rain transmission is exp(−coeff · rain[mm/hr]).
    pub rain_atten_coeff: f64,
    /// Depolarizing-channel parameter applied to Bob's photon.
    pub depolarization: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            alice_arm_efficiency: 1.0,
            alice_dark_rate: 250.0,
            bob_arm_efficiency: 1.0,
            link_efficiency: 0.10,
            coupling_mean: 0.40,
            coupling_rms_frac: 0.17,
            coupling_min: 0.30,
            coupling_max: 0.50,
            coupling_corr_time_s: 3600.0,
            detector_efficiency: 0.46,
            jitter_fwhm_ps: 400.0,
            dark_rate: 250.0,
            beacon_rate: 700.0,
            sun_rate_ref: 520.0,
            rain_atten_coeff: 0.005,
            depolarization: 0.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("alice_arm_efficiency", self.alice_arm_efficiency),
            ("bob_arm_efficiency", self.bob_arm_efficiency),
            ("link_efficiency", self.link_efficiency),
            ("coupling_mean", self.coupling_mean),
            ("coupling_min", self.coupling_min),
            ("coupling_max", self.coupling_max),
            ("detector_efficiency", self.detector_efficiency),
            ("depolarization", self.depolarization),
        ] {
            check_prob(name, v)?;
        }
        for (name, v) in [
            ("alice_dark_rate", self.alice_dark_rate),
            ("coupling_rms_frac", self.coupling_rms_frac),
            ("jitter_fwhm_ps", self.jitter_fwhm_ps),
            ("dark_rate", self.dark_rate),
            ("beacon_rate", self.beacon_rate),
            ("sun_rate_ref", self.sun_rate_ref),
            ("rain_atten_coeff", self.rain_atten_coeff),
        ] {
            check_nonneg(name, v)?;
        }
        if self.coupling_min > self.coupling_max {
            return Err(invalid("coupling_min", "exceeds coupling_max"));
        }
        if !(self.coupling_corr_time_s > 0.0) {
            return Err(invalid("coupling_corr_time_s", "must be positive"));
        }
        Ok(())
    }

    /// Per-photon detection probability on Alice's side.
    pub fn eta_alice(&self) -> f64 {
        self.alice_arm_efficiency * self.detector_efficiency
    }

    /// Per-photon detection probability on Bob's side.
    pub fn eta_bob(&self, coupling: f64, rain_mm_hr: f64) -> f64 {
        self.bob_arm_efficiency
            * self.link_efficiency
            * coupling
            * self.detector_efficiency
            * rain_transmission(self, rain_mm_hr)
    }
}

/// Multiplicative rain transmission exp(−coeff · rain).
pub fn rain_transmission(ch: &ChannelParams, rain_mm_hr: f64) -> f64 {
    (-ch.rain_atten_coeff * rain_mm_hr.max(0.0)).exp()
}

/// Background counts per Bob detector: dark + beacon + sunlight scaled linearly in irradiance.
pub fn background_rate(ch: &ChannelParams, w: &WeatherSample) -> Result<f64, SimError> {
    if w.irradiance < 0.0 || w.irradiance.is_nan() {
        return Err(invalid("irradiance", format!("{} is negative", w.irradiance)));
    }
    Ok(ch.dark_rate + ch.beacon_rate + ch.sun_rate_ref * w.irradiance / SUN_REF_IRRADIANCE)
}

/// Basis-choice probabilities: Alice over (A_k, A_0, A_1), Bob over (B_0, B_1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisProbs {
    pub alice: [f64; 3],
    pub bob: [f64; 2],
}

impl Default for BasisProbs {
    fn default() -> Self {
        Self { alice: [0.5, 0.25, 0.25], bob: [0.5, 0.5] }
    }
}

impl BasisProbs {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, ps) in [("alice", &self.alice[..]), ("bob", &self.bob[..])] {
            if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(invalid(name, "basis probabilities must be in [0, 1] and sum to 1"));
            }
        }
        Ok(())
    }

    pub fn for_party(&self, party: Party) -> &[f64] {
        match party {
            Party::Alice => &self.alice,
            Party::Bob => &self.bob,
        }
    }
}

/// One weather observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherSample {
    #[serde(rename = "timestamp_s")]
    pub timestamp: f64,
    #[serde(rename = "irradiance_wm2")]
    pub irradiance: f64,
    #[serde(rename = "rain_mmhr")]
    pub rain: f64,
}

impl WeatherSample {
    pub fn constant(irradiance: f64, rain: f64) -> Self {
        Self { timestamp: 0.0, irradiance, rain }
    }
}

/// Weather time series with linear interpolation between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSeries {
    samples: Vec<WeatherSample>,
}

impl WeatherSeries {
    pub fn new(mut samples: Vec<WeatherSample>) -> Result<Self, SimError> {
        if samples.is_empty() {
            return Err(SimError::EmptyWeather);
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.irradiance >= 0.0) || !(s.rain >= 0.0) || !s.timestamp.is_finite() {
                return Err(invalid(
                    &format!("weather[{i}]"),
                    "irradiance and rain must be non-negative",
                ));
            }
        }
        samples.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        Ok(Self { samples })
    }

    pub fn constant(irradiance: f64, rain: f64) -> Self {
        Self { samples: vec![WeatherSample::constant(irradiance, rain)] }
    }

    pub fn samples(&self) -> &[WeatherSample] {
        &self.samples
    }

    /// Interpolated weather at time `t`; held constant beyond the ends.
    pub fn at(&self, t: f64) -> WeatherSample {
        let s = &self.samples;
        let idx = s.partition_point(|x| x.timestamp <= t);
        let mut out = if idx == 0 {
            s[0]
        } else if idx == s.len() {
            s[s.len() - 1]
        } else {
            let (a, b) = (s[idx - 1], s[idx]);
            let f = (t - a.timestamp) / (b.timestamp - a.timestamp);
            WeatherSample {
                timestamp: t,
                irradiance: a.irradiance + f * (b.irradiance - a.irradiance),
                rain: a.rain + f * (b.rain - a.rain),
            }
        };
        out.timestamp = t;
        out
    }

    pub fn from_csv_reader<R: Read>(r: R) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_reader(r);
        let samples = rdr.deserialize().collect::<Result<Vec<WeatherSample>, _>>()?;
        Self::new(samples)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, SimError> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn to_csv_writer<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut wtr = csv::Writer::from_writer(w);
        for s in &self.samples {
            wtr.serialize(s)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// A single detection: party, detector channel and TDC tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeTagEvent {
    pub party: Party,
    #[serde(rename = "ch")]
    pub channel: u8,
    pub tick: u64,
}

impl TimeTagEvent {
    pub fn setting_outcome(&self) -> Option<(SettingLabel, Outcome)> {
        SettingLabel::from_channel(self.party, self.channel)
    }
}

/// Write events as JSON Lines.
pub fn write_events_jsonl<W: Write>(mut w: W, events: &[TimeTagEvent]) -> Result<(), SimError> {
    for e in events {
        serde_json::to_writer(&mut w, e).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a JSON Lines event stream, validating channel ranges.
pub fn read_events_jsonl<R: BufRead>(r: R) -> Result<Vec<TimeTagEvent>, SimError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: TimeTagEvent = serde_json::from_str(&line)
            .map_err(|err| SimError::Stream { line: i + 1, reason: err.to_string() })?;
        if e.channel >= e.party.n_channels() {
            return Err(SimError::Stream { line: i + 1, reason: format!("channel {} out of range", e.channel) });
        }
        out.push(e);
    }
    Ok(out)
}

/// Packed binary form: 1 byte channel then 8 bytes little-endian tick per event.
pub fn write_events_binary<W: Write>(mut w: W, events: &[TimeTagEvent]) -> Result<(), SimError> {
    for e in events {
        w.write_all(&[e.channel])?;
        w.write_all(&e.tick.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_events_binary<R: Read>(mut r: R, party: Party) -> Result<Vec<TimeTagEvent>, SimError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() % 9 != 0 {
        return Err(SimError::Stream { line: buf.len() / 9 + 1, reason: "truncated record".into() });
    }
    buf.chunks_exact(9)
        .enumerate()
        .map(|(i, c)| {
            let channel = c[0];
            if channel >= party.n_channels() {
                return Err(SimError::Stream { line: i + 1, reason: format!("channel {channel} out of range") });
            }
            let tick = u64::from_le_bytes(c[1..9].try_into().expect("8 bytes"));
            Ok(TimeTagEvent { party, channel, tick })
        })
        .collect()
}

/// Emitted-pair record for oracle testing; never handed to the protocol parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    /// Pulse index counted from the start of the acquisition.
    pub pulse: u64,
    pub alice_ch: Option<u8>,
    pub bob_ch: Option<u8>,
    pub alice_tick: Option<u64>,
    pub bob_tick: Option<u64>,
}

/// Stochastic fiber-coupling efficiency of Bob's receiver.
///
/// The coupling is `mean + A·sin φ(t)` with a Brownian phase φ of diffusion
/// constant 2/τ, so the autocorrelation decays as exp(−t/τ). With a uniform
/// stationary phase the RMS deviation is A/√2, hence A = √2 · rms_frac · mean.
/// Values are sampled on a 10 s grid, interpolated linearly and clipped to
/// `[coupling_min, coupling_max]`.
#[derive(Debug, Clone)]
pub struct CouplingProcess {
    mean: f64,
    amplitude: f64,
    lo: f64,
    hi: f64,
    phase_step_sd: f64,
    phases: Vec<f64>,
    rng: ChaCha12Rng,
}

impl CouplingProcess {
    pub const GRID_STEP_S: f64 = 10.0;

    pub fn new(ch: &ChannelParams, seed: u64) -> Self {
        let mut rng = rng::substream(seed, streams::COUPLING, 0);
        let phi0 = rng.random::<f64>() * std::f64::consts::TAU;
        let diffusion = 2.0 / ch.coupling_corr_time_s;
        Self {
            mean: ch.coupling_mean,
            amplitude: std::f64::consts::SQRT_2 * ch.coupling_rms_frac * ch.coupling_mean,
            lo: ch.coupling_min,
            hi: ch.coupling_max,
            phase_step_sd: (diffusion * Self::GRID_STEP_S).sqrt(),
            phases: vec![phi0],
            rng,
        }
    }

    fn grid_value(&mut self, k: usize) -> f64 {
        while self.phases.len() <= k {
            let last = *self.phases.last().expect("non-empty");
            let z: f64 = self.rng.sample(StandardNormal);
            self.phases.push(last + self.phase_step_sd * z);
        }
        (self.mean + self.amplitude * self.phases[k].sin()).clamp(self.lo, self.hi)
    }

    /// Coupling efficiency at time `t` (seconds, t ≥ 0).
    pub fn at(&mut self, t: f64) -> f64 {
        if self.amplitude == 0.0 {
            return self.mean;
        }
        let t = t.max(0.0);
        let x = t / Self::GRID_STEP_S;
        let k = x.floor() as usize;
        let f = x - k as f64;
        let a = self.grid_value(k);
        let b = self.grid_value(k + 1);
        a + f * (b - a)
    }
}

/// Coupling efficiency at time `t` for the process seeded by `seed`.
pub fn coupling_process(ch: &ChannelParams, t: f64, seed: u64) -> f64 {
    CouplingProcess::new(ch, seed).at(t)
}

/// One acquisition slot of the duty-cycled schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionWindow {
    pub index: u64,
    pub start_s: f64,
    pub duration_s: f64,
    /// Whether the clock reference misbehaves in this window so that the
    /// coincidence-peak search cannot succeed.
    pub sync_fail: bool,
}

/// Acquisition windows of `acq_len` repeated every `acq_len / duty` seconds,
/// each flagged as a sync failure with probability `sync_fail_prob`.
pub fn duty_cycle_schedule(
    total_s: f64,
    acq_len_s: f64,
    duty: f64,
    sync_fail_prob: f64,
    seed: u64,
) -> Result<Vec<AcquisitionWindow>, SimError> {
    if !(duty > 0.0 && duty <= 1.0) {
        return Err(invalid("duty", "must lie in (0, 1]"));
    }
    if !(acq_len_s > 0.0) {
        return Err(invalid("acq_len_s", "must be positive"));
    }
    check_prob("sync_fail_prob", sync_fail_prob)?;
    let period = acq_len_s / duty;
    let mut rng = rng::substream(seed, streams::SCHEDULE, 0);
    let mut out = Vec::new();
    let eps = 1e-9 * acq_len_s;
    for index in 0.. {
        let start_s = index as f64 * period;
        if start_s + acq_len_s > total_s + eps {
            break;
        }
        let sync_fail = rng.random::<f64>() < sync_fail_prob;
        out.push(AcquisitionWindow { index, start_s, duration_s: acq_len_s, sync_fail });
    }
    Ok(out)
}

/// Per-acquisition conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionContext {
    pub start_s: f64,
    pub duration_s: f64,
    pub weather: WeatherSample,
    pub coupling: f64,
    /// Bob's clock relative to Alice's.
    pub clock: ClockModel,
    pub record_truth: bool,
}

/// Detection streams of one acquisition, each sorted by tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Acquisition {
    pub alice: Vec<TimeTagEvent>,
    pub bob: Vec<TimeTagEvent>,
    pub truth: Vec<TruthRecord>,
}

/// Cumulative distribution over a small categorical, used for O(1)-ish sampling.
#[derive(Debug, Clone)]
struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    fn new(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Self { cdf }
    }

    fn sample(&self, u: f64) -> usize {
        self.cdf.iter().position(|&c| u < c).unwrap_or(self.cdf.len() - 1)
    }
}

/// Prepared simulator: parameters plus precomputed outcome tables.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub source: SourceParams,
    pub channel: ChannelParams,
    pub basis: BasisProbs,
    state: TwoQubitState,
    alice_setting: Categorical,
    bob_setting: Categorical,
    joint: Vec<Vec<Categorical>>,
    alice_marginal: Vec<Categorical>,
    bob_marginal: Vec<Categorical>,
}

impl Simulator {
    /// `state` is the emitted pair state; the channel's depolarization is applied here.
    pub fn new(
        source: SourceParams,
        channel: ChannelParams,
        basis: BasisProbs,
        state: &TwoQubitState,
    ) -> Result<Self, SimError> {
        source.validate()?;
        channel.validate()?;
        basis.validate()?;
        let state = state.depolarize_bob(channel.depolarization)?;
        let a_settings = Party::Alice.settings();
        let b_settings = Party::Bob.settings();
        let joint = a_settings
            .iter()
            .map(|sa| {
                b_settings
                    .iter()
                    .map(|sb| Categorical::new(&state.joint_outcome_probs(sa.angle_deg(), sb.angle_deg())))
                    .collect()
            })
            .collect();
        let alice_marginal =
            a_settings.iter().map(|s| Categorical::new(&state.marginal_probs(Party::Alice, s.angle_deg()))).collect();
        let bob_marginal =
            b_settings.iter().map(|s| Categorical::new(&state.marginal_probs(Party::Bob, s.angle_deg()))).collect();
        Ok(Self {
            alice_setting: Categorical::new(&basis.alice),
            bob_setting: Categorical::new(&basis.bob),
            source,
            channel,
            basis,
            state,
            joint,
            alice_marginal,
            bob_marginal,
        })
    }

    /// The state after channel depolarization.
    pub fn effective_state(&self) -> &TwoQubitState {
        &self.state
    }

    fn jitter_sigma_ps(&self) -> f64 {
        self.channel.jitter_fwhm_ps / FWHM_PER_SIGMA
    }

    /// Simulate one acquisition. The randomness is fully determined by `seed`.
    pub fn acquire(&self, ctx: &AcquisitionContext, seed: u64) -> Acquisition {
        let mut emit = rng::substream(seed, streams::EMISSION, 0);
        let mut bg = rng::substream(seed, streams::BACKGROUND, 0);
        let period = self.source.period_ps();
        let sigma = self.jitter_sigma_ps();
        let start_ps = EPOCH_PS + (ctx.start_s * 1e12).round() as i64;
        let duration_ps = ctx.duration_s * 1e12;
        let n_pulses = (ctx.duration_s * self.source.rep_rate_hz).floor() as u64;

        let alice_tick = |t_ps: i64| -> u64 { t_ps.div_euclid(TICK_PS) as u64 };
        let bob_tick = |t_ps: i64| -> u64 {
            let rel_s = (t_ps - EPOCH_PS) as f64 * 1e-12;
            let tick = t_ps.div_euclid(TICK_PS) + ctx.clock.offset_ticks + (ctx.clock.drift_ticks_per_s * rel_s).round() as i64;
            tick.max(0) as u64
        };

        let p_pair = pair_probability(&self.source);
        let eta_a = self.channel.eta_alice();
        let eta_b = self.channel.eta_bob(ctx.coupling, ctx.weather.rain);
        let expected = p_pair * duration_ps / period * (eta_a + eta_b);
        let mut out = Acquisition {
            alice: Vec::with_capacity((expected * 1.1) as usize + 64),
            bob: Vec::with_capacity((p_pair * duration_ps / period * eta_b * 1.1) as usize + 64),
            truth: Vec::new(),
        };

        // Pulses with at least one detection are reached by geometric skips.
        let p_any = p_pair * (1.0 - (1.0 - eta_a) * (1.0 - eta_b));
        let p_both = p_pair * eta_a * eta_b;
        let p_a_only = p_pair * eta_a * (1.0 - eta_b);
        let jitter = |rng: &mut ChaCha12Rng| -> f64 { sigma * rng.sample::<f64, _>(StandardNormal) };

        if p_any > 0.0 && n_pulses > 0 {
            let log_miss = (-p_any).ln_1p();
            let mut k: u64 = 0;
            let mut first = true;
            loop {
                let u: f64 = 1.0 - emit.random::<f64>();
                let gap = if p_any >= 1.0 { 1 } else { (u.ln() / log_miss).floor() as u64 + 1 };
                k = if first { gap - 1 } else { k.saturating_add(gap) };
                first = false;
                if k >= n_pulses {
                    break;
                }
                let t0 = start_ps as f64 + k as f64 * period;
                let which = emit.random::<f64>() * p_any;
                let (mut ach, mut bch) = (None, None);
                if which < p_both {
                    let sa = self.alice_setting.sample(emit.random());
                    let sb = self.bob_setting.sample(emit.random());
                    let o = self.joint[sa][sb].sample(emit.random());
                    ach = Some(sa as u8 * 2 + (o >> 1) as u8);
                    bch = Some(sb as u8 * 2 + (o & 1) as u8);
                } else if which < p_both + p_a_only {
                    let sa = self.alice_setting.sample(emit.random());
                    let o = self.alice_marginal[sa].sample(emit.random());
                    ach = Some(sa as u8 * 2 + o as u8);
                } else {
                    let sb = self.bob_setting.sample(emit.random());
                    let o = self.bob_marginal[sb].sample(emit.random());
                    bch = Some(sb as u8 * 2 + o as u8);
                }
                let mut rec = TruthRecord { pulse: k, alice_ch: ach, bob_ch: bch, alice_tick: None, bob_tick: None };
                if let Some(channel) = ach {
                    let tick = alice_tick((t0 + jitter(&mut emit)).round() as i64);
                    out.alice.push(TimeTagEvent { party: Party::Alice, channel, tick });
                    rec.alice_tick = Some(tick);
                }
                if let Some(channel) = bch {
                    let tick = bob_tick((t0 + jitter(&mut emit)).round() as i64);
                    out.bob.push(TimeTagEvent { party: Party::Bob, channel, tick });
                    rec.bob_tick = Some(tick);
                }
                if ctx.record_truth {
                    out.truth.push(rec);
                }
            }
        }

        if self.source.multiphoton {
            let extra_a = p_pair * self.source.g2_x * eta_a * self.source.rep_rate_hz;
            let extra_b = p_pair * self.source.g2_xx * eta_b * self.source.rep_rate_hz;
            self.uncorrelated_photons(&mut bg, Party::Alice, extra_a, start_ps, duration_ps, period, &mut out.alice, &alice_tick);
            self.uncorrelated_photons(&mut bg, Party::Bob, extra_b, start_ps, duration_ps, period, &mut out.bob, &bob_tick);
        }

        let bob_bg = background_rate(&self.channel, &ctx.weather).unwrap_or(0.0);
        for channel in 0..Party::Alice.n_channels() {
            poisson_events(&mut bg, self.channel.alice_dark_rate, start_ps, duration_ps, |t| {
                out.alice.push(TimeTagEvent { party: Party::Alice, channel, tick: alice_tick(t) })
            });
        }
        for channel in 0..Party::Bob.n_channels() {
            poisson_events(&mut bg, bob_bg, start_ps, duration_ps, |t| {
                out.bob.push(TimeTagEvent { party: Party::Bob, channel, tick: bob_tick(t) })
            });
        }

        out.alice.sort_by_key(|e| (e.tick, e.channel));
        out.bob.sort_by_key(|e| (e.tick, e.channel));
        out
    }

    /// Extra photons uncorrelated with the partner arm, emitted on pulse slots
    /// with a random setting and an unbiased outcome.
    #[allow(clippy::too_many_arguments)]
    fn uncorrelated_photons(
        &self,
        rng: &mut ChaCha12Rng,
        party: Party,
        rate_cps: f64,
        start_ps: i64,
        duration_ps: f64,
        period: f64,
        sink: &mut Vec<TimeTagEvent>,
        to_tick: &dyn Fn(i64) -> u64,
    ) {
        let sigma = self.jitter_sigma_ps();
        let settings = match party {
            Party::Alice => &self.alice_setting,
            Party::Bob => &self.bob_setting,
        };
        let mut arrivals = Vec::new();
        poisson_events(rng, rate_cps, 0, duration_ps, |t| arrivals.push(t));
        for t in arrivals {
            let slot = (t as f64 / period).floor();
            let s = settings.sample(rng.random());
            let outcome = rng.random::<bool>() as u8;
            let z: f64 = rng.sample(StandardNormal);
            let t_ps = (start_ps as f64 + slot * period + sigma * z).round() as i64;
            sink.push(TimeTagEvent { party, channel: s as u8 * 2 + outcome, tick: to_tick(t_ps) });
        }
    }
}

/// Poisson arrivals at `rate_cps` over `[start_ps, start_ps + duration_ps)`.
fn poisson_events(rng: &mut ChaCha12Rng, rate_cps: f64, start_ps: i64, duration_ps: f64, mut sink: impl FnMut(i64)) {
    if rate_cps <= 0.0 {
        return;
    }
    let exp = Exp::new(rate_cps * 1e-12).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t >= duration_ps {
            break;
        }
        sink(start_ps + t.round() as i64);
    }
}

/// Simulate one acquisition with default basis probabilities, mean coupling,
/// aligned clocks and the emitted state `state`.
pub fn simulate_acquisition(
    src: &SourceParams,
    ch: &ChannelParams,
    state: &TwoQubitState,
    w: &WeatherSample,
    duration_s: f64,
    seed: u64,
) -> Result<Acquisition, SimError> {
    if !(duration_s > 0.0) {
        return Err(invalid("duration_s", "must be positive"));
    }
    let sim = Simulator::new(src.clone(), ch.clone(), BasisProbs::default(), state)?;
    let ctx = AcquisitionContext {
        start_s: 0.0,
        duration_s,
        weather: *w,
        coupling: ch.coupling_mean,
        clock: ClockModel::default(),
        record_truth: true,
    };
    Ok(sim.acquire(&ctx, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timesync::{match_ticks, half_window_ticks};
    use proptest::prelude::*;

    fn quiet_channel() -> ChannelParams {
        ChannelParams { alice_dark_rate: 0.0, dark_rate: 0.0, beacon_rate: 0.0, sun_rate_ref: 0.0, ..Default::default() }
    }

    fn ctx(duration_s: f64, coupling: f64) -> AcquisitionContext {
        AcquisitionContext {
            start_s: 0.0,
            duration_s,
            weather: WeatherSample::constant(0.0, 0.0),
            coupling,
            clock: ClockModel::default(),
            record_truth: true,
        }
    }

    #[test]
    fn same_seed_same_streams() {
        let state = TwoQubitState::werner_from_fidelity(0.94).unwrap();
        let sim = Simulator::new(SourceParams::default(), ChannelParams::default(), BasisProbs::default(), &state).unwrap();
        let a = sim.acquire(&ctx(0.01, 0.4), 17);
        let b = sim.acquire(&ctx(0.01, 0.4), 17);
        let c = sim.acquire(&ctx(0.01, 0.4), 18);
        assert_eq!(a, b);
        assert_ne!(a.alice, c.alice);
    }

    #[test]
    fn background_only_rates() {
        let ch = ChannelParams {
            alice_arm_efficiency: 0.0,
            link_efficiency: 0.0,
            alice_dark_rate: 1000.0,
            dark_rate: 300.0,
            beacon_rate: 200.0,
            sun_rate_ref: 600.0,
            ..Default::default()
        };
        let sim = Simulator::new(SourceParams::default(), ch, BasisProbs::default(), &TwoQubitState::phi_plus()).unwrap();
        let mut c = ctx(20.0, 0.4);
        c.weather = WeatherSample::constant(60.0, 0.0);
        let acq = sim.acquire(&c, 3);
        // 6 Alice detectors at 1000 cps; 4 Bob detectors at 300 + 200 + 600/2 cps.
        let expect_a = 6.0 * 1000.0 * 20.0;
        let expect_b = 4.0 * 800.0 * 20.0;
        assert!((acq.alice.len() as f64 - expect_a).abs() < 5.0 * expect_a.sqrt());
        assert!((acq.bob.len() as f64 - expect_b).abs() < 5.0 * expect_b.sqrt());
        assert!(acq.truth.is_empty());
        assert!(acq.alice.windows(2).all(|w| w[0].tick <= w[1].tick));
    }

    #[test]
    fn singles_and_coincidences_follow_efficiencies() {
        let src = SourceParams::default();
        let ch = ChannelParams { alice_arm_efficiency: 0.02, bob_arm_efficiency: 0.5, ..quiet_channel() };
        let sim = Simulator::new(src.clone(), ch.clone(), BasisProbs::default(), &TwoQubitState::phi_plus()).unwrap();
        let d = 0.2;
        let acq = sim.acquire(&ctx(d, 0.4), 5);
        let p = pair_probability(&src) * src.rep_rate_hz * d;
        let (ea, eb) = (ch.eta_alice(), ch.eta_bob(0.4, 0.0));
        let within = |n: usize, mean: f64| (n as f64 - mean).abs() < 5.0 * mean.sqrt();
        assert!(within(acq.alice.len(), p * ea), "{} vs {}", acq.alice.len(), p * ea);
        assert!(within(acq.bob.len(), p * eb));
        let both = acq.truth.iter().filter(|t| t.alice_ch.is_some() && t.bob_ch.is_some()).count();
        assert!(within(both, p * ea * eb));
    }

    #[test]
    fn phi_plus_key_basis_is_perfectly_correlated() {
        let ch = ChannelParams { alice_arm_efficiency: 0.5, bob_arm_efficiency: 1.0, ..quiet_channel() };
        let sim = Simulator::new(SourceParams::default(), ch, BasisProbs::default(), &TwoQubitState::phi_plus()).unwrap();
        let acq = sim.acquire(&ctx(0.05, 0.5), 9);
        let mut n = 0;
        for t in &acq.truth {
            if let (Some(a), Some(b)) = (t.alice_ch, t.bob_ch) {
                if a / 2 == 0 && b / 2 == 0 {
                    assert_eq!(a % 2, b % 2);
                    n += 1;
                }
            }
        }
        assert!(n > 100);
    }

    #[test]
    fn coincidences_land_inside_the_window_at_zero_offset() {
        let ch = ChannelParams { alice_arm_efficiency: 0.5, bob_arm_efficiency: 1.0, ..quiet_channel() };
        let sim = Simulator::new(SourceParams::default(), ch, BasisProbs::default(), &TwoQubitState::phi_plus()).unwrap();
        let acq = sim.acquire(&ctx(0.05, 0.5), 11);
        let a: Vec<u64> = acq.alice.iter().map(|e| e.tick).collect();
        let b: Vec<u64> = acq.bob.iter().map(|e| e.tick).collect();
        let pairs = match_ticks(&a, &b, 0, half_window_ticks(1.3).unwrap()).unwrap();
        let truth = acq.truth.iter().filter(|t| t.alice_ch.is_some() && t.bob_ch.is_some()).count();
        assert!(pairs.len() as f64 > 0.99 * truth as f64, "{} of {truth}", pairs.len());
    }

    #[test]
    fn clock_offset_shifts_bob_ticks() {
        let sim =
            Simulator::new(SourceParams::default(), quiet_channel(), BasisProbs::default(), &TwoQubitState::phi_plus()).unwrap();
        let base = sim.acquire(&ctx(0.01, 0.4), 2);
        let mut c = ctx(0.01, 0.4);
        c.clock = ClockModel { offset_ticks: 12345, drift_ticks_per_s: 0.0 };
        let shifted = sim.acquire(&c, 2);
        assert_eq!(base.alice, shifted.alice);
        assert!(base.bob.iter().zip(&shifted.bob).all(|(x, y)| y.tick == x.tick + 12345));
    }

    #[test]
    fn rain_and_coupling_scale_bob_efficiency() {
        let ch = ChannelParams::default();
        let dry = ch.eta_bob(0.4, 0.0);
        assert!((ch.eta_bob(0.4, 10.0) / dry - (-0.05f64).exp()).abs() < 1e-12);
        assert!((ch.eta_bob(0.2, 0.0) / dry - 0.5).abs() < 1e-12);
        let w = WeatherSample::constant(120.0, 0.0);
        assert!((background_rate(&ch, &w).unwrap() - (250.0 + 700.0 + 520.0)).abs() < 1e-9);
        assert!(background_rate(&ch, &WeatherSample::constant(-1.0, 0.0)).is_err());
    }

    #[test]
    fn coupling_statistics() {
        let ch = ChannelParams {
            coupling_min: 0.0,
            coupling_max: 1.0,
            coupling_corr_time_s: 600.0,
            ..Default::default()
        };
        let mut p = CouplingProcess::new(&ch, 4);
        let xs: Vec<f64> = (0..200_000).map(|i| p.at(i as f64 * 10.0)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let rms = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        assert!((mean - 0.40).abs() < 0.01, "mean {mean}");
        assert!((rms / 0.40 - 0.17).abs() < 0.01, "rms frac {}", rms / 0.40);
        let mut clipped = CouplingProcess::new(&ChannelParams::default(), 4);
        assert!((0..10_000).map(|i| clipped.at(i as f64 * 7.0)).all(|c| (0.30..=0.50).contains(&c)));
        assert_eq!(coupling_process(&ch, 1234.5, 9), coupling_process(&ch, 1234.5, 9));
    }

    #[test]
    fn schedule_windows_and_failures() {
        let w = duty_cycle_schedule(3600.0, 4.0, 0.4, 0.0, 1).unwrap();
        assert_eq!(w.len(), 360);
        assert!(w.iter().all(|x| x.start_s + x.duration_s <= 3600.0 && !x.sync_fail));
        assert_eq!(w[1].start_s, 10.0);
        let f = duty_cycle_schedule(3.5 * 86400.0, 4.0, 0.4, 0.1, 2).unwrap();
        let frac = f.iter().filter(|x| x.sync_fail).count() as f64 / f.len() as f64;
        assert!((frac - 0.1).abs() < 0.01);
        assert!(duty_cycle_schedule(10.0, 4.0, 0.0, 0.0, 0).is_err());
        assert!(duty_cycle_schedule(3.0, 4.0, 1.0, 0.0, 0).unwrap().is_empty());
    }

    #[test]
    fn weather_interpolates_and_roundtrips_csv() {
        let series = WeatherSeries::new(vec![
            WeatherSample { timestamp: 100.0, irradiance: 200.0, rain: 0.0 },
            WeatherSample { timestamp: 0.0, irradiance: 0.0, rain: 4.0 },
        ])
        .unwrap();
        let mid = series.at(25.0);
        assert!((mid.irradiance - 50.0).abs() < 1e-12 && (mid.rain - 3.0).abs() < 1e-12);
        assert_eq!(series.at(-5.0).irradiance, 0.0);
        assert_eq!(series.at(500.0).irradiance, 200.0);
        let mut buf = Vec::new();
        series.to_csv_writer(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("timestamp_s,irradiance_wm2,rain_mmhr"));
        assert_eq!(WeatherSeries::from_csv_reader(&buf[..]).unwrap(), series);
        assert!(WeatherSeries::new(vec![]).is_err());
    }

    #[test]
    fn event_stream_formats() {
        let events = vec![
            TimeTagEvent { party: Party::Alice, channel: 5, tick: 1 << 40 },
            TimeTagEvent { party: Party::Alice, channel: 0, tick: 7 },
        ];
        let mut j = Vec::new();
        write_events_jsonl(&mut j, &events).unwrap();
        assert_eq!(read_events_jsonl(&j[..]).unwrap(), events);
        assert!(read_events_jsonl(&br#"{"party":"B","ch":4,"tick":1}"#[..]).is_err());
        let mut b = Vec::new();
        write_events_binary(&mut b, &events).unwrap();
        assert_eq!(read_events_binary(&b[..], Party::Alice).unwrap(), events);
        assert!(read_events_binary(&b[..8], Party::Alice).is_err());
    }

    #[test]
    fn invalid_parameters_are_named() {
        let ch = ChannelParams { detector_efficiency: 1.5, ..Default::default() };
        let err = Simulator::new(SourceParams::default(), ch, BasisProbs::default(), &TwoQubitState::phi_plus()).unwrap_err();
        assert!(err.to_string().contains("detector_efficiency"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn events_have_valid_channels(seed in any::<u64>(), f in 0.5f64..1.0) {
            let state = TwoQubitState::werner_from_fidelity(f).unwrap();
            let sim = Simulator::new(SourceParams::default(), ChannelParams::default(), BasisProbs::default(), &state).unwrap();
            let acq = sim.acquire(&ctx(0.002, 0.4), seed);
            prop_assert!(acq.alice.iter().all(|e| e.channel < 6 && e.party == Party::Alice));
            prop_assert!(acq.bob.iter().all(|e| e.channel < 4 && e.party == Party::Bob));
        }
    }
}
