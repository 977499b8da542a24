//! Analytic link budget and calibration of the free channel parameters.
//!
//! Three parameters are not fixed by the hardware description: Alice's arm
//! efficiency, Bob's receiver-arm efficiency and the depolarization on Bob's
//! photon. The arm efficiencies are solved from the singles rates and the
//! depolarization from the QBER at the reference irradiance, taking the
//! accidental coincidences of the coincidence window into account.

use qkd_core::protocol::{
    coincidence_snr, correlation, qber_from_e, CountTable, Counts4, CHSH_TERMS,
};
use qkd_core::sim::{background_rate, pair_probability, WeatherSample, FWHM_PER_SIGMA, TICK_PS};
use qkd_core::timesync::half_window_ticks;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::AppError;

/// Operating point to reproduce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub alice_singles_cps: f64,
    pub bob_singles_cps: f64,
    pub qber: f64,
    pub irradiance_wm2: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self { alice_singles_cps: 470e3, bob_singles_cps: 58e3, qber: 0.0716, irradiance_wm2: 120.0 }
    }
}

/// Calibrated parameters and the operating point they predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub alice_arm_efficiency: f64,
    pub bob_arm_efficiency: f64,
    pub depolarization: f64,
    pub expected: ExpectedRates,
}

/// Mean rates and figures of merit of a configuration at one irradiance,
/// at mean coupling and without rain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRates {
    pub alice_singles_cps: f64,
    pub bob_singles_cps: f64,
    pub bob_signal_cps: f64,
    pub bob_background_cps: f64,
    /// True pair coincidences inside the window.
    pub coincidences_cps: f64,
    pub accidentals_cps: f64,
    pub visibility: f64,
    pub qber: f64,
    pub chsh: f64,
}

/// Probability that both photons of a pair land within `half_window` ticks
/// of each other, for Gaussian jitter on each side and a pulse phase that is
/// uniform over the tick grid.
pub fn capture_probability(jitter_fwhm_ps: f64, half_window: i64) -> f64 {
    let sigma = (2.0f64).sqrt() * jitter_fwhm_ps / FWHM_PER_SIGMA;
    if sigma == 0.0 {
        return 1.0;
    }
    let tick = TICK_PS as f64;
    let steps = 4000;
    let span = 10.0 * sigma;
    let dx = 2.0 * span / steps as f64;
    let mut total = 0.0;
    for k in 0..=steps {
        let d = -span + k as f64 * dx;
        let pdf = (-0.5 * (d / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let u = d / tick;
        let lo = u.floor();
        let frac = u - lo;
        let inside = |k: f64| if (k as i64).abs() <= half_window { 1.0 } else { 0.0 };
        let p = (1.0 - frac) * inside(lo) + frac * inside(lo + 1.0);
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
        total += w * pdf * p * dx;
    }
    total
}

/// Expected rates of `cfg` at irradiance `irradiance_wm2`.
pub fn expected_rates(cfg: &ScenarioConfig, irradiance_wm2: f64) -> Result<ExpectedRates, AppError> {
    let ch = &cfg.channel;
    let hw = half_window_ticks(cfg.protocol.window_ns)?;
    let window_s = (2 * hw + 1) as f64 * TICK_PS as f64 * 1e-12;
    let r_pair = pair_probability(&cfg.source) * cfg.source.rep_rate_hz;
    let eta_a = ch.eta_alice();
    let eta_b = ch.eta_bob(ch.coupling_mean, 0.0);
    let a_signal = r_pair * eta_a;
    let a_dark = 6.0 * ch.alice_dark_rate;
    let b_signal = r_pair * eta_b;
    let b_bg = 4.0 * background_rate(ch, &WeatherSample::constant(irradiance_wm2, 0.0))?;
    let coincidences = r_pair * eta_a * eta_b * capture_probability(ch.jitter_fwhm_ps, hw);
    let accidentals = (a_signal * b_bg + a_dark * b_signal + a_dark * b_bg) * window_s;
    let state = cfg.state.resolve(cfg.source.fidelity)?;
    let visibility = state.correlation(qkd_core::SettingLabel::Ak, qkd_core::SettingLabel::B0)
        * (1.0 - ch.depolarization);
    let total = coincidences + accidentals;
    let qber = (coincidences * (1.0 - visibility) / 2.0 + accidentals / 2.0) / total;
    let chsh = 2.0 * std::f64::consts::SQRT_2 * visibility * coincidences / total;
    Ok(ExpectedRates {
        alice_singles_cps: a_signal + a_dark,
        bob_singles_cps: b_signal + b_bg,
        bob_signal_cps: b_signal,
        bob_background_cps: b_bg,
        coincidences_cps: coincidences,
        accidentals_cps: accidentals,
        visibility,
        qber,
        chsh,
    })
}

/// Solve the free parameters of `cfg` for `targets` and return them. The
/// config itself is left untouched; see [`apply`].
pub fn calibrate(cfg: &ScenarioConfig, targets: &CalibrationTargets) -> Result<Calibration, AppError> {
    let ch = &cfg.channel;
    let r_pair = pair_probability(&cfg.source) * cfg.source.rep_rate_hz;
    let a_signal = targets.alice_singles_cps - 6.0 * ch.alice_dark_rate;
    let b_bg = 4.0 * background_rate(ch, &WeatherSample::constant(targets.irradiance_wm2, 0.0))?;
    let b_signal = targets.bob_singles_cps - b_bg;
    if a_signal <= 0.0 || b_signal <= 0.0 {
        return Err(AppError::config("calibration", "target singles are below the background"));
    }
    let alice_arm = a_signal / (r_pair * ch.detector_efficiency);
    let bob_arm = b_signal / (r_pair * ch.link_efficiency * ch.coupling_mean * ch.detector_efficiency);
    if !(0.0..=1.0).contains(&alice_arm) || !(0.0..=1.0).contains(&bob_arm) {
        return Err(AppError::config("calibration", "targets need an arm efficiency outside [0, 1]"));
    }
    let mut trial = cfg.clone();
    trial.channel.alice_arm_efficiency = alice_arm;
    trial.channel.bob_arm_efficiency = bob_arm;
    trial.channel.depolarization = 0.0;
    let base = expected_rates(&trial, targets.irradiance_wm2)?;
    let (n, a) = (base.coincidences_cps, base.accidentals_cps);
    let needed_visibility = 1.0 - (2.0 * targets.qber * (n + a) - a) / n;
    let lambda = 1.0 - needed_visibility / base.visibility;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(AppError::config("calibration", format!("target QBER needs depolarization {lambda:.4}")));
    }
    trial.channel.depolarization = lambda;
    let expected = expected_rates(&trial, targets.irradiance_wm2)?;
    Ok(Calibration { alice_arm_efficiency: alice_arm, bob_arm_efficiency: bob_arm, depolarization: lambda, expected })
}

/// Write calibrated parameters into a config.
pub fn apply(cfg: &mut ScenarioConfig, cal: &Calibration) {
    cfg.channel.alice_arm_efficiency = cal.alice_arm_efficiency;
    cfg.channel.bob_arm_efficiency = cal.bob_arm_efficiency;
    cfg.channel.depolarization = cal.depolarization;
}

/// Accidental coincidences at the sunlight reference irradiance, estimated
/// from night-time counts through the coincidence signal-to-noise relation:
/// the singles SNR is Bob's signal rate over his sunlight background, and
/// accidentals carry no correlation, so they spread evenly over the four
/// outcome pairs of every setting pair.
pub fn accidentals_from_snr(cfg: &ScenarioConfig, night: &CountTable) -> Result<CountTable, AppError> {
    let rates = expected_rates(cfg, 0.0)?;
    let sun_ref = 4.0 * cfg.channel.sun_rate_ref;
    if sun_ref <= 0.0 {
        return Ok(CountTable::default());
    }
    let singles_snr = rates.bob_signal_cps / sun_ref;
    let snr = coincidence_snr(
        singles_snr,
        pair_probability(&cfg.source),
        cfg.protocol.window_ns,
        1e9 / cfg.source.rep_rate_hz,
    )?;
    let mut out = CountTable::default();
    for (a, row) in night.iter().enumerate() {
        for (b, c) in row.iter().enumerate() {
            let each = c.total() / snr / 4.0;
            out[a][b] = Counts4::new(each, each, each, each);
        }
    }
    Ok(out)
}

/// QBER and CHSH value of a count table.
pub fn figures_of_merit(t: &CountTable) -> Result<(f64, f64), AppError> {
    let q = qber_from_e(correlation(&t[0][0])?)?;
    let mut s = 0.0;
    for (a, b, sign) in CHSH_TERMS {
        s += sign * correlation(&t[a.index() as usize][b.index() as usize])?;
    }
    Ok((q, s))
}
