//! Offline analyses: coincidence SNR, daylight projection of night-time
//! counts and the asymptotic key rate.

use qkd_core::protocol::{
    coincidence_snr, daylight_counts, pair_factor, secure_fraction_with_threshold, tally, window_factor, CountTable,
};
use qkd_core::rng::{self, streams};
use qkd_core::sim::{AcquisitionContext, Simulator, WeatherSample};
use qkd_core::timesync::{match_coincidences, ClockModel};
use serde::{Deserialize, Serialize};

use crate::calibrate::{accidentals_from_snr, figures_of_merit};
use crate::config::ScenarioConfig;
use crate::error::AppError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub singles_snr: f64,
    pub pair_factor: f64,
    pub window_factor: f64,
    pub coincidence_snr: f64,
}

pub fn snr(singles_snr: f64, p_pair: f64, window_ns: f64, rep_period_ns: f64) -> Result<SnrReport, AppError> {
    Ok(SnrReport {
        singles_snr,
        pair_factor: pair_factor(p_pair)?,
        window_factor: window_factor(window_ns, rep_period_ns)?,
        coincidence_snr: coincidence_snr(singles_snr, p_pair, window_ns, rep_period_ns)?,
    })
}

/// Projected counts and figures of merit at one irradiance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaylightPoint {
    pub irradiance_wm2: f64,
    pub qber: f64,
    pub chsh: f64,
    pub counts: CountTable,
}

/// Add accidentals `acc_ref`, given at the sunlight reference irradiance, to
/// the night-time counts at each irradiance.
pub fn daylight(night: &CountTable, acc_ref: &CountTable, irradiances: &[f64]) -> Result<Vec<DaylightPoint>, AppError> {
    irradiances
        .iter()
        .map(|&irr| {
            let mut counts = CountTable::default();
            for a in 0..3 {
                for b in 0..2 {
                    counts[a][b] = daylight_counts(&night[a][b], &acc_ref[a][b], irr)?;
                }
            }
            let (qber, chsh) = figures_of_merit(&counts)?;
            Ok(DaylightPoint { irradiance_wm2: irr, qber, chsh, counts })
        })
        .collect()
}

/// Daylight projection with accidentals estimated from the configuration's
/// singles rates.
pub fn daylight_from_config(
    cfg: &ScenarioConfig,
    night: &CountTable,
    irradiances: &[f64],
) -> Result<Vec<DaylightPoint>, AppError> {
    daylight(night, &accidentals_from_snr(cfg, night)?, irradiances)
}

/// Coincidence counts per setting pair from `seconds` of simulated
/// acquisition at constant irradiance, mean coupling and aligned clocks.
pub fn measure_counts(cfg: &ScenarioConfig, irradiance_wm2: f64, seconds: f64, seed: u64) -> Result<CountTable, AppError> {
    let state = cfg.state.resolve(cfg.source.fidelity)?;
    let sim = Simulator::new(cfg.source.clone(), cfg.channel.clone(), cfg.basis_probs.clone(), &state)?;
    let mut total = CountTable::default();
    let chunk_s = 1.0;
    let n_chunks = (seconds / chunk_s).ceil() as u64;
    for i in 0..n_chunks {
        let duration_s = (seconds - i as f64 * chunk_s).min(chunk_s);
        let ctx = AcquisitionContext {
            start_s: i as f64 * chunk_s,
            duration_s,
            weather: WeatherSample::constant(irradiance_wm2, cfg.run.rain_mmhr),
            coupling: cfg.channel.coupling_mean,
            clock: ClockModel::default(),
            record_truth: false,
        };
        let acq = sim.acquire(&ctx, rng::derive_u64(seed, streams::ACQUISITION, i));
        let records = match_coincidences(&acq.alice, &acq.bob, 0, cfg.protocol.window_ns, i)?;
        for (row, add) in total.iter_mut().zip(tally(&records)) {
            for (c, a) in row.iter_mut().zip(add) {
                *c = c.plus(&a);
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub q: f64,
    pub s: f64,
    pub f_ec: f64,
    /// Secure bits per sifted bit, or `None` when no key can be extracted.
    pub secure_fraction: Option<f64>,
}

pub fn keyrate(q: f64, s: f64, f_ec: f64, qber_max: f64) -> Result<KeyRateReport, AppError> {
    Ok(KeyRateReport { q, s, f_ec, secure_fraction: secure_fraction_with_threshold(q, s, f_ec, qber_max)? })
}
