//! Scenario configuration: a JSON document with one section per subsystem.
//!
//! Unknown keys are rejected and every validation error names the offending
//! field by its dotted path, e.g. `channel.detector_efficiency`.

use std::path::{Path, PathBuf};

use qkd_core::cascade::{CascadeConfig, K1Rule};
use qkd_core::extract::{Backend, DesignKind};
use qkd_core::protocol::FrameConfig;
use qkd_core::quantum::{DensityMatrixJson, TwoQubitState};
use qkd_core::sim::{BasisProbs, ChannelParams, SimError, SourceParams, WeatherSeries};
use qkd_core::timesync::ns_to_ticks;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::AppError;

/// Protocol timing, gating and post-processing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolParams {
    pub frame_len_s: f64,
    pub acq_len_s: f64,
    pub duty: f64,
    pub sync_fail_prob: f64,
    /// Total coincidence window.
    pub window_ns: f64,
    /// Half-width of the clock-offset search.
    pub sync_search_ns: f64,
    pub disclosure_frac: f64,
    pub qber_max: f64,
    pub min_chsh_records: usize,
    /// Reconciliation efficiency assumed when quoting expected secure fractions.
    pub f_ec_target: f64,
    /// Accepted frames are pooled until at least this many key bits are
    /// available, then reconciled and amplified as one block.
    pub reconciliation_block_bits: usize,
    /// A trailing block shorter than this is dropped at the end of a run.
    pub min_final_block_bits: usize,
    pub cascade_passes: u8,
    pub cascade_k1_coeff: f64,
    pub pa_eps: f64,
    pub extractor: Backend,
    pub design: DesignKind,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            frame_len_s: 6.0,
            acq_len_s: 1.2,
            duty: 0.45,
            sync_fail_prob: 0.30,
            window_ns: 1.3,
            sync_search_ns: 40.0,
            disclosure_frac: 0.30,
            qber_max: 0.11,
            min_chsh_records: 100,
            f_ec_target: 1.2,
            reconciliation_block_bits: 20_000,
            min_final_block_bits: 500,
            cascade_passes: 4,
            cascade_k1_coeff: 0.73,
            pa_eps: 1e-6,
            extractor: Backend::Trevisan,
            design: DesignKind::Polynomial,
        }
    }
}

impl ProtocolParams {
    /// Acquisitions per protocol frame.
    pub fn acquisitions_per_frame(&self) -> usize {
        (self.frame_len_s / self.acq_len_s).round().max(1.0) as usize
    }

    pub fn frame_config(&self) -> FrameConfig {
        FrameConfig {
            disclosure_frac: self.disclosure_frac,
            qber_max: self.qber_max,
            min_chsh_records: self.min_chsh_records,
        }
    }

    pub fn cascade_config(&self, permutation_seed: u64) -> CascadeConfig {
        CascadeConfig {
            passes: self.cascade_passes,
            k1_rule: K1Rule::Inverse { coeff: self.cascade_k1_coeff },
            permutation_seed,
        }
    }
}

/// Bob's clock relative to Alice's in each acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockParams {
    /// Offsets are drawn uniformly from ±this range.
    pub max_offset_ns: f64,
    /// Residual drift in healthy acquisitions.
    pub drift_ticks_per_s: f64,
    /// Drift magnitude while the clock reference glitches. Glitching
    /// acquisitions are the ones the schedule flags as sync failures.
    pub glitch_drift_ticks_per_s: f64,
}

impl Default for ClockParams {
    fn default() -> Self {
        Self { max_offset_ns: 40.0, drift_ticks_per_s: 0.0, glitch_drift_ticks_per_s: 50_000.0 }
    }
}

/// The emitted two-photon state: a Werner fidelity or an explicit matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<DensityMatrixJson>,
}

impl Default for StateSpec {
    fn default() -> Self {
        Self { fidelity: Some(0.942), matrix: None }
    }
}

impl StateSpec {
    pub fn resolve(&self, fallback_fidelity: f64) -> Result<TwoQubitState, AppError> {
        match (&self.fidelity, &self.matrix) {
            (Some(_), Some(_)) => Err(AppError::config("state", "give either fidelity or matrix, not both")),
            (Some(f), None) => {
                TwoQubitState::werner_from_fidelity(*f).map_err(|e| AppError::config("state.fidelity", e))
            }
            (None, Some(m)) => TwoQubitState::try_from(m).map_err(|e| AppError::config("state.matrix", e)),
            (None, None) => TwoQubitState::werner_from_fidelity(fallback_fidelity)
                .map_err(|e| AppError::config("source.fidelity", e)),
        }
    }
}

/// Run length, seed and weather.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    pub duration_s: f64,
    pub seed: u64,
    /// Weather CSV, relative to the config file. Without it the weather is
    /// constant at `irradiance_wm2` and `rain_mmhr`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weather_csv: Option<PathBuf>,
    #[serde(default)]
    pub irradiance_wm2: f64,
    #[serde(default)]
    pub rain_mmhr: f64,
    /// Start time of the run within the weather series.
    #[serde(default)]
    pub start_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub source: SourceParams,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub basis_probs: BasisProbs,
    #[serde(default)]
    pub state: StateSpec,
    #[serde(default)]
    pub clock: ClockParams,
    pub run: RunParams,
}

fn sim_path(section: &str, e: SimError) -> AppError {
    match e {
        SimError::InvalidParam { field, reason } => AppError::config(&format!("{section}.{field}"), reason),
        other => AppError::config(section, other),
    }
}

fn check(path: &str, ok: bool, reason: &str) -> Result<(), AppError> {
    if ok {
        Ok(())
    } else {
        Err(AppError::config(path, reason))
    }
}

impl ScenarioConfig {
    /// Parse JSON, reporting the path of any structural error.
    pub fn from_json(text: &str) -> Result<Self, AppError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            AppError::config(if path == "." { "<root>" } else { &path }, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config file. A relative `run.weather_csv` is resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(w) = cfg.run.weather_csv.as_mut() {
            if w.is_relative() {
                if let Some(dir) = path.parent() {
                    *w = dir.join(&*w);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), AppError> {
        self.source.validate().map_err(|e| sim_path("source", e))?;
        self.channel.validate().map_err(|e| sim_path("channel", e))?;
        self.basis_probs.validate().map_err(|e| sim_path("basis_probs", e))?;
        self.state.resolve(self.source.fidelity)?;
        let p = &self.protocol;
        check("protocol.acq_len_s", p.acq_len_s > 0.0 && p.acq_len_s.is_finite(), "must be positive")?;
        check("protocol.frame_len_s", p.frame_len_s >= p.acq_len_s, "must be at least one acquisition")?;
        check("protocol.duty", p.duty > 0.0 && p.duty <= 1.0, "must lie in (0, 1]")?;
        check("protocol.sync_fail_prob", (0.0..=1.0).contains(&p.sync_fail_prob), "must lie in [0, 1]")?;
        check("protocol.window_ns", p.window_ns > 0.0 && p.window_ns.is_finite(), "must be positive")?;
        check("protocol.window_ns", ns_to_ticks(p.window_ns / 2.0) >= 0, "too small")?;
        check("protocol.sync_search_ns", p.sync_search_ns > 0.0, "must be positive")?;
        check("protocol.disclosure_frac", (0.0..1.0).contains(&p.disclosure_frac), "must lie in [0, 1)")?;
        check("protocol.qber_max", (0.0..=0.5).contains(&p.qber_max), "must lie in [0, 0.5]")?;
        check("protocol.f_ec_target", p.f_ec_target >= 1.0, "must be at least 1")?;
        check("protocol.reconciliation_block_bits", p.reconciliation_block_bits >= 64, "must be at least 64")?;
        check("protocol.cascade_passes", p.cascade_passes >= 1, "must be at least 1")?;
        check("protocol.cascade_k1_coeff", p.cascade_k1_coeff > 0.0, "must be positive")?;
        check("protocol.pa_eps", p.pa_eps > 0.0 && p.pa_eps < 1.0, "must lie in (0, 1)")?;
        check("clock.max_offset_ns", (0.0..=p.sync_search_ns).contains(&self.clock.max_offset_ns), "must lie in [0, protocol.sync_search_ns]")?;
        check("clock.glitch_drift_ticks_per_s", self.clock.glitch_drift_ticks_per_s >= 0.0, "must be non-negative")?;
        let r = &self.run;
        check("run.duration_s", r.duration_s >= 0.0 && r.duration_s.is_finite(), "must be non-negative")?;
        check("run.irradiance_wm2", r.irradiance_wm2 >= 0.0, "must be non-negative")?;
        check("run.rain_mmhr", r.rain_mmhr >= 0.0, "must be non-negative")?;
        check("run.start_s", r.start_s >= 0.0, "must be non-negative")?;
        Ok(())
    }

    pub fn weather(&self) -> Result<WeatherSeries, AppError> {
        match &self.run.weather_csv {
            Some(p) => WeatherSeries::from_csv_path(p).map_err(|e| AppError::config("run.weather_csv", e)),
            None => Ok(WeatherSeries::constant(self.run.irradiance_wm2, self.run.rain_mmhr)),
        }
    }

    /// Digest both parties compare in HELLO. It covers everything except the
    /// weather file location, which may differ between machines.
    pub fn params_digest(&self) -> [u8; 8] {
        let mut c = self.clone();
        c.run.weather_csv = None;
        let digest = Sha256::digest(serde_json::to_vec(&c).expect("config serializes"));
        digest[..8].try_into().expect("8 bytes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"run": {"duration_s": 60, "seed": 1}}"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.protocol.acquisitions_per_frame(), 5);
        assert_eq!(c.channel.detector_efficiency, 0.46);
        assert!(c.weather().unwrap().at(10.0).irradiance == 0.0);
    }

    #[test]
    fn errors_carry_field_paths() {
        let e = ScenarioConfig::from_json(r#"{"run": {"duration_s": 1, "seed": 1}, "channel": {"detector_eficiency": 0.5}}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("channel"), "{e}");
        let e = ScenarioConfig::from_json(r#"{"run": {"duration_s": 1, "seed": 1}, "channel": {"detector_efficiency": 1.5}}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("channel.detector_efficiency"), "{e}");
        let e = ScenarioConfig::from_json(r#"{"run": {"duration_s": 1, "seed": 1}, "protocol": {"duty": 0}}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("protocol.duty"), "{e}");
        let e = ScenarioConfig::from_json(r#"{"run": {"duration_s": "x", "seed": 1}}"#).unwrap_err().to_string();
        assert!(e.contains("run.duration_s"), "{e}");
    }

    #[test]
    fn serialization_is_idempotent() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        let once = c.to_json_pretty();
        let twice = ScenarioConfig::from_json(&once).unwrap().to_json_pretty();
        assert_eq!(once, twice);
    }

    #[test]
    fn explicit_state_matrix() {
        let m = DensityMatrixJson::from(&TwoQubitState::phi_plus());
        let mut c = ScenarioConfig::from_json(MINIMAL).unwrap();
        c.state = StateSpec { fidelity: None, matrix: Some(m) };
        let back = ScenarioConfig::from_json(&c.to_json_pretty()).unwrap();
        assert!((back.state.resolve(0.5).unwrap().fidelity_to_bell() - 1.0).abs() < 1e-12);
        c.state.fidelity = Some(0.9);
        assert!(c.validate().unwrap_err().to_string().contains("state"));
    }

    #[test]
    fn digest_ignores_weather_location_only() {
        let a = ScenarioConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        b.run.weather_csv = Some("/elsewhere.csv".into());
        assert_eq!(a.params_digest(), b.params_digest());
        b.run.seed = 2;
        assert_ne!(a.params_digest(), b.params_digest());
    }
}
