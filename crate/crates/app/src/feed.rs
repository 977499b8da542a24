//! The physical layer as seen by each party: the acquisition schedule,
//! per-acquisition conditions and the detection streams.
//!
//! Both parties derive the same schedule from the run seed. A party's
//! detections come from an [`EventFeed`]. In a single process one simulation
//! serves both sides, with Alice's half forwarded over an in-process channel.
//! Separate processes each run the full simulation and keep their own half.

use std::sync::mpsc::{Receiver, Sender};

use qkd_core::netlink::Role;
use qkd_core::rng::{self, streams};
use qkd_core::sim::{
    duty_cycle_schedule, Acquisition, AcquisitionContext, AcquisitionWindow, CouplingProcess, Simulator,
    WeatherSample, WeatherSeries, TICK_PS,
};
use qkd_core::timesync::ClockModel;
use qkd_core::TimeTagEvent;
use rand::Rng;

use crate::config::ScenarioConfig;
use crate::error::AppError;

/// Acquisition schedule and weather of a run, shared by both parties.
#[derive(Debug, Clone)]
pub struct Timeline {
    pub windows: Vec<AcquisitionWindow>,
    pub weather: WeatherSeries,
    pub acquisitions_per_frame: usize,
    pub period_s: f64,
    pub start_s: f64,
}

impl Timeline {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, AppError> {
        let p = &cfg.protocol;
        let windows =
            duty_cycle_schedule(cfg.run.duration_s, p.acq_len_s, p.duty, p.sync_fail_prob, cfg.run.seed)?;
        Ok(Self {
            windows,
            weather: cfg.weather()?,
            acquisitions_per_frame: p.acquisitions_per_frame(),
            period_s: p.acq_len_s / p.duty,
            start_s: cfg.run.start_s,
        })
    }

    /// Complete frames of consecutive acquisitions; a trailing partial frame
    /// is not processed.
    pub fn frames(&self) -> impl Iterator<Item = (u32, &[AcquisitionWindow])> {
        self.windows.chunks_exact(self.acquisitions_per_frame).enumerate().map(|(i, w)| (i as u32, w))
    }

    pub fn n_frames(&self) -> usize {
        self.windows.len() / self.acquisitions_per_frame
    }

    /// Weather at run time `t`.
    pub fn weather_at(&self, t: f64) -> WeatherSample {
        self.weather.at(self.start_s + t)
    }

    /// Start time of frame `frame_id`.
    pub fn frame_start(&self, frame_id: u32) -> f64 {
        self.windows[frame_id as usize * self.acquisitions_per_frame].start_s
    }

    /// Wall time covered by one frame.
    pub fn frame_wall_s(&self) -> f64 {
        self.acquisitions_per_frame as f64 * self.period_s
    }
}

/// Full simulation of a run, acquisition by acquisition.
pub struct ScenarioSim {
    cfg: ScenarioConfig,
    timeline: Timeline,
    sim: Simulator,
    coupling: CouplingProcess,
}

impl ScenarioSim {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, AppError> {
        let state = cfg.state.resolve(cfg.source.fidelity)?;
        let sim = Simulator::new(cfg.source.clone(), cfg.channel.clone(), cfg.basis_probs.clone(), &state)?;
        Ok(Self {
            timeline: Timeline::new(cfg)?,
            coupling: CouplingProcess::new(&cfg.channel, cfg.run.seed),
            cfg: cfg.clone(),
            sim,
        })
    }

    pub fn timeline(&self) -> &Timeline {
        &self.timeline
    }

    /// Bob's clock in acquisition `index`. Glitching acquisitions drift fast
    /// enough to smear the coincidence peak beyond recognition.
    pub fn clock(&self, w: &AcquisitionWindow) -> ClockModel {
        clock_model(&self.cfg, w)
    }

    pub fn context(&mut self, w: &AcquisitionWindow) -> AcquisitionContext {
        AcquisitionContext {
            start_s: w.start_s,
            duration_s: w.duration_s,
            weather: self.timeline.weather_at(w.start_s),
            coupling: self.coupling.at(self.timeline.start_s + w.start_s),
            clock: self.clock(w),
            record_truth: false,
        }
    }

    pub fn acquire(&mut self, index: u64) -> Result<Acquisition, AppError> {
        let w = *self
            .timeline
            .windows
            .get(index as usize)
            .ok_or_else(|| AppError::Usage(format!("acquisition {index} is not scheduled")))?;
        let ctx = self.context(&w);
        Ok(self.sim.acquire(&ctx, rng::derive_u64(self.cfg.run.seed, streams::ACQUISITION, index)))
    }
}

/// Bob's clock model for window `w`.
pub fn clock_model(cfg: &ScenarioConfig, w: &AcquisitionWindow) -> ClockModel {
    let mut r = rng::substream(cfg.run.seed, streams::CLOCK, w.index);
    let max_ticks = cfg.clock.max_offset_ns * 1000.0 / TICK_PS as f64;
    let offset_ticks = (r.random_range(-1.0..=1.0) * max_ticks).round() as i64;
    let drift_ticks_per_s = if w.sync_fail {
        let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
        sign * cfg.clock.glitch_drift_ticks_per_s * r.random_range(1.0..2.0)
    } else {
        cfg.clock.drift_ticks_per_s
    };
    ClockModel { offset_ticks, drift_ticks_per_s }
}

/// Source of one party's detections, acquisition by acquisition.
pub trait EventFeed: Send {
    fn acquire(&mut self, index: u64) -> Result<Vec<TimeTagEvent>, AppError>;
}

/// Runs the simulation and keeps `role`'s half, optionally forwarding the
/// other half to a [`ForwardedFeed`].
pub struct SimFeed {
    sim: ScenarioSim,
    role: Role,
    forward: Option<Sender<(u64, Vec<TimeTagEvent>)>>,
}

impl SimFeed {
    pub fn new(cfg: &ScenarioConfig, role: Role) -> Result<Self, AppError> {
        Ok(Self { sim: ScenarioSim::new(cfg)?, role, forward: None })
    }

    pub fn with_forward(mut self, tx: Sender<(u64, Vec<TimeTagEvent>)>) -> Self {
        self.forward = Some(tx);
        self
    }
}

impl EventFeed for SimFeed {
    fn acquire(&mut self, index: u64) -> Result<Vec<TimeTagEvent>, AppError> {
        let acq = self.sim.acquire(index)?;
        let (mine, other) = match self.role {
            Role::Alice => (acq.alice, acq.bob),
            Role::Bob => (acq.bob, acq.alice),
        };
        if let Some(tx) = &self.forward {
            tx.send((index, other)).map_err(|_| AppError::Usage("peer feed closed".into()))?;
        }
        Ok(mine)
    }
}

/// Receives detections forwarded by a [`SimFeed`] in the same process.
pub struct ForwardedFeed {
    rx: Receiver<(u64, Vec<TimeTagEvent>)>,
}

impl ForwardedFeed {
    pub fn new(rx: Receiver<(u64, Vec<TimeTagEvent>)>) -> Self {
        Self { rx }
    }
}

impl EventFeed for ForwardedFeed {
    fn acquire(&mut self, index: u64) -> Result<Vec<TimeTagEvent>, AppError> {
        loop {
            let (i, events) = self.rx.recv().map_err(|_| AppError::Usage("simulation feed closed".into()))?;
            if i == index {
                return Ok(events);
            }
        }
    }
}
