//! The two protocol parties.
//!
//! Bob drives the session and Alice answers. Per acquisition Bob publishes
//! the ticks of his sync detectors, Alice recovers the clock offset, Bob
//! publishes all his ticks and Alice names the coincidences she matched
//! together with her settings, after which Bob returns his settings. Per
//! frame Bob reveals his CHSH outcomes, Alice evaluates the Bell test, and if
//! it passes Bob picks the disclosure sample and judges the QBER. Accepted
//! frames accumulate into blocks that go through CASCADE, key confirmation
//! and privacy amplification.

use qkd_core::cascade::{
    f_ec, reconcile_bob, CascadeError, ParityOracle, ParityRange, ParityResponder, Permutations, VERIFY_TAG_BITS,
};
use qkd_core::extract::{extract, output_length_with_threshold, random_seed, toeplitz, Backend, ExtractorParams};
use qkd_core::netlink::{
    abort_reason, BasisAnnounce, Body, CascadeParityReq, CascadeParityResp, ChshCounts, FrameStatsMsg,
    KeyConfirmMsg, NetError, PaSeedMsg, Role, Session, SyncTags,
};
use qkd_core::protocol::{
    chsh_from_counts, chsh_gate, disclosure_positions, estimate_qber, remove_positions, select, CountTable,
    Counts4, FrameStats, FrameStatus, KeyBuffer, KeyStage, CHSH_TERMS,
};
use qkd_core::rng::{self, streams};
use qkd_core::timesync::{half_window_ticks, match_ticks, recover_offset, OffsetReport};
use qkd_core::{Outcome, TimeTagEvent};
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::AppError;
use crate::feed::{EventFeed, Timeline};

/// Alice's setting indices whose records enter the CHSH test.
fn is_chsh(setting_a: u8) -> bool {
    setting_a == 1 || setting_a == 2
}

/// Key records pair Alice's A_k with Bob's B_0.
fn is_key(setting_a: u8, setting_b: u8) -> bool {
    setting_a == 0 && setting_b == 0
}

/// One party's view of a coincidence: both settings and its own outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct HalfRecord {
    setting_a: u8,
    setting_b: u8,
    outcome: bool,
}

/// Per-frame record kept by both parties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub stats: FrameStats,
    pub start_s: f64,
    pub irradiance_wm2: f64,
    pub rain_mm_hr: f64,
    pub acquisitions: usize,
    pub synced: usize,
}

/// Per-block record of reconciliation and amplification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block: u32,
    pub frames: Vec<u64>,
    pub n_bits: usize,
    pub q: f64,
    pub s: f64,
    pub parities: u64,
    pub leaked_bits: u64,
    pub f_ec: f64,
    pub confirmed: bool,
    pub secure_bits: usize,
    /// Bits flipped by CASCADE; only Bob knows this.
    pub corrections: usize,
}

/// Everything a party produced in one run.
#[derive(Debug, Clone)]
pub struct PartyOutput {
    pub role: Role,
    pub frames: Vec<FrameRecord>,
    pub blocks: Vec<BlockRecord>,
    pub offsets: Vec<OffsetReport>,
    /// Corrected and secure key buffers of confirmed blocks.
    pub keys: Vec<KeyBuffer>,
    pub secure_key: Vec<bool>,
    pub transcript_hash: [u8; 32],
    pub transcript: Vec<u8>,
    pub messages: u64,
    pub bytes: u64,
}

impl PartyOutput {
    fn new(role: Role) -> Self {
        Self {
            role,
            frames: Vec::new(),
            blocks: Vec::new(),
            offsets: Vec::new(),
            keys: Vec::new(),
            secure_key: Vec::new(),
            transcript_hash: [0; 32],
            transcript: Vec::new(),
            messages: 0,
            bytes: 0,
        }
    }

    fn finish(&mut self, session: &Session) {
        self.transcript_hash = session.transcript_hash();
        self.transcript = session.captured().to_vec();
        self.messages = session.message_count();
        self.bytes = session.byte_count();
    }

    pub fn frame_stats(&self) -> Vec<FrameStats> {
        self.frames.iter().map(|f| f.stats.clone()).collect()
    }
}

/// Options that only affect Bob.
#[derive(Debug, Clone, Copy, Default)]
pub struct BobOptions {
    /// Flip one bit of every corrected key before confirmation.
    pub tamper_corrected_key: bool,
}

/// Accepted-frame statistics pooled into the current block.
#[derive(Debug, Clone, Default)]
struct Pending {
    bits: Vec<bool>,
    frames: Vec<u64>,
    counts: CountTable,
    disclosed: usize,
    errors: usize,
}

impl Pending {
    fn add(&mut self, frame_id: u64, bits: Vec<bool>, counts: &CountTable, disclosed: usize, errors: usize) {
        self.bits.extend(bits);
        self.frames.push(frame_id);
        for (row, add) in self.counts.iter_mut().zip(counts) {
            for (c, a) in row.iter_mut().zip(add) {
                *c = c.plus(a);
            }
        }
        self.disclosed += disclosed;
        self.errors += errors;
    }

    fn q(&self) -> f64 {
        if self.disclosed == 0 {
            0.0
        } else {
            self.errors as f64 / self.disclosed as f64
        }
    }

    fn s(&self) -> f64 {
        chsh_from_counts(&self.counts).map(|v| v.0).unwrap_or(0.0)
    }

    fn take(&mut self) -> Pending {
        std::mem::take(self)
    }
}

/// Privacy-amplification output length both parties derive for a block.
fn block_output_length(cfg: &ScenarioConfig, n: usize, q: f64, s: f64, leaked: u64) -> usize {
    let p = &cfg.protocol;
    let s = s.clamp(0.0, 2.0 * std::f64::consts::SQRT_2 * (1.0 - q));
    output_length_with_threshold(n, q, s, f_ec(leaked, n, q), p.pa_eps, p.qber_max)
}

fn extractor_params(cfg: &ScenarioConfig, n: usize, m: usize, backend: Backend) -> ExtractorParams {
    ExtractorParams { n, m, eps: cfg.protocol.pa_eps, backend, design: cfg.protocol.design }
}

fn ticks(events: &[TimeTagEvent], keep: impl Fn(u8) -> bool) -> Vec<u64> {
    events.iter().filter(|e| keep(e.channel)).map(|e| e.tick).collect()
}

fn chsh_counts_to_msg(t: &CountTable) -> ChshCounts {
    let mut out = [[0u32; 4]; 4];
    for (o, (a, b, _)) in out.iter_mut().zip(CHSH_TERMS) {
        let c = &t[a.index() as usize][b.index() as usize];
        *o = [c.pp as u32, c.mm as u32, c.mp as u32, c.pm as u32];
    }
    out
}

fn chsh_counts_from_msg(m: &ChshCounts) -> CountTable {
    let mut t = CountTable::default();
    for (c, (a, b, _)) in m.iter().zip(CHSH_TERMS) {
        t[a.index() as usize][b.index() as usize] = Counts4::new(c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64);
    }
    t
}

fn frame_record(timeline: &Timeline, stats: FrameStats, acquisitions: usize, synced: usize) -> FrameRecord {
    let start_s = timeline.frame_start(stats.frame_id as u32);
    let w = timeline.weather_at(start_s);
    FrameRecord { stats, start_s, irradiance_wm2: w.irradiance, rain_mm_hr: w.rain, acquisitions, synced }
}

fn describe(body: &Body) -> String {
    format!("{:?}", body.msg_type())
}

/// Bob's side of a run.
pub fn run_bob(
    session: &mut Session,
    cfg: &ScenarioConfig,
    feed: &mut dyn EventFeed,
    opts: BobOptions,
) -> Result<PartyOutput, AppError> {
    let mut bob = Bob::new(session, cfg, opts)?;
    let result = bob.run(feed);
    if let Err(e) = &result {
        let reason = match e {
            AppError::Unexpected { .. } => abort_reason::PROTOCOL,
            _ => abort_reason::INTERNAL,
        };
        bob.session.abort(reason, &e.to_string());
    }
    result?;
    let mut out = std::mem::replace(&mut bob.out, PartyOutput::new(Role::Bob));
    out.finish(bob.session);
    Ok(out)
}

struct Bob<'a> {
    session: &'a mut Session,
    cfg: &'a ScenarioConfig,
    timeline: Timeline,
    opts: BobOptions,
    pending: Pending,
    next_block: u32,
    out: PartyOutput,
}

impl<'a> Bob<'a> {
    fn new(session: &'a mut Session, cfg: &'a ScenarioConfig, opts: BobOptions) -> Result<Self, AppError> {
        Ok(Self {
            session,
            cfg,
            timeline: Timeline::new(cfg)?,
            opts,
            pending: Pending::default(),
            next_block: 0,
            out: PartyOutput::new(Role::Bob),
        })
    }

    fn request(&mut self, body: Body, frame_id: u32) -> Result<Body, AppError> {
        self.session.request(body, frame_id).map_err(|e| AppError::session(frame_id, e))
    }

    fn run(&mut self, feed: &mut dyn EventFeed) -> Result<(), AppError> {
        self.session
            .establish(self.cfg.run.seed, self.cfg.params_digest())
            .map_err(|e| AppError::session(0, e))?;
        let frames: Vec<(u32, Vec<u64>)> =
            self.timeline.frames().map(|(id, ws)| (id, ws.iter().map(|w| w.index).collect())).collect();
        for (frame_id, acqs) in frames {
            let mut records = Vec::new();
            let mut synced = 0;
            for &acq in &acqs {
                let events = feed.acquire(acq)?;
                if self.acquisition(frame_id, acq, &events, &mut records)? {
                    synced += 1;
                }
            }
            self.frame(frame_id, &records, acqs.len(), synced)?;
            if self.pending.bits.len() >= self.cfg.protocol.reconciliation_block_bits {
                self.block(frame_id)?;
            }
        }
        let last_frame = self.timeline.n_frames().saturating_sub(1) as u32;
        if !self.pending.bits.is_empty() && self.pending.bits.len() >= self.cfg.protocol.min_final_block_bits {
            self.block(last_frame)?;
        }
        Ok(())
    }

    /// Sync and basis exchange of one acquisition. Returns whether the clock
    /// offset was recovered.
    fn acquisition(
        &mut self,
        frame_id: u32,
        acq: u64,
        events: &[TimeTagEvent],
        records: &mut Vec<HalfRecord>,
    ) -> Result<bool, AppError> {
        let acq32 = acq as u32;
        let public = ticks(events, |ch| ch >= 2);
        let offset = match self.request(Body::SyncPublicTags(SyncTags::PublicTicks { acq: acq32, ticks: public }), frame_id)? {
            Body::SyncPublicTags(SyncTags::OffsetReply { acq: a, offset }) if a == acq32 => offset,
            other => return Err(unexpected(frame_id, "OffsetReply", &other)),
        };
        let sync = if offset.is_some() { "ok" } else { "failed" };
        self.out.offsets.push(OffsetReport { acq, offset_ticks: offset, sync: sync.into() });
        if offset.is_none() {
            return Ok(false);
        }
        let all = ticks(events, |_| true);
        let (bob_indices, settings_a) =
            match self.request(Body::SyncPublicTags(SyncTags::AllTicks { acq: acq32, ticks: all }), frame_id)? {
                Body::BasisAnnounce(BasisAnnounce::AliceMatches { acq: a, bob_indices, settings })
                    if a == acq32 && bob_indices.len() == settings.len() =>
                {
                    (bob_indices, settings)
                }
                other => return Err(unexpected(frame_id, "AliceMatches", &other)),
            };
        let mut mine = Vec::with_capacity(bob_indices.len());
        for &i in &bob_indices {
            let e = events
                .get(i as usize)
                .ok_or_else(|| AppError::Unexpected { frame_id, expected: "valid tick index", got: i.to_string() })?;
            mine.push(*e);
        }
        let settings_b: Vec<u8> = mine.iter().map(|e| e.channel / 2).collect();
        match self.request(Body::BasisAnnounce(BasisAnnounce::BobSettings { acq: acq32, settings: settings_b.clone() }), frame_id)? {
            Body::BasisAnnounce(BasisAnnounce::Ack { acq: a }) if a == acq32 => {}
            other => return Err(unexpected(frame_id, "BasisAnnounce ack", &other)),
        }
        for ((sa, sb), e) in settings_a.into_iter().zip(settings_b).zip(mine) {
            records.push(HalfRecord { setting_a: sa, setting_b: sb, outcome: e.channel & 1 == 1 });
        }
        Ok(true)
    }

    fn frame(&mut self, frame_id: u32, records: &[HalfRecord], acquisitions: usize, synced: usize) -> Result<(), AppError> {
        let p = &self.cfg.protocol;
        let outcomes: Vec<bool> = records.iter().filter(|r| is_chsh(r.setting_a)).map(|r| r.outcome).collect();
        let verdict = self.request(Body::FrameStats(FrameStatsMsg::BobChshOutcomes { outcomes }), frame_id)?;
        let (s, s_err, status, n_chsh, counts) = match verdict {
            Body::FrameStats(FrameStatsMsg::AliceVerdict { s, s_err, status, n_chsh, counts, .. }) => {
                (s, s_err, status, n_chsh, counts)
            }
            other => return Err(unexpected(frame_id, "AliceVerdict", &other)),
        };
        let status = FrameStatus::from_code(status)
            .ok_or_else(|| AppError::Unexpected { frame_id, expected: "frame status", got: status.to_string() })?;
        let key: Vec<bool> = records.iter().filter(|r| is_key(r.setting_a, r.setting_b)).map(|r| r.outcome).collect();
        let mut stats = FrameStats::from_counts(frame_id as u64, self.timeline.frame_wall_s(), chsh_counts_from_msg(&counts));
        stats.s = s;
        stats.s_err = s_err;
        stats.n_chsh = n_chsh as usize;
        stats.n_sifted = key.len();
        stats.status = status;
        if status != FrameStatus::Ok {
            self.out.frames.push(frame_record(&self.timeline, stats, acquisitions, synced));
            return Ok(());
        }
        let positions = disclosure_positions(key.len(), p.disclosure_frac, self.cfg.run.seed, frame_id as u64);
        let bits_a = match self.request(Body::DisclosePositions(positions.clone()), frame_id)? {
            Body::DiscloseBits(b) if b.len() == positions.len() => b,
            other => return Err(unexpected(frame_id, "DiscloseBits", &other)),
        };
        let (q, errors) = estimate_qber(&bits_a, &select(&key, &positions)?);
        stats.q_est = Some(q);
        stats.n_disclosed = positions.len();
        stats.n_disclosed_errors = errors;
        stats.status = if q > p.qber_max { FrameStatus::QberFail } else { FrameStatus::Ok };
        let msg = FrameStatsMsg::QberVerdict {
            q,
            status: stats.status.code(),
            n_disclosed: positions.len() as u32,
            n_errors: errors as u32,
        };
        match self.request(Body::FrameStats(msg), frame_id)? {
            Body::FrameStats(FrameStatsMsg::Ack) => {}
            other => return Err(unexpected(frame_id, "FrameStats ack", &other)),
        }
        if stats.accepted() {
            self.pending.add(frame_id as u64, remove_positions(&key, &positions), &stats.counts, positions.len(), errors);
        }
        self.out.frames.push(frame_record(&self.timeline, stats, acquisitions, synced));
        Ok(())
    }

    fn block(&mut self, frame_id: u32) -> Result<(), AppError> {
        let block = self.next_block;
        self.next_block += 1;
        let pending = self.pending.take();
        let (n, q, s) = (pending.bits.len(), pending.q(), pending.s());
        let seed = self.cfg.run.seed;
        let perm_seed = rng::derive_u64(seed, streams::PERMUTATION, block as u64);
        let cascade_cfg = self.cfg.protocol.cascade_config(perm_seed);
        let mut oracle = SessionOracle { session: self.session, block, perm_seed, n_bits: n as u32, frame_id, failure: None };
        let outcome = reconcile_bob(&pending.bits, q, &cascade_cfg, &mut oracle);
        if let Some(e) = oracle.failure.take() {
            return Err(e);
        }
        let outcome = outcome?;
        let mut corrected = outcome.corrected;
        if self.opts.tamper_corrected_key {
            if let Some(b) = corrected.first_mut() {
                *b = !*b;
            }
        }
        let hash_seed = rng::derive_u64(seed, streams::CONFIRM, block as u64);
        let tag = toeplitz::hash64(&corrected, hash_seed);
        let confirmed = match self.request(Body::KeyConfirm(KeyConfirmMsg::Request { block, hash_seed, tag }), frame_id)? {
            Body::KeyConfirm(KeyConfirmMsg::Verdict { block: b, ok, tag: tag_a }) if b == block => ok && tag_a == tag,
            other => return Err(unexpected(frame_id, "KeyConfirm verdict", &other)),
        };
        let leaked = outcome.parities_received + VERIFY_TAG_BITS;
        let mut record = BlockRecord {
            block,
            frames: pending.frames.clone(),
            n_bits: n,
            q,
            s,
            parities: outcome.parities_received,
            leaked_bits: leaked,
            f_ec: f_ec(leaked, n, q),
            confirmed,
            secure_bits: 0,
            corrections: outcome.corrections,
        };
        if !confirmed {
            self.out.blocks.push(record);
            return Ok(());
        }
        let m = block_output_length(self.cfg, n, q, s, leaked);
        let backend = self.cfg.protocol.extractor;
        let params = extractor_params(self.cfg, n, m, backend);
        let pa_seed = if m > 0 { random_seed(params.seed_len()?, seed, block as u64) } else { Vec::new() };
        let msg = PaSeedMsg::Seed { block, backend: backend.code(), m: m as u32, seed: pa_seed.clone() };
        match self.request(Body::PaSeed(msg), frame_id)? {
            Body::PaSeed(PaSeedMsg::Ack { block: b }) if b == block => {}
            other => return Err(unexpected(frame_id, "PaSeed ack", &other)),
        }
        let secure = if m > 0 { extract(&corrected, &params, &pa_seed)? } else { Vec::new() };
        record.secure_bits = secure.len();
        self.out.blocks.push(record);
        push_keys(&mut self.out, corrected, secure, &pending, q, leaked);
        Ok(())
    }
}

fn push_keys(out: &mut PartyOutput, corrected: Vec<bool>, secure: Vec<bool>, pending: &Pending, q: f64, leaked: u64) {
    out.secure_key.extend_from_slice(&secure);
    let buffer = |bits, stage| KeyBuffer { bits, stage, leaked_bits: leaked, frame_ids: pending.frames.clone(), qber_est: q };
    out.keys.push(buffer(corrected, KeyStage::Corrected));
    out.keys.push(buffer(secure, KeyStage::Secure));
}

fn unexpected(frame_id: u32, expected: &'static str, got: &Body) -> AppError {
    AppError::Unexpected { frame_id, expected, got: describe(got) }
}

/// Parity oracle that asks Alice over the session.
struct SessionOracle<'s> {
    session: &'s mut Session,
    block: u32,
    perm_seed: u64,
    n_bits: u32,
    frame_id: u32,
    failure: Option<AppError>,
}

impl ParityOracle for SessionOracle<'_> {
    fn parities(&mut self, ranges: &[ParityRange]) -> Result<Vec<bool>, CascadeError> {
        let req = CascadeParityReq { block: self.block, perm_seed: self.perm_seed, n_bits: self.n_bits, ranges: ranges.to_vec() };
        let reply = self.session.request(Body::CascadeParityReq(req), self.frame_id);
        let err = match reply {
            Ok(Body::CascadeParityResp(CascadeParityResp { block, parities }))
                if block == self.block && parities.len() == ranges.len() =>
            {
                return Ok(parities)
            }
            Ok(other) => unexpected(self.frame_id, "CascadeParityResp", &other),
            Err(e) => AppError::session(self.frame_id, e),
        };
        let text = err.to_string();
        self.failure = Some(err);
        Err(CascadeError::Channel(text))
    }
}

/// Alice's side of a run. Returns when Bob closes the session.
pub fn run_alice(session: &mut Session, cfg: &ScenarioConfig, feed: &mut dyn EventFeed) -> Result<PartyOutput, AppError> {
    let mut alice = Alice::new(cfg)?;
    session.establish(cfg.run.seed, cfg.params_digest()).map_err(|e| AppError::session(0, e))?;
    loop {
        let (frame_id, body) = match session.recv() {
            Ok(m) => m,
            Err(NetError::Closed) => break,
            Err(e) => return Err(AppError::session(alice.last_frame, e)),
        };
        alice.last_frame = frame_id;
        match alice.handle(frame_id, body, feed) {
            Ok(reply) => session.send(reply, frame_id).map_err(|e| AppError::session(frame_id, e))?,
            Err(e) => {
                let reason = match e {
                    AppError::Unexpected { .. } => abort_reason::PROTOCOL,
                    _ => abort_reason::INTERNAL,
                };
                session.abort(reason, &e.to_string());
                return Err(e);
            }
        }
    }
    alice.out.finish(session);
    Ok(alice.out)
}

/// Alice's state for the acquisition in progress.
struct AcqState {
    acq: u32,
    events: Vec<TimeTagEvent>,
    offset: Option<i64>,
    matched: Option<Vec<usize>>,
}

/// Alice's state for the frame in progress.
#[derive(Default)]
struct FrameState {
    frame_id: u32,
    records: Vec<HalfRecord>,
    acquisitions: usize,
    synced: usize,
    stats: Option<FrameStats>,
    key: Vec<bool>,
    positions: Vec<u32>,
}

/// A block Alice is reconciling.
struct OpenBlock {
    block: u32,
    pending: Pending,
    responder: Option<(u64, ParityResponder)>,
    parities: u64,
    confirmed: bool,
}

struct Alice<'a> {
    cfg: &'a ScenarioConfig,
    timeline: Timeline,
    half_window: i64,
    acq: Option<AcqState>,
    frame: FrameState,
    pending: Pending,
    block: Option<OpenBlock>,
    last_frame: u32,
    out: PartyOutput,
}

impl<'a> Alice<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self, AppError> {
        Ok(Self {
            cfg,
            timeline: Timeline::new(cfg)?,
            half_window: half_window_ticks(cfg.protocol.window_ns)?,
            acq: None,
            frame: FrameState::default(),
            pending: Pending::default(),
            block: None,
            last_frame: 0,
            out: PartyOutput::new(Role::Alice),
        })
    }

    fn violation(&self, frame_id: u32, expected: &'static str, got: &Body) -> AppError {
        unexpected(frame_id, expected, got)
    }

    fn frame_state(&mut self, frame_id: u32) -> &mut FrameState {
        if self.frame.frame_id != frame_id {
            self.frame = FrameState { frame_id, ..Default::default() };
        }
        &mut self.frame
    }

    fn handle(&mut self, frame_id: u32, body: Body, feed: &mut dyn EventFeed) -> Result<Body, AppError> {
        match body {
            Body::SyncPublicTags(SyncTags::PublicTicks { acq, ticks: public_b }) => {
                let events = feed.acquire(acq as u64)?;
                let public_a = ticks(&events, |ch| ch >= 2);
                let result = recover_offset(&public_a, &public_b, self.cfg.protocol.sync_search_ns);
                self.out.offsets.push(OffsetReport::new(acq as u64, &result));
                let offset = result.ok();
                let frame = self.frame_state(frame_id);
                frame.acquisitions += 1;
                frame.synced += offset.is_some() as usize;
                self.acq = Some(AcqState { acq, events, offset, matched: None });
                Ok(Body::SyncPublicTags(SyncTags::OffsetReply { acq, offset }))
            }
            Body::SyncPublicTags(SyncTags::AllTicks { acq, ticks: all_b }) => {
                let hw = self.half_window;
                let state = match self.acq.as_mut() {
                    Some(s) if s.acq == acq && s.offset.is_some() && s.matched.is_none() => s,
                    _ => return Err(AppError::Unexpected { frame_id, expected: "PublicTicks first", got: "AllTicks".into() }),
                };
                if all_b.windows(2).any(|w| w[0] > w[1]) {
                    return Err(AppError::Unexpected { frame_id, expected: "sorted ticks", got: "unsorted ticks".into() });
                }
                let all_a = ticks(&state.events, |_| true);
                let pairs = match_ticks(&all_a, &all_b, state.offset.unwrap_or(0), hw)?;
                let bob_indices = pairs.iter().map(|p| p.b as u64).collect();
                let settings = pairs.iter().map(|p| state.events[p.a].channel / 2).collect();
                state.matched = Some(pairs.iter().map(|p| p.a).collect());
                Ok(Body::BasisAnnounce(BasisAnnounce::AliceMatches { acq, bob_indices, settings }))
            }
            Body::BasisAnnounce(BasisAnnounce::BobSettings { acq, settings }) => {
                let state = self.acq.take();
                let (events, matched) = match state {
                    Some(AcqState { acq: a, events, matched: Some(m), .. }) if a == acq && m.len() == settings.len() => (events, m),
                    _ => return Err(AppError::Unexpected { frame_id, expected: "matching BobSettings", got: "BobSettings".into() }),
                };
                let frame = self.frame_state(frame_id);
                for (i, sb) in matched.into_iter().zip(settings) {
                    let e = events[i];
                    frame.records.push(HalfRecord { setting_a: e.channel / 2, setting_b: sb, outcome: e.channel & 1 == 1 });
                }
                Ok(Body::BasisAnnounce(BasisAnnounce::Ack { acq }))
            }
            Body::FrameStats(FrameStatsMsg::BobChshOutcomes { outcomes }) => self.chsh_verdict(frame_id, outcomes),
            Body::DisclosePositions(positions) => {
                let frame = &mut self.frame;
                if frame.frame_id != frame_id || !frame.stats.as_ref().is_some_and(|s| s.status == FrameStatus::Ok) {
                    return Err(AppError::Unexpected { frame_id, expected: "accepted CHSH frame", got: "DisclosePositions".into() });
                }
                let bits = select(&frame.key, &positions)?;
                frame.positions = positions;
                Ok(Body::DiscloseBits(bits))
            }
            Body::FrameStats(FrameStatsMsg::QberVerdict { q, status, n_disclosed, n_errors }) => {
                let frame = std::mem::take(&mut self.frame);
                let mut stats = match frame.stats {
                    Some(s) if frame.frame_id == frame_id && n_disclosed as usize == frame.positions.len() => s,
                    _ => return Err(AppError::Unexpected { frame_id, expected: "disclosed frame", got: "QberVerdict".into() }),
                };
                stats.q_est = Some(q);
                stats.n_disclosed = n_disclosed as usize;
                stats.n_disclosed_errors = n_errors as usize;
                stats.status = FrameStatus::from_code(status)
                    .ok_or_else(|| AppError::Unexpected { frame_id, expected: "frame status", got: status.to_string() })?;
                if stats.accepted() {
                    let key = remove_positions(&frame.key, &frame.positions);
                    self.pending.add(frame_id as u64, key, &stats.counts, frame.positions.len(), n_errors as usize);
                }
                self.out.frames.push(frame_record(&self.timeline, stats, frame.acquisitions, frame.synced));
                self.frame = FrameState { frame_id: u32::MAX, ..Default::default() };
                Ok(Body::FrameStats(FrameStatsMsg::Ack))
            }
            Body::CascadeParityReq(req) => {
                let passes = self.cfg.protocol.cascade_passes;
                let block = self.open_block(frame_id, req.block)?;
                if block.pending.bits.len() != req.n_bits as usize {
                    return Err(AppError::Unexpected { frame_id, expected: "matching block length", got: req.n_bits.to_string() });
                }
                if block.responder.as_ref().is_none_or(|(seed, _)| *seed != req.perm_seed) {
                    let perms = Permutations::new(block.pending.bits.len(), passes, req.perm_seed);
                    block.responder = Some((req.perm_seed, ParityResponder::new(&block.pending.bits, &perms)?));
                }
                let parities = block.responder.as_ref().map(|(_, r)| r.answer(&req.ranges)).transpose()?.unwrap_or_default();
                block.parities += parities.len() as u64;
                Ok(Body::CascadeParityResp(CascadeParityResp { block: req.block, parities }))
            }
            Body::KeyConfirm(KeyConfirmMsg::Request { block: id, hash_seed, tag }) => {
                let block = self.open_block(frame_id, id)?;
                let mine = toeplitz::hash64(&block.pending.bits, hash_seed);
                let ok = mine == tag;
                block.confirmed = ok;
                if !ok {
                    let block = self.block.take().expect("block is open");
                    self.out.blocks.push(self.block_record(&block, 0));
                }
                Ok(Body::KeyConfirm(KeyConfirmMsg::Verdict { block: id, ok, tag: mine }))
            }
            Body::PaSeed(PaSeedMsg::Seed { block: id, backend, m, seed }) => {
                let block = match self.block.take() {
                    Some(b) if b.block == id && b.confirmed => b,
                    _ => return Err(AppError::Unexpected { frame_id, expected: "confirmed block", got: "PaSeed".into() }),
                };
                let n = block.pending.bits.len();
                let (q, s) = (block.pending.q(), block.pending.s());
                let leaked = block.parities + VERIFY_TAG_BITS;
                let m_mine = block_output_length(self.cfg, n, q, s, leaked);
                if m as usize != m_mine {
                    return Err(AppError::Unexpected { frame_id, expected: "agreed output length", got: m.to_string() });
                }
                let backend = Backend::from_code(backend)
                    .ok_or_else(|| AppError::Unexpected { frame_id, expected: "extractor backend", got: backend.to_string() })?;
                let secure = if m_mine > 0 {
                    extract(&block.pending.bits, &extractor_params(self.cfg, n, m_mine, backend), &seed)?
                } else {
                    Vec::new()
                };
                self.out.blocks.push(self.block_record(&block, secure.len()));
                push_keys(&mut self.out, block.pending.bits.clone(), secure, &block.pending, q, leaked);
                Ok(Body::PaSeed(PaSeedMsg::Ack { block: id }))
            }
            other => Err(self.violation(frame_id, "a request from Bob", &other)),
        }
    }

    fn chsh_verdict(&mut self, frame_id: u32, outcomes: Vec<bool>) -> Result<Body, AppError> {
        let frame_cfg = self.cfg.protocol.frame_config();
        let duration = self.timeline.frame_wall_s();
        let frame = self.frame_state(frame_id);
        let chsh: Vec<&HalfRecord> = frame.records.iter().filter(|r| is_chsh(r.setting_a)).collect();
        if chsh.len() != outcomes.len() {
            return Err(AppError::Unexpected { frame_id, expected: "one outcome per CHSH record", got: outcomes.len().to_string() });
        }
        let mut counts = CountTable::default();
        for (r, &ob) in chsh.iter().zip(&outcomes) {
            counts[r.setting_a as usize][r.setting_b as usize].add(Outcome::from_bit(r.outcome), Outcome::from_bit(ob));
        }
        frame.key = frame.records.iter().filter(|r| is_key(r.setting_a, r.setting_b)).map(|r| r.outcome).collect();
        let mut stats = FrameStats::from_counts(frame_id as u64, duration, counts);
        stats.n_sifted = frame.key.len();
        if let Ok(true) = chsh_gate(&mut stats, &frame_cfg) {
            stats.status = FrameStatus::Ok;
        }
        let reply = FrameStatsMsg::AliceVerdict {
            s: stats.s,
            s_err: stats.s_err,
            status: stats.status.code(),
            n_chsh: stats.n_chsh as u32,
            n_sifted: stats.n_sifted as u32,
            counts: chsh_counts_to_msg(&stats.counts),
        };
        if stats.status != FrameStatus::Ok {
            let frame = std::mem::take(&mut self.frame);
            self.out.frames.push(frame_record(&self.timeline, stats, frame.acquisitions, frame.synced));
            self.frame = FrameState { frame_id: u32::MAX, ..Default::default() };
        } else {
            frame.stats = Some(stats);
        }
        Ok(Body::FrameStats(reply))
    }

    /// The open block `id`, opening it from the pending buffer if needed.
    fn open_block(&mut self, frame_id: u32, id: u32) -> Result<&mut OpenBlock, AppError> {
        match &self.block {
            Some(b) if b.block == id => {}
            Some(_) => {
                return Err(AppError::Unexpected { frame_id, expected: "the open block", got: format!("block {id}") })
            }
            None => {
                self.block = Some(OpenBlock {
                    block: id,
                    pending: self.pending.take(),
                    responder: None,
                    parities: 0,
                    confirmed: false,
                })
            }
        }
        Ok(self.block.as_mut().expect("block was just opened"))
    }

    fn block_record(&self, b: &OpenBlock, secure_bits: usize) -> BlockRecord {
        let (n, q) = (b.pending.bits.len(), b.pending.q());
        let leaked = b.parities + VERIFY_TAG_BITS;
        BlockRecord {
            block: b.block,
            frames: b.pending.frames.clone(),
            n_bits: n,
            q,
            s: b.pending.s(),
            parities: b.parities,
            leaked_bits: leaked,
            f_ec: f_ec(leaked, n, q),
            confirmed: b.confirmed,
            secure_bits,
            corrections: 0,
        }
    }
}
