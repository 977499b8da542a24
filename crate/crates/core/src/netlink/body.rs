//! Typed payloads for every message type.
//!
//! All integers are big-endian and bitmaps are MSB-first behind a u32 bit
//! count. Payloads with several variants start with a kind byte. Tick lists
//! are sent as varint differences; setting labels are run-length encoded.

use super::wire::{Reader, Writer};
use super::{Message, MsgType, NetError, PROTOCOL_VERSION};
use crate::cascade::ParityRange;

/// ABORT reason codes.
pub mod abort_reason {
    pub const VERSION: u8 = 1;
    pub const PARAMS: u8 = 2;
    pub const PROTOCOL: u8 = 3;
    pub const TIMEOUT: u8 = 4;
    pub const INTERNAL: u8 = 5;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hello {
    /// 0 for Alice, 1 for Bob.
    pub role: u8,
    pub run_seed: u64,
    /// Digest of the protocol parameters both sides must agree on.
    pub params_digest: [u8; 8],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncTags {
    /// Bob's ticks on the public synchronization channels.
    PublicTicks { acq: u32, ticks: Vec<u64> },
    /// Bob's ticks on all detectors, without channel information.
    AllTicks { acq: u32, ticks: Vec<u64> },
    /// Alice's recovered offset, or `None` when synchronization failed.
    OffsetReply { acq: u32, offset: Option<i64> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BasisAnnounce {
    /// Indices into Bob's announced ticks that Alice matched, with her
    /// setting index for each.
    AliceMatches { acq: u32, bob_indices: Vec<u64>, settings: Vec<u8> },
    /// Bob's setting index for each matched coincidence.
    BobSettings { acq: u32, settings: Vec<u8> },
    Ack { acq: u32 },
}

/// Counts (n++, n−−, n−+, n+−) for the four CHSH setting pairs.
pub type ChshCounts = [[u32; 4]; 4];

#[derive(Debug, Clone, PartialEq)]
pub enum FrameStatsMsg {
    /// Bob's outcomes on the frame's CHSH records, in record order.
    BobChshOutcomes { outcomes: Vec<bool> },
    /// Alice's CHSH evaluation and verdict.
    AliceVerdict { s: Option<f64>, s_err: Option<f64>, status: u8, n_chsh: u32, n_sifted: u32, counts: ChshCounts },
    /// Bob's QBER estimate from the disclosed samples and verdict.
    QberVerdict { q: f64, status: u8, n_disclosed: u32, n_errors: u32 },
    Ack,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CascadeParityReq {
    pub block: u32,
    pub perm_seed: u64,
    pub n_bits: u32,
    pub ranges: Vec<ParityRange>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CascadeParityResp {
    pub block: u32,
    pub parities: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PaSeedMsg {
    Seed { block: u32, backend: u8, m: u32, seed: Vec<bool> },
    Ack { block: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyConfirmMsg {
    /// Bob's hash seed and the tag of his corrected key.
    Request { block: u32, hash_seed: u64, tag: u64 },
    /// Alice's verdict and her tag.
    Verdict { block: u32, ok: bool, tag: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Abort {
    pub reason: u8,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Hello(Hello),
    SyncPublicTags(SyncTags),
    BasisAnnounce(BasisAnnounce),
    FrameStats(FrameStatsMsg),
    DisclosePositions(Vec<u32>),
    DiscloseBits(Vec<bool>),
    CascadeParityReq(CascadeParityReq),
    CascadeParityResp(CascadeParityResp),
    PaSeed(PaSeedMsg),
    KeyConfirm(KeyConfirmMsg),
    Abort(Abort),
}

fn opt_f64(w: &mut Writer, v: Option<f64>) {
    match v {
        Some(x) => w.u8(1).f64(x),
        None => w.u8(0).f64(0.0),
    };
}

fn read_opt_f64(r: &mut Reader) -> Result<Option<f64>, NetError> {
    let flag = r.u8()?;
    let v = r.f64()?;
    match flag {
        0 => Ok(None),
        1 => Ok(Some(v)),
        _ => Err(r.err("bad option flag")),
    }
}

impl Body {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Body::Hello(_) => MsgType::Hello,
            Body::SyncPublicTags(_) => MsgType::SyncPublicTags,
            Body::BasisAnnounce(_) => MsgType::BasisAnnounce,
            Body::FrameStats(_) => MsgType::FrameStats,
            Body::DisclosePositions(_) => MsgType::DisclosePositions,
            Body::DiscloseBits(_) => MsgType::DiscloseBits,
            Body::CascadeParityReq(_) => MsgType::CascadeParityReq,
            Body::CascadeParityResp(_) => MsgType::CascadeParityResp,
            Body::PaSeed(_) => MsgType::PaSeed,
            Body::KeyConfirm(_) => MsgType::KeyConfirm,
            Body::Abort(_) => MsgType::Abort,
        }
    }

    pub fn encode_payload(&self) -> Vec<u8> {
        let mut w = Writer::default();
        match self {
            Body::Hello(h) => {
                w.u8(h.role).u64(h.run_seed).bytes(&h.params_digest);
            }
            Body::SyncPublicTags(s) => match s {
                SyncTags::PublicTicks { acq, ticks } => {
                    w.u8(0).u32(*acq).sorted_u64s(ticks);
                }
                SyncTags::AllTicks { acq, ticks } => {
                    w.u8(1).u32(*acq).sorted_u64s(ticks);
                }
                SyncTags::OffsetReply { acq, offset } => {
                    w.u8(2).u32(*acq).u8(offset.is_some() as u8).i64(offset.unwrap_or(0));
                }
            },
            Body::BasisAnnounce(b) => match b {
                BasisAnnounce::AliceMatches { acq, bob_indices, settings } => {
                    w.u8(0).u32(*acq).sorted_u64s(bob_indices).rle(settings);
                }
                BasisAnnounce::BobSettings { acq, settings } => {
                    w.u8(1).u32(*acq).rle(settings);
                }
                BasisAnnounce::Ack { acq } => {
                    w.u8(2).u32(*acq);
                }
            },
            Body::FrameStats(f) => match f {
                FrameStatsMsg::BobChshOutcomes { outcomes } => {
                    w.u8(0).bits(outcomes);
                }
                FrameStatsMsg::AliceVerdict { s, s_err, status, n_chsh, n_sifted, counts } => {
                    w.u8(1);
                    opt_f64(&mut w, *s);
                    opt_f64(&mut w, *s_err);
                    w.u8(*status).u32(*n_chsh).u32(*n_sifted);
                    for c in counts.iter().flatten() {
                        w.u32(*c);
                    }
                }
                FrameStatsMsg::QberVerdict { q, status, n_disclosed, n_errors } => {
                    w.u8(2).f64(*q).u8(*status).u32(*n_disclosed).u32(*n_errors);
                }
                FrameStatsMsg::Ack => {
                    w.u8(3);
                }
            },
            Body::DisclosePositions(p) => {
                w.u32(p.len() as u32);
                for &x in p {
                    w.u32(x);
                }
            }
            Body::DiscloseBits(b) => {
                w.bits(b);
            }
            Body::CascadeParityReq(r) => {
                w.u32(r.block).u64(r.perm_seed).u32(r.n_bits).u32(r.ranges.len() as u32);
                for g in &r.ranges {
                    w.u8(g.pass).u32(g.start).u32(g.end);
                }
            }
            Body::CascadeParityResp(r) => {
                w.u32(r.block).bits(&r.parities);
            }
            Body::PaSeed(p) => match p {
                PaSeedMsg::Seed { block, backend, m, seed } => {
                    w.u8(0).u32(*block).u8(*backend).u32(*m).bits(seed);
                }
                PaSeedMsg::Ack { block } => {
                    w.u8(1).u32(*block);
                }
            },
            Body::KeyConfirm(k) => match k {
                KeyConfirmMsg::Request { block, hash_seed, tag } => {
                    w.u8(0).u32(*block).u64(*hash_seed).u64(*tag);
                }
                KeyConfirmMsg::Verdict { block, ok, tag } => {
                    w.u8(1).u32(*block).u8(*ok as u8).u64(*tag);
                }
            },
            Body::Abort(a) => {
                w.u8(a.reason).bytes(a.detail.as_bytes());
            }
        }
        w.buf
    }

    pub fn to_message(&self, frame_id: u32) -> Message {
        Message { version: PROTOCOL_VERSION, msg_type: self.msg_type(), frame_id, payload: self.encode_payload() }
    }

    pub fn decode_payload(t: MsgType, payload: &[u8]) -> Result<Body, NetError> {
        let kind = match t {
            MsgType::Hello => "HELLO",
            MsgType::SyncPublicTags => "SYNC_PUBLIC_TAGS",
            MsgType::BasisAnnounce => "BASIS_ANNOUNCE",
            MsgType::FrameStats => "FRAME_STATS",
            MsgType::DisclosePositions => "DISCLOSE_POSITIONS",
            MsgType::DiscloseBits => "DISCLOSE_BITS",
            MsgType::CascadeParityReq => "CASCADE_PARITY_REQ",
            MsgType::CascadeParityResp => "CASCADE_PARITY_RESP",
            MsgType::PaSeed => "PA_SEED",
            MsgType::KeyConfirm => "KEY_CONFIRM",
            MsgType::Abort => "ABORT",
        };
        let mut r = Reader::new(payload, kind);
        let body = match t {
            MsgType::Hello => Body::Hello(Hello { role: r.u8()?, run_seed: r.u64()?, params_digest: r.array()? }),
            MsgType::SyncPublicTags => Body::SyncPublicTags(match r.u8()? {
                0 => SyncTags::PublicTicks { acq: r.u32()?, ticks: r.sorted_u64s()? },
                1 => SyncTags::AllTicks { acq: r.u32()?, ticks: r.sorted_u64s()? },
                2 => {
                    let acq = r.u32()?;
                    let ok = r.u8()?;
                    let off = r.i64()?;
                    SyncTags::OffsetReply { acq, offset: (ok == 1).then_some(off) }
                }
                k => return Err(r.err(format!("unknown kind {k}"))),
            }),
            MsgType::BasisAnnounce => Body::BasisAnnounce(match r.u8()? {
                0 => BasisAnnounce::AliceMatches { acq: r.u32()?, bob_indices: r.sorted_u64s()?, settings: r.rle()? },
                1 => BasisAnnounce::BobSettings { acq: r.u32()?, settings: r.rle()? },
                2 => BasisAnnounce::Ack { acq: r.u32()? },
                k => return Err(r.err(format!("unknown kind {k}"))),
            }),
            MsgType::FrameStats => Body::FrameStats(match r.u8()? {
                0 => FrameStatsMsg::BobChshOutcomes { outcomes: r.bits()? },
                1 => {
                    let s = read_opt_f64(&mut r)?;
                    let s_err = read_opt_f64(&mut r)?;
                    let status = r.u8()?;
                    let n_chsh = r.u32()?;
                    let n_sifted = r.u32()?;
                    let mut counts = ChshCounts::default();
                    for c in counts.iter_mut().flatten() {
                        *c = r.u32()?;
                    }
                    FrameStatsMsg::AliceVerdict { s, s_err, status, n_chsh, n_sifted, counts }
                }
                2 => FrameStatsMsg::QberVerdict { q: r.f64()?, status: r.u8()?, n_disclosed: r.u32()?, n_errors: r.u32()? },
                3 => FrameStatsMsg::Ack,
                k => return Err(r.err(format!("unknown kind {k}"))),
            }),
            MsgType::DisclosePositions => {
                let n = r.u32()? as usize;
                if n > payload.len() / 4 {
                    return Err(r.err("count exceeds payload"));
                }
                Body::DisclosePositions((0..n).map(|_| r.u32()).collect::<Result<_, _>>()?)
            }
            MsgType::DiscloseBits => Body::DiscloseBits(r.bits()?),
            MsgType::CascadeParityReq => {
                let block = r.u32()?;
                let perm_seed = r.u64()?;
                let n_bits = r.u32()?;
                let n = r.u32()? as usize;
                if n > payload.len() / 9 {
                    return Err(r.err("range count exceeds payload"));
                }
                let ranges = (0..n)
                    .map(|_| Ok(ParityRange { pass: r.u8()?, start: r.u32()?, end: r.u32()? }))
                    .collect::<Result<_, NetError>>()?;
                Body::CascadeParityReq(CascadeParityReq { block, perm_seed, n_bits, ranges })
            }
            MsgType::CascadeParityResp => Body::CascadeParityResp(CascadeParityResp { block: r.u32()?, parities: r.bits()? }),
            MsgType::PaSeed => Body::PaSeed(match r.u8()? {
                0 => PaSeedMsg::Seed { block: r.u32()?, backend: r.u8()?, m: r.u32()?, seed: r.bits()? },
                1 => PaSeedMsg::Ack { block: r.u32()? },
                k => return Err(r.err(format!("unknown kind {k}"))),
            }),
            MsgType::KeyConfirm => Body::KeyConfirm(match r.u8()? {
                0 => KeyConfirmMsg::Request { block: r.u32()?, hash_seed: r.u64()?, tag: r.u64()? },
                1 => {
                    let block = r.u32()?;
                    let ok = match r.u8()? {
                        0 => false,
                        1 => true,
                        _ => return Err(r.err("bad verdict flag")),
                    };
                    KeyConfirmMsg::Verdict { block, ok, tag: r.u64()? }
                }
                k => return Err(r.err(format!("unknown kind {k}"))),
            }),
            MsgType::Abort => {
                let reason = r.u8()?;
                let detail = String::from_utf8_lossy(r.rest()).into_owned();
                Body::Abort(Abort { reason, detail })
            }
        };
        r.finish()?;
        Ok(body)
    }

    pub fn from_message(m: &Message) -> Result<Body, NetError> {
        Self::decode_payload(m.msg_type, &m.payload)
    }
}
