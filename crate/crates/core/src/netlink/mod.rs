//! The classical channel.
//!
//! Every message is framed as
//! `"QKD1" ∥ version u8 ∥ type u8 ∥ frame_id u32 ∥ length u32 ∥ payload`
//! with big-endian integers and payloads of at most 2²⁴ bytes. Typed
//! payloads live in [`body`], byte transports in [`transport`] and the
//! half-duplex request-reply session in [`session`].

use thiserror::Error;

pub mod body;
pub mod session;
pub mod transport;
mod wire;

pub use body::*;
pub use session::{Role, Session, SessionConfig};
pub use transport::{loopback_pair, LoopbackTransport, TcpTransport, Transport};

pub const MAGIC: [u8; 4] = *b"QKD1";
pub const PROTOCOL_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;
pub const MAX_PAYLOAD: usize = 1 << 24;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("need at least {0} more bytes")]
    NeedMoreBytes(usize),
    #[error("framing error: {0}")]
    Framing(String),
    #[error("payload of {0} bytes exceeds the 2^24 limit")]
    Oversize(usize),
    #[error("malformed {kind} payload: {reason}")]
    Payload { kind: &'static str, reason: String },
    #[error("timed out after {0:?} waiting for peer")]
    Timeout(std::time::Duration),
    #[error("peer closed the connection")]
    Closed,
    #[error("session aborted by peer (reason {reason}): {detail}")]
    Aborted { reason: u8, detail: String },
    #[error("protocol violation: {0}")]
    Violation(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Message types in wire order, starting at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    SyncPublicTags = 2,
    BasisAnnounce = 3,
    FrameStats = 4,
    DisclosePositions = 5,
    DiscloseBits = 6,
    CascadeParityReq = 7,
    CascadeParityResp = 8,
    PaSeed = 9,
    KeyConfirm = 10,
    Abort = 11,
}

impl MsgType {
    pub const ALL: [MsgType; 11] = [
        MsgType::Hello,
        MsgType::SyncPublicTags,
        MsgType::BasisAnnounce,
        MsgType::FrameStats,
        MsgType::DisclosePositions,
        MsgType::DiscloseBits,
        MsgType::CascadeParityReq,
        MsgType::CascadeParityResp,
        MsgType::PaSeed,
        MsgType::KeyConfirm,
        MsgType::Abort,
    ];

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get((c as usize).wrapping_sub(1)).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

/// A framed message with a raw payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub version: u8,
    pub msg_type: MsgType,
    pub frame_id: u32,
    pub payload: Vec<u8>,
}

/// Frame a message.
pub fn encode(msg: &Message) -> Result<Vec<u8>, NetError> {
    if msg.payload.len() > MAX_PAYLOAD {
        return Err(NetError::Oversize(msg.payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + msg.payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(msg.version);
    out.push(msg.msg_type.code());
    out.extend_from_slice(&msg.frame_id.to_be_bytes());
    out.extend_from_slice(&(msg.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&msg.payload);
    Ok(out)
}

/// Parse exactly one frame from the front of `bytes`, returning the rest.
pub fn decode(bytes: &[u8]) -> Result<(Message, &[u8]), NetError> {
    let magic_seen = bytes.len().min(4);
    if bytes[..magic_seen] != MAGIC[..magic_seen] {
        return Err(NetError::Framing(format!("bad magic {:02x?}", &bytes[..magic_seen])));
    }
    if bytes.len() < HEADER_LEN {
        return Err(NetError::NeedMoreBytes(HEADER_LEN - bytes.len()));
    }
    let version = bytes[4];
    let msg_type = MsgType::from_code(bytes[5]).ok_or_else(|| NetError::Framing(format!("unknown type {}", bytes[5])))?;
    let frame_id = u32::from_be_bytes(bytes[6..10].try_into().expect("4 bytes"));
    let len = u32::from_be_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(NetError::Framing(format!("declared payload length {len} exceeds limit")));
    }
    if bytes.len() < HEADER_LEN + len {
        return Err(NetError::NeedMoreBytes(HEADER_LEN + len - bytes.len()));
    }
    let payload = bytes[HEADER_LEN..HEADER_LEN + len].to_vec();
    Ok((Message { version, msg_type, frame_id, payload }, &bytes[HEADER_LEN + len..]))
}

/// Decode every frame of a captured transcript.
pub fn decode_all(mut bytes: &[u8]) -> Result<Vec<Message>, NetError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (m, rest) = decode(bytes)?;
        out.push(m);
        bytes = rest;
    }
    Ok(out)
}
