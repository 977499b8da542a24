//! Half-duplex request-reply session over a [`Transport`].
//!
//! Bob opens with HELLO and Alice answers. After that the two sides
//! strictly alternate: a party may send only when it is its turn, and
//! every received message hands the turn back. ABORT may be sent at any
//! time and ends the session. Both sides hash every frame in wire order,
//! so honest peers finish with identical transcript digests.

use std::time::Duration;

use sha2::{Digest, Sha256};

use super::transport::Transport;
use super::{abort_reason, decode, encode, Abort, Body, Hello, Message, NetError, PROTOCOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Alice,
    Bob,
}

impl Role {
    pub fn code(self) -> u8 {
        match self {
            Role::Alice => 0,
            Role::Bob => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub version: u8,
    pub timeout: Duration,
    /// Keep a copy of every frame for later inspection.
    pub capture: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { version: PROTOCOL_VERSION, timeout: Duration::from_secs(30), capture: false }
    }
}

/// Rewrites outgoing bodies before they are framed. Used to inject faults.
pub type OutgoingHook = Box<dyn FnMut(u32, &mut Body) + Send>;

pub struct Session {
    transport: Box<dyn Transport>,
    role: Role,
    cfg: SessionConfig,
    my_turn: bool,
    closed: bool,
    hasher: Sha256,
    capture: Vec<u8>,
    messages: u64,
    bytes: u64,
    hook: Option<OutgoingHook>,
}

impl Session {
    pub fn new(transport: Box<dyn Transport>, role: Role, cfg: SessionConfig) -> Self {
        Self {
            transport,
            role,
            my_turn: role == Role::Bob,
            closed: false,
            cfg,
            hasher: Sha256::new(),
            capture: Vec::new(),
            messages: 0,
            bytes: 0,
            hook: None,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn set_outgoing_hook(&mut self, hook: OutgoingHook) {
        self.hook = Some(hook);
    }

    /// Exchange HELLO and check that the peer runs the same version with
    /// the same parameters. A mismatch is answered with ABORT.
    pub fn establish(&mut self, run_seed: u64, params_digest: [u8; 8]) -> Result<Hello, NetError> {
        let mine = Hello { role: self.role.code(), run_seed, params_digest };
        match self.role {
            Role::Bob => {
                self.send(Body::Hello(mine.clone()), 0)?;
                let (msg, body) = self.recv_raw()?;
                self.check_hello(&mine, &msg, body)
            }
            Role::Alice => {
                let (msg, body) = self.recv_raw()?;
                let peer = self.check_hello(&mine, &msg, body)?;
                self.send(Body::Hello(mine), 0)?;
                Ok(peer)
            }
        }
    }

    fn check_hello(&mut self, mine: &Hello, msg: &Message, body: Body) -> Result<Hello, NetError> {
        let Body::Hello(peer) = body else {
            return Err(self.violation(format!("expected HELLO, got {:?}", msg.msg_type)));
        };
        if peer.role == mine.role {
            return Err(self.violation("both peers claim the same role".into()));
        }
        if peer.run_seed != mine.run_seed || peer.params_digest != mine.params_digest {
            let detail = "parameter digest mismatch".to_string();
            self.abort(abort_reason::PARAMS, &detail);
            return Err(NetError::Aborted { reason: abort_reason::PARAMS, detail });
        }
        Ok(peer)
    }

    fn violation(&mut self, detail: String) -> NetError {
        self.abort(abort_reason::PROTOCOL, &detail);
        NetError::Violation(detail)
    }

    fn record(&mut self, frame: &[u8]) {
        self.hasher.update(frame);
        if self.cfg.capture {
            self.capture.extend_from_slice(frame);
        }
        self.messages += 1;
        self.bytes += frame.len() as u64;
    }

    /// Send one message. Fails if it is the peer's turn.
    pub fn send(&mut self, mut body: Body, frame_id: u32) -> Result<(), NetError> {
        if self.closed {
            return Err(NetError::Closed);
        }
        if !self.my_turn {
            return Err(NetError::Violation(format!("{:?} sent {:?} out of turn", self.role, body.msg_type())));
        }
        if let Some(hook) = self.hook.as_mut() {
            hook(frame_id, &mut body);
        }
        let mut msg = body.to_message(frame_id);
        msg.version = self.cfg.version;
        let frame = encode(&msg)?;
        self.record(&frame);
        self.transport.send_frame(&frame)?;
        self.my_turn = false;
        Ok(())
    }

    fn recv_raw(&mut self) -> Result<(Message, Body), NetError> {
        if self.closed {
            return Err(NetError::Closed);
        }
        if self.my_turn {
            return Err(NetError::Violation(format!("{:?} waited for a message on its own turn", self.role)));
        }
        let frame = match self.transport.recv_frame(self.cfg.timeout) {
            Ok(f) => f,
            Err(NetError::Timeout(t)) => {
                self.abort(abort_reason::TIMEOUT, "no reply from peer");
                return Err(NetError::Timeout(t));
            }
            Err(e) => return Err(e),
        };
        self.record(&frame);
        let msg = match decode(&frame) {
            Ok((m, [])) => m,
            Ok(_) => return Err(self.violation("trailing bytes after frame".into())),
            Err(e) => return Err(self.violation(e.to_string())),
        };
        if msg.version != self.cfg.version {
            let detail = format!("peer speaks version {}, expected {}", msg.version, self.cfg.version);
            self.abort(abort_reason::VERSION, &detail);
            return Err(NetError::Aborted { reason: abort_reason::VERSION, detail });
        }
        let body = match Body::from_message(&msg) {
            Ok(b) => b,
            Err(e) => return Err(self.violation(e.to_string())),
        };
        if let Body::Abort(Abort { reason, detail }) = body {
            self.closed = true;
            return Err(NetError::Aborted { reason, detail });
        }
        self.my_turn = true;
        Ok((msg, body))
    }

    /// Receive the next message, returning its frame id and body.
    pub fn recv(&mut self) -> Result<(u32, Body), NetError> {
        let (msg, body) = self.recv_raw()?;
        Ok((msg.frame_id, body))
    }

    /// Send and wait for the reply.
    pub fn request(&mut self, body: Body, frame_id: u32) -> Result<Body, NetError> {
        self.send(body, frame_id)?;
        let (id, reply) = self.recv()?;
        if id != frame_id {
            return Err(self.violation(format!("reply for frame {id} while frame {frame_id} was open")));
        }
        Ok(reply)
    }

    /// Tell the peer the session is over. Delivery is best effort.
    pub fn abort(&mut self, reason: u8, detail: &str) {
        if self.closed {
            return;
        }
        let msg = Body::Abort(Abort { reason, detail: detail.to_string() }).to_message(0);
        if let Ok(frame) = encode(&msg) {
            self.record(&frame);
            let _ = self.transport.send_frame(&frame);
        }
        self.closed = true;
    }

    pub fn transcript_hash(&self) -> [u8; 32] {
        self.hasher.clone().finalize().into()
    }

    pub fn captured(&self) -> &[u8] {
        &self.capture
    }

    pub fn message_count(&self) -> u64 {
        self.messages
    }

    pub fn byte_count(&self) -> u64 {
        self.bytes
    }
}
