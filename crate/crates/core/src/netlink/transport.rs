//! Byte transports carrying whole frames.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::{NetError, HEADER_LEN, MAGIC, MAX_PAYLOAD};

/// A reliable, ordered carrier of framed messages.
pub trait Transport: Send {
    /// Send one complete frame.
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), NetError>;
    /// Receive one complete frame, waiting at most `timeout`.
    fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>, NetError>;
}

/// In-process transport over a pair of channels.
pub struct LoopbackTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Two connected loopback endpoints.
pub fn loopback_pair() -> (LoopbackTransport, LoopbackTransport) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    (LoopbackTransport { tx: tx_a, rx: rx_a }, LoopbackTransport { tx: tx_b, rx: rx_b })
}

impl Transport for LoopbackTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), NetError> {
        self.tx.send(frame.to_vec()).map_err(|_| NetError::Closed)
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>, NetError> {
        match self.rx.recv_timeout(timeout) {
            Ok(f) => Ok(f),
            Err(RecvTimeoutError::Timeout) => Err(NetError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(NetError::Closed),
        }
    }
}

/// TCP transport reading frames by their header length field.
pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, NetError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    /// Accept a single connection on `listener`.
    pub fn accept(listener: &TcpListener) -> Result<Self, NetError> {
        let (stream, _) = listener.accept()?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn from_stream(stream: TcpStream) -> Self {
        Self { stream }
    }

    fn read_exact_timed(&mut self, buf: &mut [u8], timeout: Duration) -> Result<(), NetError> {
        self.stream.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        match self.stream.read_exact(buf) {
            Ok(()) => Ok(()),
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                Err(NetError::Timeout(timeout))
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(NetError::Closed),
            Err(e) => Err(e.into()),
        }
    }
}

impl Transport for TcpTransport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), NetError> {
        self.stream.write_all(frame)?;
        self.stream.flush()?;
        Ok(())
    }

    fn recv_frame(&mut self, timeout: Duration) -> Result<Vec<u8>, NetError> {
        let mut header = [0u8; HEADER_LEN];
        self.read_exact_timed(&mut header, timeout)?;
        if header[..4] != MAGIC {
            return Err(NetError::Framing(format!("bad magic {:02x?}", &header[..4])));
        }
        let len = u32::from_be_bytes(header[10..14].try_into().expect("4 bytes")) as usize;
        if len > MAX_PAYLOAD {
            return Err(NetError::Framing(format!("declared payload length {len} exceeds limit")));
        }
        let mut frame = header.to_vec();
        frame.resize(HEADER_LEN + len, 0);
        self.read_exact_timed(&mut frame[HEADER_LEN..], timeout)?;
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loopback_delivers_in_order_and_times_out() {
        let (mut a, mut b) = loopback_pair();
        a.send_frame(b"one").unwrap();
        a.send_frame(b"two").unwrap();
        assert_eq!(b.recv_frame(Duration::from_secs(1)).unwrap(), b"one");
        assert_eq!(b.recv_frame(Duration::from_secs(1)).unwrap(), b"two");
        assert!(matches!(b.recv_frame(Duration::from_millis(10)), Err(NetError::Timeout(_))));
        drop(a);
        assert!(matches!(b.recv_frame(Duration::from_millis(10)), Err(NetError::Closed)));
    }
}
