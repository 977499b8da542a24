//! Primitive payload readers and writers: big-endian integers, LEB128
//! varints and MSB-first bitmaps.

use super::NetError;
use crate::bits::{pack_msb, unpack_msb};

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.u64(v.to_bits())
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(b);
        self
    }

    pub fn varint(&mut self, mut v: u64) -> &mut Self {
        loop {
            let byte = (v & 0x7f) as u8;
            v >>= 7;
            if v == 0 {
                self.buf.push(byte);
                return self;
            }
            self.buf.push(byte | 0x80);
        }
    }

    /// Count then bitmap.
    pub fn bits(&mut self, bits: &[bool]) -> &mut Self {
        self.u32(bits.len() as u32);
        self.buf.extend_from_slice(&pack_msb(bits));
        self
    }

    /// Count then first value and successive differences as varints.
    pub fn sorted_u64s(&mut self, values: &[u64]) -> &mut Self {
        self.u32(values.len() as u32);
        let mut prev = 0u64;
        for &v in values {
            self.varint(v - prev);
            prev = v;
        }
        self
    }

    /// Run-length encoding: run count, then (value, length varint) per run.
    pub fn rle(&mut self, values: &[u8]) -> &mut Self {
        let mut runs: Vec<(u8, u64)> = Vec::new();
        for &v in values {
            match runs.last_mut() {
                Some((last, n)) if *last == v => *n += 1,
                _ => runs.push((v, 1)),
            }
        }
        self.u32(runs.len() as u32);
        for (v, n) in runs {
            self.u8(v).varint(n);
        }
        self
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], kind: &'static str) -> Self {
        Self { buf, pos: 0, kind }
    }

    pub fn err(&self, reason: impl Into<String>) -> NetError {
        NetError::Payload { kind: self.kind, reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn i64(&mut self) -> Result<i64, NetError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, NetError> {
        Ok(f64::from_bits(self.u64()?))
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], NetError> {
        Ok(self.take(N)?.try_into().expect("N bytes"))
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    pub fn varint(&mut self) -> Result<u64, NetError> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8()?;
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(self.err("varint too long"))
    }

    /// Count prefix bounded by the remaining bytes, guarding allocations.
    fn count(&mut self, min_bytes_each: usize) -> Result<usize, NetError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_bytes_each) > self.buf.len() - self.pos + 7 {
            return Err(self.err(format!("count {n} exceeds payload")));
        }
        Ok(n)
    }

    pub fn bits(&mut self) -> Result<Vec<bool>, NetError> {
        let n = self.u32()? as usize;
        let bytes = self.take(n.div_ceil(8))?;
        unpack_msb(bytes, n).ok_or_else(|| self.err("bitmap truncated"))
    }

    pub fn sorted_u64s(&mut self) -> Result<Vec<u64>, NetError> {
        let n = self.count(1)?;
        let mut out = Vec::with_capacity(n);
        let mut prev = 0u64;
        for _ in 0..n {
            prev = prev.checked_add(self.varint()?).ok_or_else(|| self.err("value overflow"))?;
            out.push(prev);
        }
        Ok(out)
    }

    pub fn rle(&mut self) -> Result<Vec<u8>, NetError> {
        let runs = self.count(2)?;
        let mut out = Vec::new();
        for _ in 0..runs {
            let v = self.u8()?;
            let n = self.varint()? as usize;
            if n > super::MAX_PAYLOAD * 8 {
                return Err(self.err("run too long"));
            }
            out.extend(std::iter::repeat_n(v, n));
        }
        Ok(out)
    }

    pub fn finish(&self) -> Result<(), NetError> {
        if self.pos != self.buf.len() {
            return Err(NetError::Payload { kind: self.kind, reason: format!("{} trailing bytes", self.buf.len() - self.pos) });
        }
        Ok(())
    }
}
