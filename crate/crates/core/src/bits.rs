//! Small helpers for bit strings stored as `Vec<bool>`.

/// Pack bits MSB-first into bytes; the final byte is zero-padded.
pub fn pack_msb(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

/// Unpack `n` bits MSB-first from `bytes`.
pub fn unpack_msb(bytes: &[u8], n: usize) -> Option<Vec<bool>> {
    if bytes.len() < n.div_ceil(8) {
        return None;
    }
    Some((0..n).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect())
}

/// Parity (XOR) of a bit slice.
pub fn parity(bits: &[bool]) -> bool {
    bits.iter().fold(false, |acc, &b| acc ^ b)
}

/// Number of positions where the two slices differ.
pub fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Lowercase hex of the MSB-first packing.
pub fn to_hex(bits: &[bool]) -> String {
    pack_msb(bits).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parse a string of `0`/`1` characters.
pub fn from_str01(s: &str) -> Option<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        })
        .collect()
}
