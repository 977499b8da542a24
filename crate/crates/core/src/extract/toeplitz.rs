//! Toeplitz hashing over GF(2).
//!
//! The seed s of length n + m − 1 defines T[i][j] = s[j − i] for j ≥ i and
//! T[i][j] = s[n − 1 + i − j] for j < i: the first row is s[0..n] and each
//! further row shifts right by one, taking its new leading entry from the
//! tail of the seed.

use rand::RngCore;

use super::ExtractError;
use crate::rng;

fn pack_lsb(bits: impl ExactSizeIterator<Item = bool>) -> Vec<u64> {
    let n = bits.len();
    let mut words = vec![0u64; n.div_ceil(64) + 1];
    for (i, b) in bits.enumerate() {
        if b {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    words
}

fn window(words: &[u64], pos: usize) -> u64 {
    let (w, off) = (pos / 64, pos % 64);
    let lo = words.get(w).copied().unwrap_or(0);
    if off == 0 {
        lo
    } else {
        let hi = words.get(w + 1).copied().unwrap_or(0);
        (lo >> off) | (hi << (64 - off))
    }
}

/// y = T·x over GF(2) for the Toeplitz matrix defined by `seed`.
pub fn toeplitz_extract(x: &[bool], m: usize, seed: &[bool]) -> Result<Vec<bool>, ExtractError> {
    let n = x.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    if n == 0 {
        return Ok(vec![false; m]);
    }
    if seed.len() != n + m - 1 {
        return Err(ExtractError::SeedLength { expected: n + m - 1, got: seed.len() });
    }
    // Diagonal k = j − i runs over −(m−1)..n−1; store it at index k + m − 1.
    let diag = (0..n + m - 1).map(|idx| {
        let k = idx as i64 - (m as i64 - 1);
        if k >= 0 {
            seed[k as usize]
        } else {
            seed[(n as i64 - 1 - k) as usize]
        }
    });
    let d = pack_lsb(diag);
    let xw = pack_lsb(x.iter().copied());
    let n_words = n.div_ceil(64);
    Ok((0..m)
        .map(|i| {
            let start = m - 1 - i;
            let acc = (0..n_words).fold(0u64, |acc, w| acc ^ (xw[w] & window(&d, start + 64 * w)));
            acc.count_ones() % 2 == 1
        })
        .collect())
}

/// Reference entry-by-entry evaluation of the same matrix product.
pub fn toeplitz_naive(x: &[bool], m: usize, seed: &[bool]) -> Vec<bool> {
    let n = x.len();
    (0..m)
        .map(|i| {
            (0..n).fold(false, |acc, j| {
                let t = if j >= i { seed[j - i] } else { seed[n - 1 + i - j] };
                acc ^ (t & x[j])
            })
        })
        .collect()
}

/// `len` pseudorandom seed bits expanded from a 64-bit seed.
pub fn seed_bits_from_u64(seed: u64, len: usize) -> Vec<bool> {
    let mut rng = rng::substream(seed, "toeplitz-seed", 0);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let w = rng.next_u64();
        for k in 0..64 {
            if out.len() == len {
                break;
            }
            out.push((w >> k) & 1 == 1);
        }
    }
    out
}

/// 64-bit Toeplitz hash of a key under a public 64-bit seed. The key length
/// is mixed in so that keys of different lengths hash differently.
pub fn hash64(key: &[bool], seed: u64) -> u64 {
    let mut input = key.to_vec();
    input.extend((0..64).map(|k| (key.len() as u64 >> k) & 1 == 1));
    let seed_bits = seed_bits_from_u64(seed, input.len() + 63);
    let y = toeplitz_extract(&input, 64, &seed_bits).expect("seed length matches");
    y.iter().enumerate().fold(0u64, |acc, (k, &b)| acc | ((b as u64) << k))
}
