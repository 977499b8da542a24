//! CASCADE information reconciliation.
//!
//! Bob drives the protocol and corrects his key toward Alice's. Each pass
//! shuffles the key with a permutation both parties derive from a shared
//! seed, splits it into blocks (size k1 in the first pass, doubling every
//! pass) and compares block parities. A block with odd relative parity holds
//! an odd number of errors, one of which is located by binary search over
//! sub-block parities. Every correction flips the parity of the blocks that
//! contain the bit in all other passes, which may expose further errors in
//! earlier passes; those are corrected in turn until no odd block remains.
//!
//! Alice only ever answers parity queries. Every parity she sends is one
//! leaked bit, and the only traffic is through a [`ParityOracle`], so the
//! leakage count equals the number of parity bits on the wire.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::parity;
use crate::extract::toeplitz;
use crate::netlink::{self, Body, CascadeParityReq, CascadeParityResp};
use crate::protocol::binary_entropy;
use crate::rng::{self, streams};

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("key length mismatch: Alice {alice}, Bob {bob}")]
    LengthMismatch { alice: usize, bob: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("parity range {start}..{end} of pass {pass} is invalid for {n} bits")]
    BadRange { pass: u8, start: u32, end: u32, n: usize },
    #[error("oracle returned {got} parities for {expected} ranges")]
    ParityCount { expected: usize, got: usize },
    #[error("channel failure: {0}")]
    Channel(String),
}

/// Rule for the first-pass block size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum K1Rule {
    /// k1 = ⌈coeff / Q⌉.
    Inverse { coeff: f64 },
    Fixed { k1: usize },
}

impl Default for K1Rule {
    fn default() -> Self {
        K1Rule::Inverse { coeff: 0.73 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeConfig {
    pub passes: u8,
    pub k1_rule: K1Rule,
    pub permutation_seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self { passes: 4, k1_rule: K1Rule::default(), permutation_seed: 0 }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<(), CascadeError> {
        if self.passes == 0 {
            return Err(CascadeError::InvalidParam("passes must be at least 1".into()));
        }
        match self.k1_rule {
            K1Rule::Inverse { coeff } if !(coeff > 0.0) => {
                Err(CascadeError::InvalidParam("k1 coefficient must be positive".into()))
            }
            K1Rule::Fixed { k1: 0 } => Err(CascadeError::InvalidParam("k1 must be positive".into())),
            _ => Ok(()),
        }
    }

    /// First-pass block size for `n` bits at QBER `q`, clamped to [4, n].
    pub fn k1(&self, q: f64, n: usize) -> usize {
        let raw = match self.k1_rule {
            K1Rule::Inverse { coeff } => {
                if q > 0.0 {
                    (coeff / q).ceil().min(usize::MAX as f64 / 4.0) as usize
                } else {
                    n
                }
            }
            K1Rule::Fixed { k1 } => k1,
        };
        raw.max(4).min(n.max(1))
    }

    /// Block size of pass `p` (0-based).
    pub fn block_size(&self, k1: usize, p: usize, n: usize) -> usize {
        k1.saturating_mul(1usize << p.min(40)).min(n.max(1))
    }
}

/// A contiguous range of positions in the permuted order of one pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParityRange {
    pub pass: u8,
    pub start: u32,
    pub end: u32,
}

/// Source of Alice's parities, one bit per requested range.
pub trait ParityOracle {
    fn parities(&mut self, ranges: &[ParityRange]) -> Result<Vec<bool>, CascadeError>;
}

/// The per-pass permutations both parties derive from the shared seed.
/// `perms[p][i]` is the key index at permuted position `i` of pass `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Permutations {
    perms: Vec<Vec<u32>>,
}

impl Permutations {
    pub fn new(n: usize, passes: u8, seed: u64) -> Self {
        let perms = (0..passes as u64)
            .map(|p| {
                let mut v: Vec<u32> = (0..n as u32).collect();
                v.shuffle(&mut rng::substream(seed, streams::PERMUTATION, p));
                v
            })
            .collect();
        Self { perms }
    }

    pub fn pass(&self, p: usize) -> &[u32] {
        &self.perms[p]
    }

    pub fn passes(&self) -> usize {
        self.perms.len()
    }

    pub fn n(&self) -> usize {
        self.perms.first().map_or(0, |p| p.len())
    }
}

/// Alice's side: answers parity queries from prefix parities of her
/// permuted key.
#[derive(Debug, Clone)]
pub struct ParityResponder {
    prefix: Vec<Vec<bool>>,
}

impl ParityResponder {
    pub fn new(key_a: &[bool], perms: &Permutations) -> Result<Self, CascadeError> {
        if perms.n() != key_a.len() && perms.passes() > 0 {
            return Err(CascadeError::LengthMismatch { alice: key_a.len(), bob: perms.n() });
        }
        let prefix = (0..perms.passes())
            .map(|p| {
                let mut acc = false;
                let mut v = Vec::with_capacity(key_a.len() + 1);
                v.push(false);
                for &i in perms.pass(p) {
                    acc ^= key_a[i as usize];
                    v.push(acc);
                }
                v
            })
            .collect();
        Ok(Self { prefix })
    }

    pub fn parity(&self, r: &ParityRange) -> Result<bool, CascadeError> {
        let pre = self.prefix.get(r.pass as usize).ok_or(CascadeError::BadRange {
            pass: r.pass,
            start: r.start,
            end: r.end,
            n: 0,
        })?;
        let n = pre.len() - 1;
        if r.start > r.end || r.end as usize > n {
            return Err(CascadeError::BadRange { pass: r.pass, start: r.start, end: r.end, n });
        }
        Ok(pre[r.end as usize] ^ pre[r.start as usize])
    }

    pub fn answer(&self, ranges: &[ParityRange]) -> Result<Vec<bool>, CascadeError> {
        ranges.iter().map(|r| self.parity(r)).collect()
    }
}

/// In-process oracle backed by Alice's responder.
pub struct LocalOracle<'a> {
    pub responder: &'a ParityResponder,
    pub parities_sent: u64,
}

impl ParityOracle for LocalOracle<'_> {
    fn parities(&mut self, ranges: &[ParityRange]) -> Result<Vec<bool>, CascadeError> {
        let out = self.responder.answer(ranges)?;
        self.parities_sent += out.len() as u64;
        Ok(out)
    }
}

/// In-process oracle that routes every exchange through the wire format and
/// records the encoded request/response frames.
pub struct TranscriptOracle<'a> {
    pub responder: &'a ParityResponder,
    pub block: u32,
    pub frame_id: u32,
    pub perm_seed: u64,
    pub n_bits: u32,
    pub transcript: Vec<u8>,
}

impl ParityOracle for TranscriptOracle<'_> {
    fn parities(&mut self, ranges: &[ParityRange]) -> Result<Vec<bool>, CascadeError> {
        let req = Body::CascadeParityReq(CascadeParityReq {
            block: self.block,
            perm_seed: self.perm_seed,
            n_bits: self.n_bits,
            ranges: ranges.to_vec(),
        });
        let bytes = netlink::encode(&req.to_message(self.frame_id)).map_err(|e| CascadeError::Channel(e.to_string()))?;
        self.transcript.extend_from_slice(&bytes);
        let (msg, _) = netlink::decode(&bytes).map_err(|e| CascadeError::Channel(e.to_string()))?;
        let Body::CascadeParityReq(req) = Body::from_message(&msg).map_err(|e| CascadeError::Channel(e.to_string()))?
        else {
            return Err(CascadeError::Channel("unexpected message".into()));
        };
        let parities = self.responder.answer(&req.ranges)?;
        let resp = Body::CascadeParityResp(CascadeParityResp { block: self.block, parities });
        let bytes = netlink::encode(&resp.to_message(self.frame_id)).map_err(|e| CascadeError::Channel(e.to_string()))?;
        self.transcript.extend_from_slice(&bytes);
        let (msg, _) = netlink::decode(&bytes).map_err(|e| CascadeError::Channel(e.to_string()))?;
        match Body::from_message(&msg).map_err(|e| CascadeError::Channel(e.to_string()))? {
            Body::CascadeParityResp(r) => Ok(r.parities),
            _ => Err(CascadeError::Channel("unexpected message".into())),
        }
    }
}

/// Bisection state of one binary search over `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Search {
    pass: u8,
    start: usize,
    end: usize,
}

impl Search {
    fn done(&self) -> bool {
        self.end - self.start <= 1
    }

    fn mid(&self) -> usize {
        self.start + (self.end - self.start) / 2
    }

    fn query(&self) -> ParityRange {
        ParityRange { pass: self.pass, start: self.start as u32, end: self.mid() as u32 }
    }

    /// Narrow to the half with odd relative parity.
    fn update(&mut self, alice_left: bool, bob_left: bool) {
        let mid = self.mid();
        if alice_left != bob_left {
            self.end = mid;
        } else {
            self.start = mid;
        }
    }
}

/// Locate the single error of a block with odd relative parity by bisection.
///
/// `alice_parity(start, end)` supplies Alice's parity of `block[start..end]`.
/// Returns the error index and the number of parities exchanged, which is
/// ⌈log₂ k⌉ at most for a block of length k.
pub fn binary_search_error(
    block_b: &[bool],
    mut alice_parity: impl FnMut(usize, usize) -> Result<bool, CascadeError>,
) -> Result<(usize, usize), CascadeError> {
    if block_b.is_empty() {
        return Err(CascadeError::InvalidParam("empty block".into()));
    }
    let mut s = Search { pass: 0, start: 0, end: block_b.len() };
    let mut exchanges = 0;
    while !s.done() {
        let r = s.query();
        let a = alice_parity(r.start as usize, r.end as usize)?;
        exchanges += 1;
        s.update(a, parity(&block_b[r.start as usize..r.end as usize]));
    }
    Ok((s.start, exchanges))
}

/// Bob's result of a CASCADE run.
#[derive(Debug, Clone, PartialEq)]
pub struct BobOutcome {
    pub corrected: Vec<bool>,
    pub parities_received: u64,
    pub corrections: usize,
    pub rounds: usize,
}

struct BobState<'a> {
    key: Vec<bool>,
    perms: &'a Permutations,
    /// pos_in_pass[p][key index] = permuted position.
    pos_in_pass: Vec<Vec<u32>>,
    block_sizes: Vec<usize>,
    alice_block_parity: Vec<Vec<bool>>,
    bob_block_parity: Vec<Vec<bool>>,
}

impl BobState<'_> {
    fn range_parity(&self, pass: usize, start: usize, end: usize) -> bool {
        let perm = self.perms.pass(pass);
        perm[start..end].iter().fold(false, |acc, &i| acc ^ self.key[i as usize])
    }

    fn flip(&mut self, idx: usize, active_passes: usize) {
        self.key[idx] = !self.key[idx];
        for p in 0..active_passes {
            let b = self.pos_in_pass[p][idx] as usize / self.block_sizes[p];
            self.bob_block_parity[p][b] = !self.bob_block_parity[p][b];
        }
    }

    fn odd_blocks(&self, pass: usize) -> Vec<usize> {
        (0..self.alice_block_parity[pass].len())
            .filter(|&b| self.alice_block_parity[pass][b] != self.bob_block_parity[pass][b])
            .collect()
    }
}

/// Run CASCADE from Bob's side against an oracle for Alice's parities.
pub fn reconcile_bob(
    key_b: &[bool],
    q_est: f64,
    cfg: &CascadeConfig,
    oracle: &mut dyn ParityOracle,
) -> Result<BobOutcome, CascadeError> {
    cfg.validate()?;
    let n = key_b.len();
    let mut out = BobOutcome { corrected: key_b.to_vec(), parities_received: 0, corrections: 0, rounds: 0 };
    if n == 0 || q_est <= 0.0 {
        return Ok(out);
    }
    let perms = Permutations::new(n, cfg.passes, cfg.permutation_seed);
    let k1 = cfg.k1(q_est, n);
    let passes = cfg.passes as usize;
    let mut st = BobState {
        key: key_b.to_vec(),
        perms: &perms,
        pos_in_pass: (0..passes)
            .map(|p| {
                let mut inv = vec![0u32; n];
                for (pos, &i) in perms.pass(p).iter().enumerate() {
                    inv[i as usize] = pos as u32;
                }
                inv
            })
            .collect(),
        block_sizes: (0..passes).map(|p| cfg.block_size(k1, p, n)).collect(),
        alice_block_parity: Vec::new(),
        bob_block_parity: Vec::new(),
    };

    let mut ask = |ranges: &[ParityRange], out: &mut BobOutcome| -> Result<Vec<bool>, CascadeError> {
        let got = oracle.parities(ranges)?;
        if got.len() != ranges.len() {
            return Err(CascadeError::ParityCount { expected: ranges.len(), got: got.len() });
        }
        out.parities_received += got.len() as u64;
        out.rounds += 1;
        Ok(got)
    };

    for p in 0..passes {
        let k = st.block_sizes[p];
        let n_blocks = n.div_ceil(k);
        let ranges: Vec<ParityRange> = (0..n_blocks)
            .map(|b| ParityRange { pass: p as u8, start: (b * k) as u32, end: ((b + 1) * k).min(n) as u32 })
            .collect();
        let alice = ask(&ranges, &mut out)?;
        let bob: Vec<bool> =
            ranges.iter().map(|r| st.range_parity(p, r.start as usize, r.end as usize)).collect();
        st.alice_block_parity.push(alice);
        st.bob_block_parity.push(bob);

        while let Some(q) = (0..=p).find(|&q| !st.odd_blocks(q).is_empty()) {
            let kq = st.block_sizes[q];
            let mut searches: Vec<Search> = st
                .odd_blocks(q)
                .into_iter()
                .map(|b| Search { pass: q as u8, start: b * kq, end: ((b + 1) * kq).min(n) })
                .collect();
            while searches.iter().any(|s| !s.done()) {
                let pending: Vec<usize> = (0..searches.len()).filter(|&i| !searches[i].done()).collect();
                let queries: Vec<ParityRange> = pending.iter().map(|&i| searches[i].query()).collect();
                let alice = ask(&queries, &mut out)?;
                for ((&i, r), a) in pending.iter().zip(&queries).zip(alice) {
                    let b = st.range_parity(q, r.start as usize, r.end as usize);
                    searches[i].update(a, b);
                }
            }
            for s in searches {
                let idx = perms.pass(q)[s.start] as usize;
                st.flip(idx, p + 1);
                out.corrections += 1;
            }
        }
    }
    out.corrected = st.key;
    Ok(out)
}

/// Result of an in-process CASCADE run including verification.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconciliationResult {
    pub corrected_key: Vec<bool>,
    /// Parity bits plus the 64-bit verification tag.
    pub leaked_bits: u64,
    pub f_ec_realized: f64,
    pub residual_error_detected: bool,
    pub corrections: usize,
    /// Encoded request/response frames of the parity exchange.
    pub transcript: Vec<u8>,
}

/// Bits disclosed by the verification hash.
pub const VERIFY_TAG_BITS: u64 = 64;

/// Compare 64-bit Toeplitz hashes of the two keys under a public seed.
pub fn verify_corrected(key_a: &[bool], key_b: &[bool], hash_seed: u64) -> bool {
    key_a.len() == key_b.len() && toeplitz::hash64(key_a, hash_seed) == toeplitz::hash64(key_b, hash_seed)
}

/// Realized efficiency: leaked bits over n·h(Q).
pub fn f_ec(leaked: u64, n: usize, q: f64) -> f64 {
    let shannon = n as f64 * binary_entropy(q);
    if shannon > 0.0 {
        leaked as f64 / shannon
    } else {
        0.0
    }
}

/// Reconcile `key_b` toward `key_a` in-process, routing every parity through
/// the wire format, then verify with a 64-bit hash.
pub fn cascade(key_a: &[bool], key_b: &[bool], q_est: f64, cfg: &CascadeConfig) -> Result<ReconciliationResult, CascadeError> {
    if key_a.len() != key_b.len() {
        return Err(CascadeError::LengthMismatch { alice: key_a.len(), bob: key_b.len() });
    }
    if !(0.0..0.5).contains(&q_est) {
        return Err(CascadeError::InvalidParam(format!("Q_est {q_est} outside [0, 0.5)")));
    }
    let n = key_a.len();
    let perms = Permutations::new(n, cfg.passes, cfg.permutation_seed);
    let responder = ParityResponder::new(key_a, &perms)?;
    let mut oracle = TranscriptOracle {
        responder: &responder,
        block: 0,
        frame_id: 0,
        perm_seed: cfg.permutation_seed,
        n_bits: n as u32,
        transcript: Vec::new(),
    };
    let bob = reconcile_bob(key_b, q_est, cfg, &mut oracle)?;
    let hash_seed = rng::derive_u64(cfg.permutation_seed, streams::CONFIRM, 0);
    let ok = verify_corrected(key_a, &bob.corrected, hash_seed);
    let leaked = bob.parities_received + VERIFY_TAG_BITS;
    Ok(ReconciliationResult {
        corrected_key: bob.corrected,
        leaked_bits: leaked,
        f_ec_realized: f_ec(leaked, n, q_est),
        residual_error_detected: !ok,
        corrections: bob.corrections,
        transcript: oracle.transcript,
    })
}

/// Count parity bits in the CASCADE_PARITY_RESP frames of a transcript.
pub fn transcript_parity_bits(transcript: &[u8]) -> Result<u64, netlink::NetError> {
    let mut rest = transcript;
    let mut total = 0u64;
    while !rest.is_empty() {
        let (msg, r) = netlink::decode(rest)?;
        if let Body::CascadeParityResp(resp) = Body::from_message(&msg)? {
            total += resp.parities.len() as u64;
        }
        rest = r;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::hamming;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_key(rng: &mut impl Rng, n: usize) -> Vec<bool> {
        (0..n).map(|_| rng.random()).collect()
    }

    #[test]
    fn identical_keys_leak_only_top_level_parities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let key = random_key(&mut rng, 1024);
        let cfg = CascadeConfig { permutation_seed: 11, ..Default::default() };
        let r = cascade(&key, &key, 0.05, &cfg).unwrap();
        assert_eq!(r.corrections, 0);
        let k1 = cfg.k1(0.05, 1024);
        assert_eq!(k1, 15);
        let expected: usize = (0..4).map(|p| 1024usize.div_ceil(cfg.block_size(k1, p, 1024))).sum();
        assert_eq!(r.leaked_bits, expected as u64 + VERIFY_TAG_BITS);
        assert!(!r.residual_error_detected);
    }

    #[test]
    fn single_flip_is_corrected_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..50 {
            let a = random_key(&mut rng, 64);
            let mut b = a.clone();
            let pos = rng.random_range(0..64);
            b[pos] = !b[pos];
            let cfg = CascadeConfig { permutation_seed: trial, ..Default::default() };
            let r = cascade(&a, &b, 0.05, &cfg).unwrap();
            assert_eq!(r.corrected_key, a);
            let k1 = cfg.k1(0.05, 64);
            let top: u64 = (0..4).map(|p| 64usize.div_ceil(cfg.block_size(k1, p, 64)) as u64).sum();
            let parity_bits = r.leaked_bits - VERIFY_TAG_BITS;
            assert!(parity_bits <= top + 4 * 6, "{parity_bits}");
            assert_eq!(transcript_parity_bits(&r.transcript).unwrap(), parity_bits);
        }
    }

    #[test]
    fn binary_search_examples() {
        let (idx, ex) = binary_search_error(&[true], |_, _| Ok(false)).unwrap();
        assert_eq!((idx, ex), (0, 0));
        let a = vec![false; 8];
        let mut b = a.clone();
        b[5] = true;
        let (idx, ex) = binary_search_error(&b, |s, e| Ok(parity(&a[s..e]))).unwrap();
        assert_eq!((idx, ex), (5, 3));
    }

    #[test]
    fn binary_search_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let a = random_key(&mut rng, 64);
            let mut b = a.clone();
            let pos = rng.random_range(0..64);
            b[pos] = !b[pos];
            let brute = (0..64).find(|&i| a[i] != b[i]).unwrap();
            let (idx, ex) = binary_search_error(&b, |s, e| Ok(parity(&a[s..e]))).unwrap();
            assert_eq!(idx, brute);
            assert_eq!(ex, 6);
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let cfg = CascadeConfig::default();
        assert!(matches!(cascade(&[true], &[true, false], 0.05, &cfg), Err(CascadeError::LengthMismatch { .. })));
    }

    #[test]
    fn zero_qber_skips_to_verification() {
        let a = vec![true, false, true, true];
        let r = cascade(&a, &a, 0.0, &CascadeConfig::default()).unwrap();
        assert_eq!(r.leaked_bits, VERIFY_TAG_BITS);
        assert!(r.transcript.is_empty());
    }

    #[test]
    fn corrects_typical_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_key(&mut rng, 10_000);
        let b: Vec<bool> = a.iter().map(|&x| x ^ (rng.random::<f64>() < 0.07)).collect();
        let cfg = CascadeConfig { permutation_seed: 99, ..Default::default() };
        let r = cascade(&a, &b, 0.07, &cfg).unwrap();
        assert_eq!(hamming(&r.corrected_key, &a), 0);
        assert_eq!(r.corrections, hamming(&a, &b));
        assert!(r.f_ec_realized > 1.0 && r.f_ec_realized < 1.5, "{}", r.f_ec_realized);
    }

    #[test]
    fn verification_detects_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_key(&mut rng, 500);
        let mut b = a.clone();
        assert!(verify_corrected(&a, &b, 7));
        b[100] = !b[100];
        assert!(!verify_corrected(&a, &b, 7));
    }

    proptest! {
        #[test]
        fn responder_matches_direct_parity(seed in 0u64..1000, n in 1usize..300, s in 0usize..300, e in 0usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let key = random_key(&mut rng, n);
            let perms = Permutations::new(n, 3, seed);
            let resp = ParityResponder::new(&key, &perms).unwrap();
            let (s, e) = (s.min(n), e.min(n));
            let (s, e) = if s <= e { (s, e) } else { (e, s) };
            for p in 0..3u8 {
                let direct = perms.pass(p as usize)[s..e].iter().fold(false, |acc, &i| acc ^ key[i as usize]);
                prop_assert_eq!(resp.parity(&ParityRange { pass: p, start: s as u32, end: e as u32 }).unwrap(), direct);
            }
        }
    }
}
