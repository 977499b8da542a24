//! Trevisan's extractor with a Reed–Solomon ∘ Hadamard one-bit extractor.
//!
//! The input x is split into ℓ-bit symbols read as elements of GF(2^ℓ).
//! For a 2ℓ-bit seed (α, β) the one-bit extractor outputs ⟨RS_x(α), β⟩ over
//! GF(2), where RS_x(α) = Σ_j x_j α^j. Output bit i applies it to the seed
//! bits selected by set S_i of a weak design, taking the first 2ℓ of the t
//! selected bits in increasing index order.

use super::design::{block_design, nw_weak_design, DesignKind, WeakDesign};
use super::field::next_prime;
use super::gf2poly::{Gf2Field, MAX_DEGREE};
use super::ExtractError;

/// Resolved parameters of one Trevisan extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrevisanParams {
    pub n: usize,
    pub m: usize,
    /// Symbol size of the Reed–Solomon code.
    pub ell: u32,
    pub field: Gf2Field,
    pub design: WeakDesign,
}

/// Symbol size ⌈log₂ n + 2·log₂(2m/ε)⌉ giving per-bit error ε/(2m), capped
/// at the largest supported field.
pub fn symbol_size(n: usize, m: usize, eps: f64) -> u32 {
    let raw = (n.max(2) as f64).log2() + 2.0 * (2.0 * m.max(1) as f64 / eps).log2();
    (raw.ceil() as u32).clamp(1, MAX_DEGREE)
}

impl TrevisanParams {
    /// Parameters for extracting m bits from n with error `eps`. The
    /// one-bit seed length t is the smallest prime ≥ 2ℓ.
    pub fn new(n: usize, m: usize, eps: f64, kind: DesignKind) -> Result<Self, ExtractError> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(ExtractError::Param(format!("eps {eps} outside (0, 1)")));
        }
        let ell = symbol_size(n, m, eps);
        let t = next_prime(2 * ell as u64);
        Self::explicit(n, m, ell, t, kind)
    }

    /// Parameters with an explicit symbol size and design field order t ≥ 2ℓ.
    pub fn explicit(n: usize, m: usize, ell: u32, t: u64, kind: DesignKind) -> Result<Self, ExtractError> {
        if m > n {
            return Err(ExtractError::Param(format!("output length {m} exceeds input length {n}")));
        }
        if ell == 0 || ell > MAX_DEGREE {
            return Err(ExtractError::Param(format!("symbol size {ell} unsupported")));
        }
        if t < 2 * ell as u64 {
            return Err(ExtractError::Param(format!("design set size {t} below one-bit seed length {}", 2 * ell)));
        }
        let design = match kind {
            DesignKind::Polynomial => nw_weak_design(m.max(1), t)?,
            DesignKind::Block => block_design(m.max(1), t as usize),
        };
        Ok(Self { n, m, ell, field: Gf2Field::new(ell), design })
    }

    pub fn seed_len(&self) -> usize {
        self.design.universe
    }
}

/// Input split into ℓ-bit symbols, bit k of a symbol being the coefficient of x^k.
pub fn symbols(x: &[bool], ell: u32) -> Vec<u128> {
    x.chunks(ell as usize)
        .map(|c| c.iter().enumerate().fold(0u128, |acc, (k, &b)| acc | ((b as u128) << k)))
        .collect()
}

fn element(bits: &[bool]) -> u128 {
    bits.iter().enumerate().fold(0u128, |acc, (k, &b)| acc | ((b as u128) << k))
}

/// One-bit extractor ⟨RS_x(α), β⟩ on pre-split symbols; `y` holds α then β.
pub fn one_bit(field: &Gf2Field, syms: &[u128], y: &[bool]) -> bool {
    let ell = field.degree() as usize;
    let alpha = element(&y[..ell]);
    let beta = element(&y[ell..2 * ell]);
    let rs = syms.iter().rev().fold(0u128, |acc, &s| field.mul(acc, alpha) ^ s);
    (rs & beta).count_ones() % 2 == 1
}

/// Extract `params.m` bits from x with a seed of `params.seed_len()` bits.
pub fn trevisan_extract(x: &[bool], params: &TrevisanParams, seed: &[bool]) -> Result<Vec<bool>, ExtractError> {
    if x.len() != params.n {
        return Err(ExtractError::Param(format!("input has {} bits, parameters expect {}", x.len(), params.n)));
    }
    if params.m == 0 {
        return Ok(Vec::new());
    }
    if seed.len() != params.seed_len() {
        return Err(ExtractError::SeedLength { expected: params.seed_len(), got: seed.len() });
    }
    let syms = symbols(x, params.ell);
    let two_ell = 2 * params.ell as usize;
    let mut y = Vec::with_capacity(two_ell);
    Ok(params
        .design
        .sets
        .iter()
        .take(params.m)
        .map(|set| {
            y.clear();
            y.extend(set[..two_ell].iter().map(|&i| seed[i as usize]));
            one_bit(&params.field, &syms, &y)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::toeplitz::seed_bits_from_u64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_output() {
        let p = TrevisanParams::new(64, 0, 1e-6, DesignKind::Polynomial).unwrap();
        assert!(trevisan_extract(&[false; 64], &p, &[]).unwrap().is_empty());
    }

    #[test]
    fn seed_bits_outside_sets_are_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = TrevisanParams::explicit(40, 6, 4, 11, DesignKind::Polynomial).unwrap();
        let x: Vec<bool> = (0..40).map(|_| rng.random()).collect();
        let seed = seed_bits_from_u64(3, p.seed_len());
        let used: std::collections::BTreeSet<u32> =
            p.design.sets.iter().flat_map(|s| s[..8].iter().copied()).collect();
        let unused = (0..p.seed_len() as u32).find(|i| !used.contains(i)).unwrap();
        let mut other = seed.clone();
        other[unused as usize] = !other[unused as usize];
        assert_eq!(trevisan_extract(&x, &p, &seed).unwrap(), trevisan_extract(&x, &p, &other).unwrap());
    }

    #[test]
    fn rejects_bad_lengths() {
        let p = TrevisanParams::explicit(16, 2, 3, 7, DesignKind::Polynomial).unwrap();
        assert!(trevisan_extract(&[false; 15], &p, &[false; 49]).is_err());
        assert!(trevisan_extract(&[false; 16], &p, &[false; 48]).is_err());
        assert!(TrevisanParams::explicit(16, 17, 3, 7, DesignKind::Polynomial).is_err());
        assert!(TrevisanParams::explicit(16, 2, 4, 7, DesignKind::Polynomial).is_err());
    }

    #[test]
    fn default_parameters_for_typical_block() {
        let p = TrevisanParams::new(10_000, 1553, 1e-6, DesignKind::Polynomial).unwrap();
        assert_eq!(p.ell, 77);
        assert_eq!(p.design.t, 157);
        assert_eq!(p.seed_len(), 157 * 157);
        assert_eq!(p.design.overlap, 1);
    }
}
