//! Finite fields GF(p^k) of small order, used to index weak-design sets.
//!
//! Elements are integers in `0..q` whose base-p digits are the coefficients
//! of a polynomial over GF(p) (least significant digit first).

use super::ExtractError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimePowerField {
    p: u64,
    k: u32,
    q: u64,
    /// Multiplication table for proper extensions; prime fields use `%`.
    mul_table: Option<Vec<u32>>,
    add_table: Option<Vec<u32>>,
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// (p, k) with q = p^k, if q is a prime power.
pub fn prime_power(q: u64) -> Option<(u64, u32)> {
    if q < 2 {
        return None;
    }
    let p = (2..=q).find(|d| q.is_multiple_of(*d))?;
    let mut k = 0;
    let mut r = q;
    while r.is_multiple_of(p) {
        r /= p;
        k += 1;
    }
    (r == 1).then_some((p, k))
}

/// Smallest prime ≥ n.
pub fn next_prime(n: u64) -> u64 {
    (n.max(2)..).find(|&c| is_prime(c)).expect("primes are unbounded")
}

fn digits(x: u64, p: u64, k: u32) -> Vec<u64> {
    let mut v = Vec::with_capacity(k as usize);
    let mut x = x;
    for _ in 0..k {
        v.push(x % p);
        x /= p;
    }
    v
}

fn undigits(d: &[u64], p: u64) -> u64 {
    d.iter().rev().fold(0, |acc, &c| acc * p + c)
}

/// Product of polynomials over GF(p) reduced modulo the monic `modulus`
/// (given without its leading coefficient).
fn poly_mulmod(a: &[u64], b: &[u64], modulus: &[u64], p: u64) -> Vec<u64> {
    let k = modulus.len();
    let mut prod = vec![0u64; 2 * k];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            prod[i + j] = (prod[i + j] + x * y) % p;
        }
    }
    for deg in (k..2 * k).rev() {
        let c = prod[deg];
        if c != 0 {
            prod[deg] = 0;
            for (i, &m) in modulus.iter().enumerate() {
                prod[deg - k + i] = (prod[deg - k + i] + p - (c * m) % p) % p;
            }
        }
    }
    prod.truncate(k);
    prod
}

/// Whether the monic polynomial with lower coefficients `lower` has a monic
/// factor of degree 1..=deg/2, tested by trial division.
fn has_small_factor(lower: &[u64], p: u64) -> bool {
    let k = lower.len();
    let mut f: Vec<u64> = lower.to_vec();
    f.push(1);
    for d in 1..=k / 2 {
        let count = p.pow(d as u32);
        for code in 0..count {
            let mut g = digits(code, p, d as u32);
            g.push(1);
            let mut r = f.clone();
            for top in (d..=k).rev() {
                let c = r[top];
                if c != 0 {
                    for (i, &gi) in g.iter().enumerate() {
                        r[top - d + i] = (r[top - d + i] + p - (c * gi) % p) % p;
                    }
                }
            }
            if r[..d].iter().all(|&c| c == 0) {
                return true;
            }
        }
    }
    false
}

impl PrimePowerField {
    pub fn new(q: u64) -> Result<Self, ExtractError> {
        let (p, k) = prime_power(q).ok_or(ExtractError::NotPrimePower(q))?;
        if k == 1 {
            return Ok(Self { p, k, q, mul_table: None, add_table: None });
        }
        if q > 4096 {
            return Err(ExtractError::Param(format!("extension field of order {q} too large")));
        }
        let modulus = (0..p.pow(k))
            .map(|code| digits(code, p, k))
            .find(|lower| lower[0] != 0 && !has_small_factor(lower, p))
            .expect("irreducible polynomials exist in every degree");
        let n = q as usize;
        let mut mul = vec![0u32; n * n];
        let mut add = vec![0u32; n * n];
        for a in 0..q {
            let da = digits(a, p, k);
            for b in 0..q {
                let db = digits(b, p, k);
                let sum: Vec<u64> = da.iter().zip(&db).map(|(x, y)| (x + y) % p).collect();
                add[(a * q + b) as usize] = undigits(&sum, p) as u32;
                mul[(a * q + b) as usize] = undigits(&poly_mulmod(&da, &db, &modulus, p), p) as u32;
            }
        }
        Ok(Self { p, k, q, mul_table: Some(mul), add_table: Some(add) })
    }

    pub fn order(&self) -> u64 {
        self.q
    }

    pub fn characteristic(&self) -> u64 {
        self.p
    }

    pub fn extension_degree(&self) -> u32 {
        self.k
    }

    pub fn add(&self, a: u64, b: u64) -> u64 {
        match &self.add_table {
            Some(t) => t[(a * self.q + b) as usize] as u64,
            None => (a + b) % self.q,
        }
    }

    pub fn mul(&self, a: u64, b: u64) -> u64 {
        match &self.mul_table {
            Some(t) => t[(a * self.q + b) as usize] as u64,
            None => ((a as u128 * b as u128) % self.q as u128) as u64,
        }
    }

    /// Evaluate Σ c_j a^j by Horner's rule.
    pub fn eval(&self, coeffs: &[u64], a: u64) -> u64 {
        coeffs.iter().rev().fold(0, |acc, &c| self.add(self.mul(acc, a), c))
    }
}
