//! Arithmetic in GF(2^ℓ) for ℓ ≤ 127, with elements stored in `u128` and
//! bit k holding the coefficient of x^k.

/// Largest supported extension degree.
pub const MAX_DEGREE: u32 = 127;

/// Degree of a non-zero GF(2)[x] polynomial.
fn degree(p: u128) -> i32 {
    127 - p.leading_zeros() as i32
}

/// Remainder of `a` modulo `m` in GF(2)[x].
fn poly_mod(mut a: u128, m: u128) -> u128 {
    let dm = degree(m);
    while a != 0 && degree(a) >= dm {
        a ^= m << (degree(a) - dm);
    }
    a
}

fn poly_gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let r = poly_mod(a, b);
        a = b;
        b = r;
    }
    a
}

/// The field GF(2^ℓ) defined by an irreducible polynomial of degree ℓ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gf2Field {
    ell: u32,
    /// Full modulus including the x^ℓ term.
    modulus: u128,
}

impl Gf2Field {
    /// The field with a deterministically chosen modulus: the first
    /// irreducible trinomial x^ℓ + x^k + 1 in increasing k, otherwise the
    /// first irreducible pentanomial in lexicographic order.
    pub fn new(ell: u32) -> Self {
        assert!((1..=MAX_DEGREE).contains(&ell), "extension degree {ell} unsupported");
        let top = 1u128 << ell;
        if ell == 1 {
            return Self { ell, modulus: 0b11 };
        }
        for k in 1..ell {
            let m = top | (1 << k) | 1;
            if is_irreducible(m, ell) {
                return Self { ell, modulus: m };
            }
        }
        for a in 3..ell {
            for b in 2..a {
                for c in 1..b {
                    let m = top | (1 << a) | (1 << b) | (1 << c) | 1;
                    if is_irreducible(m, ell) {
                        return Self { ell, modulus: m };
                    }
                }
            }
        }
        unreachable!("no irreducible polynomial found for degree {ell}")
    }

    /// Field with an explicit modulus (including the x^ℓ term).
    pub fn with_modulus(modulus: u128) -> Option<Self> {
        let ell = degree(modulus);
        if ell < 1 || ell as u32 > MAX_DEGREE || !is_irreducible(modulus, ell as u32) {
            return None;
        }
        Some(Self { ell: ell as u32, modulus })
    }

    pub fn degree(&self) -> u32 {
        self.ell
    }

    pub fn modulus(&self) -> u128 {
        self.modulus
    }

    pub fn mul(&self, mut a: u128, mut b: u128) -> u128 {
        let top = 1u128 << self.ell;
        let mut r = 0u128;
        while b != 0 {
            if b & 1 == 1 {
                r ^= a;
            }
            b >>= 1;
            a <<= 1;
            if a & top != 0 {
                a ^= self.modulus;
            }
        }
        r
    }
}

/// Ben-Or irreducibility test: f of degree ℓ is irreducible iff
/// gcd(x^(2^i) − x mod f, f) = 1 for every 1 ≤ i ≤ ℓ/2.
pub fn is_irreducible(f: u128, ell: u32) -> bool {
    if degree(f) != ell as i32 || f & 1 == 0 {
        return false;
    }
    let field = Gf2Field { ell, modulus: f };
    let x = poly_mod(0b10, f);
    let mut xp = x;
    for _ in 1..=ell / 2 {
        xp = field.mul(xp, xp);
        if poly_gcd(f, xp ^ x) != 1 {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_fields_known_moduli() {
        assert_eq!(Gf2Field::new(2).modulus(), 0b111);
        assert_eq!(Gf2Field::new(3).modulus(), 0b1011);
        assert_eq!(Gf2Field::new(8).modulus(), 0b1_0001_1011);
        assert!(!is_irreducible(0b101, 2));
    }

    #[test]
    fn multiplicative_group_order() {
        for ell in 2..=10u32 {
            let f = Gf2Field::new(ell);
            let order = (1u128 << ell) - 1;
            for a in 1..(1u128 << ell).min(64) {
                let mut p = 1u128;
                let mut base = a;
                let mut e = order;
                while e > 0 {
                    if e & 1 == 1 {
                        p = f.mul(p, base);
                    }
                    base = f.mul(base, base);
                    e >>= 1;
                }
                assert_eq!(p, 1, "ell {ell} a {a}");
            }
        }
    }

    #[test]
    fn all_degrees_construct() {
        for ell in 1..=MAX_DEGREE {
            let f = Gf2Field::new(ell);
            assert_eq!(f.degree(), ell);
        }
    }
}
