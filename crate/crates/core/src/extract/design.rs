//! Weak designs: families of seed-index sets with bounded pairwise overlap.

use serde::{Deserialize, Serialize};

use super::field::PrimePowerField;
use super::ExtractError;

/// Which weak design the Trevisan extractor uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// Polynomial design over GF(t): seed of t² bits, overlaps ≤ degree.
    #[default]
    Polynomial,
    /// Pairwise-disjoint t-bit segments: seed of m·t bits, overlaps 0.
    Block,
}

/// m subsets of `[universe]`, each of size t, with pairwise overlap ≤ `overlap`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakDesign {
    pub t: usize,
    pub universe: usize,
    pub overlap: usize,
    pub sets: Vec<Vec<u32>>,
}

impl WeakDesign {
    pub fn m(&self) -> usize {
        self.sets.len()
    }

    /// Largest pairwise intersection, computed exhaustively.
    pub fn max_overlap(&self) -> usize {
        let mut best = 0;
        for i in 0..self.sets.len() {
            for j in i + 1..self.sets.len() {
                best = best.max(sorted_intersection(&self.sets[i], &self.sets[j]));
            }
        }
        best
    }
}

fn sorted_intersection(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}

/// Smallest degree d ≤ `max_degree` with t^(d+1) ≥ m.
fn min_degree(m: usize, t: u64, max_degree: u32) -> Option<u32> {
    let mut cap: u128 = t as u128;
    for d in 0..=max_degree {
        if cap >= m as u128 {
            return Some(d);
        }
        cap = cap.saturating_mul(t as u128);
    }
    None
}

/// Polynomial (Nisan–Wigderson) design with the default maximum degree t − 1,
/// above which distinct coefficient vectors stop being distinct functions.
pub fn nw_weak_design(m: usize, t: u64) -> Result<WeakDesign, ExtractError> {
    nw_weak_design_with_max_degree(m, t, t.saturating_sub(1) as u32)
}

/// S_i = {a·t + p_i(a) : a ∈ GF(t)}, where the coefficients of p_i are the
/// base-t digits of i and the degree is the least one giving m polynomials.
/// Two distinct polynomials of degree ≤ d agree on at most d points.
pub fn nw_weak_design_with_max_degree(m: usize, t: u64, max_degree: u32) -> Result<WeakDesign, ExtractError> {
    if t < 2 {
        return Err(ExtractError::Param(format!("design field order {t} < 2")));
    }
    if m == 0 {
        return Err(ExtractError::Param("design needs at least one set".into()));
    }
    let field = PrimePowerField::new(t)?;
    let degree = min_degree(m, t, max_degree).ok_or_else(|| {
        ExtractError::Param(format!("{m} sets exceed t^(d+1) for t = {t} and maximum degree {max_degree}"))
    })?;
    let sets = (0..m as u64)
        .map(|i| {
            let mut coeffs = Vec::with_capacity(degree as usize + 1);
            let mut r = i;
            for _ in 0..=degree {
                coeffs.push(r % t);
                r /= t;
            }
            (0..t).map(|a| (a * t + field.eval(&coeffs, a)) as u32).collect()
        })
        .collect();
    Ok(WeakDesign { t: t as usize, universe: (t * t) as usize, overlap: degree as usize, sets })
}

/// Disjoint design: set i is `[i·t, (i+1)·t)`.
pub fn block_design(m: usize, t: usize) -> WeakDesign {
    let sets = (0..m).map(|i| ((i * t) as u32..((i + 1) * t) as u32).collect()).collect();
    WeakDesign { t, universe: m * t, overlap: 0, sets }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_set_is_constant_polynomial() {
        let d = nw_weak_design(1, 5).unwrap();
        assert_eq!(d.sets, vec![vec![0, 5, 10, 15, 20]]);
        assert_eq!(d.overlap, 0);
    }

    #[test]
    fn t4_m16_linear_design() {
        let d = nw_weak_design(16, 4).unwrap();
        assert_eq!(d.overlap, 1);
        assert!(d.max_overlap() <= 1);
        assert!(d.sets.iter().all(|s| s.len() == 4));
    }

    #[test]
    fn oversize_rejected() {
        assert!(nw_weak_design(5, 2).is_err());
        assert!(nw_weak_design_with_max_degree(17, 4, 1).is_err());
        assert!(nw_weak_design(3, 6).is_err());
    }

    #[test]
    fn exhaustive_overlap_bounds() {
        for t in [2u64, 3, 4, 5, 7, 8, 9, 11, 13, 16] {
            for m in [1usize, 2, 3, 5, 16, 17, 64, 100, 256] {
                let Ok(d) = nw_weak_design(m, t) else { continue };
                assert_eq!(d.m(), m);
                assert!(d.sets.iter().all(|s| s.len() == t as usize));
                assert!(d.sets.iter().flatten().all(|&x| (x as usize) < d.universe));
                assert!(d.max_overlap() <= d.overlap, "t {t} m {m}");
            }
        }
    }

    #[test]
    fn block_design_is_disjoint() {
        let d = block_design(10, 7);
        assert_eq!(d.max_overlap(), 0);
        assert_eq!(d.universe, 70);
    }
}
