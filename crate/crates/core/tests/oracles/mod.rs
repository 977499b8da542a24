//! Brute-force reference implementations shared by the integration tests
//! and the acceptance harness. They follow the definitions directly and
//! share no code with the library.

#![allow(dead_code)]

/// Carry-less product of two GF(2)[x] polynomials of degree < 64.
fn clmul(a: u128, b: u128) -> u128 {
    let mut out = 0u128;
    for k in 0..128 {
        if (b >> k) & 1 == 1 {
            out ^= a << k;
        }
    }
    out
}

fn deg(p: u128) -> i32 {
    if p == 0 {
        -1
    } else {
        127 - p.leading_zeros() as i32
    }
}

fn rem(mut a: u128, m: u128) -> u128 {
    let dm = deg(m);
    while deg(a) >= dm {
        a ^= m << (deg(a) - dm);
    }
    a
}

/// Irreducibility by trial division with every polynomial of degree
/// 1..=ℓ/2.
pub fn irreducible(poly: u128, ell: u32) -> bool {
    for d in 1..=ell / 2 {
        for low in 0..(1u128 << d) {
            let q = (1u128 << d) | low;
            if rem(poly, q) == 0 {
                return false;
            }
        }
    }
    true
}

/// Modulus of GF(2^ℓ): the first irreducible trinomial x^ℓ + x^k + 1 by
/// increasing k, else the first irreducible pentanomial
/// x^ℓ + x^a + x^b + x^c + 1 with ℓ > a > b > c ≥ 1 in increasing (a, b, c).
pub fn field_modulus(ell: u32) -> u128 {
    let top = 1u128 << ell;
    if ell == 1 {
        return 0b11;
    }
    for k in 1..ell {
        let m = top | (1 << k) | 1;
        if irreducible(m, ell) {
            return m;
        }
    }
    for a in 3..ell {
        for b in 2..a {
            for c in 1..b {
                let m = top | (1 << a) | (1 << b) | (1 << c) | 1;
                if irreducible(m, ell) {
                    return m;
                }
            }
        }
    }
    panic!("no modulus for degree {ell}");
}

fn field_mul(a: u128, b: u128, modulus: u128) -> u128 {
    rem(clmul(a, b), modulus)
}

fn field_pow(a: u128, e: usize, modulus: u128) -> u128 {
    let mut out = 1u128;
    for _ in 0..e {
        out = field_mul(out, a, modulus);
    }
    out
}

fn bits_to_elem(bits: &[bool]) -> u128 {
    bits.iter().enumerate().map(|(k, &b)| (b as u128) << k).fold(0, |a, b| a | b)
}

/// Polynomial design sets for prime t: set i is {a·t + p_i(a) mod t}, where
/// p_i has the base-t digits of i as coefficients and the least degree d
/// with t^(d+1) ≥ m.
pub fn polynomial_design(m: usize, t: u64) -> Vec<Vec<usize>> {
    let mut d = 0u32;
    while (t as u128).pow(d + 1) < m as u128 {
        d += 1;
    }
    (0..m as u64)
        .map(|i| {
            let coeffs: Vec<u64> = (0..=d).map(|k| (i / t.pow(k)) % t).collect();
            (0..t)
                .map(|a| {
                    let v = coeffs.iter().enumerate().map(|(k, c)| c * a.pow(k as u32) % t).sum::<u64>() % t;
                    (a * t + v) as usize
                })
                .collect()
        })
        .collect()
}

/// Disjoint design: set i is [i·t, (i+1)·t).
pub fn block_design(m: usize, t: usize) -> Vec<Vec<usize>> {
    (0..m).map(|i| (i * t..(i + 1) * t).collect()).collect()
}

/// Trevisan output by definition: for each design set, the first 2ℓ seed
/// bits it selects give (α, β), and the output bit is the GF(2) inner
/// product of β with RS_x(α) = Σ_j x_j α^j, x_j being the ℓ-bit symbols
/// of the input.
pub fn trevisan(x: &[bool], m: usize, ell: u32, sets: &[Vec<usize>], seed: &[bool]) -> Vec<bool> {
    let modulus = field_modulus(ell);
    let symbols: Vec<u128> = x.chunks(ell as usize).map(bits_to_elem).collect();
    sets.iter()
        .take(m)
        .map(|set| {
            let y: Vec<bool> = set[..2 * ell as usize].iter().map(|&i| seed[i]).collect();
            let alpha = bits_to_elem(&y[..ell as usize]);
            let beta = bits_to_elem(&y[ell as usize..]);
            let rs = symbols
                .iter()
                .enumerate()
                .map(|(j, &s)| field_mul(s, field_pow(alpha, j, modulus), modulus))
                .fold(0, |a, b| a ^ b);
            (rs & beta).count_ones() % 2 == 1
        })
        .collect()
}

/// Toeplitz product by definition, with T[i][j] = s[j − i] for j ≥ i and
/// s[n − 1 + i − j] otherwise.
pub fn toeplitz(x: &[bool], m: usize, seed: &[bool]) -> Vec<bool> {
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

/// Maximum-cardinality matching of two sorted tick streams under
/// |t_A − (t_B − offset)| ≤ hw, choosing among maximum matchings the
/// lexicographically smallest sorted list of (a, b) index pairs.
///
/// The compatibility graph is split into connected components and each one
/// is solved by exhaustive enumeration.
pub fn exhaustive_matching(a: &[u64], b: &[u64], offset: i64, hw: i64) -> Vec<(usize, usize)> {
    let na = a.len();
    let mut edges = Vec::new();
    for (i, &ta) in a.iter().enumerate() {
        for (j, &tb) in b.iter().enumerate() {
            if ((tb as i64 - offset) - ta as i64).abs() <= hw {
                edges.push((i, j));
            }
        }
    }
    let mut parent: Vec<usize> = (0..na + b.len()).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for &(i, j) in &edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, na + j));
        parent[ri] = rj;
    }
    let mut components: std::collections::BTreeMap<usize, Vec<(usize, usize)>> = Default::default();
    for &(i, j) in &edges {
        let r = find(&mut parent, i);
        components.entry(r).or_default().push((i, j));
    }
    let mut out = Vec::new();
    for (_, comp) in components {
        out.extend(best_in_component(&comp));
    }
    out.sort();
    out
}

/// Every assignment of the component's Alice events to a compatible unused
/// Bob event or to nothing, keeping the largest and then lexicographically
/// smallest pair list.
fn best_in_component(edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut by_a: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &(i, j) in edges {
        by_a.entry(i).or_default().push(j);
    }
    let rows: Vec<(usize, Vec<usize>)> = by_a.into_iter().collect();
    let mut best = Vec::new();
    let mut current = Vec::new();
    let mut used = std::collections::HashSet::new();
    let mut leaves = 0u64;
    search(&rows, 0, &mut current, &mut used, &mut best, &mut leaves);
    best
}

fn search(
    rows: &[(usize, Vec<usize>)],
    k: usize,
    current: &mut Vec<(usize, usize)>,
    used: &mut std::collections::HashSet<usize>,
    best: &mut Vec<(usize, usize)>,
    leaves: &mut u64,
) {
    if k == rows.len() {
        *leaves += 1;
        assert!(*leaves < 50_000_000, "component too large to enumerate");
        if current.len() > best.len() || (current.len() == best.len() && *current < *best) {
            *best = current.clone();
        }
        return;
    }
    let (i, bs) = &rows[k];
    for &j in bs {
        if used.insert(j) {
            current.push((*i, j));
            search(rows, k + 1, current, used, best, leaves);
            current.pop();
            used.remove(&j);
        }
    }
    search(rows, k + 1, current, used, best, leaves);
}

/// NIST monobit test p-value.
pub fn monobit_p(bits: &[bool]) -> f64 {
    let s: i64 = bits.iter().map(|&b| if b { 1 } else { -1 }).sum();
    let z = s.unsigned_abs() as f64 / (bits.len() as f64).sqrt();
    statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

/// NIST serial test with block length 2: the two p-values from the first
/// and second differences of ψ² over cyclic overlapping patterns.
pub fn serial2_p(bits: &[bool]) -> (f64, f64) {
    let n = bits.len();
    let psi = |m: usize| -> f64 {
        if m == 0 {
            return 0.0;
        }
        let mut counts = vec![0u64; 1 << m];
        for i in 0..n {
            let mut v = 0usize;
            for k in 0..m {
                v = (v << 1) | bits[(i + k) % n] as usize;
            }
            counts[v] += 1;
        }
        let sum: f64 = counts.iter().map(|&c| (c as f64).powi(2)).sum();
        sum * (1u64 << m) as f64 / n as f64 - n as f64
    };
    let (p2, p1, p0) = (psi(2), psi(1), psi(0));
    let d1 = p2 - p1;
    let d2 = p2 - 2.0 * p1 + p0;
    // Upper regularized gamma: Q(1, x) = e^(−x) and Q(1/2, x) = erfc(√x).
    ((-d1 / 2.0).exp(), statrs::function::erf::erfc((d2 / 2.0).sqrt()))
}
