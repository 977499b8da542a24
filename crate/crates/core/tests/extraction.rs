mod oracles;

use qkd_core::extract::{
    extract, output_length, random_seed, toeplitz_extract, trevisan_extract, Backend, DesignKind, ExtractorParams,
    TrevisanParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inputs(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<bool>> {
    if n <= 10 {
        (0..1u32 << n).map(|v| (0..n).map(|k| v >> k & 1 == 1).collect()).collect()
    } else {
        (0..64).map(|_| (0..n).map(|_| rng.random()).collect()).collect()
    }
}

fn oracle_sets(p: &TrevisanParams, kind: DesignKind) -> Vec<Vec<usize>> {
    let t = p.design.t;
    match kind {
        DesignKind::Polynomial => oracles::polynomial_design(p.m.max(1), t as u64),
        DesignKind::Block => oracles::block_design(p.m.max(1), t),
    }
}

#[test]
fn trevisan_matches_definition_for_small_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for kind in [DesignKind::Polynomial, DesignKind::Block] {
        for n in 1..=16 {
            for m in 0..=2.min(n) {
                let mut all = vec![];
                for ell in 1..=4 {
                    let t = qkd_core::extract::field::next_prime(2 * ell as u64);
                    all.push(TrevisanParams::explicit(n, m, ell, t, kind).unwrap());
                }
                all.push(TrevisanParams::new(n, m, 0.1, kind).unwrap());
                for p in all {
                    let sets = oracle_sets(&p, kind);
                    let design: Vec<Vec<usize>> =
                        p.design.sets.iter().map(|s| s.iter().map(|&i| i as usize).collect()).collect();
                    assert_eq!(design, sets, "design n={n} m={m} ell={}", p.ell);
                    for _ in 0..2 {
                        let seed: Vec<bool> = (0..p.seed_len()).map(|_| rng.random()).collect();
                        for x in inputs(n, &mut rng) {
                            let got = trevisan_extract(&x, &p, &seed).unwrap();
                            let want = oracles::trevisan(&x, m, p.ell, &sets, &seed);
                            assert_eq!(got, want, "n={n} m={m} ell={} x={x:?}", p.ell);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn toeplitz_matches_naive_product_exhaustively() {
    for n in 1..=12usize {
        for m in 1..=n.min(4) {
            let seed_len = n + m - 1;
            let seeds: Vec<u32> = if seed_len <= 8 { (0..1 << seed_len).collect() } else { (0..256u32).map(|k| k.wrapping_mul(2_654_435_761) >> (32 - seed_len)).collect() };
            for s in seeds {
                let seed: Vec<bool> = (0..seed_len).map(|k| s >> k & 1 == 1).collect();
                for v in 0..1u32 << n {
                    let x: Vec<bool> = (0..n).map(|k| v >> k & 1 == 1).collect();
                    assert_eq!(toeplitz_extract(&x, m, &seed).unwrap(), oracles::toeplitz(&x, m, &seed));
                }
            }
        }
    }
}

/// Input bits that are 1 with probability 1/4, so each carries about 0.415
/// bits of min-entropy.
fn biased_block(n: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    (0..n).map(|_| rng.random::<f64>() < 0.25).collect()
}

#[test]
fn extracted_bits_pass_monobit_and_serial_tests() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for backend in [Backend::Toeplitz, Backend::Trevisan] {
        let mut pooled = Vec::new();
        for block in 0..40u64 {
            let x = biased_block(2000, &mut rng);
            let params = ExtractorParams { n: 2000, m: 600, eps: 1e-6, backend, design: DesignKind::Polynomial };
            let seed = random_seed(params.seed_len().unwrap(), 99, block);
            pooled.extend(extract(&x, &params, &seed).unwrap());
        }
        let p = oracles::monobit_p(&pooled);
        let (p1, p2) = oracles::serial2_p(&pooled);
        assert!(p >= 0.001 && p1 >= 0.001 && p2 >= 0.001, "{backend:?}: {p} {p1} {p2}");
        let raw: Vec<bool> = biased_block(24_000, &mut rng);
        assert!(oracles::monobit_p(&raw) < 0.001);
    }
}

#[test]
fn output_length_shrinks_with_noise() {
    let a = output_length(20_000, 0.05, 2.5, 1.2, 1e-6);
    let b = output_length(20_000, 0.07, 2.5, 1.2, 1e-6);
    let c = output_length(20_000, 0.07, 2.4, 1.2, 1e-6);
    assert!(a > b && b > c && c > 0);
    assert_eq!(output_length(20_000, 0.12, 2.2, 1.2, 1e-6), 0);
}
