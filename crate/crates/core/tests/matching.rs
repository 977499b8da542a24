mod oracles;

use qkd_core::timesync::{half_window_ticks, match_ticks};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two streams of `n` events each: a fraction are correlated pairs with
/// jitter, the rest uniform, dense enough that window clusters are common.
fn instance(seed: u64, n: usize, offset: i64) -> (Vec<u64>, Vec<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = (n as u64) * 40;
    let base = 10_000u64;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let t = base + rng.random_range(0..span);
        a.push(t);
        if rng.random::<f64>() < 0.5 {
            b.push((t as i64 + offset + rng.random_range(-10..=10)) as u64);
        } else {
            b.push((base as i64 + offset + rng.random_range(0..span as i64)) as u64);
        }
    }
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

#[test]
fn greedy_matcher_equals_exhaustive_optimum() {
    let hw = half_window_ticks(1.3).unwrap();
    for seed in 0..100u64 {
        let offset = (seed as i64 * 37) % 400 - 200;
        let (a, b) = instance(seed, 1000, offset);
        let got: Vec<(usize, usize)> = match_ticks(&a, &b, offset, hw).unwrap().into_iter().map(|p| (p.a, p.b)).collect();
        let want = oracles::exhaustive_matching(&a, &b, offset, hw);
        assert_eq!(got, want, "instance {seed}");
    }
}

#[test]
fn pairs_respect_window_and_use_events_once() {
    let (a, b) = instance(5, 500, 17);
    let pairs = match_ticks(&a, &b, 17, 8).unwrap();
    let mut used_b = std::collections::HashSet::new();
    for w in pairs.windows(2) {
        assert!(w[0].a < w[1].a);
    }
    for p in &pairs {
        assert!(p.delta.abs() <= 8);
        assert_eq!(p.delta, b[p.b] as i64 - 17 - a[p.a] as i64);
        assert!(used_b.insert(p.b));
    }
}
