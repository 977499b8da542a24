use qkd_core::cascade::{cascade, transcript_parity_bits, CascadeConfig, K1Rule, VERIFY_TAG_BITS};
use qkd_core::rng;
use rand::Rng;

fn keys(n: usize, q: f64, seed: u64) -> (Vec<bool>, Vec<bool>) {
    let mut r = rng::from_u64(seed);
    let a: Vec<bool> = (0..n).map(|_| r.random()).collect();
    let b = a.iter().map(|&x| x ^ (r.random::<f64>() < q)).collect();
    (a, b)
}

#[test]
fn leakage_equals_parities_in_transcript() {
    for seed in 0..10u64 {
        let (a, b) = keys(10_000, 0.07, seed);
        let cfg = CascadeConfig { passes: 4, k1_rule: K1Rule::Inverse { coeff: 0.73 }, permutation_seed: seed };
        let res = cascade(&a, &b, 0.07, &cfg).unwrap();
        assert!(!res.residual_error_detected);
        assert_eq!(res.corrected_key, a);
        assert_eq!(transcript_parity_bits(&res.transcript).unwrap() + VERIFY_TAG_BITS, res.leaked_bits);
        assert!(res.f_ec_realized > 1.0 && res.f_ec_realized < 1.5, "f = {}", res.f_ec_realized);
    }
}
