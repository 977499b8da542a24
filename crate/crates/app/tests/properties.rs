use proptest::prelude::*;
use qkd_app::analyze::{daylight, keyrate};
use qkd_app::config::ScenarioConfig;
use qkd_core::protocol::{CountTable, Counts4};

fn table(good: f64, bad: f64) -> CountTable {
    let mut t = CountTable::default();
    for row in t.iter_mut() {
        for c in row.iter_mut() {
            *c = Counts4::new(good, good, bad, bad);
        }
    }
    t
}

proptest! {
    #[test]
    fn daylight_qber_grows_with_irradiance(
        good in 500.0f64..5000.0,
        bad in 5.0f64..100.0,
        acc in 0.1f64..50.0,
        i1 in 0.0f64..1000.0,
        di in 1.0f64..500.0,
    ) {
        let pts = daylight(&table(good, bad), &table(acc, acc), &[i1, i1 + di]).unwrap();
        prop_assert!(pts[1].qber > pts[0].qber);
        prop_assert!(pts[1].qber < 0.5);
    }

    #[test]
    fn secure_fraction_grows_with_chsh_and_efficiency(
        q in 0.0f64..0.10,
        s in 2.0f64..2.6,
        ds in 0.01f64..0.2,
        f in 1.0f64..1.5,
    ) {
        let s_hi = (s + ds).min(2.0 * std::f64::consts::SQRT_2 * (1.0 - q));
        prop_assume!(s_hi > s);
        let r = |q, s, f| keyrate(q, s, f, 0.11).unwrap().secure_fraction.unwrap_or(0.0);
        prop_assert!(r(q, s_hi, f) >= r(q, s, f));
        prop_assert!(r(q, s, f) >= r(q, s, f + 0.1));
    }

    #[test]
    fn config_json_roundtrips(seed in any::<u64>(), duration in 1.0f64..1e6, duty in 0.01f64..1.0, window in 0.1f64..5.0) {
        let mut cfg = ScenarioConfig::from_json(r#"{"run": {"duration_s": 10, "seed": 1}}"#).unwrap();
        cfg.run.seed = seed;
        cfg.run.duration_s = duration;
        cfg.protocol.duty = duty;
        cfg.protocol.window_ns = window;
        let back = ScenarioConfig::from_json(&cfg.to_json_pretty()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
