use proptest::prelude::*;
use retrotube::rotation::{
    hitting_times_fast, hitting_times_naive, return_structure, visit_count, xi_from_hitting_times,
    HitSource, RotationParams, TransferMatrices,
};

fn params() -> impl Strategy<Value = RotationParams> {
    (0.0..1.0f64, 0.0..1.0f64, -4.0..-0.3f64)
        .prop_map(|(x0, a, le)| RotationParams::from_alpha(x0, a, 10f64.powf(le)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn fast_agrees_with_naive(p in params()) {
        let naive = hitting_times_naive(&p, 200, u64::MAX).unwrap();
        let fast = hitting_times_fast(&p, 200).unwrap();
        prop_assert_eq!(fast, naive);
    }

    #[test]
    fn fast_agrees_on_dyadic_angles(x0 in 0.0..1.0f64, num in 1u64..255, eps in 0.01..0.5f64) {
        let p = RotationParams::from_alpha(x0, num as f64 / 256.0, eps).unwrap();
        if let Ok(naive) = hitting_times_naive(&p, 50, 100_000) {
            let mut src = HitSource::new(p);
            let got: Vec<u64> = (0..50).map(|_| src.next_hit(u64::MAX).unwrap()).collect();
            prop_assert_eq!(got, naive.m);
        }
    }

    #[test]
    fn matrices_hold(p in params()) {
        let h = hitting_times_fast(&p, 40).unwrap();
        let t = TransferMatrices::new(h.len());
        prop_assert_eq!(t.apply_a(&h.n), h.xi.clone());
        prop_assert_eq!(t.apply_b(&h.n), h.m.iter().map(|&x| x as i64).collect::<Vec<_>>());
        prop_assert_eq!(xi_from_hitting_times(&h.m), h.xi);
    }

    #[test]
    fn returns_take_three_gap_values(p in params()) {
        let h = hitting_times_fast(&p, 300).unwrap();
        let s = return_structure(p.alpha_dd(), p.epsilon()).unwrap();
        let mut distinct: Vec<u64> = h.n[1..].to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert!(distinct.len() <= 3);
        if distinct.len() == 3 {
            prop_assert_eq!(distinct[2], distinct[0] + distinct[1]);
        }
        for r in distinct {
            prop_assert!(r == s.a || r == s.b || r == s.a + s.b);
        }
    }

    #[test]
    fn counting_duality(p in params(), k in 1usize..30, t in 0.0..5.0f64) {
        let h = hitting_times_fast(&p, k).unwrap();
        let n = visit_count(&p, t);
        let eps = p.epsilon();
        let beyond = h.m[k - 1] > (t / eps).floor() as u64;
        prop_assert_eq!(n <= k as u64 - 1, beyond);
    }
}

#[test]
fn fast_matches_naive_for_thousand_hits_at_tiny_window() {
    let p = RotationParams::from_alpha(0.0, std::f64::consts::SQRT_2 - 1.0, 1e-6).unwrap();
    assert_eq!(
        hitting_times_fast(&p, 1000).unwrap(),
        hitting_times_naive(&p, 1000, u64::MAX).unwrap()
    );
}
