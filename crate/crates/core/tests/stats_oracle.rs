mod common;

use cohort_audit::stats::{
    benjamini_hochberg, chi_square_2x2, chi_square_tail, fisher_exact, mann_whitney, Contingency2x2,
};
use proptest::prelude::*;

fn rel_err(x: f64, y: f64) -> f64 {
    if x == y {
        0.0
    } else {
        (x - y).abs() / x.abs().max(y.abs())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn fisher_p_matches_enumeration(a in 0u64..15, b in 0u64..15, c in 0u64..15, d in 0u64..15) {
        prop_assume!(a + b + c + d > 0);
        let got = fisher_exact(&Contingency2x2::new(a, b, c, d)).unwrap().p_value;
        let want = common::fisher_p_reference(a, b, c, d);
        prop_assert!(rel_err(got, want) < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn fisher_is_symmetric(a in 0u64..30, b in 0u64..30, c in 0u64..30, d in 0u64..30) {
        prop_assume!(a + b + c + d > 0);
        let t = Contingency2x2::new(a, b, c, d);
        let base = fisher_exact(&t).unwrap();
        let tr = fisher_exact(&t.transpose()).unwrap();
        let sw = fisher_exact(&t.swap_rows()).unwrap();
        prop_assert!(rel_err(base.p_value, tr.p_value) < 1e-9);
        prop_assert!(rel_err(base.p_value, sw.p_value) < 1e-9);
        let (o, os) = (base.effect.odds_ratio().unwrap(), sw.effect.odds_ratio().unwrap());
        if o.is_finite() && o > 0.0 {
            prop_assert!((o * os - 1.0).abs() < 1e-6, "{o} {os}");
        }
    }

    #[test]
    fn mann_whitney_exact_matches_enumeration(
        values in prop::collection::hash_set(-1000i32..1000, 2..=12),
        split in 0.0f64..1.0,
    ) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let m = 1 + ((values.len() - 1) as f64 * split) as usize;
        prop_assume!(m < values.len());
        let (xs, ys) = values.split_at(m);
        let got = mann_whitney(xs, ys).unwrap().p_value;
        let want = common::mann_whitney_p_reference(xs, ys);
        prop_assert!(rel_err(got, want) < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn bh_is_monotone_and_bounded(ps in prop::collection::vec(0.0f64..1.0, 1..40)) {
        let adj = benjamini_hochberg(&ps);
        for (p, q) in ps.iter().zip(&adj) {
            // p * n / n may round one ulp below p
            prop_assert!(*q >= p * (1.0 - 1e-15) && *q <= 1.0);
        }
        let mut order: Vec<usize> = (0..ps.len()).collect();
        order.sort_by(|&i, &j| ps[i].total_cmp(&ps[j]));
        for w in order.windows(2) {
            prop_assert!(adj[w[0]] <= adj[w[1]]);
        }
    }
}

#[test]
fn chi_square_critical_value() {
    assert!((chi_square_tail(3.841459).unwrap() - 0.05).abs() < 1e-6);
    assert!((chi_square_tail(6.634897).unwrap() - 0.01).abs() < 1e-6);
    assert_eq!(chi_square_tail(0.0).unwrap(), 1.0);
}

#[test]
fn yates_statistic_by_hand() {
    // N (|ad - bc| - N/2)^2 / (r1 r2 c1 c2) = 40 * (|150 - 50| - 20)^2 / (15 * 25 * 20 * 20)
    let t = Contingency2x2::new(10, 5, 10, 15);
    let r = chi_square_2x2(&t, true).unwrap();
    assert!((r.statistic - 40.0 * 80.0f64.powi(2) / 150000.0).abs() < 1e-12, "{}", r.statistic);
}
