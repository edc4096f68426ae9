mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use puscreen::eval::{self, auc, average_precision, coverage_at_budget, recovery_rate};
use puscreen::seed;
use rand::Rng;

use common::{ap_oracle, auc_oracle, random_scores};

#[test]
fn metrics_match_brute_force_oracles() {
    let mut rng = seed::rng(2024);
    for i in 0..1000 {
        let coarse = i % 2 == 0;
        let np = rng.random_range(1..=100);
        let nn = rng.random_range(1..=200 - np);
        let pos = random_scores(&mut rng, np, coarse);
        let neg = random_scores(&mut rng, nn, coarse);
        let a = auc(&pos, &neg).unwrap();
        let p = average_precision(&pos, &neg).unwrap();
        assert!((a - auc_oracle(&pos, &neg)).abs() <= 1e-12, "instance {i}: auc {a}");
        assert!((p - ap_oracle(&pos, &neg)).abs() <= 1e-12, "instance {i}: ap {p}");
    }
}

/// Tie-free scores split at random into positives and negatives.
fn distinct_scores() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    proptest::collection::btree_set(0u32..1_000_000, 2..120)
        .prop_flat_map(|set| {
            let v: Vec<f64> = set.into_iter().map(|x| f64::from(x) / 1e6).collect();
            let n = v.len();
            (Just(v).prop_shuffle(), 1..n)
        })
        .prop_map(|(v, k)| (v[..k].to_vec(), v[k..].to_vec()))
}

proptest! {
    #[test]
    fn auc_is_antisymmetric_without_ties((pos, neg) in distinct_scores()) {
        let s = auc(&pos, &neg).unwrap() + auc(&neg, &pos).unwrap();
        prop_assert!((s - 1.0).abs() <= 1e-12, "{}", s);
    }

    #[test]
    fn coverage_grows_with_budget(
        deltas in proptest::collection::vec(0u32..50, 2..150),
        pick in proptest::collection::vec(any::<bool>(), 150),
    ) {
        let delta: BTreeMap<String, f64> =
            deltas.iter().enumerate().map(|(i, &d)| (format!("e{i:03}"), f64::from(d) / 50.0)).collect();
        let mut holdout: BTreeSet<String> =
            delta.keys().zip(&pick).filter(|(_, &p)| p).map(|(k, _)| k.clone()).collect();
        if holdout.is_empty() {
            holdout.insert("e000".into());
        }
        let mut prev = 0.0;
        for k in 1..=100 {
            let c = coverage_at_budget(&delta, &holdout, k).unwrap();
            prop_assert!(c >= prev, "K={} coverage {} < {}", k, c, prev);
            prev = c;
        }
        prop_assert_eq!(prev, 1.0);
    }

    #[test]
    fn recovery_falls_with_threshold(
        spies in proptest::collection::vec(0.0..=1.0f64, 1..100),
        mut taus in proptest::collection::vec(0.0..=1.0f64, 1..20),
    ) {
        taus.sort_by(f64::total_cmp);
        let r = recovery_rate(&spies, &taus).unwrap();
        for w in r.windows(2) {
            prop_assert!(w[1].fraction <= w[0].fraction);
        }
    }
}

#[test]
fn sample_sd_matches_two_pass_formula() {
    let v = [0.81, 0.85, 0.79, 0.90, 0.83];
    let m = v.iter().sum::<f64>() / 5.0;
    let oracle = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!((eval::sample_sd(&v) - oracle).abs() < 1e-15);
}
