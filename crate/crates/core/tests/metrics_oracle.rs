mod common;

use astrec::numcore::Rng;
use proptest::prelude::*;

#[test]
fn metrics_equal_brute_force_on_small_fixtures() {
    let mut rng = Rng::new(11, 0);
    for _ in 0..300 {
        let f = common::metric_fixture(&mut rng);
        assert_eq!(
            common::library_metrics(&f),
            common::brute_force_metrics(&f.items, &f.scores, &f.relevant, f.k)
        );
    }
}

#[test]
fn brute_force_oracle_examples() {
    let m = common::brute_force_metrics(&[3, 1, 2], &[0.0, 0.0, 1.0], &[false, true, false], 2);
    // Order 2, 1, 3: the relevant item sits at rank 2.
    assert_eq!(m.ndcg, 1.0 / 3f64.log2());
    assert_eq!((m.hr_recall, m.hr_any_hit), (1.0, 1.0));
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_monotone_in_k(seed in 0u64..10_000) {
        let mut rng = Rng::new(seed, 1);
        let mut f = common::metric_fixture(&mut rng);
        let mut prev = common::library_metrics(&f);
        for k in f.k + 1..=7 {
            f.k = k;
            let m = common::library_metrics(&f);
            for v in [m.ndcg, m.hr_recall, m.hr_any_hit] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(m.hr_recall >= prev.hr_recall);
            prop_assert!(m.hr_any_hit >= prev.hr_any_hit);
            prev = m;
        }
        // Past the candidate count every relevant item is retrieved.
        prop_assert_eq!(prev.hr_recall, 1.0);
    }

    #[test]
    fn ranking_ignores_candidate_order(seed in 0u64..10_000) {
        let mut rng = Rng::new(seed, 2);
        let f = common::metric_fixture(&mut rng);
        let mut idx: Vec<usize> = (0..f.items.len()).collect();
        rng.shuffle(&mut idx);
        let shuffled = common::MetricFixture {
            items: idx.iter().map(|&j| f.items[j]).collect(),
            scores: idx.iter().map(|&j| f.scores[j]).collect(),
            relevant: idx.iter().map(|&j| f.relevant[j]).collect(),
            k: f.k,
        };
        prop_assert_eq!(common::library_metrics(&f), common::library_metrics(&shuffled));
    }
}
