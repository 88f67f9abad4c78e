//! Randomized invariants for the metric functions.

use proptest::prelude::*;

use eval::{bleu, ccdf, meteor, route_jsd, transition_entropy, TokenSeq};

fn seq_strategy(max_len: usize, vocab: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..vocab, 1..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bleu_stays_in_unit_interval(
        cand in seq_strategy(12, 5),
        refr in seq_strategy(12, 5),
    ) {
        let s = bleu(&cand, &refr, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn bleu_identity_is_exactly_one(s in seq_strategy(12, 5)) {
        prop_assert_eq!(bleu(&s, &s, 4).unwrap(), 1.0);
    }

    #[test]
    fn meteor_stays_in_unit_interval(
        cand in seq_strategy(10, 4),
        refr in seq_strategy(10, 4),
    ) {
        let s = meteor(&cand, &refr).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn route_distance_is_symmetric_and_bounded(
        counts_a in prop::collection::vec((0usize..5, 1usize..6), 1..5),
        counts_b in prop::collection::vec((0usize..5, 1usize..6), 1..5),
    ) {
        // Routes indexed from a tiny shared pool so supports overlap often.
        let pool: Vec<Vec<usize>> = vec![vec![1], vec![2], vec![1, 2], vec![2, 1], vec![3]];
        let build = |counts: &[(usize, usize)]| {
            let mut ds = Vec::new();
            for (i, c) in counts {
                for _ in 0..*c {
                    ds.push(TokenSeq::complete(pool[*i].clone()));
                }
            }
            ds
        };
        let a = build(&counts_a);
        let b = build(&counts_b);
        let (dab, _) = route_jsd(&a, &b).unwrap();
        let (dba, _) = route_jsd(&b, &a).unwrap();
        prop_assert!((dab - dba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&dab));
        let (daa, unknown) = route_jsd(&a, &a).unwrap();
        prop_assert_eq!(daa, 0.0);
        prop_assert_eq!(unknown, 0);
    }

    #[test]
    fn entropy_is_bounded_by_log_max_out_degree(
        ds in prop::collection::vec(seq_strategy(8, 5), 1..10),
    ) {
        let ds: Vec<TokenSeq> = ds.into_iter().map(TokenSeq::complete).collect();
        let h = transition_entropy(&ds).unwrap();
        prop_assert!(h >= 0.0);
        // Out-degree is capped by the vocabulary size.
        prop_assert!(h <= 5.0f64.ln() + 1e-12);
    }

    #[test]
    fn ccdf_is_monotone_with_bounded_auc(
        scores in prop::collection::vec(0.0f64..=1.0, 1..40),
    ) {
        let c = ccdf(&scores).unwrap();
        for w in c.values.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        let auc = c.auc();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&auc));
    }
}
