mod common;

use std::collections::BTreeSet;

use common::oracles::{csls_max_error, identity_delta, integration_mismatch, pairs, random_ta, search_agrees};
use common::unit_rows;
use contea::linalg::Matrix;
use contea::matcher::{bidirectional_search, integrate_alignment, similarity, ScoredPair, SimilarityMetric, TrustworthyAlignment};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn csls_matches_triple_loop() {
    for seed in [3, 4, 5] {
        assert!(csls_max_error(seed) <= 1e-12);
    }
}

#[test]
fn search_matches_mutual_argmax_oracle() {
    assert!(search_agrees(17));
}

#[test]
fn hand_enumerated_cosines() {
    let n = (0.81f64 + 0.01).sqrt();
    let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let b = Matrix::from_rows(&[vec![0.9 / n, 0.1 / n], vec![0.6, 0.8]]);
    let found = bidirectional_search(&a, &b, SimilarityMetric::cosine()).unwrap();
    assert_eq!(pairs(&found), BTreeSet::from([(0, 0), (1, 1)]));
}

#[test]
fn zero_rows_are_rejected() {
    let a = Matrix::from_rows(&[vec![0.0, 0.0]]);
    let b = Matrix::from_rows(&[vec![1.0, 0.0]]);
    assert!(similarity(&a, &b, SimilarityMetric::cosine()).is_err());
}

#[test]
fn integration_matches_brute_force_resolver() {
    assert_eq!(integration_mismatch(1000, 2024), None);
}

#[test]
fn conflicting_input_is_rejected() {
    let bad = vec![
        ScoredPair { e1: 0, e2: 8, score: 0.5, found_at: 0 },
        ScoredPair { e1: 0, e2: 9, score: 0.6, found_at: 0 },
    ];
    assert!(TrustworthyAlignment::new(bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn search_is_symmetric_and_injective(seed in 0u64..10_000, na in 2usize..30, nb in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (unit_rows(&mut rng, na, 5), unit_rows(&mut rng, nb, 5));
        for metric in [SimilarityMetric::cosine(), SimilarityMetric::csls(3)] {
            let ab = pairs(&bidirectional_search(&a, &b, metric).unwrap());
            let ba: BTreeSet<(usize, usize)> = pairs(&bidirectional_search(&b, &a, metric).unwrap())
                .into_iter()
                .map(|(j, i)| (i, j))
                .collect();
            prop_assert_eq!(&ab, &ba);
            let l: BTreeSet<usize> = ab.iter().map(|p| p.0).collect();
            let r: BTreeSet<usize> = ab.iter().map(|p| p.1).collect();
            prop_assert_eq!(l.len(), ab.len());
            prop_assert_eq!(r.len(), ab.len());
        }
    }

    #[test]
    fn integration_is_idempotent_and_keeps_unopposed_pairs(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delta = identity_delta(16);
        let old = TrustworthyAlignment::new(random_ta(&mut rng, 0)).unwrap();
        let new = TrustworthyAlignment::new(random_ta(&mut rng, 1)).unwrap();
        let once = integrate_alignment(&old, &new, &delta).unwrap();
        prop_assert_eq!(&integrate_alignment(&once, &once, &delta).unwrap(), &once);
        // Pairs with no rival on either side always survive.
        for p in old.pairs().iter().chain(new.pairs()) {
            let rivals = old.pairs().iter().chain(new.pairs())
                .filter(|q| q.pair() != p.pair() && (q.e1 == p.e1 || q.e2 == p.e2))
                .count();
            if rivals == 0 {
                prop_assert!(once.pair_set().contains(&p.pair()));
            }
        }
    }
}
