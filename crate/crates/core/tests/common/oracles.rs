//! Brute-force references for similarity, search and alignment integration.

use std::collections::BTreeSet;

use contea::kg_store::GrowthDelta;
use contea::linalg::Matrix;
use contea::matcher::{bidirectional_search, integrate_alignment, similarity, ScoredPair, SimilarityMetric, TrustworthyAlignment};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn mean_top_k(mut v: Vec<f64>, k: usize) -> f64 {
    v.sort_by(|x, y| y.partial_cmp(x).unwrap());
    v[..k].iter().sum::<f64>() / k as f64
}

/// CSLS straight from its definition, one cell at a time.
pub fn csls_oracle(a: &Matrix, b: &Matrix, k: usize) -> Vec<Vec<f64>> {
    (0..a.rows())
        .map(|i| {
            (0..b.rows())
                .map(|j| {
                    let r_b = mean_top_k((0..b.rows()).map(|jj| cos(a.row(i), b.row(jj))).collect(), k);
                    let r_a = mean_top_k((0..a.rows()).map(|ii| cos(a.row(ii), b.row(j))).collect(), k);
                    2.0 * cos(a.row(i), b.row(j)) - r_b - r_a
                })
                .collect()
        })
        .collect()
}

pub fn mutual_oracle(s: &[Vec<f64>]) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (i, row) in s.iter().enumerate() {
        let j = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
        let back = (0..s.len()).fold(0, |best, ii| if s[ii][j] > s[best][j] { ii } else { best });
        if back == i {
            out.insert((i, j));
        }
    }
    out
}

pub fn pairs(found: &[(usize, usize, f64)]) -> BTreeSet<(usize, usize)> {
    found.iter().map(|&(i, j, _)| (i, j)).collect()
}

pub fn identity_delta(n: usize) -> GrowthDelta {
    GrowthDelta {
        entity_map: (0..n).collect(),
        ..Default::default()
    }
}

/// Random conflict-free alignment over `0..8 × 8..16` with coarse scores.
pub fn random_ta(rng: &mut ChaCha8Rng, found_at: u32) -> Vec<ScoredPair> {
    let mut left: Vec<usize> = (0..8).collect();
    let mut right: Vec<usize> = (8..16).collect();
    let n = rng.gen_range(0..=6);
    let mut out = Vec::new();
    for _ in 0..n {
        let e1 = left.swap_remove(rng.gen_range(0..left.len()));
        let e2 = right.swap_remove(rng.gen_range(0..right.len()));
        let score = rng.gen_range(1..=4) as f64 / 4.0;
        out.push(ScoredPair { e1, e2, score, found_at });
    }
    out
}

/// Enumerate each pair's conflicts and keep it only if it beats all of them.
pub fn resolve(old: &[ScoredPair], new: &[ScoredPair]) -> BTreeSet<(usize, usize, u32)> {
    let mut union: Vec<(ScoredPair, bool)> = old.iter().map(|p| (*p, true)).collect();
    for p in new {
        if !old.iter().any(|q| q.pair() == p.pair()) {
            union.push((*p, false));
        }
    }
    let mut keep = BTreeSet::new();
    for (i, (p, p_old)) in union.iter().enumerate() {
        let wins = union.iter().enumerate().all(|(j, (q, q_old))| {
            let conflict = j != i && (p.e1 == q.e1 || p.e2 == q.e2);
            !conflict || p.score > q.score || (p.score == q.score && *p_old && !q_old)
        });
        if wins {
            keep.insert((p.e1, p.e2, p.found_at));
        }
    }
    keep
}

pub fn conflict_free(ta: &TrustworthyAlignment) -> bool {
    let l: BTreeSet<usize> = ta.pairs().iter().map(|p| p.e1).collect();
    let r: BTreeSet<usize> = ta.pairs().iter().map(|p| p.e2).collect();
    l.len() == ta.len() && r.len() == ta.len()
}

/// Largest gap between `similarity` under CSLS(3) and the triple loop on 10×10 rows.
pub fn csls_max_error(seed: u64) -> f64 {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let (a, b) = (super::unit_rows(&mut rng, 10, 6), super::unit_rows(&mut rng, 10, 6));
    let s = similarity(&a, &b, SimilarityMetric::csls(3)).unwrap();
    let o = csls_oracle(&a, &b, 3);
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        for j in 0..10 {
            worst = worst.max((s[(i, j)] - o[i][j]).abs());
        }
    }
    worst
}

/// Search on 200×220 random unit rows equals the mutual-argmax oracle under cosine and CSLS(10).
pub fn search_agrees(seed: u64) -> bool {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let (a, b) = (super::unit_rows(&mut rng, 200, 16), super::unit_rows(&mut rng, 220, 16));
    let cos_s: Vec<Vec<f64>> = (0..200).map(|i| (0..220).map(|j| cos(a.row(i), b.row(j))).collect()).collect();
    let found = bidirectional_search(&a, &b, SimilarityMetric::cosine()).unwrap();
    if pairs(&found) != mutual_oracle(&cos_s) {
        return false;
    }
    let found = bidirectional_search(&a, &b, SimilarityMetric::csls(10)).unwrap();
    pairs(&found) == mutual_oracle(&csls_oracle(&a, &b, 10))
}

/// Index of the first case where integration disagrees with `resolve` or leaves a conflict.
pub fn integration_mismatch(cases: usize, seed: u64) -> Option<usize> {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let delta = identity_delta(16);
    (0..cases).find(|_| {
        let old = random_ta(&mut rng, 0);
        let new = random_ta(&mut rng, 1);
        let got = integrate_alignment(
            &TrustworthyAlignment::new(old.clone()).unwrap(),
            &TrustworthyAlignment::new(new.clone()).unwrap(),
            &delta,
        )
        .unwrap();
        let got_set: BTreeSet<(usize, usize, u32)> = got.pairs().iter().map(|p| (p.e1, p.e2, p.found_at)).collect();
        got_set != resolve(&old, &new) || !conflict_free(&got)
    })
}
