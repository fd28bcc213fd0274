#![allow(dead_code)]

use std::path::PathBuf;

use contea::encoder::{init_parameters, EncoderState};
use contea::kg_store::{KnowledgeGraph, Side, SnapshotPair};
use contea::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod fd;
pub mod oracles;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn small_config(dim: usize, proxies: usize) -> RunConfig {
    RunConfig {
        dim,
        proxy_count: proxies,
        ..RunConfig::default()
    }
}

/// Random triples without self loops or repeats over `n` entities named `{prefix}{i}`.
pub fn random_kg(rng: &mut ChaCha8Rng, prefix: &str, n: usize, rels: usize, triples: usize) -> KnowledgeGraph {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    // A spanning path keeps every entity present.
    for i in 1..n {
        let r = rng.gen_range(0..rels);
        seen.insert((i - 1, r, i));
        out.push((i - 1, r, i));
    }
    let triples = triples.min(n * (n - 1) * rels);
    while out.len() < triples {
        let (h, t) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let r = rng.gen_range(0..rels);
        if h != t && seen.insert((h, r, t)) {
            out.push((h, r, t));
        }
    }
    let named: Vec<(String, String, String)> = out
        .iter()
        .map(|&(h, r, t)| (format!("{prefix}{h}"), format!("{prefix}r{r}"), format!("{prefix}{t}")))
        .collect();
    KnowledgeGraph::from_triples(named.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())))
}

pub fn random_pair(seed: u64, n1: usize, n2: usize, rels: usize, triples: usize) -> SnapshotPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kg1 = random_kg(&mut rng, "a", n1, rels, triples);
    let kg2 = random_kg(&mut rng, "b", n2, rels, triples);
    SnapshotPair::new(0, kg1, kg2)
}

/// Initialized state with every parameter nudged off its structured init.
pub fn perturbed_state(pair: &SnapshotPair, cfg: &RunConfig, seed: u64) -> EncoderState {
    let mut s = init_parameters(pair, cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for l in 0..2 {
        for x in s.agg1[l].weight.as_mut_slice() {
            *x += rng.gen_range(-0.3..0.3);
        }
        for x in s.agg1[l].bias.iter_mut() {
            *x = rng.gen_range(-0.2..0.2);
        }
    }
    for x in s.rel_emb.as_mut_slice() {
        *x += rng.gen_range(-0.5..0.5);
    }
    for x in s.proxy_proj.as_mut_slice() {
        *x += rng.gen_range(-0.2..0.2);
    }
    s
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight-line encoder built from the triple lists, one entity at a time.
pub fn oracle_encode(state: &EncoderState, pair: &SnapshotPair) -> Vec<Vec<f64>> {
    let n = pair.num_entities();
    let d = state.dim;
    let mut nbrs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for side in [Side::Kg1, Side::Kg2] {
        for t in pair.global_triples(side) {
            nbrs[t.head].push((t.relation, t.tail));
            nbrs[t.tail].push((t.relation, t.head));
        }
    }
    let layer = |input: &Vec<Vec<f64>>, l: usize| -> Vec<Vec<f64>> {
        let w = &state.agg1[l].weight;
        let b = &state.agg1[l].bias;
        (0..n)
            .map(|e| {
                let mut m = input[e].clone();
                for &(r, u) in &nbrs[e] {
                    for j in 0..d {
                        m[j] += input[u][j] * sigmoid(state.rel_emb[(r, j)]);
                    }
                }
                let c = (1 + nbrs[e].len()) as f64;
                (0..d)
                    .map(|i| {
                        let mut z = b[i];
                        for j in 0..d {
                            z += w[(i, j)] * m[j] / c;
                        }
                        z.tanh()
                    })
                    .collect()
            })
            .collect()
    };
    let h0: Vec<Vec<f64>> = (0..n).map(|e| state.base_emb.row(e).to_vec()).collect();
    let h2 = layer(&layer(&h0, 0), 1);
    let k = state.proxies.rows();
    h2.iter()
        .map(|h| {
            let scores: Vec<f64> = (0..k)
                .map(|p| (0..d).map(|j| h[j] * state.proxies[(p, j)]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            let mut c = vec![0.0; d];
            for p in 0..k {
                let a = (scores[p] - max).exp() / z;
                for j in 0..d {
                    c[j] += a * state.proxies[(p, j)];
                }
            }
            let mut u = vec![0.0; d];
            for j in 0..d {
                for i in 0..d {
                    u[j] += h[i] * state.proxy_proj[(i, j)] + c[i] * state.proxy_proj[(d + i, j)];
                }
            }
            let nrm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            u.iter().map(|x| x / nrm).collect()
        })
        .collect()
}

/// Random unit rows.
pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> contea::linalg::Matrix {
    let mut m = contea::linalg::Matrix::zeros(rows, dim);
    for i in 0..rows {
        let r = m.row_mut(i);
        for x in r.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        r.iter_mut().for_each(|x| *x /= n);
    }
    m
}
