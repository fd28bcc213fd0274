//! Central finite differences against the analytic gradients.

use super::{perturbed_state, small_config};
use contea::encoder::{EncoderState, FrozenMask, Gradients};
use contea::kg_store::{KnowledgeGraph, PairGraph, SnapshotPair};
use contea::objectives::{gradient, loss, Batch, Objective};
use contea::RunConfig;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
/// Denominator floor: entries below it are compared absolutely (to 1e-9),
/// where round-off of the loss difference dominates.
pub const FLOOR: f64 = 1e-5;

pub fn instance() -> (SnapshotPair, EncoderState, RunConfig) {
    let kg1 = KnowledgeGraph::from_triples([("a0", "r0", "a1"), ("a1", "r1", "a2"), ("a2", "r0", "a0")]);
    let kg2 = KnowledgeGraph::from_triples([("b0", "s0", "b1"), ("b1", "s1", "b2"), ("b0", "s1", "b2")]);
    let pair = SnapshotPair::new(0, kg1, kg2);
    let cfg = small_config(8, 3);
    let mut state = perturbed_state(&pair, &cfg, 21);
    state.frozen = FrozenMask::all_learnable(pair.num_entities());
    (pair, state, cfg)
}

fn slice_mut(s: &mut EncoderState, group: usize) -> &mut [f64] {
    match group {
        0 => s.base_emb.as_mut_slice(),
        1 => s.rel_emb.as_mut_slice(),
        2 => s.agg1[0].weight.as_mut_slice(),
        3 => &mut s.agg1[0].bias,
        4 => s.agg1[1].weight.as_mut_slice(),
        5 => &mut s.agg1[1].bias,
        6 => s.proxies.as_mut_slice(),
        _ => s.proxy_proj.as_mut_slice(),
    }
}

/// Worst relative error over every parameter entry.
pub fn check(obj: impl Fn() -> Objective<'static> + Copy, state: &EncoderState, pair: &SnapshotPair, cfg: &RunConfig) -> f64 {
    let graph = PairGraph::new(pair);
    let mut grads = Gradients::zeros_like(state);
    gradient(obj(), state, &graph, cfg, &mut grads).unwrap();
    let analytic: Vec<Vec<f64>> = grads.groups().iter().map(|(_, v)| v.to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (g, values) in analytic.iter().enumerate() {
        for (i, &a) in values.iter().enumerate() {
            let mut plus = state.clone();
            slice_mut(&mut plus, g)[i] += H;
            let mut minus = state.clone();
            slice_mut(&mut minus, g)[i] -= H;
            let numeric = (loss(obj(), &plus, &graph, cfg).total - loss(obj(), &minus, &graph, cfg).total) / (2.0 * H);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

fn leak<T>(x: T) -> &'static T {
    Box::leak(Box::new(x))
}

/// Worst relative error for each training objective on the shared instance.
pub fn every_objective() -> Vec<(&'static str, f64)> {
    let (pair, state, cfg) = instance();
    let align = leak(Batch::new(vec![(0, 3), (1, 4), (2, 5)]));
    let init = leak(Batch::new(vec![(0, 3), (2, 5)]));
    let asa = leak(Batch::new(vec![(0, 3), (1, 4)]));
    let ta = leak(Batch::new(vec![(2, 5), (1, 3)]));
    vec![
        ("reconstruct", check(|| Objective::Reconstruct, &state, &pair, &cfg)),
        ("align", check(|| Objective::Align(align), &state, &pair, &cfg)),
        ("initial", check(|| Objective::Initial(init), &state, &pair, &cfg)),
        ("finetune", check(|| Objective::Finetune { asa, ta }, &state, &pair, &cfg)),
    ]
}
