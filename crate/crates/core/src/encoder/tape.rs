//! Forward activations and hand-written backpropagation for the encoder.
//!
//! A [`Tape`] evaluates the encoder only where it is needed: stage two and
//! the second aggregation layer for the requested targets, the first layer
//! for the targets and their neighbors. Gradients flowing back through a
//! neighbor mean are gathered per receiving entity rather than scattered,
//! which is valid because adjacency lists hold every triple from both ends.

use crate::error::{Error, Result};
use crate::kg_store::{Neighbor, PairGraph};
use crate::linalg::{axpy, dot, matvec, matvec_t, sigmoid, Matrix};
use crate::par;

use super::{EncoderState, FrozenMask};

const NONE: u32 = u32::MAX;

/// Gradient buffers mirroring [`EncoderState`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub base_emb: Matrix,
    pub rel_emb: Matrix,
    pub agg1_weight: [Matrix; 2],
    pub agg1_bias: [Vec<f64>; 2],
    pub proxies: Matrix,
    pub proxy_proj: Matrix,
}

impl Gradients {
    pub fn zeros_like(state: &EncoderState) -> Self {
        let d = state.dim;
        Gradients {
            base_emb: Matrix::zeros(state.num_entities(), d),
            rel_emb: Matrix::zeros(state.num_relations(), d),
            agg1_weight: [Matrix::zeros(d, d), Matrix::zeros(d, d)],
            agg1_bias: [vec![0.0; d], vec![0.0; d]],
            proxies: Matrix::zeros(state.proxy_count(), d),
            proxy_proj: Matrix::zeros(2 * d, d),
        }
    }

    pub fn clear(&mut self) {
        self.base_emb.fill(0.0);
        self.rel_emb.fill(0.0);
        for l in 0..2 {
            self.agg1_weight[l].fill(0.0);
            self.agg1_bias[l].iter_mut().for_each(|x| *x = 0.0);
        }
        self.proxies.fill(0.0);
        self.proxy_proj.fill(0.0);
    }

    /// Zero every entry that belongs to a frozen group or row.
    pub fn apply_mask(&mut self, mask: &FrozenMask) {
        for (e, &frozen) in mask.base_rows.iter().enumerate() {
            if frozen && e < self.base_emb.rows() {
                self.base_emb.row_mut(e).iter_mut().for_each(|x| *x = 0.0);
            }
        }
        if mask.rel_emb {
            self.rel_emb.fill(0.0);
        }
        if mask.agg1 {
            for l in 0..2 {
                self.agg1_weight[l].fill(0.0);
                self.agg1_bias[l].iter_mut().for_each(|x| *x = 0.0);
            }
        }
        if mask.proxies {
            self.proxies.fill(0.0);
        }
        if mask.proxy_proj {
            self.proxy_proj.fill(0.0);
        }
    }

    /// Flat views `(group name, values)` in a fixed order.
    pub fn groups(&self) -> [(&'static str, &[f64]); 8] {
        [
            ("base_emb", self.base_emb.as_slice()),
            ("rel_emb", self.rel_emb.as_slice()),
            ("agg1.w0", self.agg1_weight[0].as_slice()),
            ("agg1.b0", &self.agg1_bias[0]),
            ("agg1.w1", self.agg1_weight[1].as_slice()),
            ("agg1.b1", &self.agg1_bias[1]),
            ("proxies", self.proxies.as_slice()),
            ("proxy_proj", self.proxy_proj.as_slice()),
        ]
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, values) in self.groups() {
            if values.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericalInstability(name));
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.groups()
            .iter()
            .flat_map(|(_, v)| v.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    dim: usize,
    targets: Vec<usize>,
    target_pos: Vec<u32>,
    /// Position among targets, only for targets whose stage one was computed here.
    live_pos: Vec<u32>,
    layer1: Vec<usize>,
    layer1_pos: Vec<u32>,
    /// Like `layer1_pos`, only for entries computed here rather than cached.
    live1_pos: Vec<u32>,
    gates: Matrix,
    m0: Matrix,
    h1: Matrix,
    m1: Matrix,
    h2: Matrix,
    attn: Matrix,
    ctx: Matrix,
    out_norm: Vec<f64>,
    out: Matrix,
}

/// `out = (self_row + Σ input(n) ⊙ gate(r_n)) / (1 + |N|)`
fn aggregate<'a, F>(self_row: &[f64], nbrs: &[Neighbor], gates: &Matrix, input: F, out: &mut [f64])
where
    F: Fn(usize) -> &'a [f64],
{
    out.copy_from_slice(self_row);
    for nb in nbrs {
        let h = input(nb.entity);
        let g = gates.row(nb.relation);
        for j in 0..out.len() {
            out[j] += h[j] * g[j];
        }
    }
    let inv = 1.0 / (1 + nbrs.len()) as f64;
    out.iter_mut().for_each(|x| *x *= inv);
}

fn dense_layer(weight: &Matrix, bias: &[f64], m: &[f64], out: &mut [f64]) {
    matvec(weight, m, out);
    for (o, b) in out.iter_mut().zip(bias) {
        *o = (*o + b).tanh();
    }
}

fn positions(n: usize, ids: &[usize]) -> Vec<u32> {
    let mut pos = vec![NONE; n];
    for (i, &e) in ids.iter().enumerate() {
        pos[e] = i as u32;
    }
    pos
}

/// Stage-one outputs of every entity, reusable while the aggregator, the
/// relation embeddings and the frozen base rows stay fixed.
#[derive(Debug, Clone)]
pub struct StageOneCache {
    h1: Matrix,
    h2: Matrix,
    /// Whether layer-one output still depends on a learnable base row.
    dirty1: Vec<bool>,
    dirty: Vec<bool>,
}

impl StageOneCache {
    /// `None` unless the aggregator and relation embeddings are frozen.
    pub fn build(state: &EncoderState, graph: &PairGraph) -> Option<Self> {
        let mask = &state.frozen;
        if !(mask.agg1 && mask.rel_emb) {
            return None;
        }
        let n = graph.num_entities();
        // Layer l of e reads base rows up to l hops away.
        let spread = |src: &[bool]| -> Vec<bool> {
            (0..n)
                .map(|e| src[e] || graph.neighbors(e).iter().any(|nb| src[nb.entity]))
                .collect()
        };
        let learnable: Vec<bool> = (0..n).map(|e| !mask.base_rows.get(e).copied().unwrap_or(false)).collect();
        let dirty1 = spread(&learnable);
        let dirty = spread(&dirty1);
        let all: Vec<usize> = (0..n).collect();
        let tape = Tape::forward(state, graph, &all);
        // With every entity a target, layer-one rows are in entity order too.
        Some(StageOneCache {
            h1: tape.h1,
            h2: tape.h2,
            dirty1,
            dirty,
        })
    }

    /// Entities whose stage one still depends on learnable parameters.
    pub fn dirty_count(&self) -> (usize, usize) {
        let count = |v: &[bool]| v.iter().filter(|&&x| x).count();
        (count(&self.dirty1), count(&self.dirty))
    }
}

impl Tape {
    /// Run the encoder for `targets` (deduplicated and sorted internally).
    pub fn forward(state: &EncoderState, graph: &PairGraph, targets: &[usize]) -> Tape {
        Tape::forward_cached(state, graph, targets, None)
    }

    /// Like [`Tape::forward`], but clean targets take their stage-one output
    /// from `cache` and pass no gradient below stage two.
    pub fn forward_cached(
        state: &EncoderState,
        graph: &PairGraph,
        targets: &[usize],
        cache: Option<&StageOneCache>,
    ) -> Tape {
        let n = graph.num_entities();
        let d = state.dim;
        let k = state.proxy_count();

        let mut targets = targets.to_vec();
        targets.sort_unstable();
        targets.dedup();
        let target_pos = positions(n, &targets);
        let is_live = |e: usize| cache.map_or(true, |c| c.dirty[e]);
        let mut live_pos = target_pos.clone();
        for &e in &targets {
            if !is_live(e) {
                live_pos[e] = NONE;
            }
        }

        let mut in_l1 = vec![false; n];
        for &e in targets.iter().filter(|&&e| is_live(e)) {
            in_l1[e] = true;
            for nb in graph.neighbors(e) {
                in_l1[nb.entity] = true;
            }
        }
        let layer1: Vec<usize> = (0..n).filter(|&e| in_l1[e]).collect();
        let layer1_pos = positions(n, &layer1);
        let is_live1 = |e: usize| cache.map_or(true, |c| c.dirty1[e]);
        let mut live1_pos = layer1_pos.clone();
        for &e in layer1.iter().filter(|&&e| !is_live1(e)) {
            live1_pos[e] = NONE;
        }

        let mut gates = state.rel_emb.clone();
        gates.as_mut_slice().iter_mut().for_each(|x| *x = sigmoid(*x));

        // Layer 0 over the first-layer set.
        let mut m0 = Matrix::zeros(layer1.len(), d);
        par::fill_rows(m0.as_mut_slice(), d, |i, row| {
            let e = layer1[i];
            if !is_live1(e) {
                return;
            }
            aggregate(
                state.base_emb.row(e),
                graph.neighbors(e),
                &gates,
                |u| state.base_emb.row(u),
                row,
            );
        });
        let mut h1 = Matrix::zeros(layer1.len(), d);
        par::fill_rows(h1.as_mut_slice(), d, |i, row| match cache {
            Some(c) if !c.dirty1[layer1[i]] => row.copy_from_slice(c.h1.row(layer1[i])),
            _ => dense_layer(&state.agg1[0].weight, &state.agg1[0].bias, m0.row(i), row),
        });

        // Layer 1 over the targets.
        let mut m1 = Matrix::zeros(targets.len(), d);
        par::fill_rows(m1.as_mut_slice(), d, |i, row| {
            let e = targets[i];
            if !is_live(e) {
                return;
            }
            aggregate(
                h1.row(layer1_pos[e] as usize),
                graph.neighbors(e),
                &gates,
                |u| h1.row(layer1_pos[u] as usize),
                row,
            );
        });
        let mut h2 = Matrix::zeros(targets.len(), d);
        par::fill_rows(h2.as_mut_slice(), d, |i, row| match cache {
            Some(c) if !c.dirty[targets[i]] => row.copy_from_slice(c.h2.row(targets[i])),
            _ => dense_layer(&state.agg1[1].weight, &state.agg1[1].bias, m1.row(i), row),
        });

        // Proxy attention.
        let scale = 1.0 / (d as f64).sqrt();
        let mut attn = Matrix::zeros(targets.len(), k);
        par::fill_rows(attn.as_mut_slice(), k, |i, row| {
            let h = h2.row(i);
            for (j, a) in row.iter_mut().enumerate() {
                *a = dot(h, state.proxies.row(j)) * scale;
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for a in row.iter_mut() {
                *a = (*a - max).exp();
                z += *a;
            }
            row.iter_mut().for_each(|a| *a /= z);
        });
        let mut ctx = Matrix::zeros(targets.len(), d);
        par::fill_rows(ctx.as_mut_slice(), d, |i, row| {
            for (j, &a) in attn.row(i).iter().enumerate() {
                axpy(a, state.proxies.row(j), row);
            }
        });
        let mut unnorm = Matrix::zeros(targets.len(), d);
        par::fill_rows(unnorm.as_mut_slice(), d, |i, row| {
            let (h, c) = (h2.row(i), ctx.row(i));
            for a in 0..d {
                axpy(h[a], state.proxy_proj.row(a), row);
            }
            for a in 0..d {
                axpy(c[a], state.proxy_proj.row(d + a), row);
            }
        });
        let out_norm: Vec<f64> = par::map_indices(targets.len(), |i| dot(unnorm.row(i), unnorm.row(i)).sqrt());
        let mut out = unnorm;
        for (i, &nrm) in out_norm.iter().enumerate() {
            if nrm > 0.0 {
                out.row_mut(i).iter_mut().for_each(|x| *x /= nrm);
            }
        }

        Tape {
            dim: d,
            targets,
            target_pos,
            live_pos,
            layer1,
            layer1_pos,
            live1_pos,
            gates,
            m0,
            h1,
            m1,
            h2,
            attn,
            ctx,
            out_norm,
            out,
        }
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Row index of entity `e` in [`Tape::outputs`].
    pub fn position(&self, e: usize) -> Option<usize> {
        match self.target_pos.get(e) {
            Some(&p) if p != NONE => Some(p as usize),
            _ => None,
        }
    }

    pub fn outputs(&self) -> &Matrix {
        &self.out
    }

    pub fn output(&self, e: usize) -> Option<&[f64]> {
        self.position(e).map(|i| self.out.row(i))
    }

    pub fn into_outputs(self) -> Matrix {
        self.out
    }

    /// Second-layer activations of the targets (input of the proxy stage).
    pub fn inner(&self) -> &Matrix {
        &self.h2
    }

    /// Accumulate parameter gradients given `∂L/∂output` for each target row.
    ///
    /// Frozen groups and rows are skipped entirely and receive nothing.
    pub fn backward(
        &self,
        state: &EncoderState,
        graph: &PairGraph,
        g_out: &Matrix,
        grads: &mut Gradients,
    ) {
        assert_eq!(g_out.rows(), self.targets.len(), "one gradient row per target");
        let d = self.dim;
        let k = state.proxy_count();
        let scale = 1.0 / (d as f64).sqrt();
        let mask = &state.frozen;

        // Stage two: per-target local gradients.
        struct Stage2 {
            g_h2: Vec<f64>,
            g_u: Vec<f64>,
            g_c: Vec<f64>,
            g_s: Vec<f64>,
        }
        let local: Vec<Stage2> = par::map_indices(self.targets.len(), |i| {
            let o = self.out.row(i);
            let go = g_out.row(i);
            let nrm = self.out_norm[i];
            let proj = dot(o, go);
            let g_u: Vec<f64> = if nrm > 0.0 {
                o.iter().zip(go).map(|(oi, gi)| (gi - oi * proj) / nrm).collect()
            } else {
                vec![0.0; d]
            };
            let mut g_h2 = vec![0.0; d];
            let mut g_c = vec![0.0; d];
            for a in 0..d {
                g_h2[a] = dot(state.proxy_proj.row(a), &g_u);
                g_c[a] = dot(state.proxy_proj.row(d + a), &g_u);
            }
            let attn = self.attn.row(i);
            let g_a: Vec<f64> = (0..k).map(|j| dot(state.proxies.row(j), &g_c)).collect();
            let mean = dot(attn, &g_a);
            let g_s: Vec<f64> = (0..k).map(|j| attn[j] * (g_a[j] - mean)).collect();
            for (j, &gs) in g_s.iter().enumerate() {
                axpy(gs * scale, state.proxies.row(j), &mut g_h2);
            }
            Stage2 { g_h2, g_u, g_c, g_s }
        });

        if !(mask.proxies && mask.proxy_proj) {
            let (g_proj, g_prox) = par::chunked_fold(
                self.targets.len(),
                || (Matrix::zeros(2 * d, d), Matrix::zeros(k, d)),
                |(gp, gx), i| {
                    let s = &local[i];
                    if !mask.proxy_proj {
                        let (h, c) = (self.h2.row(i), self.ctx.row(i));
                        for a in 0..d {
                            axpy(h[a], &s.g_u, gp.row_mut(a));
                            axpy(c[a], &s.g_u, gp.row_mut(d + a));
                        }
                    }
                    if !mask.proxies {
                        let attn = self.attn.row(i);
                        for j in 0..k {
                            let row = gx.row_mut(j);
                            axpy(attn[j], &s.g_c, row);
                            axpy(s.g_s[j] * scale, self.h2.row(i), row);
                        }
                    }
                },
                |(gp, gx), (p, x)| {
                    gp.add_assign(&p);
                    gx.add_assign(&x);
                },
            );
            if !mask.proxy_proj {
                grads.proxy_proj.add_assign(&g_proj);
            }
            if !mask.proxies {
                grads.proxies.add_assign(&g_prox);
            }
        }

        let base_learnable = mask.any_base_learnable();
        if mask.agg1 && mask.rel_emb && !base_learnable {
            return;
        }

        // Layer 1 (targets).
        let mut g_pre1 = Matrix::zeros(self.targets.len(), d);
        par::fill_rows(g_pre1.as_mut_slice(), d, |i, row| {
            if self.live_pos[self.targets[i]] == NONE {
                return;
            }
            let h = self.h2.row(i);
            for a in 0..d {
                row[a] = local[i].g_h2[a] * (1.0 - h[a] * h[a]);
            }
        });
        drop(local);
        let mut g_m1 = Matrix::zeros(self.targets.len(), d);
        par::fill_rows(g_m1.as_mut_slice(), d, |i, row| {
            if self.live_pos[self.targets[i]] == NONE {
                return;
            }
            matvec_t(&state.agg1[1].weight, g_pre1.row(i), row);
        });
        self.layer_params(
            state,
            graph,
            1,
            &self.targets,
            &self.m1,
            &g_pre1,
            &g_m1,
            |u| self.h1.row(self.layer1_pos[u] as usize),
            grads,
        );

        // ∂L/∂h1 for the first-layer set.
        let mut g_h1 = Matrix::zeros(self.layer1.len(), d);
        par::fill_rows(g_h1.as_mut_slice(), d, |i, row| {
            let x = self.layer1[i];
            if self.live1_pos[x] != NONE {
                gather(x, graph, &self.live_pos, &g_m1, &self.gates, row);
            }
        });

        // Layer 0 (first-layer set).
        let mut g_pre0 = g_h1;
        par::fill_rows(g_pre0.as_mut_slice(), d, |i, row| {
            let h = self.h1.row(i);
            for a in 0..d {
                row[a] *= 1.0 - h[a] * h[a];
            }
        });
        let mut g_m0 = Matrix::zeros(self.layer1.len(), d);
        par::fill_rows(g_m0.as_mut_slice(), d, |i, row| {
            if self.live1_pos[self.layer1[i]] == NONE {
                return;
            }
            matvec_t(&state.agg1[0].weight, g_pre0.row(i), row);
        });
        self.layer_params(
            state,
            graph,
            0,
            &self.layer1,
            &self.m0,
            &g_pre0,
            &g_m0,
            |u| state.base_emb.row(u),
            grads,
        );

        if base_learnable {
            let rows = &mask.base_rows;
            par::fill_rows(grads.base_emb.as_mut_slice(), d, |y, row| {
                if !rows[y] {
                    gather(y, graph, &self.live1_pos, &g_m0, &self.gates, row);
                }
            });
        }
    }

    /// Weight, bias and relation gradients of one aggregation layer.
    #[allow(clippy::too_many_arguments)]
    fn layer_params<'a, F>(
        &self,
        state: &EncoderState,
        graph: &PairGraph,
        layer: usize,
        set: &[usize],
        m: &Matrix,
        g_pre: &Matrix,
        g_m: &Matrix,
        input: F,
        grads: &mut Gradients,
    ) where
        F: Fn(usize) -> &'a [f64] + Sync + Send,
    {
        let mask = &state.frozen;
        if mask.agg1 && mask.rel_emb {
            return;
        }
        let d = self.dim;
        let r = state.num_relations();
        let (gw, gb, grel) = par::chunked_fold(
            set.len(),
            || {
                (
                    Matrix::zeros(if mask.agg1 { 0 } else { d }, d),
                    vec![0.0; d],
                    Matrix::zeros(if mask.rel_emb { 0 } else { r }, d),
                )
            },
            |(gw, gb, grel), i| {
                if !mask.agg1 {
                    let gp = g_pre.row(i);
                    let mi = m.row(i);
                    for a in 0..d {
                        axpy(gp[a], mi, gw.row_mut(a));
                    }
                    axpy(1.0, gp, gb);
                }
                if !mask.rel_emb {
                    let e = set[i];
                    let nbrs = graph.neighbors(e);
                    let inv = 1.0 / (1 + nbrs.len()) as f64;
                    let gm = g_m.row(i);
                    for nb in nbrs {
                        let h = input(nb.entity);
                        let g = self.gates.row(nb.relation);
                        let out = grel.row_mut(nb.relation);
                        for a in 0..d {
                            out[a] += gm[a] * inv * h[a] * g[a] * (1.0 - g[a]);
                        }
                    }
                }
            },
            |(gw, gb, grel), (w, b, rl)| {
                gw.add_assign(&w);
                axpy(1.0, &b, gb);
                grel.add_assign(&rl);
            },
        );
        if !mask.agg1 {
            grads.agg1_weight[layer].add_assign(&gw);
            axpy(1.0, &gb, &mut grads.agg1_bias[layer]);
        }
        if !mask.rel_emb {
            grads.rel_emb.add_assign(&grel);
        }
    }
}

/// `∂L/∂input(x)` for a mean aggregation whose upstream gradients `g_m`
/// are indexed through `pos` (entities outside `pos` contributed nothing).
fn gather(x: usize, graph: &PairGraph, pos: &[u32], g_m: &Matrix, gates: &Matrix, row: &mut [f64]) {
    let px = pos[x];
    if px != NONE {
        let inv = 1.0 / (1 + graph.degree(x)) as f64;
        axpy(inv, g_m.row(px as usize), row);
    }
    for nb in graph.neighbors(x) {
        let p = pos[nb.entity];
        if p == NONE {
            continue;
        }
        let inv = 1.0 / (1 + graph.degree(nb.entity)) as f64;
        let g = gates.row(nb.relation);
        let gm = g_m.row(p as usize);
        for a in 0..row.len() {
            row[a] += gm[a] * g[a] * inv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::encoder::init_parameters;
    use crate::kg_store::{KnowledgeGraph, Side, SnapshotPair};

    /// A path a-b-…-h in KG1 where only `h` and the proxy stage learn.
    fn path_setup() -> (EncoderState, PairGraph, usize) {
        let names = ["a", "b", "c", "d", "e", "f", "g", "h"];
        let kg1 = KnowledgeGraph::from_triples(names.windows(2).map(|w| (w[0], "r", w[1])));
        let kg2 = KnowledgeGraph::from_triples([("x", "s", "y")]);
        let pair = SnapshotPair::new(1, kg1, kg2);
        let cfg = RunConfig {
            dim: 5,
            proxy_count: 3,
            ..RunConfig::default()
        };
        let mut state = init_parameters(&pair, &cfg, 11).unwrap();
        let h = pair.lookup(Side::Kg1, "h").unwrap();
        state.frozen = FrozenMask::all_frozen(pair.num_entities());
        state.frozen.base_rows[h] = false;
        state.frozen.proxies = false;
        state.frozen.proxy_proj = false;
        (state, PairGraph::new(&pair), h)
    }

    #[test]
    fn cache_marks_two_hop_ball() {
        let (state, graph, _) = path_setup();
        let cache = StageOneCache::build(&state, &graph).unwrap();
        assert_eq!(cache.dirty_count(), (2, 3));
        let mut open = state.clone();
        open.frozen.agg1 = false;
        assert!(StageOneCache::build(&open, &graph).is_none());
    }

    #[test]
    fn cached_pass_is_bit_identical() {
        let (state, graph, _) = path_setup();
        let cache = StageOneCache::build(&state, &graph).unwrap();
        let targets: Vec<usize> = (0..graph.num_entities()).rev().collect();
        let plain = Tape::forward(&state, &graph, &targets);
        let cached = Tape::forward_cached(&state, &graph, &targets, Some(&cache));
        assert_eq!(plain.outputs(), cached.outputs());

        let mut g_out = Matrix::zeros(plain.targets().len(), state.dim);
        for (i, x) in g_out.as_mut_slice().iter_mut().enumerate() {
            *x = ((i * 7 % 11) as f64 - 5.0) / 3.0;
        }
        let mut g1 = Gradients::zeros_like(&state);
        let mut g2 = Gradients::zeros_like(&state);
        plain.backward(&state, &graph, &g_out, &mut g1);
        cached.backward(&state, &graph, &g_out, &mut g2);
        assert_eq!(g1, g2);
        assert!(g1.base_emb.max_abs() > 0.0);
    }
}
