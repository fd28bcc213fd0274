//! Two-stage subgraph encoder.
//!
//! Stage one is a two-layer relation-aware aggregator over each KG:
//!
//! ```text
//! h⁰ₑ   = base[e]
//! mˡₑ   = (hˡₑ + Σ_{(r,e')∈Nₑ} hˡₑ' ⊙ σ(rel[r])) / (1 + |Nₑ|)
//! hˡ⁺¹ₑ = tanh(Wˡ mˡₑ + bˡ)
//! ```
//!
//! Stage two attends over K unit-norm proxy vectors and mixes the result back in:
//!
//! ```text
//! aₖ = softmaxₖ(⟨h²ₑ, pₖ⟩ / √d)
//! cₑ = Σₖ aₖ pₖ
//! oₑ = normalize([h²ₑ ; cₑ]ᵀ P)
//! ```
//!
//! The sum over neighbors always runs in adjacency order, which is sorted,
//! so outputs do not depend on how triples were listed or scheduled.

mod checkpoint;
mod tape;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::kg_store::{GrowthDelta, PairGraph, SnapshotPair};
use crate::linalg::{normalize, Matrix};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use tape::{Gradients, StageOneCache, Tape};

/// Parameter groups, in the order they are stored and optimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    BaseEmb,
    RelEmb,
    Agg1,
    Proxies,
    ProxyProj,
}

impl ParamGroup {
    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::BaseEmb => "base_emb",
            ParamGroup::RelEmb => "rel_emb",
            ParamGroup::Agg1 => "agg1",
            ParamGroup::Proxies => "proxies",
            ParamGroup::ProxyProj => "proxy_proj",
        }
    }
}

/// One inner-graph layer: `tanh(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Which parameters the optimizer may touch. `true` means frozen.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrozenMask {
    pub base_rows: Vec<bool>,
    pub rel_emb: bool,
    pub agg1: bool,
    pub proxies: bool,
    pub proxy_proj: bool,
}

impl FrozenMask {
    pub fn all_learnable(entities: usize) -> Self {
        FrozenMask {
            base_rows: vec![false; entities],
            ..Default::default()
        }
    }

    pub fn all_frozen(entities: usize) -> Self {
        FrozenMask {
            base_rows: vec![true; entities],
            rel_emb: true,
            agg1: true,
            proxies: true,
            proxy_proj: true,
        }
    }

    pub fn any_base_learnable(&self) -> bool {
        self.base_rows.iter().any(|f| !f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub dim: usize,
    /// Timestamp of the snapshot these parameters belong to.
    pub t: u32,
    /// Seed used for any fresh random rows.
    pub seed: u64,
    pub base_emb: Matrix,
    pub rel_emb: Matrix,
    pub agg1: [Layer; 2],
    pub proxies: Matrix,
    /// `2d × d`; output is `[h ; c]ᵀ · proxy_proj`.
    pub proxy_proj: Matrix,
    pub frozen: FrozenMask,
}

impl EncoderState {
    pub fn num_entities(&self) -> usize {
        self.base_emb.rows()
    }

    pub fn num_relations(&self) -> usize {
        self.rel_emb.rows()
    }

    pub fn proxy_count(&self) -> usize {
        self.proxies.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.base_emb.is_finite()
            && self.rel_emb.is_finite()
            && self
                .agg1
                .iter()
                .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
            && self.proxies.is_finite()
            && self.proxy_proj.is_finite()
    }

    /// Rescale every proxy row to unit length.
    pub fn normalize_proxies(&mut self) {
        for k in 0..self.proxies.rows() {
            normalize(self.proxies.row_mut(k));
        }
    }
}

/// Final entity representations, one unit row per global entity id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: Matrix,
    pub source: u32,
}

impl EmbeddingMatrix {
    pub fn row(&self, e: usize) -> &[f64] {
        self.rows.row(e)
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }
}

fn uniform_unit_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Matrix {
    let bound = 1.0 / (dim as f64).sqrt();
    let mut m = Matrix::zeros(rows, dim);
    for i in 0..rows {
        let row = m.row_mut(i);
        row.iter_mut().for_each(|x| *x = rng.gen_range(-bound..=bound));
        normalize(row);
    }
    m
}

const WEIGHT_NOISE: f64 = 0.01;

fn identity_plus_noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let eye = if i % cols == j { 1.0 } else { 0.0 };
            m[(i, j)] = eye + rng.gen_range(-WEIGHT_NOISE..=WEIGHT_NOISE);
        }
    }
    m
}

/// Fresh parameters for a snapshot pair. Deterministic in `seed`.
pub fn init_parameters(pair: &SnapshotPair, config: &RunConfig, seed: u64) -> Result<EncoderState> {
    if config.dim < 2 {
        return Err(Error::Config("dim must be at least 2".into()));
    }
    if config.proxy_count < 1 {
        return Err(Error::Config("proxy_count must be at least 1".into()));
    }
    let n = pair.num_entities();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_emb = uniform_unit_rows(&mut rng, n, d);
    let rel_emb = uniform_unit_rows(&mut rng, pair.num_relations(), d);
    let agg1 = [
        Layer {
            weight: identity_plus_noise(&mut rng, d, d),
            bias: vec![0.0; d],
        },
        Layer {
            weight: identity_plus_noise(&mut rng, d, d),
            bias: vec![0.0; d],
        },
    ];
    let proxies = uniform_unit_rows(&mut rng, config.proxy_count, d);
    // Stacked identities: the output starts as normalize(h + c).
    let proxy_proj = identity_plus_noise(&mut rng, 2 * d, d);
    Ok(EncoderState {
        dim: d,
        t: pair.t,
        seed,
        base_emb,
        rel_emb,
        agg1,
        proxies,
        proxy_proj,
        frozen: FrozenMask::all_learnable(n),
    })
}

/// Encode every entity of the pair.
pub fn encode_all(state: &EncoderState, pair: &SnapshotPair) -> Result<EmbeddingMatrix> {
    let graph = PairGraph::new(pair);
    encode_graph(state, &graph)
}

pub fn encode_graph(state: &EncoderState, graph: &PairGraph) -> Result<EmbeddingMatrix> {
    if state.num_entities() != graph.num_entities() {
        return Err(Error::Precondition(format!(
            "state covers {} entities, graph has {}",
            state.num_entities(),
            graph.num_entities()
        )));
    }
    let all: Vec<usize> = (0..graph.num_entities()).collect();
    let tape = Tape::forward(state, graph, &all);
    Ok(EmbeddingMatrix {
        rows: tape.into_outputs(),
        source: state.t,
    })
}

/// Carry a trained state from snapshot `t` to `t+1`.
///
/// Old rows move to their new ids unchanged. Each new entity's base row is
/// the mean of its already-known neighbors; if it has none, the mean of the
/// known entities two hops away; failing that, a fresh random unit row.
///
/// The returned mask is the finetuning one: old base rows, relation
/// embeddings and the inner layers are frozen; new rows and the proxy
/// stage are learnable.
pub fn init_new_entities(
    state: &EncoderState,
    pair_next: &SnapshotPair,
    delta: &GrowthDelta,
) -> Result<EncoderState> {
    let n = pair_next.num_entities();
    let d = state.dim;
    if delta.entity_map.len() != state.num_entities() {
        return Err(Error::Precondition(format!(
            "delta maps {} entities, state has {}",
            delta.entity_map.len(),
            state.num_entities()
        )));
    }
    if pair_next.num_relations() != state.num_relations() {
        return Err(Error::Precondition("relation count changed".into()));
    }

    let mut base = Matrix::zeros(n, d);
    let mut old_id: Vec<Option<usize>> = vec![None; n];
    for (old, &new) in delta.entity_map.iter().enumerate() {
        base.row_mut(new).copy_from_slice(state.base_emb.row(old));
        old_id[new] = Some(old);
    }
    let mut rel = Matrix::zeros(state.num_relations(), d);
    for (old, &new) in delta.relation_map.iter().enumerate() {
        rel.row_mut(new).copy_from_slice(state.rel_emb.row(old));
    }

    let graph = PairGraph::new(pair_next);
    let mut fresh: Vec<usize> = delta.new_entities().collect();
    fresh.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(state.seed ^ ((pair_next.t as u64) << 32));
    for &e in &fresh {
        let hop1: BTreeSet<usize> = graph
            .neighbors(e)
            .iter()
            .map(|nb| nb.entity)
            .filter(|&u| old_id[u].is_some())
            .collect();
        let pool = if hop1.is_empty() {
            graph
                .neighbors(e)
                .iter()
                .flat_map(|nb| graph.neighbors(nb.entity))
                .map(|nb| nb.entity)
                .filter(|&u| old_id[u].is_some() && u != e)
                .collect()
        } else {
            hop1
        };
        let row = base.row_mut(e);
        if pool.is_empty() {
            let bound = 1.0 / (d as f64).sqrt();
            row.iter_mut().for_each(|x| *x = rng.gen_range(-bound..=bound));
            normalize(row);
        } else {
            for &u in &pool {
                let src = state.base_emb.row(old_id[u].expect("pool holds old entities"));
                row.iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / pool.len() as f64;
            row.iter_mut().for_each(|x| *x *= inv);
        }
    }

    let frozen = FrozenMask {
        base_rows: old_id.iter().map(Option::is_some).collect(),
        rel_emb: true,
        agg1: true,
        proxies: false,
        proxy_proj: false,
    };
    Ok(EncoderState {
        dim: d,
        t: pair_next.t,
        seed: state.seed,
        base_emb: base,
        rel_emb: rel,
        agg1: state.agg1.clone(),
        proxies: state.proxies.clone(),
        proxy_proj: state.proxy_proj.clone(),
        frozen,
    })
}
