//! Training losses and their analytic gradients.
//!
//! * reconstruction: `Σₑ ‖bₑ − mean_{Nₑ} b‖²` over base embeddings,
//! * alignment: `log(1 + Σᵢ Σ_{j≠i} exp(γ(λ − Sᵢᵢ + Sᵢⱼ)))` where `Sᵢⱼ` is the
//!   cosine between the i-th source and j-th target of a batch,
//! * initial training: `align + α·rec`,
//! * finetuning: `align(ASA) + α·rec + β·align(TA)`.

use crate::config::RunConfig;
use crate::encoder::{EmbeddingMatrix, EncoderState, Gradients, StageOneCache, Tape};
use crate::error::Result;
use crate::kg_store::{PairGraph, Pair};
use crate::linalg::{axpy, dot, log1p_sum_exp, norm, Matrix};
use crate::par;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub align: f64,
    pub reconstruct: f64,
    pub align_ta: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn initial(align: f64, reconstruct: f64, alpha: f64) -> Self {
        LossBreakdown {
            align,
            reconstruct,
            align_ta: 0.0,
            total: align + alpha * reconstruct,
        }
    }

    pub fn finetune(align: f64, reconstruct: f64, align_ta: f64, alpha: f64, beta: f64) -> Self {
        LossBreakdown {
            align,
            reconstruct,
            align_ta,
            total: align + alpha * reconstruct + beta * align_ta,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.align.is_finite()
            && self.reconstruct.is_finite()
            && self.align_ta.is_finite()
            && self.total.is_finite()
    }
}

/// Alignment pairs trained together; every other target in the batch is a
/// negative for each source.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pairs: Vec<Pair>,
}

impl Batch {
    /// Sorts and deduplicates, so the loss does not depend on input order.
    pub fn new(mut pairs: Vec<Pair>) -> Self {
        pairs.sort_unstable();
        pairs.dedup();
        Batch { pairs }
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn entities(&self) -> impl Iterator<Item = usize> + '_ {
        self.pairs.iter().flat_map(|&(a, b)| [a, b])
    }
}

/// Which loss to evaluate or differentiate.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Reconstruction alone, unweighted.
    Reconstruct,
    /// Alignment loss of one batch alone.
    Align(&'a Batch),
    /// `align + α·rec`.
    Initial(&'a Batch),
    /// `align(asa) + α·rec + β·align(ta)`.
    Finetune { asa: &'a Batch, ta: &'a Batch },
}

fn residuals(base: &Matrix, graph: &PairGraph) -> Matrix {
    let d = base.cols();
    let mut r = Matrix::zeros(graph.num_entities(), d);
    par::fill_rows(r.as_mut_slice(), d, |e, row| {
        let nbrs = graph.neighbors(e);
        if nbrs.is_empty() {
            return;
        }
        for nb in nbrs {
            axpy(1.0, base.row(nb.entity), row);
        }
        let inv = -1.0 / nbrs.len() as f64;
        row.iter_mut().for_each(|x| *x *= inv);
        axpy(1.0, base.row(e), row);
    });
    r
}

fn sum_sq(r: &Matrix) -> f64 {
    par::chunked_fold(r.rows(), || 0.0, |acc, e| *acc += dot(r.row(e), r.row(e)), |a, b| *a += b)
}

/// `Σₑ ‖bₑ − mean_{Nₑ} b‖²`; entities without neighbors contribute nothing.
pub fn reconstruction_loss(base: &Matrix, graph: &PairGraph) -> f64 {
    sum_sq(&residuals(base, graph))
}

/// The single term of entity `e` in [`reconstruction_loss`].
pub fn reconstruction_term(base: &Matrix, graph: &PairGraph, e: usize) -> f64 {
    let nbrs = graph.neighbors(e);
    if nbrs.is_empty() {
        return 0.0;
    }
    let mut r = base.row(e).to_vec();
    for nb in nbrs {
        axpy(-1.0 / nbrs.len() as f64, base.row(nb.entity), &mut r);
    }
    dot(&r, &r)
}

/// Adds `scale · ∂rec/∂base` into the learnable rows of `out`; returns the loss.
fn reconstruction_grad(base: &Matrix, graph: &PairGraph, frozen_rows: &[bool], scale: f64, out: &mut Matrix) -> f64 {
    let r = residuals(base, graph);
    let loss = sum_sq(&r);
    if frozen_rows.iter().all(|&f| f) {
        return loss;
    }
    let d = base.cols();
    par::fill_rows(out.as_mut_slice(), d, |x, row| {
        if frozen_rows[x] {
            return;
        }
        if graph.degree(x) > 0 {
            axpy(2.0 * scale, r.row(x), row);
        }
        for nb in graph.neighbors(x) {
            let inv = 1.0 / graph.degree(nb.entity) as f64;
            axpy(-2.0 * scale * inv, r.row(nb.entity), row);
        }
    });
    loss
}

/// Alignment loss of `pairs` given unit output rows, optionally adding
/// `weight · ∂L/∂row` into `g_out`. `pos` maps an entity to its row.
fn align_core(
    out: &Matrix,
    pos: &dyn Fn(usize) -> usize,
    pairs: &[Pair],
    gamma: f64,
    lambda: f64,
    grad: Option<(f64, &mut Matrix)>,
) -> f64 {
    let b = pairs.len();
    if b < 2 {
        return 0.0;
    }
    let src: Vec<usize> = pairs.iter().map(|&(a, _)| pos(a)).collect();
    let tgt: Vec<usize> = pairs.iter().map(|&(_, t)| pos(t)).collect();
    let mut sim = Matrix::zeros(b, b);
    par::fill_rows(sim.as_mut_slice(), b, |i, row| {
        let a = out.row(src[i]);
        for (j, s) in row.iter_mut().enumerate() {
            *s = dot(a, out.row(tgt[j]));
        }
    });
    // x_ij = γ(λ − S_ii + S_ij) for j ≠ i; the diagonal is unused.
    let mut x = Matrix::zeros(b, b);
    par::fill_rows(x.as_mut_slice(), b, |i, row| {
        let s = sim.row(i);
        for j in 0..b {
            row[j] = if j == i { f64::NEG_INFINITY } else { gamma * (lambda - s[i] + s[j]) };
        }
    });
    let max = x.as_slice().iter().copied().fold(0.0_f64, f64::max);
    let partial: Vec<f64> = par::map_indices(b, |i| x.row(i).iter().map(|&v| (v - max).exp()).sum());
    let z = (-max).exp() + partial.iter().sum::<f64>();
    let loss = max + z.ln();

    if let Some((weight, g_out)) = grad {
        // dL/dS_ij = γ w_ij (j ≠ i), dL/dS_ii = −γ Σ_j w_ij, w = softmax weights.
        let mut ds = x;
        par::fill_rows(ds.as_mut_slice(), b, |i, row| {
            let mut diag = 0.0;
            for (j, v) in row.iter_mut().enumerate() {
                if j == i {
                    *v = 0.0;
                    continue;
                }
                *v = weight * gamma * (*v - max).exp() / z;
                diag += *v;
            }
            row[i] = -diag;
        });
        for i in 0..b {
            let a = out.row(src[i]).to_vec();
            let row = ds.row(i);
            let mut ga = vec![0.0; out.cols()];
            for j in 0..b {
                axpy(row[j], out.row(tgt[j]), &mut ga);
            }
            axpy(1.0, &ga, g_out.row_mut(src[i]));
            for j in 0..b {
                axpy(row[j], &a, g_out.row_mut(tgt[j]));
            }
        }
    }
    loss
}

/// `log(1 + Σ exp(γ(λ − pos + neg)))` over `(pos, neg)` similarity pairs.
pub fn margin_loss(terms: &[(f64, f64)], gamma: f64, lambda: f64) -> f64 {
    let xs: Vec<f64> = terms.iter().map(|&(p, n)| gamma * (lambda - p + n)).collect();
    log1p_sum_exp(&xs)
}

/// Alignment loss over precomputed representations, using cosine similarity.
pub fn alignment_loss(emb: &EmbeddingMatrix, batch: &Batch, gamma: f64, lambda: f64) -> f64 {
    let d = emb.rows.cols();
    let ents: Vec<usize> = batch.entities().collect();
    let mut unit = Matrix::zeros(ents.len(), d);
    for (i, &e) in ents.iter().enumerate() {
        let row = emb.row(e);
        let n = norm(row);
        if n > 0.0 {
            axpy(1.0 / n, row, unit.row_mut(i));
        }
    }
    // Each pair occupies rows 2k and 2k+1 of `unit`.
    let local: Vec<Pair> = (0..batch.len()).map(|k| (2 * k, 2 * k + 1)).collect();
    align_core(&unit, &|i| i, &local, gamma, lambda, None)
}

fn targets(obj: &Objective<'_>) -> Vec<usize> {
    match obj {
        Objective::Reconstruct => Vec::new(),
        Objective::Align(b) | Objective::Initial(b) => b.entities().collect(),
        Objective::Finetune { asa, ta } => asa.entities().chain(ta.entities()).collect(),
    }
}

fn run(
    obj: Objective<'_>,
    state: &EncoderState,
    graph: &PairGraph,
    config: &RunConfig,
    cache: Option<&StageOneCache>,
    grads: Option<&mut Gradients>,
) -> LossBreakdown {
    let (gamma, lambda) = (config.gamma, config.lambda);
    let want_rec = !matches!(obj, Objective::Align(_));
    let rec_scale = match obj {
        Objective::Reconstruct => 1.0,
        _ => config.alpha,
    };
    let targets = targets(&obj);
    let tape = (!targets.is_empty()).then(|| Tape::forward_cached(state, graph, &targets, cache));

    let mut grads = grads;
    let mut g_out = tape.as_ref().map(|t| Matrix::zeros(t.targets().len(), state.dim));
    let mut align_of = |batch: &Batch, weight: f64| -> f64 {
        let Some(tape) = tape.as_ref() else { return 0.0 };
        let pos = |e: usize| tape.position(e).expect("batch entity on tape");
        let g = if grads.is_some() {
            g_out.as_mut().map(|g| (weight, g))
        } else {
            None
        };
        align_core(tape.outputs(), &pos, batch.pairs(), gamma, lambda, g)
    };
    let (align, align_ta) = match obj {
        Objective::Reconstruct => (0.0, 0.0),
        Objective::Align(b) | Objective::Initial(b) => (align_of(b, 1.0), 0.0),
        Objective::Finetune { asa, ta } => (align_of(asa, 1.0), align_of(ta, config.beta)),
    };

    let reconstruct = if !want_rec {
        0.0
    } else if let Some(g) = grads.as_deref_mut() {
        reconstruction_grad(&state.base_emb, graph, &state.frozen.base_rows, rec_scale, &mut g.base_emb)
    } else {
        reconstruction_loss(&state.base_emb, graph)
    };

    if let (Some(g), Some(tape), Some(g_out)) = (grads, tape.as_ref(), g_out.as_ref()) {
        tape.backward(state, graph, g_out, g);
    }

    match obj {
        Objective::Reconstruct => LossBreakdown {
            reconstruct,
            total: reconstruct,
            ..Default::default()
        },
        Objective::Align(_) => LossBreakdown {
            align,
            total: align,
            ..Default::default()
        },
        Objective::Initial(_) => LossBreakdown::initial(align, reconstruct, config.alpha),
        Objective::Finetune { .. } => {
            LossBreakdown::finetune(align, reconstruct, align_ta, config.alpha, config.beta)
        }
    }
}

/// Evaluate a loss without gradients.
pub fn loss(obj: Objective<'_>, state: &EncoderState, graph: &PairGraph, config: &RunConfig) -> LossBreakdown {
    run(obj, state, graph, config, None, None)
}

pub fn loss_initial(state: &EncoderState, graph: &PairGraph, batch: &Batch, config: &RunConfig) -> LossBreakdown {
    loss(Objective::Initial(batch), state, graph, config)
}

pub fn loss_finetune(
    state: &EncoderState,
    graph: &PairGraph,
    asa: &Batch,
    ta: &Batch,
    config: &RunConfig,
) -> LossBreakdown {
    loss(Objective::Finetune { asa, ta }, state, graph, config)
}

/// Add the gradient of `obj` into `grads` and return the loss at `state`.
///
/// Frozen groups and rows receive nothing.
pub fn gradient(
    obj: Objective<'_>,
    state: &EncoderState,
    graph: &PairGraph,
    config: &RunConfig,
    grads: &mut Gradients,
) -> Result<LossBreakdown> {
    gradient_cached(obj, state, graph, config, None, grads)
}

/// [`gradient`] with stage-one outputs taken from `cache` where they are clean.
pub fn gradient_cached(
    obj: Objective<'_>,
    state: &EncoderState,
    graph: &PairGraph,
    config: &RunConfig,
    cache: Option<&StageOneCache>,
    grads: &mut Gradients,
) -> Result<LossBreakdown> {
    let l = run(obj, state, graph, config, cache, Some(grads));
    grads.check_finite()?;
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_parameters, FrozenMask};
    use crate::kg_store::{Direction, KnowledgeGraph, Neighbor, SnapshotPair};

    fn two_node_graph() -> PairGraph {
        let nb = |e| Neighbor {
            relation: 0,
            entity: e,
            direction: Direction::Out,
        };
        PairGraph::from_lists(vec![vec![nb(1)], vec![nb(0)]])
    }

    #[test]
    fn reconstruction_of_identical_rows_is_zero() {
        let g = two_node_graph();
        let base = Matrix::from_rows(&[vec![0.3, 0.4], vec![0.3, 0.4]]);
        assert_eq!(reconstruction_loss(&base, &g), 0.0);
    }

    #[test]
    fn reconstruction_hand_values() {
        let g = two_node_graph();
        let base = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(reconstruction_term(&base, &g, 0), 2.0);
        // Both endpoints carry a term, so the sum is twice the single term
        // and the derivative with respect to row 0 picks up both: 4(e − n).
        assert_eq!(reconstruction_loss(&base, &g), 4.0);
        let mut out = Matrix::zeros(2, 2);
        reconstruction_grad(&base, &g, &[false, true], 1.0, &mut out);
        assert_eq!(out.row(0), &[4.0, -4.0]);
        assert_eq!(out.row(1), &[0.0, 0.0]);
        // The single term alone: ∂/∂e ‖e − n‖² = 2(e − n).
        let h = 1e-6;
        let mut plus = base.clone();
        plus[(0, 0)] += h;
        let mut minus = base.clone();
        minus[(0, 0)] -= h;
        let fd = (reconstruction_term(&plus, &g, 0) - reconstruction_term(&minus, &g, 0)) / (2.0 * h);
        assert!((fd - 2.0).abs() < 1e-6);
    }

    fn emb(rows: &[Vec<f64>]) -> EmbeddingMatrix {
        EmbeddingMatrix {
            rows: Matrix::from_rows(rows),
            source: 0,
        }
    }

    #[test]
    fn margin_hand_values() {
        assert!((margin_loss(&[(0.3, 0.3)], 1.0, 0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((margin_loss(&[(0.3, 0.3)], 1.0, 0.0) - 0.693147).abs() < 1e-6);
        let l = margin_loss(&[(1.0, 0.0)], 2.0, 0.5);
        assert!((l - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
        assert!((l - 0.313262).abs() < 1e-6);
        assert_eq!(margin_loss(&[], 15.0, 0.5), 0.0);
    }

    #[test]
    fn alignment_enumerates_in_batch_negatives() {
        let e = emb(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(alignment_loss(&e, &Batch::new(vec![(0, 1)]), 15.0, 0.5), 0.0);
        assert_eq!(alignment_loss(&e, &Batch::default(), 15.0, 0.5), 0.0);

        // Sources 0 and 2; targets 1 and 3. Unnormalized rows are fine.
        let e = emb(&[vec![2.0, 0.0], vec![0.6, 0.8], vec![0.0, 3.0], vec![1.0, 1.0]]);
        let b = Batch::new(vec![(2, 3), (0, 1)]);
        let c = |i: usize, j: usize| dot(e.row(i), e.row(j)) / (norm(e.row(i)) * norm(e.row(j)));
        let terms = [(c(0, 1), c(0, 3)), (c(2, 3), c(2, 1))];
        let want = margin_loss(&terms, 2.0, 0.5);
        assert!((alignment_loss(&e, &b, 2.0, 0.5) - want).abs() < 1e-12);
    }

    #[test]
    fn breakdown_arithmetic() {
        let l = LossBreakdown::initial(1.0, 2.0, 0.1);
        assert!((l.total - 1.2).abs() < 1e-15);
        assert_eq!(LossBreakdown::initial(0.7, 5.0, 0.0).total, 0.7);
        let f = LossBreakdown::finetune(1.0, 1.0, 2.0, 0.1, 0.1);
        assert!((f.total - 1.3).abs() < 1e-15);
        assert_eq!(LossBreakdown::finetune(1.0, 2.0, 9.0, 0.1, 0.0).total, LossBreakdown::initial(1.0, 2.0, 0.1).total);
    }

    #[test]
    fn all_frozen_gives_zero_gradient() {
        let p = SnapshotPair::new(
            0,
            KnowledgeGraph::from_triples([("a", "r", "b"), ("b", "s", "c")]),
            KnowledgeGraph::from_triples([("x", "r", "y"), ("y", "s", "z")]),
        );
        let cfg = RunConfig {
            dim: 4,
            proxy_count: 2,
            ..RunConfig::default()
        };
        let mut s = init_parameters(&p, &cfg, 1).unwrap();
        s.frozen = FrozenMask::all_frozen(p.num_entities());
        let g = PairGraph::new(&p);
        let mut grads = Gradients::zeros_like(&s);
        let asa = Batch::new(vec![(0, 3), (1, 4)]);
        let ta = Batch::new(vec![(2, 5)]);
        let l = gradient(Objective::Finetune { asa: &asa, ta: &ta }, &s, &g, &cfg, &mut grads).unwrap();
        assert!(l.total > 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }
}
