//! Adam optimization with validation-based early stopping.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::encoder::{init_new_entities, init_parameters, EncoderState, FrozenMask, Gradients, StageOneCache, Tape};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_pairs, f1_score};
use crate::kg_store::{AlignmentSets, GrowthDelta, Pair, PairGraph, SnapshotPair};
use crate::matcher::{bidirectional_search, SimilarityMetric};
use crate::objectives::{gradient_cached, loss, Batch, LossBreakdown, Objective};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam state for every parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    steps: u64,
    m: Gradients,
    v: Gradients,
}

fn adam_slice(p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], step: f64, bc2: f64) {
    for i in 0..p.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
        p[i] -= step * m[i] / ((v[i] / bc2).sqrt() + EPS);
    }
}

impl Adam {
    pub fn new(state: &EncoderState, lr: f64) -> Self {
        Adam {
            lr,
            steps: 0,
            m: Gradients::zeros_like(state),
            v: Gradients::zeros_like(state),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every learnable parameter. Frozen groups and rows are
    /// not touched at all, so they stay bit-identical.
    pub fn step(&mut self, state: &mut EncoderState, g: &Gradients) {
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let step = self.lr / bc1;
        let mask = state.frozen.clone();
        let (m, v) = (&mut self.m, &mut self.v);
        let d = state.dim;

        for (e, &frozen) in mask.base_rows.iter().enumerate() {
            if !frozen {
                let r = e * d..(e + 1) * d;
                adam_slice(
                    &mut state.base_emb.as_mut_slice()[r.clone()],
                    &mut m.base_emb.as_mut_slice()[r.clone()],
                    &mut v.base_emb.as_mut_slice()[r.clone()],
                    &g.base_emb.as_slice()[r],
                    step,
                    bc2,
                );
            }
        }
        if !mask.rel_emb {
            adam_slice(
                state.rel_emb.as_mut_slice(),
                m.rel_emb.as_mut_slice(),
                v.rel_emb.as_mut_slice(),
                g.rel_emb.as_slice(),
                step,
                bc2,
            );
        }
        if !mask.agg1 {
            for l in 0..2 {
                adam_slice(
                    state.agg1[l].weight.as_mut_slice(),
                    m.agg1_weight[l].as_mut_slice(),
                    v.agg1_weight[l].as_mut_slice(),
                    g.agg1_weight[l].as_slice(),
                    step,
                    bc2,
                );
                adam_slice(
                    &mut state.agg1[l].bias,
                    &mut m.agg1_bias[l],
                    &mut v.agg1_bias[l],
                    &g.agg1_bias[l],
                    step,
                    bc2,
                );
            }
        }
        if !mask.proxies {
            adam_slice(
                state.proxies.as_mut_slice(),
                m.proxies.as_mut_slice(),
                v.proxies.as_mut_slice(),
                g.proxies.as_slice(),
                step,
                bc2,
            );
            state.normalize_proxies();
        }
        if !mask.proxy_proj {
            adam_slice(
                state.proxy_proj.as_mut_slice(),
                m.proxy_proj.as_mut_slice(),
                v.proxy_proj.as_mut_slice(),
                g.proxy_proj.as_slice(),
                step,
                bc2,
            );
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's steps; at epoch 0, the loss before any update.
    pub loss: LossBreakdown,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub state: EncoderState,
    pub history: Vec<EpochRecord>,
    /// Last epoch that ran.
    pub stopped_epoch: usize,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    /// Gradient updates performed.
    pub steps: u64,
    pub wall_time_s: f64,
}

/// F1 of bidirectional search restricted to the validation entities.
pub fn validation_f1(
    state: &EncoderState,
    graph: &PairGraph,
    valid: &[Pair],
    metric: SimilarityMetric,
) -> Result<f64> {
    validation_f1_cached(state, graph, valid, metric, None)
}

fn validation_f1_cached(
    state: &EncoderState,
    graph: &PairGraph,
    valid: &[Pair],
    metric: SimilarityMetric,
    cache: Option<&StageOneCache>,
) -> Result<f64> {
    if valid.is_empty() {
        return Ok(0.0);
    }
    let mut left: Vec<usize> = valid.iter().map(|p| p.0).collect();
    let mut right: Vec<usize> = valid.iter().map(|p| p.1).collect();
    left.sort_unstable();
    left.dedup();
    right.sort_unstable();
    right.dedup();
    let ents: Vec<usize> = left.iter().chain(&right).copied().collect();
    let tape = Tape::forward_cached(state, graph, &ents, cache);
    let rows = |ids: &[usize]| {
        let pos: Vec<usize> = ids.iter().map(|&e| tape.position(e).expect("on tape")).collect();
        tape.outputs().select_rows(&pos)
    };
    let found = bidirectional_search(&rows(&left), &rows(&right), metric)?;
    let gold: HashSet<Pair> = valid.iter().copied().collect();
    let m = evaluate_pairs(found.into_iter().map(|(i, j, _)| (left[i], right[j])), &gold)?;
    Ok(f1_score(m.precision, m.recall))
}

fn shuffled_batches(pairs: &[Pair], size: usize, rng: &mut ChaCha8Rng) -> Vec<Batch> {
    let mut v = pairs.to_vec();
    v.shuffle(rng);
    v.chunks(size.max(1)).map(|c| Batch::new(c.to_vec())).collect()
}

struct Run<'a> {
    graph: &'a PairGraph,
    config: &'a RunConfig,
    valid: &'a [Pair],
    metric: SimilarityMetric,
    epochs: usize,
}

/// What one training step optimizes.
enum Plan<'a> {
    Initial { seeds: &'a [Pair] },
    Finetune { asa: &'a [Pair], ta: &'a [Pair] },
}

impl Plan<'_> {
    fn epoch(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<(Batch, Batch)> {
        match self {
            Plan::Initial { seeds } => shuffled_batches(seeds, batch_size, rng)
                .into_iter()
                .map(|b| (b, Batch::default()))
                .collect(),
            Plan::Finetune { asa, ta } => {
                let a = shuffled_batches(asa, batch_size, rng);
                let t = shuffled_batches(ta, batch_size, rng);
                let steps = a.len().max(t.len()).max(1);
                (0..steps)
                    .map(|k| {
                        (
                            a.get(k).cloned().unwrap_or_default(),
                            t.get(k).cloned().unwrap_or_default(),
                        )
                    })
                    .collect()
            }
        }
    }

    fn objective<'b>(&self, step: &'b (Batch, Batch)) -> Objective<'b> {
        match self {
            Plan::Initial { .. } => Objective::Initial(&step.0),
            Plan::Finetune { .. } => Objective::Finetune {
                asa: &step.0,
                ta: &step.1,
            },
        }
    }
}

fn mean(acc: LossBreakdown, n: usize) -> LossBreakdown {
    let k = n.max(1) as f64;
    LossBreakdown {
        align: acc.align / k,
        reconstruct: acc.reconstruct / k,
        align_ta: acc.align_ta / k,
        total: acc.total / k,
    }
}

fn optimize(run: &Run<'_>, plan: Plan<'_>, mut state: EncoderState, rng_seed: u64) -> Result<TrainedModel> {
    let started = Instant::now();
    let cfg = run.config;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut adam = Adam::new(&state, cfg.lr);
    let mut grads = Gradients::zeros_like(&state);
    let track = !run.valid.is_empty();
    let cache = StageOneCache::build(&state, run.graph);
    if let Some(c) = &cache {
        let (l1, l2) = c.dirty_count();
        log::debug!("live entities: {l1} at layer one, {l2} at layer two, of {}", run.graph.num_entities());
    }
    let validate = |s: &EncoderState| validation_f1_cached(s, run.graph, run.valid, run.metric, cache.as_ref());

    let first = plan.epoch(cfg.batch_size, &mut rng.clone());
    let initial = loss(plan.objective(&first[0]), &state, run.graph, cfg);
    if !initial.is_finite() {
        return Err(Error::TrainingDiverged(0));
    }
    let val0 = track.then(|| validate(&state)).transpose()?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        loss: initial,
        val_f1: val0,
    }];
    let mut best = (val0.unwrap_or(0.0), 0usize, state.clone());
    let mut bad_evals = 0usize;
    let mut stopped = 0usize;

    for epoch in 1..=run.epochs {
        stopped = epoch;
        let steps = plan.epoch(cfg.batch_size, &mut rng);
        let mut acc = LossBreakdown::default();
        for step in &steps {
            grads.clear();
            let l = gradient_cached(plan.objective(step), &state, run.graph, cfg, cache.as_ref(), &mut grads)
                .map_err(|_| Error::TrainingDiverged(epoch))?;
            if !l.is_finite() {
                return Err(Error::TrainingDiverged(epoch));
            }
            acc.align += l.align;
            acc.reconstruct += l.reconstruct;
            acc.align_ta += l.align_ta;
            acc.total += l.total;
            adam.step(&mut state, &grads);
        }
        if !state.is_finite() {
            return Err(Error::TrainingDiverged(epoch));
        }
        let evaluate = track && (epoch % cfg.eval_every == 0 || epoch == run.epochs);
        let val = evaluate.then(|| validate(&state)).transpose()?;
        history.push(EpochRecord {
            epoch,
            loss: mean(acc, steps.len()),
            val_f1: val,
        });
        if let Some(f1) = val {
            log::debug!("epoch {epoch}: loss {:.5} val F1 {f1:.4}", acc.total / steps.len() as f64);
            if f1 > best.0 {
                best = (f1, epoch, state.clone());
                bad_evals = 0;
            } else {
                bad_evals += 1;
                if bad_evals > cfg.patience {
                    break;
                }
            }
        }
    }
    let (best_epoch, state) = if track {
        (best.1, best.2)
    } else {
        (stopped, state)
    };
    Ok(TrainedModel {
        state,
        history,
        stopped_epoch: stopped,
        best_epoch,
        steps: adam.steps(),
        wall_time_s: started.elapsed().as_secs_f64().max(f64::MIN_POSITIVE),
    })
}

/// Train every parameter group from scratch on the seed alignment.
pub fn train_initial(pair: &SnapshotPair, aligns: &AlignmentSets, config: &RunConfig) -> Result<TrainedModel> {
    config.validate()?;
    if aligns.seed.is_empty() {
        return Err(Error::Precondition("seed alignment is empty".into()));
    }
    let mut state = init_parameters(pair, config, config.seed)?;
    state.frozen = FrozenMask::all_learnable(pair.num_entities());
    let graph = PairGraph::new(pair);
    let run = Run {
        graph: &graph,
        config,
        valid: &aligns.valid,
        metric: SimilarityMetric::from_config(config),
        epochs: config.epochs,
    };
    optimize(&run, Plan::Initial { seeds: &aligns.seed }, state, config.seed ^ 0x7261_696e)
}

/// Carry `prev` to the next snapshot and finetune the proxy stage and the
/// new entities on `asa` plus `ta_top`.
pub fn finetune(
    prev: &TrainedModel,
    pair_next: &SnapshotPair,
    delta: &GrowthDelta,
    asa: &[Pair],
    ta_top: &[Pair],
    valid: &[Pair],
    config: &RunConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    let state = init_new_entities(&prev.state, pair_next, delta)?;
    if asa.is_empty() && ta_top.is_empty() {
        log::warn!("no finetuning signal at t={}: reconstruction only", pair_next.t);
    }
    let graph = PairGraph::new(pair_next);
    let run = Run {
        graph: &graph,
        config,
        valid,
        metric: SimilarityMetric::from_config(config),
        epochs: config.finetune_epochs,
    };
    let seed = config.seed ^ ((pair_next.t as u64) << 40) ^ 0x6674;
    optimize(&run, Plan::Finetune { asa, ta: ta_top }, state, seed)
}

/// `epoch,total_loss,align_loss,reconstruct_loss,val_f1`, blank F1 when not evaluated.
pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut s = String::from("epoch,total_loss,align_loss,reconstruct_loss,val_f1\n");
    for r in history {
        let f1 = r.val_f1.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{:.8},{:.8},{:.8},{}",
            r.epoch, r.loss.total, r.loss.align, r.loss.reconstruct, f1
        );
    }
    fs::write(path, s).map_err(|e| Error::output(path, e))
}
