//! The snapshot-by-snapshot pipeline and its ablation modes.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use crate::config::{Mode, RunConfig};
use crate::encoder::{encode_all, init_new_entities, write_checkpoint};
use crate::error::{Error, Result};
use crate::evalkit::{emit_report, evaluate, new_entity_recall, Metrics};
use crate::kg_store::{load_snapshot, validate_growth, AlignmentSets, GrowthDelta, Pair, SnapshotPair};
use crate::matcher::{integrate_alignment, search_candidates, ScoredPair, SimilarityMetric, TrustworthyAlignment};
use crate::trainer::{finetune, train_initial, write_history, EpochRecord, TrainedModel};

/// Seed pairs with an endpoint in a newly added triple.
pub fn select_affected_seeds(seeds: &[Pair], delta: &GrowthDelta) -> Vec<Pair> {
    let touched: HashSet<usize> = delta
        .new_triples_1
        .iter()
        .chain(&delta.new_triples_2)
        .flat_map(|t| [t.head, t.tail])
        .collect();
    let mut out: Vec<Pair> = seeds
        .iter()
        .copied()
        .filter(|(a, b)| touched.contains(a) || touched.contains(b))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// The `m` best-scoring pairs, ordered by score (descending) then `e1`.
pub fn select_top_ta(ta: &TrustworthyAlignment, m: usize) -> Vec<ScoredPair> {
    let mut v = ta.pairs().to_vec();
    v.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.e1.cmp(&b.e1)).then(a.e2.cmp(&b.e2)));
    v.truncate(m);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    pub t: u32,
    pub metrics: Metrics,
    /// Whole snapshot: training, encoding, search and integration.
    pub wall_time_s: f64,
    /// Training (or finetuning) alone.
    pub train_time_s: f64,
    pub ta_size: usize,
    pub test_size: usize,
    /// Gradient updates performed at this snapshot.
    pub steps: u64,
    pub asa_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub mode: Mode,
    pub snapshots: Vec<SnapshotRecord>,
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub model: TrainedModel,
    pub alignment: TrustworthyAlignment,
    pub histories: Vec<Vec<EpochRecord>>,
}

pub type Snapshot = (SnapshotPair, AlignmentSets);

pub fn load_sequence(dirs: &[PathBuf]) -> Result<Vec<Snapshot>> {
    if dirs.is_empty() {
        return Err(Error::Config("no snapshot directories given".into()));
    }
    dirs.iter()
        .enumerate()
        .map(|(i, d)| load_snapshot(d).map_err(|e| e.at_snapshot(i)))
        .collect()
}

/// Entities that may still be matched: not part of the seed or validation links.
pub fn candidates(pair: &SnapshotPair, aligns: &AlignmentSets) -> (Vec<usize>, Vec<usize>) {
    let known = aligns.supervised_entities();
    let left = pair.kg1_entities().filter(|e| !known.contains(e)).collect();
    let right = pair.kg2_entities().filter(|e| !known.contains(e)).collect();
    (left, right)
}

struct Stage {
    model: TrainedModel,
    alignment: TrustworthyAlignment,
    record: SnapshotRecord,
}

fn search_and_score(
    model: &TrainedModel,
    pair: &SnapshotPair,
    aligns: &AlignmentSets,
    config: &RunConfig,
) -> Result<TrustworthyAlignment> {
    let emb = encode_all(&model.state, pair)?;
    let (left, right) = candidates(pair, aligns);
    search_candidates(&emb, &left, &right, SimilarityMetric::from_config(config), pair.t)
}

fn score(
    alignment: &TrustworthyAlignment,
    aligns: &AlignmentSets,
    new_entities: &HashSet<usize>,
) -> Result<Metrics> {
    let gold: HashSet<Pair> = aligns.test.iter().copied().collect();
    let mut m = evaluate(alignment, &gold)?;
    m.new_entity_recall = new_entity_recall(alignment, &gold, new_entities);
    Ok(m)
}

fn initial_stage((pair, aligns): &Snapshot, config: &RunConfig) -> Result<Stage> {
    let started = Instant::now();
    let model = train_initial(pair, aligns, config)?;
    let alignment = search_and_score(&model, pair, aligns, config)?;
    let metrics = score(&alignment, aligns, &HashSet::new())?;
    let record = SnapshotRecord {
        t: pair.t,
        metrics,
        wall_time_s: started.elapsed().as_secs_f64(),
        train_time_s: model.wall_time_s,
        ta_size: alignment.len(),
        test_size: aligns.test.len(),
        steps: model.steps,
        asa_size: 0,
    };
    Ok(Stage {
        model,
        alignment,
        record,
    })
}

fn next_stage(
    prev: &Stage,
    prev_pair: &SnapshotPair,
    (pair, aligns): &Snapshot,
    new_entities: &HashSet<usize>,
    config: &RunConfig,
) -> Result<Stage> {
    let started = Instant::now();
    let delta = validate_growth(prev_pair, pair)?;
    let mode = config.mode;
    let asa = match mode {
        Mode::Full | Mode::NoTa => select_affected_seeds(&aligns.seed, &delta),
        _ => Vec::new(),
    };
    let model = match mode {
        Mode::Retrain => train_initial(pair, aligns, config)?,
        Mode::NoTaNoAsa => {
            let t0 = Instant::now();
            let state = init_new_entities(&prev.model.state, pair, &delta)?;
            TrainedModel {
                state,
                history: Vec::new(),
                stopped_epoch: 0,
                best_epoch: 0,
                steps: 0,
                wall_time_s: t0.elapsed().as_secs_f64().max(f64::MIN_POSITIVE),
            }
        }
        Mode::Full | Mode::NoTa => {
            let top: Vec<Pair> = if mode == Mode::Full {
                select_top_ta(&prev.alignment.remap(&delta), config.top_m)
                    .iter()
                    .map(ScoredPair::pair)
                    .collect()
            } else {
                Vec::new()
            };
            finetune(&prev.model, pair, &delta, &asa, &top, &aligns.valid, config)?
        }
    };
    let found = search_and_score(&model, pair, aligns, config)?;
    let alignment = if mode == Mode::Retrain {
        found
    } else {
        integrate_alignment(&prev.alignment, &found, &delta)?
    };
    let metrics = score(&alignment, aligns, new_entities)?;
    let record = SnapshotRecord {
        t: pair.t,
        metrics,
        wall_time_s: started.elapsed().as_secs_f64(),
        train_time_s: model.wall_time_s,
        ta_size: alignment.len(),
        test_size: aligns.test.len(),
        steps: model.steps,
        asa_size: asa.len(),
    };
    Ok(Stage {
        model,
        alignment,
        record,
    })
}

/// New entities accumulated since the first snapshot, in the ids of each snapshot.
fn cumulative_new(snapshots: &[Snapshot]) -> Result<Vec<HashSet<usize>>> {
    let mut out = vec![HashSet::new()];
    for i in 1..snapshots.len() {
        let delta = validate_growth(&snapshots[i - 1].0, &snapshots[i].0).map_err(|e| e.at_snapshot(i))?;
        let mut set: HashSet<usize> = out[i - 1].iter().map(|&e| delta.entity_map[e]).collect();
        set.extend(delta.new_entities());
        out.push(set);
    }
    Ok(out)
}

fn continue_from(first: &Stage, snapshots: &[Snapshot], news: &[HashSet<usize>], config: &RunConfig) -> Result<RunOutcome> {
    let mut records = vec![first.record.clone()];
    let mut histories = vec![first.model.history.clone()];
    let mut stage = Stage {
        model: first.model.clone(),
        alignment: first.alignment.clone(),
        record: first.record.clone(),
    };
    for i in 1..snapshots.len() {
        let next = next_stage(&stage, &snapshots[i - 1].0, &snapshots[i], &news[i], config)
            .map_err(|e| e.at_snapshot(i))?;
        log::info!(
            "{} t={}: F1 {:.4} ({} pairs, {} steps)",
            config.mode,
            next.record.t,
            next.record.metrics.f1,
            next.record.ta_size,
            next.record.steps
        );
        records.push(next.record.clone());
        histories.push(next.model.history.clone());
        stage = next;
    }
    Ok(RunOutcome {
        record: RunRecord {
            mode: config.mode,
            snapshots: records,
        },
        model: stage.model,
        alignment: stage.alignment,
        histories,
    })
}

/// Run several modes over one snapshot sequence, sharing the first snapshot's training.
pub fn run_modes(snapshots: &[Snapshot], config: &RunConfig, modes: &[Mode]) -> Result<Vec<RunOutcome>> {
    if snapshots.is_empty() {
        return Err(Error::Config("no snapshots".into()));
    }
    config.validate()?;
    let news = cumulative_new(snapshots)?;
    let first = initial_stage(&snapshots[0], config).map_err(|e| e.at_snapshot(0))?;
    log::info!("t={}: F1 {:.4} ({} pairs)", first.record.t, first.record.metrics.f1, first.record.ta_size);
    modes
        .iter()
        .map(|&mode| {
            let cfg = RunConfig {
                mode,
                ..config.clone()
            };
            continue_from(&first, snapshots, &news, &cfg)
        })
        .collect()
}

/// Run `config.mode` over in-memory snapshots.
pub fn run_snapshots(snapshots: &[Snapshot], config: &RunConfig) -> Result<RunOutcome> {
    let mut v = run_modes(snapshots, config, &[config.mode])?;
    Ok(v.pop().expect("one mode"))
}

/// Load, run and evaluate a snapshot sequence.
pub fn run_pipeline(snapshot_dirs: &[PathBuf], config: &RunConfig) -> Result<RunRecord> {
    let snapshots = load_sequence(snapshot_dirs)?;
    Ok(run_snapshots(&snapshots, config)?.record)
}

/// Write reports, the final checkpoint and alignment, histories and a manifest.
pub fn write_outputs(outcome: &RunOutcome, snapshots: &[Snapshot], config: &RunConfig, out_dir: &Path) -> Result<()> {
    emit_report(&outcome.record, out_dir)?;
    let last = &snapshots.last().expect("nonempty run").0;
    let t = last.t;
    let ckpt = format!("encoder_t{t}.ckpt");
    let tsv = format!("alignment_t{t}.tsv");
    write_checkpoint(&outcome.model.state, &out_dir.join(&ckpt))?;
    outcome.alignment.write_tsv(&out_dir.join(&tsv), last)?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "# contea run manifest");
    let _ = writeln!(manifest, "[config]");
    manifest.push_str(&config.to_text());
    let _ = writeln!(manifest, "[snapshots]");
    for (pair, _) in snapshots {
        let _ = writeln!(manifest, "t{}", pair.t);
    }
    let _ = writeln!(manifest, "[files]");
    let _ = writeln!(manifest, "metrics.csv\ngrowth.csv\n{ckpt}\n{tsv}");
    for (i, h) in outcome.histories.iter().enumerate() {
        if h.is_empty() {
            continue;
        }
        let name = format!("history_t{}.csv", snapshots[i].0.t);
        write_history(h, &out_dir.join(&name))?;
        let _ = writeln!(manifest, "{name}");
    }
    let path = out_dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::output(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg_store::Triple;

    fn sp(e1: usize, e2: usize, score: f64) -> ScoredPair {
        ScoredPair {
            e1,
            e2,
            score,
            found_at: 0,
        }
    }

    #[test]
    fn affected_seeds_rule() {
        let seeds = vec![(0, 10), (1, 11), (2, 12)];
        assert!(select_affected_seeds(&seeds, &GrowthDelta::default()).is_empty());
        let delta = GrowthDelta {
            new_triples_1: vec![Triple::new(0, 0, 5)],
            new_triples_2: vec![Triple::new(13, 1, 12)],
            ..Default::default()
        };
        assert_eq!(select_affected_seeds(&seeds, &delta), vec![(0, 10), (2, 12)]);
    }

    #[test]
    fn top_ta_by_score() {
        let ta = TrustworthyAlignment::new(vec![sp(0, 10, 0.9), sp(1, 11, 0.5), sp(2, 12, 0.7)]).unwrap();
        assert!(select_top_ta(&ta, 0).is_empty());
        let top: Vec<Pair> = select_top_ta(&ta, 2).iter().map(ScoredPair::pair).collect();
        assert_eq!(top, vec![(0, 10), (2, 12)]);
        assert_eq!(select_top_ta(&ta, 10).len(), 3);
        let tied = TrustworthyAlignment::new(vec![sp(4, 10, 0.5), sp(1, 11, 0.5)]).unwrap();
        assert_eq!(select_top_ta(&tied, 1)[0].e1, 1);
    }
}
