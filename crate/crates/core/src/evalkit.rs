//! Precision, recall and F1 of predicted alignment, plus CSV reports.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::continual::RunRecord;
use crate::error::{Error, Result};
use crate::kg_store::Pair;
use crate::matcher::TrustworthyAlignment;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct_count: usize,
    /// Recall restricted to gold pairs touching a new entity; `None` when
    /// no such pair exists.
    pub new_entity_recall: Option<f64>,
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Score predicted pairs against a gold set.
pub fn evaluate_pairs<I>(predicted: I, gold: &HashSet<Pair>) -> Result<Metrics>
where
    I: IntoIterator<Item = Pair>,
{
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    let mut n_pred = 0usize;
    let mut correct = 0usize;
    let mut seen = HashSet::new();
    for p in predicted {
        if seen.insert(p) {
            n_pred += 1;
            correct += gold.contains(&p) as usize;
        }
    }
    let precision = if n_pred == 0 { 0.0 } else { correct as f64 / n_pred as f64 };
    let recall = correct as f64 / gold.len() as f64;
    Ok(Metrics {
        precision,
        recall,
        f1: f1_score(precision, recall),
        correct_count: correct,
        new_entity_recall: None,
    })
}

pub fn evaluate(predicted: &TrustworthyAlignment, gold: &HashSet<Pair>) -> Result<Metrics> {
    evaluate_pairs(predicted.pairs().iter().map(|p| p.pair()), gold)
}

fn touches(new_entities: &HashSet<usize>, (a, b): Pair) -> bool {
    new_entities.contains(&a) || new_entities.contains(&b)
}

/// Recall over gold pairs with at least one new entity, counting only
/// predicted pairs that also involve a new entity.
pub fn new_entity_recall(
    predicted: &TrustworthyAlignment,
    gold: &HashSet<Pair>,
    new_entities: &HashSet<usize>,
) -> Option<f64> {
    let gold_new: HashSet<Pair> = gold.iter().copied().filter(|&p| touches(new_entities, p)).collect();
    if gold_new.is_empty() {
        return None;
    }
    let hit = predicted
        .pairs()
        .iter()
        .map(|p| p.pair())
        .filter(|&p| touches(new_entities, p) && gold_new.contains(&p))
        .count();
    Some(hit as f64 / gold_new.len() as f64)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| format!("{x:.6}"))
}

/// Write `metrics.csv` and `growth.csv` into `out_dir`.
pub fn emit_report(record: &RunRecord, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::output(out_dir, e))?;
    let mut metrics = String::from("snapshot,mode,precision,recall,f1,new_entity_recall,wall_time_s,ta_size\n");
    let mut growth = String::from("snapshot,correct_alignment_count\n");
    for s in &record.snapshots {
        let m = &s.metrics;
        let _ = writeln!(
            metrics,
            "{},{},{:.6},{:.6},{:.6},{},{:.3},{}",
            s.t,
            record.mode,
            m.precision,
            m.recall,
            m.f1,
            opt(m.new_entity_recall),
            s.wall_time_s,
            s.ta_size
        );
        let _ = writeln!(growth, "{},{:.3}", s.t, s.test_size as f64 * m.recall);
    }
    let write = |name: &str, body: &str| {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::output(path, e))
    };
    write("metrics.csv", &metrics)?;
    write("growth.csv", &growth)
}
