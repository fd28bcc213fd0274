//! Similarity, mutual nearest-neighbor search and conflict-free integration
//! of predicted alignment.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::{MetricKind, RunConfig};
use crate::encoder::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kg_store::{GrowthDelta, Pair, Side, SnapshotPair};
use crate::linalg::{dot, norm, Matrix};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimilarityMetric {
    pub kind: MetricKind,
    /// Neighborhood size of the CSLS hubness terms.
    pub csls_k: usize,
}

impl SimilarityMetric {
    pub fn cosine() -> Self {
        SimilarityMetric {
            kind: MetricKind::Cosine,
            csls_k: 1,
        }
    }

    pub fn csls(k: usize) -> Self {
        SimilarityMetric {
            kind: MetricKind::Csls,
            csls_k: k,
        }
    }

    pub fn from_config(config: &RunConfig) -> Self {
        SimilarityMetric {
            kind: config.metric,
            csls_k: config.csls_k,
        }
    }
}

fn cosine_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let na: Vec<f64> = (0..a.rows()).map(|i| norm(a.row(i))).collect();
    let nb: Vec<f64> = (0..b.rows()).map(|j| norm(b.row(j))).collect();
    if let Some(i) = na.iter().position(|&n| n == 0.0) {
        return Err(Error::DegenerateVector(i));
    }
    if let Some(j) = nb.iter().position(|&n| n == 0.0) {
        return Err(Error::DegenerateVector(j));
    }
    let mut s = Matrix::zeros(a.rows(), b.rows());
    par::fill_rows(s.as_mut_slice(), b.rows(), |i, row| {
        let ai = a.row(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = dot(ai, b.row(j)) / (na[i] * nb[j]);
        }
    });
    Ok(s)
}

/// Mean of the `k` largest values; they are summed in descending order.
fn top_k_mean(values: &mut [f64], k: usize) -> f64 {
    let k = k.min(values.len());
    if k == 0 {
        return 0.0;
    }
    let desc = |x: &f64, y: &f64| y.total_cmp(x);
    if k < values.len() {
        values.select_nth_unstable_by(k - 1, desc);
    }
    let top = &mut values[..k];
    top.sort_unstable_by(desc);
    top.iter().sum::<f64>() / k as f64
}

/// `nA × nB` similarity matrix.
///
/// CSLS is `2·cos(a, b) − r_B(a) − r_A(b)`, where `r_B(a)` is the mean cosine
/// of `a` to its `k` nearest rows of `b`. `k` is clamped below the number of
/// candidates; with a single candidate on either side CSLS reduces to cosine.
pub fn similarity(a: &Matrix, b: &Matrix, metric: SimilarityMetric) -> Result<Matrix> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(Error::Precondition("similarity needs at least one row per side".into()));
    }
    if a.cols() != b.cols() {
        return Err(Error::Precondition("embedding widths differ".into()));
    }
    let cos = cosine_matrix(a, b)?;
    if metric.kind == MetricKind::Cosine || a.rows() == 1 || b.rows() == 1 {
        return Ok(cos);
    }
    if metric.csls_k == 0 {
        return Err(Error::Config("csls_k must be at least 1".into()));
    }
    let (na, nb) = (a.rows(), b.rows());
    let r_b: Vec<f64> = par::map_indices(na, |i| {
        let mut row = cos.row(i).to_vec();
        top_k_mean(&mut row, metric.csls_k.min(nb - 1))
    });
    let r_a: Vec<f64> = par::map_indices(nb, |j| {
        let mut col: Vec<f64> = (0..na).map(|i| cos[(i, j)]).collect();
        top_k_mean(&mut col, metric.csls_k.min(na - 1))
    });
    let mut s = cos;
    par::fill_rows(s.as_mut_slice(), nb, |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = 2.0 * *v - (r_b[i] + r_a[j]);
        }
    });
    Ok(s)
}

/// Index of the first maximum.
fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Mutual nearest neighbors of `s`: `(i, j, s[i][j])` with `j` the best
/// column of row `i` and `i` the best row of column `j`. Ties go to the
/// lowest index.
pub fn mutual_argmax(s: &Matrix) -> Vec<(usize, usize, f64)> {
    let (n, m) = (s.rows(), s.cols());
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let row_best: Vec<usize> = par::map_indices(n, |i| argmax(s.row(i).iter().copied()).expect("nonempty row"));
    let col_best: Vec<usize> = par::map_indices(m, |j| argmax((0..n).map(|i| s[(i, j)])).expect("nonempty column"));
    (0..n)
        .filter(|&i| col_best[row_best[i]] == i)
        .map(|i| (i, row_best[i], s[(i, row_best[i])]))
        .collect()
}

/// Row-index pairs accepted by bidirectional nearest search between `a` and `b`.
pub fn bidirectional_search(a: &Matrix, b: &Matrix, metric: SimilarityMetric) -> Result<Vec<(usize, usize, f64)>> {
    Ok(mutual_argmax(&similarity(a, b, metric)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub e1: usize,
    pub e2: usize,
    pub score: f64,
    pub found_at: u32,
}

impl ScoredPair {
    pub fn pair(&self) -> Pair {
        (self.e1, self.e2)
    }
}

/// A conflict-free set of predicted pairs, kept sorted by `(e1, e2)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrustworthyAlignment {
    pairs: Vec<ScoredPair>,
}

fn check_conflict_free(pairs: &[ScoredPair]) -> Result<()> {
    let mut left = HashSet::new();
    let mut right = HashSet::new();
    for p in pairs {
        if !p.score.is_finite() {
            return Err(Error::Precondition(format!("non-finite score for ({}, {})", p.e1, p.e2)));
        }
        if !left.insert(p.e1) || !right.insert(p.e2) {
            return Err(Error::Precondition(format!("alignment conflict at ({}, {})", p.e1, p.e2)));
        }
    }
    Ok(())
}

impl TrustworthyAlignment {
    pub fn new(mut pairs: Vec<ScoredPair>) -> Result<Self> {
        check_conflict_free(&pairs)?;
        pairs.sort_unstable_by_key(|p| (p.e1, p.e2));
        Ok(TrustworthyAlignment { pairs })
    }

    pub fn pairs(&self) -> &[ScoredPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pair_set(&self) -> HashSet<Pair> {
        self.pairs.iter().map(ScoredPair::pair).collect()
    }

    /// Move every pair into the id space of the next snapshot.
    pub fn remap(&self, delta: &GrowthDelta) -> Self {
        let mut pairs: Vec<ScoredPair> = self
            .pairs
            .iter()
            .map(|p| ScoredPair {
                e1: delta.entity_map[p.e1],
                e2: delta.entity_map[p.e2],
                ..*p
            })
            .collect();
        pairs.sort_unstable_by_key(|p| (p.e1, p.e2));
        TrustworthyAlignment { pairs }
    }

    /// `e1⇥e2⇥score⇥found_at` per line, entity names taken from `pair`.
    pub fn write_tsv(&self, path: &Path, pair: &SnapshotPair) -> Result<()> {
        let mut s = String::new();
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                pair.entity_name(p.e1),
                pair.entity_name(p.e2),
                p.score,
                p.found_at
            );
        }
        fs::write(path, s).map_err(|e| Error::output(path, e))
    }

    pub fn read_tsv(path: &Path, pair: &SnapshotPair) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: &str| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: msg.to_owned(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(parse_err("expected 4 tab-separated fields"));
            }
            let lookup = |side, name: &str| {
                pair.lookup(side, name).ok_or_else(|| Error::DanglingLink {
                    path: path.to_path_buf(),
                    line: n + 1,
                    entity: name.to_owned(),
                })
            };
            pairs.push(ScoredPair {
                e1: lookup(Side::Kg1, f[0])?,
                e2: lookup(Side::Kg2, f[1])?,
                score: f[2].parse().map_err(|_| parse_err("bad score"))?,
                found_at: f[3].parse().map_err(|_| parse_err("bad timestamp"))?,
            });
        }
        TrustworthyAlignment::new(pairs)
    }
}

/// Search `left × right` (global ids) and stamp accepted pairs with `t`.
pub fn search_candidates(
    emb: &EmbeddingMatrix,
    left: &[usize],
    right: &[usize],
    metric: SimilarityMetric,
    t: u32,
) -> Result<TrustworthyAlignment> {
    if left.is_empty() || right.is_empty() {
        return Ok(TrustworthyAlignment::default());
    }
    let a = emb.rows.select_rows(left);
    let b = emb.rows.select_rows(right);
    let found = bidirectional_search(&a, &b, metric)?;
    TrustworthyAlignment::new(
        found
            .into_iter()
            .map(|(i, j, score)| ScoredPair {
                e1: left[i],
                e2: right[j],
                score,
                found_at: t,
            })
            .collect(),
    )
}

/// Merge `old` (ids of the previous snapshot) with `new` (ids of the next).
///
/// A pair present in both keeps its old record. Otherwise a pair survives
/// iff it beats every pair it shares an entity with: higher score wins, and
/// on equal scores the old pair wins. Losers are dropped, not re-matched.
pub fn integrate_alignment(
    old: &TrustworthyAlignment,
    new: &TrustworthyAlignment,
    delta: &GrowthDelta,
) -> Result<TrustworthyAlignment> {
    check_conflict_free(&old.pairs)?;
    check_conflict_free(&new.pairs)?;
    let old = old.remap(delta);
    let old_pairs = old.pair_set();
    let fresh: Vec<ScoredPair> = new
        .pairs
        .iter()
        .filter(|p| !old_pairs.contains(&p.pair()))
        .copied()
        .collect();

    let index = |ps: &[ScoredPair]| -> (HashMap<usize, usize>, HashMap<usize, usize>) {
        let l = ps.iter().enumerate().map(|(i, p)| (p.e1, i)).collect();
        let r = ps.iter().enumerate().map(|(i, p)| (p.e2, i)).collect();
        (l, r)
    };
    let (old_l, old_r) = index(&old.pairs);
    let (new_l, new_r) = index(&fresh);

    let mut out = Vec::with_capacity(old.len() + fresh.len());
    for p in &old.pairs {
        let rivals = [new_l.get(&p.e1), new_r.get(&p.e2)];
        if rivals.iter().flatten().all(|&&i| p.score >= fresh[i].score) {
            out.push(*p);
        }
    }
    for p in &fresh {
        let rivals = [old_l.get(&p.e1), old_r.get(&p.e2)];
        if rivals.iter().flatten().all(|&&i| p.score > old.pairs[i].score) {
            out.push(*p);
        }
    }
    TrustworthyAlignment::new(out)
}
