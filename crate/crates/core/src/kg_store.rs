//! Knowledge-graph snapshots: loading, indexing and growth validation.
//!
//! Each [`KnowledgeGraph`] interns its entity and relation names to dense
//! local ids in first-occurrence order. A [`SnapshotPair`] places both graphs
//! in one shared id space: KG1 entities occupy `[0, |E1|)` and KG2 entities
//! `[|E1|, |E1|+|E2|)`; relations are offset the same way. Everything past
//! this module (encoder, matcher, alignment sets) speaks global ids.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const KG1_TRIPLES: &str = "kg1_triples.tsv";
pub const KG2_TRIPLES: &str = "kg2_triples.tsv";
pub const TRAIN_LINKS: &str = "train_links.tsv";
pub const VALID_LINKS: &str = "valid_links.tsv";
pub const TEST_LINKS: &str = "test_links.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Out,
    In,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }

    pub fn touches(&self, e: usize) -> bool {
        self.head == e || self.tail == e
    }
}

/// One incident edge seen from an entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Neighbor {
    pub relation: usize,
    pub entity: usize,
    pub direction: Direction,
}

/// Which graph of a pair an entity or link endpoint belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Kg1,
    Kg2,
}

#[derive(Debug, Default, Clone)]
struct Interner {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

impl PartialEq for Interner {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
    }
}

/// A single knowledge graph at one timestamp, in local ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    triples: Vec<Triple>,
    adjacency: Vec<Vec<Neighbor>>,
}

impl KnowledgeGraph {
    /// Build from textual triples. Duplicate triples are kept once.
    pub fn from_triples<'a, I>(triples: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let mut kg = KnowledgeGraph::default();
        let mut seen = HashSet::new();
        for (h, r, t) in triples {
            let head = kg.entities.intern(h);
            let relation = kg.relations.intern(r);
            let tail = kg.entities.intern(t);
            let triple = Triple::new(head, relation, tail);
            if seen.insert(triple) {
                kg.triples.push(triple);
            }
        }
        kg.build_adjacency();
        kg
    }

    fn build_adjacency(&mut self) {
        let mut adj = vec![Vec::new(); self.entities.names.len()];
        for t in &self.triples {
            adj[t.head].push(Neighbor {
                relation: t.relation,
                entity: t.tail,
                direction: Direction::Out,
            });
            adj[t.tail].push(Neighbor {
                relation: t.relation,
                entity: t.head,
                direction: Direction::In,
            });
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        self.adjacency = adj;
    }

    pub fn num_entities(&self) -> usize {
        self.entities.names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.names.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_name(&self, id: usize) -> &str {
        &self.entities.names[id]
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entities.get(name)
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relations.names[id]
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relations.get(name)
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities.names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations.names
    }

    /// Incident edges of `e`, sorted by (relation, neighbor, direction).
    pub fn neighbors(&self, e: usize) -> Result<&[Neighbor]> {
        self.adjacency
            .get(e)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownEntity(e))
    }

    pub fn degree(&self, e: usize) -> usize {
        self.adjacency.get(e).map_or(0, Vec::len)
    }

    /// Serialize as `head\trelation\ttail` lines in stored order.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.triples.len() * 32);
        for t in &self.triples {
            out.push_str(self.entity_name(t.head));
            out.push('\t');
            out.push_str(self.relation_name(t.relation));
            out.push('\t');
            out.push_str(self.entity_name(t.tail));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::output(path, e))
    }
}

/// Both graphs at timestamp `t` in one global id space.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPair {
    pub t: u32,
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
}

impl SnapshotPair {
    pub fn new(t: u32, kg1: KnowledgeGraph, kg2: KnowledgeGraph) -> Self {
        SnapshotPair { t, kg1, kg2 }
    }

    pub fn num_entities(&self) -> usize {
        self.kg1.num_entities() + self.kg2.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.kg1.num_relations() + self.kg2.num_relations()
    }

    /// First global id of KG2 entities.
    pub fn entity_offset(&self) -> usize {
        self.kg1.num_entities()
    }

    pub fn relation_offset(&self) -> usize {
        self.kg1.num_relations()
    }

    pub fn side(&self, global: usize) -> Side {
        if global < self.entity_offset() {
            Side::Kg1
        } else {
            Side::Kg2
        }
    }

    pub fn kg(&self, side: Side) -> &KnowledgeGraph {
        match side {
            Side::Kg1 => &self.kg1,
            Side::Kg2 => &self.kg2,
        }
    }

    pub fn kg1_entities(&self) -> std::ops::Range<usize> {
        0..self.entity_offset()
    }

    pub fn kg2_entities(&self) -> std::ops::Range<usize> {
        self.entity_offset()..self.num_entities()
    }

    pub fn global_entity(&self, side: Side, local: usize) -> usize {
        match side {
            Side::Kg1 => local,
            Side::Kg2 => local + self.entity_offset(),
        }
    }

    pub fn global_relation(&self, side: Side, local: usize) -> usize {
        match side {
            Side::Kg1 => local,
            Side::Kg2 => local + self.relation_offset(),
        }
    }

    pub fn entity_name(&self, global: usize) -> &str {
        match self.side(global) {
            Side::Kg1 => self.kg1.entity_name(global),
            Side::Kg2 => self.kg2.entity_name(global - self.entity_offset()),
        }
    }

    pub fn lookup(&self, side: Side, name: &str) -> Option<usize> {
        self.kg(side)
            .entity_id(name)
            .map(|l| self.global_entity(side, l))
    }

    /// Triples of one graph in global ids.
    pub fn global_triples(&self, side: Side) -> impl Iterator<Item = Triple> + '_ {
        self.kg(side).triples().iter().map(move |t| {
            Triple::new(
                self.global_entity(side, t.head),
                self.global_relation(side, t.relation),
                self.global_entity(side, t.tail),
            )
        })
    }
}

/// Flattened adjacency over the shared id space of a [`SnapshotPair`].
#[derive(Debug, Clone)]
pub struct PairGraph {
    offsets: Vec<usize>,
    edges: Vec<Neighbor>,
}

impl PairGraph {
    pub fn new(pair: &SnapshotPair) -> Self {
        let mut offsets = Vec::with_capacity(pair.num_entities() + 1);
        let mut edges = Vec::new();
        offsets.push(0);
        for side in [Side::Kg1, Side::Kg2] {
            let kg = pair.kg(side);
            for local in 0..kg.num_entities() {
                for n in &kg.adjacency[local] {
                    edges.push(Neighbor {
                        relation: pair.global_relation(side, n.relation),
                        entity: pair.global_entity(side, n.entity),
                        direction: n.direction,
                    });
                }
                offsets.push(edges.len());
            }
        }
        PairGraph { offsets, edges }
    }

    /// Build directly from per-entity neighbor lists (global ids).
    pub fn from_lists(lists: Vec<Vec<Neighbor>>) -> Self {
        let mut offsets = vec![0];
        let mut edges = Vec::new();
        for mut l in lists {
            l.sort_unstable();
            edges.extend(l);
            offsets.push(edges.len());
        }
        PairGraph { offsets, edges }
    }

    pub fn num_entities(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn neighbors(&self, e: usize) -> &[Neighbor] {
        &self.edges[self.offsets[e]..self.offsets[e + 1]]
    }

    #[inline]
    pub fn degree(&self, e: usize) -> usize {
        self.offsets[e + 1] - self.offsets[e]
    }
}

/// An alignment pair in global ids: `.0` in KG1, `.1` in KG2.
pub type Pair = (usize, usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignmentSets {
    pub seed: Vec<Pair>,
    pub valid: Vec<Pair>,
    pub test: Vec<Pair>,
}

impl AlignmentSets {
    /// Entities of KG1 and KG2 that appear in the seed or validation links.
    pub fn supervised_entities(&self) -> HashSet<usize> {
        self.seed
            .iter()
            .chain(&self.valid)
            .flat_map(|&(a, b)| [a, b])
            .collect()
    }
}

/// Table-style counts for one snapshot directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotStats {
    pub triples_1: usize,
    pub triples_2: usize,
    pub seed: usize,
    pub valid: usize,
    pub test: usize,
}

impl SnapshotStats {
    pub fn of(pair: &SnapshotPair, aligns: &AlignmentSets) -> Self {
        SnapshotStats {
            triples_1: pair.kg1.num_triples(),
            triples_2: pair.kg2.num_triples(),
            seed: aligns.seed.len(),
            valid: aligns.valid.len(),
            test: aligns.test.len(),
        }
    }

    /// Triples added per graph between two successive snapshots.
    pub fn triple_growth(&self, next: &SnapshotStats) -> (usize, usize) {
        (
            next.triples_1.saturating_sub(self.triples_1),
            next.triples_2.saturating_sub(self.triples_2),
        )
    }
}

fn read_required(dir: &Path, file: &str) -> Result<(PathBuf, String)> {
    let path = dir.join(file);
    if !path.is_file() {
        return Err(Error::DatasetLayout(path));
    }
    let text = fs::read_to_string(&path)?;
    Ok((path, text))
}

fn split_fields<'a>(
    path: &Path,
    text: &'a str,
    arity: usize,
) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut rows = Vec::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != arity || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: i + 1,
                msg: format!(
                    "expected {arity} tab-separated fields, found {}",
                    fields.len()
                ),
            });
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

fn load_triples(dir: &Path, file: &str) -> Result<KnowledgeGraph> {
    let (path, text) = read_required(dir, file)?;
    let rows = split_fields(&path, &text, 3)?;
    Ok(KnowledgeGraph::from_triples(
        rows.iter().map(|(_, f)| (f[0], f[1], f[2])),
    ))
}

fn load_links(pair: &SnapshotPair, dir: &Path, file: &str) -> Result<Vec<Pair>> {
    let (path, text) = read_required(dir, file)?;
    let mut links = Vec::new();
    let mut seen = HashSet::new();
    for (line, f) in split_fields(&path, &text, 2)? {
        let dangling = |entity: &str| Error::DanglingLink {
            path: path.clone(),
            line,
            entity: entity.to_owned(),
        };
        let a = pair.lookup(Side::Kg1, f[0]).ok_or_else(|| dangling(f[0]))?;
        let b = pair.lookup(Side::Kg2, f[1]).ok_or_else(|| dangling(f[1]))?;
        if seen.insert((a, b)) {
            links.push((a, b));
        }
    }
    Ok(links)
}

/// `t3` → 3; anything else → 0.
fn timestamp_from_dir(dir: &Path) -> u32 {
    dir.file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_prefix('t'))
        .and_then(|n| n.parse().ok())
        .unwrap_or(0)
}

/// Load one snapshot directory (triples of both graphs and the three link files).
pub fn load_snapshot(dir: &Path) -> Result<(SnapshotPair, AlignmentSets)> {
    // Check the layout before parsing anything.
    for f in [KG1_TRIPLES, KG2_TRIPLES, TRAIN_LINKS, VALID_LINKS, TEST_LINKS] {
        let p = dir.join(f);
        if !p.is_file() {
            return Err(Error::DatasetLayout(p));
        }
    }
    let kg1 = load_triples(dir, KG1_TRIPLES)?;
    let kg2 = load_triples(dir, KG2_TRIPLES)?;
    let pair = SnapshotPair::new(timestamp_from_dir(dir), kg1, kg2);
    let aligns = AlignmentSets {
        seed: load_links(&pair, dir, TRAIN_LINKS)?,
        valid: load_links(&pair, dir, VALID_LINKS)?,
        test: load_links(&pair, dir, TEST_LINKS)?,
    };
    check_disjoint(&aligns)?;
    Ok((pair, aligns))
}

fn check_disjoint(aligns: &AlignmentSets) -> Result<()> {
    let seed: HashSet<_> = aligns.seed.iter().collect();
    let valid: HashSet<_> = aligns.valid.iter().collect();
    for p in &aligns.valid {
        if seed.contains(p) {
            return Err(Error::Precondition(format!("link {p:?} in train and valid")));
        }
    }
    for p in &aligns.test {
        if seed.contains(p) || valid.contains(p) {
            return Err(Error::Precondition(format!("test link {p:?} also supervised")));
        }
    }
    Ok(())
}

fn write_links(pair: &SnapshotPair, path: &Path, links: &[Pair]) -> Result<()> {
    let mut out = String::new();
    for &(a, b) in links {
        out.push_str(pair.entity_name(a));
        out.push('\t');
        out.push_str(pair.entity_name(b));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::output(path, e))
}

/// Write a snapshot directory in the layout [`load_snapshot`] reads.
pub fn write_snapshot(dir: &Path, pair: &SnapshotPair, aligns: &AlignmentSets) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::output(dir, e))?;
    pair.kg1.write_tsv(&dir.join(KG1_TRIPLES))?;
    pair.kg2.write_tsv(&dir.join(KG2_TRIPLES))?;
    write_links(pair, &dir.join(TRAIN_LINKS), &aligns.seed)?;
    write_links(pair, &dir.join(VALID_LINKS), &aligns.valid)?;
    write_links(pair, &dir.join(TEST_LINKS), &aligns.test)?;
    Ok(())
}

/// Differences between two successive snapshots, in the ids of the later one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GrowthDelta {
    pub new_entities_1: Vec<usize>,
    pub new_entities_2: Vec<usize>,
    pub new_triples_1: Vec<Triple>,
    pub new_triples_2: Vec<Triple>,
    /// Global entity id at `t` → global entity id at `t+1`.
    pub entity_map: Vec<usize>,
    /// Global relation id at `t` → global relation id at `t+1`.
    pub relation_map: Vec<usize>,
}

impl GrowthDelta {
    pub fn is_empty(&self) -> bool {
        self.new_entities_1.is_empty()
            && self.new_entities_2.is_empty()
            && self.new_triples_1.is_empty()
            && self.new_triples_2.is_empty()
    }

    pub fn new_entities(&self) -> impl Iterator<Item = usize> + '_ {
        self.new_entities_1.iter().chain(&self.new_entities_2).copied()
    }

    pub fn new_entity_set(&self) -> HashSet<usize> {
        self.new_entities().collect()
    }

    /// Map a pair from the earlier snapshot's ids into the later one's.
    pub fn remap_pair(&self, (a, b): Pair) -> Pair {
        (self.entity_map[a], self.entity_map[b])
    }
}

fn growth_side(
    prev: &SnapshotPair,
    next: &SnapshotPair,
    side: Side,
    entity_map: &mut [usize],
    relation_map: &mut [usize],
) -> Result<(Vec<usize>, Vec<Triple>)> {
    let (p, n) = (prev.kg(side), next.kg(side));
    let label = match side {
        Side::Kg1 => "KG1",
        Side::Kg2 => "KG2",
    };
    for name in n.relation_names() {
        if p.relation_id(name).is_none() {
            return Err(Error::RelationGrowth(name.clone()));
        }
    }
    let mut rel_local = vec![0; p.num_relations()];
    for (id, name) in p.relation_names().iter().enumerate() {
        let nid = n.relation_id(name).ok_or_else(|| {
            Error::NonMonotonicGrowth(format!("{label} relation {name:?} disappeared"))
        })?;
        rel_local[id] = nid;
        relation_map[prev.global_relation(side, id)] = next.global_relation(side, nid);
    }
    let mut ent_local = vec![0; p.num_entities()];
    let mut seen = vec![false; n.num_entities()];
    for (id, name) in p.entity_names().iter().enumerate() {
        let nid = n.entity_id(name).ok_or_else(|| {
            Error::NonMonotonicGrowth(format!("{label} entity {name:?} disappeared"))
        })?;
        ent_local[id] = nid;
        seen[nid] = true;
        entity_map[prev.global_entity(side, id)] = next.global_entity(side, nid);
    }
    let next_set: HashSet<Triple> = n.triples().iter().copied().collect();
    let mut old = HashSet::with_capacity(p.num_triples());
    for t in p.triples() {
        let mapped = Triple::new(ent_local[t.head], rel_local[t.relation], ent_local[t.tail]);
        if !next_set.contains(&mapped) {
            return Err(Error::NonMonotonicGrowth(format!(
                "{label} triple ({}, {}, {}) disappeared",
                p.entity_name(t.head),
                p.relation_name(t.relation),
                p.entity_name(t.tail)
            )));
        }
        old.insert(mapped);
    }
    let new_entities = (0..n.num_entities())
        .filter(|&e| !seen[e])
        .map(|e| next.global_entity(side, e))
        .collect();
    let new_triples = n
        .triples()
        .iter()
        .filter(|t| !old.contains(t))
        .map(|t| {
            Triple::new(
                next.global_entity(side, t.head),
                next.global_relation(side, t.relation),
                next.global_entity(side, t.tail),
            )
        })
        .collect();
    Ok((new_entities, new_triples))
}

/// Check that `next` only adds to `prev` and report what was added.
pub fn validate_growth(prev: &SnapshotPair, next: &SnapshotPair) -> Result<GrowthDelta> {
    if next.t != prev.t + 1 {
        return Err(Error::SnapshotOrder {
            expected: prev.t + 1,
            found: next.t,
        });
    }
    let mut entity_map = vec![0; prev.num_entities()];
    let mut relation_map = vec![0; prev.num_relations()];
    let (new_entities_1, new_triples_1) =
        growth_side(prev, next, Side::Kg1, &mut entity_map, &mut relation_map)?;
    let (new_entities_2, new_triples_2) =
        growth_side(prev, next, Side::Kg2, &mut entity_map, &mut relation_map)?;
    Ok(GrowthDelta {
        new_entities_1,
        new_entities_2,
        new_triples_1,
        new_triples_2,
        entity_map,
        relation_map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kg(lines: &[(&str, &str, &str)]) -> KnowledgeGraph {
        KnowledgeGraph::from_triples(lines.iter().copied())
    }

    #[test]
    fn parses_two_line_graph() {
        let g = kg(&[("a", "r", "b"), ("b", "r", "c")]);
        assert_eq!(g.num_entities(), 3);
        assert_eq!(g.num_relations(), 1);
        assert_eq!(g.num_triples(), 2);
        assert_eq!(g.entity_id("a"), Some(0));
        assert_eq!(g.entity_id("c"), Some(2));
    }

    #[test]
    fn neighbors_see_both_directions() {
        let g = kg(&[("a", "r", "b")]);
        let a = g.entity_id("a").unwrap();
        let b = g.entity_id("b").unwrap();
        let r = g.relation_id("r").unwrap();
        assert_eq!(
            g.neighbors(a).unwrap(),
            &[Neighbor {
                relation: r,
                entity: b,
                direction: Direction::Out
            }]
        );
        assert_eq!(
            g.neighbors(b).unwrap(),
            &[Neighbor {
                relation: r,
                entity: a,
                direction: Direction::In
            }]
        );
        assert!(matches!(g.neighbors(7), Err(Error::UnknownEntity(7))));
    }

    #[test]
    fn duplicate_triples_collapse() {
        let g = kg(&[("a", "r", "b"), ("a", "r", "b")]);
        assert_eq!(g.num_triples(), 1);
        assert_eq!(g.degree(0), 1);
    }

    #[test]
    fn pair_offsets_kg2() {
        let pair = SnapshotPair::new(0, kg(&[("a", "r", "b")]), kg(&[("x", "s", "y"), ("y", "q", "z")]));
        assert_eq!(pair.entity_offset(), 2);
        assert_eq!(pair.lookup(Side::Kg2, "y"), Some(3));
        assert_eq!(pair.side(3), Side::Kg2);
        assert_eq!(pair.entity_name(4), "z");
        let g = PairGraph::new(&pair);
        assert_eq!(g.num_entities(), 5);
        let n = g.neighbors(3);
        assert_eq!(n.len(), 2);
        assert!(n.iter().all(|x| x.entity >= 2 && x.relation >= 1));
    }

    #[test]
    fn identical_snapshots_have_empty_delta() {
        let a = SnapshotPair::new(0, kg(&[("a", "r", "b")]), kg(&[("x", "r", "y")]));
        let mut b = a.clone();
        b.t = 1;
        let d = validate_growth(&a, &b).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.entity_map, vec![0, 1, 2, 3]);
    }

    #[test]
    fn dropped_triple_is_non_monotonic() {
        let a = SnapshotPair::new(
            0,
            kg(&[("a", "r", "b"), ("b", "r", "c")]),
            kg(&[("x", "r", "y")]),
        );
        let b = SnapshotPair::new(1, kg(&[("a", "r", "b"), ("c", "r", "b")]), kg(&[("x", "r", "y")]));
        assert!(matches!(
            validate_growth(&a, &b),
            Err(Error::NonMonotonicGrowth(_))
        ));
    }

    #[test]
    fn new_relation_is_rejected() {
        let a = SnapshotPair::new(0, kg(&[("a", "r", "b")]), kg(&[("x", "r", "y")]));
        let b = SnapshotPair::new(1, kg(&[("a", "r", "b"), ("a", "s", "c")]), kg(&[("x", "r", "y")]));
        assert!(matches!(validate_growth(&a, &b), Err(Error::RelationGrowth(r)) if r == "s"));
    }

    #[test]
    fn wrong_timestamp_is_rejected() {
        let a = SnapshotPair::new(0, kg(&[("a", "r", "b")]), kg(&[("x", "r", "y")]));
        let mut b = a.clone();
        b.t = 2;
        assert!(matches!(validate_growth(&a, &b), Err(Error::SnapshotOrder { .. })));
    }

    #[test]
    fn growth_remaps_shifted_ids() {
        let a = SnapshotPair::new(0, kg(&[("a", "r", "b")]), kg(&[("x", "r", "y")]));
        // KG1 gains entity c, which pushes every KG2 id up by one.
        let b = SnapshotPair::new(
            1,
            kg(&[("c", "r", "a"), ("a", "r", "b")]),
            kg(&[("x", "r", "y"), ("y", "r", "z")]),
        );
        let d = validate_growth(&a, &b).unwrap();
        assert_eq!(d.new_entities_1, vec![0]);
        assert_eq!(d.new_entities_2, vec![5]);
        assert_eq!(d.entity_map, vec![1, 2, 3, 4]);
        assert_eq!(d.new_triples_1, vec![Triple::new(0, 0, 1)]);
        assert_eq!(d.new_triples_2, vec![Triple::new(4, 1, 5)]);
        assert_eq!(
            b.num_entities(),
            a.num_entities() + d.new_entities().count()
        );
    }

    #[test]
    fn table_one_growth_counts() {
        // DBP ZH-EN, ZH side, t=0 → t=1.
        let t0 = SnapshotStats {
            triples_1: 70_414,
            triples_2: 95_142,
            seed: 3_623,
            valid: 1_811,
            test: 12_682,
        };
        let t1 = SnapshotStats {
            triples_1: 103_982,
            triples_2: 154_833,
            seed: 3_623,
            valid: 1_811,
            test: 14_213,
        };
        assert_eq!(t0.triple_growth(&t1).0, 33_568);
    }
}
