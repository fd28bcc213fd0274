//! Synthetic growing KG pairs with known alignment.
//!
//! A preferential-attachment master graph is split into two KGs: every
//! master node is either shared (it has a counterpart, which is the gold
//! alignment) or exclusive to one side. Each KG keeps the master triples
//! whose endpoints it owns, minus independently dropped noise triples. The
//! first snapshot holds the triples among the earliest-arriving nodes; later
//! nodes form the reserve that growth draws from.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::continual::Snapshot;
use crate::error::{Error, Result};
use crate::kg_store::{write_snapshot, AlignmentSets, KnowledgeGraph, Pair, Side, SnapshotPair};

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    /// Entities per KG in the first snapshot (approximately).
    pub n_entities: usize,
    pub n_relations: usize,
    pub avg_degree: f64,
    /// Fraction of entities that have a counterpart.
    pub overlap_ratio: f64,
    /// Fraction of triples dropped independently from each KG.
    pub structural_noise: f64,
    pub n_snapshots: usize,
    /// New triples per step as a fraction of the current triple count.
    pub growth_ratio: f64,
    /// (train, valid, test) fractions of the first snapshot's gold pairs.
    pub split: (f64, f64, f64),
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n_entities: 200,
            n_relations: 20,
            avg_degree: 6.0,
            overlap_ratio: 1.0,
            structural_noise: 0.0,
            n_snapshots: 3,
            growth_ratio: 0.2,
            split: (0.2, 0.1, 0.7),
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

impl GenSpec {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "n_entities" => self.n_entities = parse(key, value)?,
            "n_relations" => self.n_relations = parse(key, value)?,
            "avg_degree" => self.avg_degree = parse(key, value)?,
            "overlap_ratio" => self.overlap_ratio = parse(key, value)?,
            "structural_noise" => self.structural_noise = parse(key, value)?,
            "n_snapshots" => self.n_snapshots = parse(key, value)?,
            "growth_ratio" => self.growth_ratio = parse(key, value)?,
            "split" => {
                let parts: Vec<f64> = value
                    .split(':')
                    .map(|p| parse(key, p))
                    .collect::<Result<_>>()?;
                let [a, b, c] = parts[..] else {
                    return Err(Error::Config("split must be train:valid:test".into()));
                };
                let s = a + b + c;
                self.split = (a / s, b / s, c / s);
            }
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown generator key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.n_entities < 2 || self.n_relations < 1 || self.n_snapshots < 1 {
            return fail("need at least 2 entities, 1 relation and 1 snapshot");
        }
        if !unit(self.overlap_ratio) {
            return fail("overlap_ratio must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.structural_noise) {
            return fail("structural_noise must lie in [0, 1)");
        }
        if !(self.growth_ratio > 0.0) || !(self.avg_degree > 0.0) {
            return fail("growth_ratio and avg_degree must be positive");
        }
        let (a, b, c) = self.split;
        if !(unit(a) && unit(b) && unit(c)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return fail("split fractions must lie in (0, 1] and sum to 1");
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let (a, b, c) = self.split;
        format!(
            "n_entities={}\nn_relations={}\navg_degree={}\noverlap_ratio={}\nstructural_noise={}\n\
             n_snapshots={}\ngrowth_ratio={}\nsplit={a}:{b}:{c}\nseed={}\n",
            self.n_entities,
            self.n_relations,
            self.avg_degree,
            self.overlap_ratio,
            self.structural_noise,
            self.n_snapshots,
            self.growth_ratio,
            self.seed
        )
    }

    /// Edges attached by each arriving master node.
    fn edges_per_node(&self) -> usize {
        ((self.avg_degree / 2.0).round() as usize).max(1)
    }

    /// Master nodes forming the first snapshot.
    fn core_nodes(&self) -> usize {
        (self.n_entities as f64 * (2.0 - self.overlap_ratio)).round() as usize
    }
}

/// Sizes of a 2:1:7-style split of `n` gold pairs (seed and valid rounded down).
pub fn split_sizes(n: usize, split: (f64, f64, f64)) -> (usize, usize, usize) {
    let s = (n as f64 * split.0 + 1e-9).floor() as usize;
    let v = (n as f64 * split.1 + 1e-9).floor() as usize;
    (s, v, n - s - v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Shared,
    Only1,
    Only2,
}

/// One KG's view of the master graph.
#[derive(Debug, Clone)]
struct SideState {
    /// Master triples this KG may ever contain.
    universe: Vec<(usize, usize, usize)>,
    in_graph: Vec<bool>,
    /// Universe indices of current triples, in insertion order.
    current: Vec<usize>,
    present: Vec<bool>,
}

impl SideState {
    fn add(&mut self, idx: usize) {
        if !self.in_graph[idx] {
            self.in_graph[idx] = true;
            self.current.push(idx);
            let (h, _, t) = self.universe[idx];
            self.present[h] = true;
            self.present[t] = true;
        }
    }
}

/// Generator state carried between snapshots.
#[derive(Debug, Clone)]
pub struct ReservePool {
    t: u32,
    roles: Vec<Role>,
    label1: Vec<usize>,
    label2: Vec<usize>,
    sides: [SideState; 2],
    seed_nodes: Vec<usize>,
    valid_nodes: Vec<usize>,
    test_nodes: Vec<usize>,
    rng: ChaCha8Rng,
}

impl ReservePool {
    /// Reserve triples not yet in either KG.
    pub fn remaining(&self) -> usize {
        self.sides.iter().map(|s| s.universe.len() - s.current.len()).sum()
    }

    /// Master-level gold pairs currently present in both KGs, as node ids.
    fn gold_nodes(&self) -> Vec<usize> {
        (0..self.roles.len())
            .filter(|&x| self.roles[x] == Role::Shared && self.sides[0].present[x] && self.sides[1].present[x])
            .collect()
    }

    fn snapshot(&mut self) -> Snapshot {
        let mut graphs = Vec::with_capacity(2);
        for (k, side) in self.sides.iter().enumerate() {
            let (prefix, labels) = if k == 0 { ("a", &self.label1) } else { ("b", &self.label2) };
            let mut order = side.current.clone();
            order.shuffle(&mut self.rng);
            let triples: Vec<(String, String, String)> = order
                .iter()
                .map(|&i| {
                    let (h, r, t) = side.universe[i];
                    (
                        format!("{prefix}:e{}", labels[h]),
                        format!("{prefix}:r{r}"),
                        format!("{prefix}:e{}", labels[t]),
                    )
                })
                .collect();
            graphs.push(KnowledgeGraph::from_triples(
                triples.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())),
            ));
        }
        let kg2 = graphs.pop().expect("two graphs");
        let kg1 = graphs.pop().expect("two graphs");
        let pair = SnapshotPair::new(self.t, kg1, kg2);
        let to_pair = |x: &usize| -> Pair {
            let a = pair.lookup(Side::Kg1, &format!("a:e{}", self.label1[*x])).expect("present in KG1");
            let b = pair.lookup(Side::Kg2, &format!("b:e{}", self.label2[*x])).expect("present in KG2");
            (a, b)
        };
        let aligns = AlignmentSets {
            seed: self.seed_nodes.iter().map(to_pair).collect(),
            valid: self.valid_nodes.iter().map(to_pair).collect(),
            test: self.test_nodes.iter().map(to_pair).collect(),
        };
        (pair, aligns)
    }
}

/// Preferential attachment: each arriving node links to `m` distinct earlier
/// nodes drawn proportionally to degree, starting from an `(m+1)`-clique.
fn master_graph(n: usize, m: usize, n_rel: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize, usize)> {
    let mut edges = Vec::with_capacity(n * m);
    let mut ends: Vec<usize> = Vec::with_capacity(2 * n * m);
    let push = |edges: &mut Vec<_>, ends: &mut Vec<usize>, a: usize, b: usize, rng: &mut ChaCha8Rng| {
        let r = rng.gen_range(0..n_rel);
        let (h, t) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
        edges.push((h, r, t));
        ends.push(a);
        ends.push(b);
    };
    for a in 0..=m {
        for b in 0..a {
            push(&mut edges, &mut ends, a, b, rng);
        }
    }
    for v in m + 1..n {
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        while chosen.len() < m {
            let u = ends[rng.gen_range(0..ends.len())];
            if !chosen.contains(&u) {
                chosen.push(u);
            }
        }
        for u in chosen {
            push(&mut edges, &mut ends, v, u, rng);
        }
    }
    edges
}

/// Build the master graph, the first snapshot and the growth reserve.
pub fn generate_base_pair(spec: &GenSpec) -> Result<(Snapshot, ReservePool)> {
    spec.validate()?;
    let m = spec.edges_per_node();
    let n_core = spec.core_nodes();
    if m >= n_core {
        return Err(Error::GenerationInfeasible(format!(
            "average degree {} needs more than {n_core} entities",
            spec.avg_degree
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Enough late arrivals to feed every growth step.
    let steps = spec.n_snapshots.saturating_sub(1) as f64;
    let reserve = (n_core as f64 * ((1.0 + spec.growth_ratio).powf(steps) - 1.0) * 2.0).ceil() as usize;
    let n_master = n_core + reserve;
    let edges = master_graph(n_master, m, spec.n_relations, &mut rng);

    let p_shared = spec.overlap_ratio / (2.0 - spec.overlap_ratio);
    let roles: Vec<Role> = (0..n_master)
        .map(|_| {
            if rng.gen_bool(p_shared.min(1.0)) {
                Role::Shared
            } else if rng.gen_bool(0.5) {
                Role::Only1
            } else {
                Role::Only2
            }
        })
        .collect();
    let owns = |side: usize, x: usize| match roles[x] {
        Role::Shared => true,
        Role::Only1 => side == 0,
        Role::Only2 => side == 1,
    };

    let mut sides: Vec<SideState> = Vec::with_capacity(2);
    for side in 0..2 {
        let kept: Vec<(usize, usize, usize)> = edges
            .iter()
            .copied()
            .filter(|&(h, _, t)| owns(side, h) && owns(side, t))
            .filter(|_| !rng.gen_bool(spec.structural_noise))
            .collect();
        let mut s = SideState {
            in_graph: vec![false; kept.len()],
            universe: kept,
            current: Vec::new(),
            present: vec![false; n_master],
        };
        for i in 0..s.universe.len() {
            let (h, _, t) = s.universe[i];
            if h < n_core && t < n_core {
                s.add(i);
            }
        }
        // Def. 1 fixes the relation set: reserve triples may only reuse known relations.
        let rels: HashSet<usize> = s.current.iter().map(|&i| s.universe[i].1).collect();
        let keep: Vec<bool> = s
            .universe
            .iter()
            .enumerate()
            .map(|(i, tr)| s.in_graph[i] || rels.contains(&tr.1))
            .collect();
        let mut remap = vec![usize::MAX; s.universe.len()];
        let mut universe = Vec::new();
        let mut in_graph = Vec::new();
        for (i, &k) in keep.iter().enumerate() {
            if k {
                remap[i] = universe.len();
                universe.push(s.universe[i]);
                in_graph.push(s.in_graph[i]);
            }
        }
        s.current = s.current.iter().map(|&i| remap[i]).collect();
        s.universe = universe;
        s.in_graph = in_graph;
        if s.current.is_empty() {
            return Err(Error::GenerationInfeasible("a KG has no triples in its first snapshot".into()));
        }
        sides.push(s);
    }

    let mut label1: Vec<usize> = (0..n_master).collect();
    let mut label2: Vec<usize> = (0..n_master).collect();
    label1.shuffle(&mut rng);
    label2.shuffle(&mut rng);

    let side2 = sides.pop().expect("two sides");
    let side1 = sides.pop().expect("two sides");
    let mut pool = ReservePool {
        t: 0,
        roles,
        label1,
        label2,
        sides: [side1, side2],
        seed_nodes: Vec::new(),
        valid_nodes: Vec::new(),
        test_nodes: Vec::new(),
        rng,
    };
    let mut gold = pool.gold_nodes();
    if gold.len() < 3 {
        return Err(Error::GenerationInfeasible("fewer than 3 gold pairs in the first snapshot".into()));
    }
    gold.shuffle(&mut pool.rng);
    let (s, v, _) = split_sizes(gold.len(), spec.split);
    pool.seed_nodes = gold[..s].to_vec();
    pool.valid_nodes = gold[s..s + v].to_vec();
    pool.test_nodes = gold[s + v..].to_vec();
    let snap = pool.snapshot();
    Ok((snap, pool))
}

/// Next snapshot: sample `growth_ratio·|T|` reserve triples touching present
/// entities per KG, close over reserve triples between present entities, and
/// append newly matchable gold pairs to the test set.
pub fn grow(current: &Snapshot, pool: &mut ReservePool, spec: &GenSpec) -> Result<Snapshot> {
    if current.0.t != pool.t {
        return Err(Error::SnapshotOrder {
            expected: pool.t,
            found: current.0.t,
        });
    }
    for k in 0..2 {
        let side = &mut pool.sides[k];
        let want = (side.current.len() as f64 * spec.growth_ratio).ceil() as usize;
        let mut frontier: Vec<usize> = (0..side.universe.len())
            .filter(|&i| {
                let (h, _, t) = side.universe[i];
                !side.in_graph[i] && (side.present[h] || side.present[t])
            })
            .collect();
        if frontier.len() < want {
            log::warn!(
                "KG{} reserve exhausted at t={}: {} of {want} triples available",
                k + 1,
                pool.t + 1,
                frontier.len()
            );
        }
        frontier.shuffle(&mut pool.rng);
        for &i in frontier.iter().take(want) {
            side.add(i);
        }
        let closure: Vec<usize> = (0..side.universe.len())
            .filter(|&i| {
                let (h, _, t) = side.universe[i];
                !side.in_graph[i] && side.present[h] && side.present[t]
            })
            .collect();
        for i in closure {
            side.add(i);
        }
    }
    let known: HashSet<usize> = pool
        .seed_nodes
        .iter()
        .chain(&pool.valid_nodes)
        .chain(&pool.test_nodes)
        .copied()
        .collect();
    let fresh: Vec<usize> = pool.gold_nodes().into_iter().filter(|x| !known.contains(x)).collect();
    pool.test_nodes.extend(fresh);
    pool.t += 1;
    Ok(pool.snapshot())
}

/// All `spec.n_snapshots` snapshots.
pub fn generate(spec: &GenSpec) -> Result<Vec<Snapshot>> {
    let (first, mut pool) = generate_base_pair(spec)?;
    let mut out = vec![first];
    while out.len() < spec.n_snapshots {
        let next = grow(out.last().expect("nonempty"), &mut pool, spec)?;
        out.push(next);
    }
    Ok(out)
}

/// `out/snapshots/tN/…` plus `out/genspec.txt`.
pub fn write_benchmark(out: &Path, spec: &GenSpec, snapshots: &[Snapshot]) -> Result<()> {
    for (pair, aligns) in snapshots {
        write_snapshot(&out.join("snapshots").join(format!("t{}", pair.t)), pair, aligns)?;
    }
    let mut text = String::from("# synthetic benchmark parameters\n");
    let _ = write!(text, "{}", spec.to_text());
    let path = out.join("genspec.txt");
    fs::write(&path, text).map_err(|e| Error::output(path, e))
}
