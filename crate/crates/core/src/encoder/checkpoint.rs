//! Text checkpoints for [`EncoderState`].
//!
//! ```text
//! contea-checkpoint 1
//! dim 100
//! t 0
//! seed 7
//! group base_emb 400 100
//! <one line of space-separated values per row>
//! ...
//! frozen <rel> <agg1> <proxies> <proxy_proj>
//! frozen_rows <0/1 string, one char per entity>
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so reading a
//! checkpoint back reproduces every bit.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{EncoderState, FrozenMask, Layer};

pub const CHECKPOINT_MAGIC: &str = "contea-checkpoint 1";

fn write_matrix(out: &mut impl Write, name: &str, rows: usize, cols: usize, data: &[f64]) -> std::io::Result<()> {
    writeln!(out, "group {name} {rows} {cols}")?;
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        let mut first = true;
        for v in row {
            if !first {
                out.write_all(b" ")?;
            }
            first = false;
            write!(out, "{v:?}")?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn flag(b: bool) -> char {
    if b {
        '1'
    } else {
        '0'
    }
}

pub fn write_checkpoint(state: &EncoderState, path: &Path) -> Result<()> {
    let io = |e| Error::output(path, e);
    let file = fs::File::create(path).map_err(io)?;
    let mut out = BufWriter::new(file);
    let d = state.dim;
    let body = (|| -> std::io::Result<()> {
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        writeln!(out, "dim {d}")?;
        writeln!(out, "t {}", state.t)?;
        writeln!(out, "seed {}", state.seed)?;
        let b = &state.base_emb;
        write_matrix(&mut out, "base_emb", b.rows(), d, b.as_slice())?;
        let r = &state.rel_emb;
        write_matrix(&mut out, "rel_emb", r.rows(), d, r.as_slice())?;
        for (l, layer) in state.agg1.iter().enumerate() {
            write_matrix(&mut out, &format!("agg1.w{l}"), d, d, layer.weight.as_slice())?;
            write_matrix(&mut out, &format!("agg1.b{l}"), 1, d, &layer.bias)?;
        }
        let p = &state.proxies;
        write_matrix(&mut out, "proxies", p.rows(), d, p.as_slice())?;
        write_matrix(&mut out, "proxy_proj", 2 * d, d, state.proxy_proj.as_slice())?;
        let f = &state.frozen;
        writeln!(
            out,
            "frozen {} {} {} {}",
            flag(f.rel_emb),
            flag(f.agg1),
            flag(f.proxies),
            flag(f.proxy_proj)
        )?;
        let rows: String = f.base_rows.iter().map(|&b| flag(b)).collect();
        writeln!(out, "frozen_rows {rows}")?;
        out.flush()
    })();
    body.map_err(io)
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("line {}: {msg}", line + 1))
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self.next()?;
        let mut parts = line.split(' ');
        if parts.next() != Some(key) {
            return Err(bad(n, format!("expected {key:?}")));
        }
        Ok((n, parts.collect()))
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (n, parts) = self.keyed(key)?;
        match parts.as_slice() {
            [v] => v.parse().map_err(|_| bad(n, format!("bad {key}"))),
            _ => Err(bad(n, format!("bad {key}"))),
        }
    }

    fn matrix(&mut self, name: &str, cols: Option<usize>) -> Result<Matrix> {
        let (n, parts) = self.keyed("group")?;
        let [g, r, c] = parts.as_slice() else {
            return Err(bad(n, "bad group header"));
        };
        if *g != name {
            return Err(bad(n, format!("expected group {name}, found {g}")));
        }
        let rows: usize = r.parse().map_err(|_| bad(n, "bad row count"))?;
        let ncols: usize = c.parse().map_err(|_| bad(n, "bad column count"))?;
        if cols.is_some_and(|want| want != ncols) {
            return Err(bad(n, format!("group {name} has {ncols} columns")));
        }
        let mut data = Vec::with_capacity(rows * ncols);
        for _ in 0..rows {
            let (n, line) = self.next()?;
            let before = data.len();
            for tok in line.split(' ').filter(|s| !s.is_empty()) {
                data.push(tok.parse::<f64>().map_err(|_| bad(n, "bad value"))?);
            }
            if data.len() - before != ncols {
                return Err(bad(n, format!("expected {ncols} values")));
            }
        }
        Ok(Matrix::from_vec(rows, ncols, data))
    }
}

fn parse_flag(n: usize, s: &str) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(bad(n, "bad frozen flag")),
    }
}

pub fn read_checkpoint(path: &Path) -> Result<EncoderState> {
    let text = fs::read_to_string(path)?;
    let mut rd = Reader {
        lines: text.lines().enumerate(),
    };
    let (_, magic) = rd.next()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("unrecognized header {magic:?}")));
    }
    let dim: usize = rd.scalar("dim")?;
    let t: u32 = rd.scalar("t")?;
    let seed: u64 = rd.scalar("seed")?;
    let d = Some(dim);
    let base_emb = rd.matrix("base_emb", d)?;
    let rel_emb = rd.matrix("rel_emb", d)?;
    let mut layers = Vec::with_capacity(2);
    for l in 0..2 {
        let weight = rd.matrix(&format!("agg1.w{l}"), d)?;
        let bias = rd.matrix(&format!("agg1.b{l}"), d)?;
        if weight.rows() != dim || bias.rows() != 1 {
            return Err(Error::Checkpoint(format!("layer {l} has the wrong shape")));
        }
        layers.push(Layer {
            weight,
            bias: bias.into_vec(),
        });
    }
    let proxies = rd.matrix("proxies", d)?;
    let proxy_proj = rd.matrix("proxy_proj", d)?;
    if proxy_proj.rows() != 2 * dim {
        return Err(Error::Checkpoint("proxy_proj must have 2·dim rows".into()));
    }
    let (n, f) = rd.keyed("frozen")?;
    let [rel, agg, prox, proj] = f.as_slice() else {
        return Err(bad(n, "expected four frozen flags"));
    };
    let (n_rows, rows) = rd.keyed("frozen_rows")?;
    let row_str = rows.first().copied().unwrap_or("");
    if row_str.len() != base_emb.rows() {
        return Err(bad(n_rows, "frozen row count does not match base_emb"));
    }
    let base_rows = row_str
        .split("")
        .filter(|s| !s.is_empty())
        .map(|s| parse_flag(n_rows, s))
        .collect::<Result<Vec<_>>>()?;
    let frozen = FrozenMask {
        base_rows,
        rel_emb: parse_flag(n, rel)?,
        agg1: parse_flag(n, agg)?,
        proxies: parse_flag(n, prox)?,
        proxy_proj: parse_flag(n, proj)?,
    };
    let agg1: [Layer; 2] = layers.try_into().expect("two layers");
    Ok(EncoderState {
        dim,
        t,
        seed,
        base_emb,
        rel_emb,
        agg1,
        proxies,
        proxy_proj,
        frozen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::encoder::init_parameters;
    use crate::kg_store::{KnowledgeGraph, SnapshotPair};

    fn state() -> EncoderState {
        let p = SnapshotPair::new(
            3,
            KnowledgeGraph::from_triples([("a", "r", "b"), ("b", "s", "c")]),
            KnowledgeGraph::from_triples([("x", "r", "y")]),
        );
        let cfg = RunConfig {
            dim: 5,
            proxy_count: 3,
            ..RunConfig::default()
        };
        let mut s = init_parameters(&p, &cfg, 11).unwrap();
        s.base_emb[(1, 2)] = 1.0 / 3.0;
        s.rel_emb[(0, 0)] = -0.0;
        s.agg1[1].bias[4] = 1e-300;
        s.frozen.base_rows[2] = true;
        s.frozen.agg1 = true;
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        let s = state();
        write_checkpoint(&s, &path).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, s);
        let bits = |m: &Matrix| m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.base_emb), bits(&s.base_emb));
        assert_eq!(bits(&back.rel_emb), bits(&s.rel_emb));
        assert_eq!(back.agg1[1].bias[4].to_bits(), s.agg1[1].bias[4].to_bits());
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));
        write_checkpoint(&state(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let cut: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        fs::write(&path, cut).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
