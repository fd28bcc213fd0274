//! Command-line interface.

use std::collections::HashSet;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Mode, RunConfig};
use crate::continual::{candidates, load_sequence, run_snapshots, write_outputs};
use crate::encoder::{encode_all, read_checkpoint};
use crate::error::Result;
use crate::evalkit::evaluate;
use crate::kg_store::{load_snapshot, Pair, KG1_TRIPLES};
use crate::matcher::{search_candidates, SimilarityMetric, TrustworthyAlignment};
use crate::par;
use crate::snapgen::{generate, write_benchmark, GenSpec};

#[derive(Debug, Parser)]
#[command(name = "contea", version, about = "Continual entity alignment for growing knowledge graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic growing benchmark.
    Gen(GenArgs),
    /// Train on the first snapshot only.
    Train(RunArgs),
    /// Run the continual pipeline over a snapshot sequence.
    Run(RunArgs),
    /// Score an exported alignment file against a snapshot's test links.
    Eval(EvalArgs),
    /// Encode a snapshot with a checkpoint and write the searched alignment.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Line-oriented key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the data-parallel loops.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Generator parameter, e.g. n_entities=500; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Snapshot directories in order, or one directory holding t0, t1, ….
    #[arg(long, value_delimiter = ',', required = true)]
    snapshots: Vec<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    alignment: PathBuf,
    /// The snapshot whose test links are the gold set.
    #[arg(long)]
    snapshots: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    snapshots: PathBuf,
    /// Output TSV path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for s in &common.set {
        cfg.apply(s)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.threads {
        par::set_threads(n);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// A single directory without triples but with `tN` children stands for the sequence.
fn expand_snapshots(dirs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if let [dir] = dirs {
        if !dir.join(KG1_TRIPLES).exists() && dir.is_dir() {
            let mut found: Vec<(u32, PathBuf)> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok())
                .filter_map(|e| {
                    let name = e.file_name().to_string_lossy().into_owned();
                    let t = name.strip_prefix('t')?.parse().ok()?;
                    Some((t, e.path()))
                })
                .collect();
            if !found.is_empty() {
                found.sort();
                return Ok(found.into_iter().map(|(_, p)| p).collect());
            }
        }
    }
    Ok(dirs.to_vec())
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let mut spec = GenSpec::default();
    for s in &args.set {
        spec.apply(s)?;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let snaps = generate(&spec)?;
    write_benchmark(&args.out, &spec, &snaps)?;
    println!("wrote {} snapshots to {}", snaps.len(), args.out.join("snapshots").display());
    Ok(())
}

fn cmd_run(args: &RunArgs, first_only: bool) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    let mut dirs = expand_snapshots(&args.snapshots)?;
    if first_only {
        dirs.truncate(1);
    }
    let snaps = load_sequence(&dirs)?;
    let outcome = run_snapshots(&snaps, &cfg)?;
    write_outputs(&outcome, &snaps, &cfg, &args.out)?;
    for s in &outcome.record.snapshots {
        println!(
            "t={} mode={} P={:.4} R={:.4} F1={:.4} pairs={}",
            s.t, cfg.mode, s.metrics.precision, s.metrics.recall, s.metrics.f1, s.ta_size
        );
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (pair, aligns) = load_snapshot(&args.snapshots)?;
    let ta = TrustworthyAlignment::read_tsv(&args.alignment, &pair)?;
    let gold: HashSet<Pair> = aligns.test.iter().copied().collect();
    let m = evaluate(&ta, &gold)?;
    println!(
        "precision={:.6} recall={:.6} f1={:.6} correct={} predicted={}",
        m.precision,
        m.recall,
        m.f1,
        m.correct_count,
        ta.len()
    );
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let (pair, aligns) = load_snapshot(&args.snapshots)?;
    let state = read_checkpoint(&args.checkpoint)?;
    let emb = encode_all(&state, &pair)?;
    let (left, right) = candidates(&pair, &aligns);
    let ta = search_candidates(&emb, &left, &right, SimilarityMetric::from_config(&cfg), pair.t)?;
    ta.write_tsv(&args.out, &pair)?;
    println!("wrote {} pairs to {}", ta.len(), args.out.display());
    Ok(())
}

fn init_logging() {
    let level = match std::env::var("CONTEA_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Error,
        Ok("info") => log::LevelFilter::Info,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_run(a, true),
        Command::Run(a) => cmd_run(a, false),
        Command::Eval(a) => cmd_eval(a),
        Command::Export(a) => cmd_export(a),
    }
}

/// Run the CLI on `argv` (without the program name) and return the exit code.
pub fn dispatch<S: AsRef<str>>(argv: &[S]) -> i32 {
    init_logging();
    let args = std::iter::once("contea").chain(argv.iter().map(AsRef::as_ref));
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
