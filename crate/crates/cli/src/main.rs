//! `hsgm`: build, stream into, query and measure hierarchical segment-graph memories.
//!
//! Config precedence, lowest first: built-in defaults, `--config` file,
//! `HSGM_*` environment variables, `--seed` and `--set key=value` flags.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hsgm::memory::build_memory_from_embeddings;
use hsgm::oracle::{
    compare_document, complexity_probe, error_report, full_adjacency_from_embeddings, reconstruct_hsgm_adjacency,
    ErrorReport, ProbeMode,
};
use hsgm::persist::{load_corpus, write_atomic, CorpusRecord, MetricsLog};
use hsgm::query::answer_query;
use hsgm::{load_snapshot, save_snapshot, Engine, EngineConfig, OpCounts, Segment, ThresholdPolicy};

#[derive(Parser)]
#[command(name = "hsgm", version, about = "Hierarchical segment-graph memory")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` config key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path. A directory for `build`, a file for everything else
    /// (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, repeatable: `--set k=128 --set global.pinned=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build one snapshot per corpus document.
    Build {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Stream corpus records into a snapshot as new segments.
    Append {
        /// Existing snapshot; an empty memory from the config when absent.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        /// Delay between appends.
        #[arg(long, default_value_t = 0)]
        interval_ms: u64,
        /// Streaming metrics CSV, appended to.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Answer a query against a snapshot, printing the result as JSON.
    Query {
        #[arg(long)]
        snapshot: PathBuf,
        /// Whitespace-tokenized query text.
        #[arg(long)]
        query: String,
        /// Segments to retrieve; the snapshot's `top_k` when omitted.
        #[arg(short = 'k', long)]
        top_k: Option<usize>,
    },
    /// Similarity-evaluation scaling on synthetic documents.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [1000, 2000, 4000, 8000, 16000])]
        lengths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [BenchMode::SqrtN, BenchMode::Full])]
        modes: Vec<BenchMode>,
    },
    /// Dense-oracle error report for every corpus document.
    Compare {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Error and cost over a grid of thresholds, segment sizes and K.
    Sweep {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3])]
        delta_l: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.15])]
        delta_g: Vec<f64>,
        /// Segment sizes; the config's `k` when omitted.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        /// Retrieval sizes; the config's `top_k` when omitted.
        #[arg(long, value_delimiter = ',')]
        top_k: Vec<usize>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchMode {
    #[value(name = "sqrtn")]
    SqrtN,
    /// Segment size taken from the config's `k`.
    #[value(name = "fixed-k")]
    FixedK,
    Full,
}

impl std::fmt::Display for BenchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

fn resolve_config(common: &Common) -> Result<EngineConfig> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            EngineConfig::from_kv_str(&text).with_context(|| format!("config file {}", path.display()))?
        }
        None => EngineConfig::default(),
    };
    config
        .apply(&EngineConfig::env_overrides(std::env::vars()))
        .context("environment overrides")?;
    let mut flags = Vec::new();
    if let Some(seed) = common.seed {
        flags.push(("seed".to_string(), seed.to_string()));
    }
    for s in &common.set {
        let (k, v) = s.split_once('=').with_context(|| format!("--set {s:?}: expected KEY=VALUE"))?;
        flags.push((k.to_string(), v.to_string()));
    }
    config.apply(&flags).context("command-line overrides")?;
    config.validate()?;
    Ok(config)
}

/// Writes to `out` atomically, or to stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn snapshot_name(doc_id: &str) -> String {
    let safe: String = doc_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{safe}.hsgm")
}

fn cmd_build(config: EngineConfig, corpus: &Path, out: Option<&Path>) -> Result<()> {
    let engine = Engine::new(config)?;
    let records = load_corpus(corpus)?;
    let dir = out.unwrap_or(Path::new("."));
    if !records.is_empty() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut names = std::collections::HashMap::new();
    for r in &records {
        let name = snapshot_name(&r.doc_id);
        if let Some(other) = names.insert(name.clone(), r.doc_id.clone()) {
            bail!("doc_ids {other:?} and {:?} map to the same snapshot file {name}", r.doc_id);
        }
    }
    for r in &records {
        let h = engine.build(&r.tokens).with_context(|| format!("document {:?}", r.doc_id))?;
        let path = dir.join(snapshot_name(&r.doc_id));
        save_snapshot(&h, &path)?;
        let m = &h.memory;
        println!(
            "doc_id={} N={} M={} global_edges={} delta_g={} similarity_evals={} edges_built={} snapshot={}",
            r.doc_id,
            r.tokens.len(),
            m.summaries.len(),
            m.global_edges.len(),
            m.delta_g,
            m.metrics.similarity_evals,
            m.metrics.edges_built,
            path.display()
        );
    }
    println!("{} documents", records.len());
    Ok(())
}

fn cmd_append(
    config: EngineConfig,
    snapshot: Option<&Path>,
    corpus: &Path,
    interval_ms: u64,
    metrics: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    // An existing snapshot carries its own config; appends must match it.
    let (engine, mut h) = match snapshot.filter(|p| p.exists()) {
        Some(path) => {
            let h = load_snapshot(path)?;
            (Engine::for_memory(&h)?, h)
        }
        None => {
            let engine = Engine::new(config)?;
            let h = engine.empty();
            (engine, h)
        }
    };
    let target = out
        .or(snapshot)
        .context("append needs --out or --snapshot to know where to save")?;
    let records = load_corpus(corpus)?;
    let mut log = metrics.map(MetricsLog::open).transpose()?;
    let started = Instant::now();
    let mut first = true;
    for r in &records {
        let k = engine.config().k;
        for chunk in r.tokens.chunks(k) {
            if !first && interval_ms > 0 {
                thread::sleep(Duration::from_millis(interval_ms));
            }
            first = false;
            let index = h.memory.summaries.len();
            let start = h.token_count();
            let segment = Segment {
                index,
                span: start..start + chunk.len(),
                tokens: chunk.to_vec(),
            };
            engine
                .append(&mut h, &segment)
                .with_context(|| format!("document {:?}", r.doc_id))?;
            if let Some(log) = log.as_mut() {
                log.record(started.elapsed().as_millis() as u64, index, &h.memory.metrics)?;
            }
        }
    }
    save_snapshot(&h, target)?;
    let m = &h.memory;
    println!(
        "M={} global_edges={} appends={} cache_hit_rate={:.6} snapshot={}",
        m.summaries.len(),
        m.global_edges.len(),
        m.metrics.appends,
        hsgm::cache_hit_rate(&m.metrics),
        target.display()
    );
    Ok(())
}

fn cmd_query(snapshot: &Path, query: &str, top_k: Option<usize>, out: Option<&Path>) -> Result<()> {
    let h = load_snapshot(snapshot)?;
    let engine = Engine::for_memory(&h)?;
    let tokens: Vec<&str> = query.split_whitespace().collect();
    let k = top_k.unwrap_or(engine.config().top_k);
    let result = answer_query(&h, &tokens, k, engine.gcn(), engine.embedder(), &mut OpCounts::default())?;
    emit(out, &(serde_json::to_string_pretty(&result)? + "\n"))
}

fn cmd_bench(config: EngineConfig, lengths: &[usize], modes: &[BenchMode], out: Option<&Path>) -> Result<()> {
    let mut modes: Vec<ProbeMode> = modes
        .iter()
        .map(|m| match m {
            BenchMode::SqrtN => ProbeMode::HsgmSqrtN,
            BenchMode::FixedK => ProbeMode::HsgmFixedK(config.k),
            BenchMode::Full => ProbeMode::Full,
        })
        .collect();
    modes.sort_by_key(|m| m.label());
    modes.dedup();
    let mut csv = String::from("N,mode,segment_size,similarity_evals,closed_form,seconds,storage_bytes,fitted_slope\n");
    for mode in modes {
        let table = complexity_probe(lengths, mode, &config)?;
        for r in &table.rows {
            csv += &format!(
                "{},{},{},{},{},{:.6},{},{:.6}\n",
                r.n,
                r.mode,
                r.segment_size,
                r.similarity_evals,
                mode.closed_form(r.n),
                r.seconds,
                r.storage_bytes,
                table.slope
            );
        }
        eprintln!("{}: log-log slope {:.4}", mode.label(), table.slope);
    }
    emit(out, &csv)
}

#[derive(Serialize)]
struct DocReport<'a> {
    doc_id: &'a str,
    #[serde(flatten)]
    report: ErrorReport,
}

fn cmd_compare(config: EngineConfig, corpus: &Path, out: Option<&Path>) -> Result<()> {
    let engine = Engine::new(config)?;
    let records = load_corpus(corpus)?;
    let mut reports = Vec::with_capacity(records.len());
    for r in &records {
        let report = compare_document(&engine, &r.tokens).with_context(|| format!("document {:?}", r.doc_id))?;
        if !report.satisfied {
            eprintln!(
                "bound violated: doc_id={} relative_error={} bound={}",
                r.doc_id, report.relative_error, report.bound
            );
        }
        reports.push(DocReport {
            doc_id: &r.doc_id,
            report,
        });
    }
    emit(out, &(serde_json::to_string_pretty(&reports)? + "\n"))
}

struct SweepGrid<'a> {
    delta_l: &'a [f64],
    delta_g: &'a [f64],
    k: &'a [usize],
    top_k: &'a [usize],
}

/// One row per `(k, K, delta_l, delta_g)`, in that nesting order. Error is the
/// mean over documents. Evaluations cover construction plus one query per
/// document made of its first eight tokens.
fn cmd_sweep(config: EngineConfig, corpus: &Path, grid: SweepGrid, out: Option<&Path>) -> Result<()> {
    let records: Vec<CorpusRecord> = load_corpus(corpus)?
        .into_iter()
        .filter(|r| !r.tokens.is_empty())
        .collect();
    let ks = if grid.k.is_empty() { vec![config.k] } else { grid.k.to_vec() };
    let top_ks = if grid.top_k.is_empty() { vec![config.top_k] } else { grid.top_k.to_vec() };

    let base = Engine::new(config.clone())?;
    let mut prepared = Vec::with_capacity(records.len());
    for r in &records {
        let emb = base.embedder().embed(&r.tokens).with_context(|| format!("document {:?}", r.doc_id))?;
        let full = full_adjacency_from_embeddings(&emb, config.oracle_cap, &mut OpCounts::default())
            .with_context(|| format!("document {:?}", r.doc_id))?;
        prepared.push((r, emb, full));
    }

    let mut csv = String::from(
        "delta_l,delta_g,k,top_k,relative_error,max_relative_error,violations,similarity_evals,edges_built\n",
    );
    for &k in &ks {
        for &top_k in &top_ks {
            for &dl in grid.delta_l {
                for &dg in grid.delta_g {
                    let mut cfg = config.clone();
                    cfg.k = k;
                    cfg.top_k = top_k;
                    cfg.threshold_policy = ThresholdPolicy::Fixed { delta: dl };
                    cfg.global.pinned = Some(dg);
                    let engine = Engine::new(cfg)?;
                    let (mut sum, mut max, mut violations, mut evals, mut built) = (0.0, 0.0f64, 0, 0u64, 0u64);
                    for (r, emb, full) in &prepared {
                        let segments = emb.chunks(k).map(<[_]>::to_vec).collect();
                        let h = build_memory_from_embeddings(&engine, segments)?;
                        let hsgm = reconstruct_hsgm_adjacency(&h, emb.len())?;
                        let report = error_report(full, &hsgm, dl.clamp(0.0, 1.0), dg.clamp(0.0, 1.0))?;
                        let mut counter = OpCounts::default();
                        let q = &r.tokens[..r.tokens.len().min(8)];
                        answer_query(&h, q, top_k, engine.gcn(), engine.embedder(), &mut counter)?;
                        sum += report.relative_error;
                        max = max.max(report.relative_error);
                        violations += usize::from(!report.satisfied);
                        evals += h.memory.metrics.similarity_evals + counter.similarity_evals;
                        built += h.memory.metrics.edges_built + h.graphs.iter().map(|g| g.edges.len() as u64).sum::<u64>();
                    }
                    let mean = if prepared.is_empty() { 0.0 } else { sum / prepared.len() as f64 };
                    csv += &format!("{dl},{dg},{k},{top_k},{mean:.9},{max:.9},{violations},{evals},{built}\n");
                }
            }
        }
    }
    emit(out, &csv)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let out = cli.common.out.as_deref();
    match &cli.command {
        Command::Build { corpus } => cmd_build(resolve_config(&cli.common)?, corpus, out),
        Command::Append {
            snapshot,
            corpus,
            interval_ms,
            metrics,
        } => cmd_append(
            resolve_config(&cli.common)?,
            snapshot.as_deref(),
            corpus,
            *interval_ms,
            metrics.as_deref(),
            out,
        ),
        Command::Query { snapshot, query, top_k } => cmd_query(snapshot, query, *top_k, out),
        Command::Bench { lengths, modes } => cmd_bench(resolve_config(&cli.common)?, lengths, modes, out),
        Command::Compare { corpus } => cmd_compare(resolve_config(&cli.common)?, corpus, out),
        Command::Sweep {
            corpus,
            delta_l,
            delta_g,
            k,
            top_k,
        } => cmd_sweep(
            resolve_config(&cli.common)?,
            corpus,
            SweepGrid {
                delta_l,
                delta_g,
                k,
                top_k,
            },
            out,
        ),
    }
}
