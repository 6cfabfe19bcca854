//! Ground truth for the hierarchical memory: the dense all-pairs similarity
//! matrix, an adjacency reconstructed from the memory, the Frobenius error
//! bound, operation-count scaling probes and the sliding-window baseline.
//!
//! Reconstruction rule: an intra-segment entry is the local edge weight when the
//! edge survived thresholding, else 0. An entry between tokens of segments
//! `p != q` is `cos(g_p, g_q)` when `(p, q)` is a global edge, else 0. With a
//! single segment and a threshold of -1 this recovers the dense matrix exactly.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::{checked_sq_norms, cosine_with_sq_norms, Embedder, TokenEmbedding};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::instrument::OpCounts;
use crate::local_graph::{build_local_graph, LocalGraph, ThresholdPolicy};
use crate::memory::{build_memory_from_embeddings, Hierarchy};
use crate::persist::{encode_snapshot, EngineConfig};
use crate::query::{local_gcn, GcnParams};
use crate::segmenter::sliding_windows;
use crate::{linalg, synthetic};

/// Symmetric `n x n` matrix, zero diagonal, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseAdjacency {
    pub n: usize,
    pub values: Vec<f64>,
}

impl DenseAdjacency {
    pub fn zeros(n: usize) -> Self {
        DenseAdjacency {
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn set_pair(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
        self.values[j * self.n + i] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &DenseAdjacency) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        Err(Error::ResourceLimit { n, cap })
    } else {
        Ok(())
    }
}

/// Unthresholded cosine between every pair of token embeddings.
pub fn full_adjacency_from_embeddings(
    nodes: &[TokenEmbedding],
    cap: usize,
    counter: &mut OpCounts,
) -> Result<DenseAdjacency> {
    let n = nodes.len();
    if n == 0 {
        return Err(Error::InvalidConfig("dense oracle needs at least one token".into()));
    }
    check_cap(n, cap)?;
    let norms = checked_sq_norms(nodes, nodes[0].len())?;
    let mut a = DenseAdjacency::zeros(n);
    for j in 0..n {
        for k in j + 1..n {
            a.set_pair(j, k, cosine_with_sq_norms(&nodes[j], &nodes[k], norms[j], norms[k]));
        }
    }
    counter.similarity_evals += crate::instrument::pair_count(n);
    Ok(a)
}

pub fn build_full_adjacency<S: AsRef<str>>(
    tokens: &[S],
    embedder: &Embedder,
    cap: usize,
    counter: &mut OpCounts,
) -> Result<DenseAdjacency> {
    check_cap(tokens.len(), cap)?;
    full_adjacency_from_embeddings(&embedder.embed(tokens)?, cap, counter)
}

/// Dense view of the hierarchical memory over its `n` tokens.
pub fn reconstruct_hsgm_adjacency(h: &Hierarchy, n: usize) -> Result<DenseAdjacency> {
    let covered = h.token_count();
    if covered != n {
        return Err(Error::CorruptState(format!(
            "memory covers {covered} tokens, expected {n}"
        )));
    }
    if h.graphs.len() != h.memory.summaries.len() {
        return Err(Error::CorruptState("local graph and summary counts differ".into()));
    }
    let mut starts = Vec::with_capacity(h.graphs.len());
    let mut offset = 0;
    for g in &h.graphs {
        starts.push(offset);
        offset += g.len();
    }
    let mut a = DenseAdjacency::zeros(n);
    for (g, &start) in h.graphs.iter().zip(&starts) {
        for e in &g.edges {
            a.set_pair(start + e.a as usize, start + e.b as usize, e.weight);
        }
    }
    for e in &h.memory.global_edges {
        let (p, q) = (e.a as usize, e.b as usize);
        if q >= h.graphs.len() {
            return Err(Error::CorruptState(format!("global edge to missing segment {q}")));
        }
        for i in starts[p]..starts[p] + h.graphs[p].len() {
            for j in starts[q]..starts[q] + h.graphs[q].len() {
                a.set_pair(i, j, e.weight);
            }
        }
    }
    Ok(a)
}

/// `sqrt(2(1 - gl^2)) + sqrt(2(1 - gg^2))`.
pub fn error_bound(gamma_l: f64, gamma_g: f64) -> Result<f64> {
    for (name, g) in [("gamma_l", gamma_l), ("gamma_g", gamma_g)] {
        if !(0.0..=1.0).contains(&g) {
            return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {g}")));
        }
    }
    Ok((2.0 * (1.0 - gamma_l * gamma_l)).sqrt() + (2.0 * (1.0 - gamma_g * gamma_g)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub frobenius_error: f64,
    pub relative_error: f64,
    pub bound: f64,
    pub satisfied: bool,
    pub gamma_l: f64,
    pub gamma_g: f64,
}

pub fn error_report(
    full: &DenseAdjacency,
    hsgm: &DenseAdjacency,
    gamma_l: f64,
    gamma_g: f64,
) -> Result<ErrorReport> {
    if full.n != hsgm.n {
        return Err(Error::DimensionMismatch {
            expected: full.n,
            found: hsgm.n,
        });
    }
    let frobenius_error = full
        .values
        .iter()
        .zip(&hsgm.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let full_norm = full.frobenius_norm();
    let relative_error = if full_norm == 0.0 { 0.0 } else { frobenius_error / full_norm };
    let bound = error_bound(gamma_l, gamma_g)?;
    Ok(ErrorReport {
        frobenius_error,
        relative_error,
        bound,
        satisfied: relative_error <= bound,
        gamma_l,
        gamma_g,
    })
}

/// Builds both sides for one document and reports the error, taking the
/// operating thresholds as the bound's gammas. Needs a fixed local threshold.
pub fn compare_document<S: AsRef<str>>(engine: &Engine, tokens: &[S]) -> Result<ErrorReport> {
    let config = engine.config();
    let ThresholdPolicy::Fixed { delta: delta_l } = config.threshold_policy else {
        return Err(Error::InvalidConfig(
            "error reports need a fixed local threshold to serve as gamma_l".into(),
        ));
    };
    check_cap(tokens.len(), config.oracle_cap)?;
    let embeddings = engine.embedder().embed(tokens)?;
    let full = full_adjacency_from_embeddings(&embeddings, config.oracle_cap, &mut OpCounts::default())?;
    let segments: Vec<Vec<TokenEmbedding>> = embeddings.chunks(config.k).map(<[_]>::to_vec).collect();
    let h = build_memory_from_embeddings(engine, segments)?;
    let hsgm = reconstruct_hsgm_adjacency(&h, tokens.len())?;
    error_report(
        &full,
        &hsgm,
        delta_l.clamp(0.0, 1.0),
        h.memory.delta_g.clamp(0.0, 1.0),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMode {
    /// Segment size `ceil(sqrt(N))`.
    HsgmSqrtN,
    HsgmFixedK(usize),
    /// One graph over the whole document.
    Full,
}

impl ProbeMode {
    pub fn label(&self) -> &'static str {
        match self {
            ProbeMode::HsgmSqrtN => "hsgm-sqrtN",
            ProbeMode::HsgmFixedK(_) => "hsgm-fixed-k",
            ProbeMode::Full => "full",
        }
    }

    pub fn segment_size(&self, n: usize) -> usize {
        match *self {
            ProbeMode::HsgmSqrtN => ((n as f64).sqrt().ceil() as usize).max(1),
            ProbeMode::HsgmFixedK(k) => k,
            ProbeMode::Full => n.max(1),
        }
    }

    /// Similarity evaluations the construction must perform at length `n`.
    pub fn closed_form(&self, n: usize) -> u64 {
        use crate::instrument::pair_count;
        match self {
            ProbeMode::Full => pair_count(n),
            _ => {
                let k = self.segment_size(n);
                let m = n.div_ceil(k);
                let local: u64 = (0..m).map(|i| pair_count(k.min(n - i * k))).sum();
                local + pair_count(m)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub n: usize,
    pub mode: &'static str,
    pub segment_size: usize,
    pub similarity_evals: u64,
    pub seconds: f64,
    /// Encoded snapshot size for the hierarchical modes; node plus edge storage
    /// of the single graph in full mode.
    pub storage_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeTable {
    pub rows: Vec<ProbeRow>,
    /// Least-squares slope of `ln(similarity_evals)` against `ln(N)`.
    pub slope: f64,
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs construction on a seeded synthetic document at every length and records
/// the similarity-evaluation counter.
pub fn complexity_probe(lengths: &[usize], mode: ProbeMode, config: &EngineConfig) -> Result<ProbeTable> {
    if lengths.len() < 4 {
        return Err(Error::InvalidConfig("complexity probe needs at least 4 lengths".into()));
    }
    if lengths.windows(2).any(|w| w[0] >= w[1]) || lengths[0] == 0 {
        return Err(Error::InvalidConfig("probe lengths must be positive and ascending".into()));
    }
    let mut rows = Vec::with_capacity(lengths.len());
    for &n in lengths {
        let tokens = synthetic::document(n, config.seed ^ n as u64);
        let k = mode.segment_size(n);
        let mut cfg = config.clone();
        cfg.k = k;
        let engine = Engine::new(cfg)?;
        let started = Instant::now();
        let (evals, storage_bytes) = match mode {
            ProbeMode::Full => {
                let nodes = engine.embedder().embed(&tokens)?;
                let d = engine.embedder().dimension() as u64;
                let mut counter = OpCounts::default();
                let g = build_local_graph(nodes, 0, &config.threshold_policy, &mut counter)?;
                (counter.similarity_evals, 8 * n as u64 * d + 16 * g.edges.len() as u64)
            }
            _ => {
                let h = engine.build(&tokens)?;
                (h.memory.metrics.similarity_evals, encode_snapshot(&h).len() as u64)
            }
        };
        rows.push(ProbeRow {
            n,
            mode: mode.label(),
            segment_size: k,
            similarity_evals: evals,
            seconds: started.elapsed().as_secs_f64(),
            storage_bytes,
        });
    }
    let slope = log_log_slope(
        &rows
            .iter()
            .map(|r| (r.n as f64, r.similarity_evals as f64))
            .collect::<Vec<_>>(),
    );
    Ok(ProbeTable { rows, slope })
}

/// Local graphs over overlapping windows, no global memory.
pub fn sliding_window_baseline<S: AsRef<str>>(
    tokens: &[S],
    window: usize,
    overlap: usize,
    embedder: &Embedder,
    policy: &ThresholdPolicy,
    counter: &mut OpCounts,
) -> Result<Vec<LocalGraph>> {
    sliding_windows(tokens, window, overlap)?
        .into_iter()
        .map(|w| {
            let nodes = embedder.embed(&w.tokens)?;
            build_local_graph(nodes, w.index, policy, counter).map_err(|e| e.in_segment(w.index))
        })
        .collect()
}

/// Query baseline over a single whole-document graph: score every token, run the
/// GCN on every node, return the mean final state.
pub fn full_graph_query(graph: &LocalGraph, q_enc: &[f64], gcn: &GcnParams, counter: &mut OpCounts) -> Result<Vec<f64>> {
    let qn = linalg::dot(q_enc, q_enc);
    let norms = checked_sq_norms(&graph.nodes, q_enc.len())?;
    let _scores: Vec<f64> = graph
        .nodes
        .iter()
        .zip(&norms)
        .map(|(v, n)| cosine_with_sq_norms(q_enc, v, qn, *n))
        .collect();
    counter.similarity_evals += graph.nodes.len() as u64;
    let h = local_gcn(graph, gcn, counter)?;
    Ok(linalg::mean(&h, gcn.dimension))
}
