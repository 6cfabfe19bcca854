//! Summary nodes, the global summary graph and streaming append.
//!
//! A summary is `MLP(mean(V) + max(V) + CA(V, U_prev))` where `CA` is single-head
//! scaled dot-product attention from the segment's tokens (queries) onto the
//! summaries built so far (keys and values), averaged over the query axis. With no
//! previous summaries the attention term is zero.
//!
//! Construction is sequential in segment order because every summary attends to
//! its predecessors. The global threshold `delta_g` is fixed when the memory is
//! first built and reused by every later append unless
//! [`GlobalThresholdConfig::recompute_on_append`] is set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{checked_sq_norms, cosine_with_sq_norms, TokenEmbedding};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::instrument::OpCounts;
use crate::linalg::{self, Matrix};
use crate::local_graph::{build_local_graph, Edge, LocalGraph};
use crate::persist::EngineConfig;
use crate::segmenter::Segment;

pub const DEFAULT_PERCENTILE: f64 = 85.0;
pub const DEFAULT_MARGIN: f64 = 0.01;
pub const DEFAULT_FALLBACK: f64 = 0.1;
pub const DEFAULT_MLP_HIDDEN: usize = 64;

/// Stream id used to derive aggregator weights from the engine seed.
pub(crate) const AGGREGATOR_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub hidden: usize,
    pub identity_mode: bool,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        AggregatorConfig {
            hidden: DEFAULT_MLP_HIDDEN,
            identity_mode: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalThresholdConfig {
    pub percentile: f64,
    pub margin: f64,
    /// Used while the memory holds fewer than two summaries.
    pub fallback: f64,
    /// Skips the percentile rule entirely.
    pub pinned: Option<f64>,
    pub recompute_on_append: bool,
}

impl Default for GlobalThresholdConfig {
    fn default() -> Self {
        GlobalThresholdConfig {
            percentile: DEFAULT_PERCENTILE,
            margin: DEFAULT_MARGIN,
            fallback: DEFAULT_FALLBACK,
            pinned: None,
            recompute_on_append: false,
        }
    }
}

/// Weights of the summary aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorParams {
    pub dimension: usize,
    pub hidden: usize,
    /// `hidden x d`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `d x hidden`
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub attention_scale: f64,
    pub identity_mode: bool,
    pub seed: u64,
}

impl AggregatorParams {
    /// Gaussian weights scaled by `1/sqrt(fan_in)`, zero biases.
    pub fn seeded(dimension: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(AGGREGATOR_STREAM);
        let w1 = Matrix::gaussian(hidden, dimension, 1.0 / (dimension as f64).sqrt(), &mut rng);
        let w2 = Matrix::gaussian(dimension, hidden, 1.0 / (hidden as f64).sqrt(), &mut rng);
        AggregatorParams {
            dimension,
            hidden,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0; dimension],
            attention_scale: 1.0 / (dimension as f64).sqrt(),
            identity_mode: false,
            seed,
        }
    }

    /// `MLP(x) = x`. Test use only.
    pub fn identity(dimension: usize) -> Self {
        AggregatorParams {
            dimension,
            hidden: dimension,
            w1: Matrix::identity(dimension),
            b1: vec![0.0; dimension],
            w2: Matrix::identity(dimension),
            b2: vec![0.0; dimension],
            attention_scale: 1.0 / (dimension as f64).sqrt(),
            identity_mode: true,
            seed: 0,
        }
    }

    pub fn from_config(config: &AggregatorConfig, dimension: usize, seed: u64) -> Result<Self> {
        if config.identity_mode {
            return Ok(Self::identity(dimension));
        }
        if config.hidden == 0 {
            return Err(Error::InvalidConfig("aggregator hidden width must be >= 1".into()));
        }
        Ok(Self::seeded(dimension, config.hidden, seed))
    }

    /// linear -> ReLU -> linear
    pub fn mlp(&self, x: &[f64]) -> Vec<f64> {
        if self.identity_mode {
            return x.to_vec();
        }
        let mut h = self.w1.matvec(x);
        for (v, b) in h.iter_mut().zip(&self.b1) {
            *v = (*v + b).max(0.0);
        }
        let mut y = self.w2.matvec(&h);
        linalg::add_assign(&mut y, &self.b2);
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryNode {
    pub segment_index: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MetricCounters {
    pub similarity_evals: u64,
    pub edges_built: u64,
    pub edges_reused: u64,
    pub appends: u64,
}

/// `edges_reused / (edges_reused + edges_built)`, with `0/0` reported as 1.
pub fn cache_hit_rate(metrics: &MetricCounters) -> f64 {
    let total = metrics.edges_reused + metrics.edges_built;
    if total == 0 {
        1.0
    } else {
        metrics.edges_reused as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMemory {
    pub summaries: Vec<SummaryNode>,
    /// Sorted by `(a, b)`, every weight `>= delta_g`.
    pub global_edges: Vec<Edge>,
    pub delta_g: f64,
    pub config: EngineConfig,
    pub metrics: MetricCounters,
}

impl GlobalMemory {
    pub fn len(&self) -> usize {
        self.summaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.summaries.is_empty()
    }
}

/// Global memory together with the local graph of every segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    pub memory: GlobalMemory,
    pub graphs: Vec<LocalGraph>,
}

impl Hierarchy {
    pub fn token_count(&self) -> usize {
        self.graphs.iter().map(LocalGraph::len).sum()
    }

    /// Equality of the structure alone: summaries bit-exact, global edges as a set,
    /// local graphs bit-exact, same threshold. Metric counters are ignored since
    /// batch and streaming builds account work differently.
    pub fn same_structure(&self, other: &Hierarchy) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let edge_set = |h: &Hierarchy| {
            h.memory
                .global_edges
                .iter()
                .map(|e| (e.a, e.b, e.weight.to_bits()))
                .collect::<std::collections::BTreeSet<_>>()
        };
        let graph_key = |g: &LocalGraph| {
            (
                g.segment_index,
                g.nodes.iter().map(|n| bits(n)).collect::<Vec<_>>(),
                g.edges
                    .iter()
                    .map(|e| (e.a, e.b, e.weight.to_bits()))
                    .collect::<Vec<_>>(),
                g.threshold_used.to_bits(),
            )
        };
        self.memory.delta_g.to_bits() == other.memory.delta_g.to_bits()
            && self.memory.summaries.len() == other.memory.summaries.len()
            && self
                .memory
                .summaries
                .iter()
                .zip(&other.memory.summaries)
                .all(|(a, b)| a.segment_index == b.segment_index && bits(&a.vector) == bits(&b.vector))
            && edge_set(self) == edge_set(other)
            && self.graphs.len() == other.graphs.len()
            && self.graphs.iter().zip(&other.graphs).all(|(a, b)| graph_key(a) == graph_key(b))
    }

    pub fn check(&self) -> Result<()> {
        let m = &self.memory;
        if self.graphs.len() != m.summaries.len() {
            return Err(Error::CorruptState(format!(
                "{} local graphs for {} summaries",
                self.graphs.len(),
                m.summaries.len()
            )));
        }
        for (i, (s, g)) in m.summaries.iter().zip(&self.graphs).enumerate() {
            if s.segment_index != i || g.segment_index != i {
                return Err(Error::CorruptState(format!("segment {i} out of order")));
            }
            g.check()?;
        }
        let n = m.summaries.len();
        for e in &m.global_edges {
            if e.a >= e.b || e.b as usize >= n || e.weight < m.delta_g {
                return Err(Error::CorruptState(format!(
                    "bad global edge ({}, {})",
                    e.a, e.b
                )));
            }
        }
        Ok(())
    }
}

/// Computes one summary node from a segment's tokens and the preceding summaries.
pub fn aggregate_summary(
    nodes: &[TokenEmbedding],
    u_prev: &[SummaryNode],
    params: &AggregatorParams,
) -> Result<Vec<f64>> {
    let d = params.dimension;
    if nodes.is_empty() {
        return Err(Error::InvalidConfig("cannot summarize an empty segment".into()));
    }
    for v in nodes.iter().map(Vec::as_slice).chain(u_prev.iter().map(|u| u.vector.as_slice())) {
        if v.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.len(),
            });
        }
    }

    let mut pooled = linalg::mean(nodes, d);
    let mut max = nodes[0].clone();
    for v in &nodes[1..] {
        for (m, x) in max.iter_mut().zip(v) {
            *m = m.max(*x);
        }
    }
    linalg::add_assign(&mut pooled, &max);

    if !u_prev.is_empty() {
        let mut attended = vec![0.0; d];
        let mut scores = vec![0.0; u_prev.len()];
        for q in nodes {
            for (s, u) in scores.iter_mut().zip(u_prev) {
                *s = params.attention_scale * linalg::dot(q, &u.vector);
            }
            for (w, u) in linalg::softmax(&scores).iter().zip(u_prev) {
                for (a, x) in attended.iter_mut().zip(&u.vector) {
                    *a += w * x;
                }
            }
        }
        linalg::scale(&mut attended, 1.0 / nodes.len() as f64);
        linalg::add_assign(&mut pooled, &attended);
    }

    let g = params.mlp(&pooled);
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::CorruptState("non-finite summary vector".into()));
    }
    Ok(g)
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value (at least the first).
pub fn nearest_rank(values: &[f64], percentile: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Upper-triangle cosines between summaries, row-major.
fn summary_similarities(summaries: &[SummaryNode], counter: &mut OpCounts) -> Result<Vec<f64>> {
    let vectors: Vec<Vec<f64>> = summaries.iter().map(|s| s.vector.clone()).collect();
    crate::local_graph::pairwise_similarities(&vectors, counter)
}

fn threshold_from_similarities(sims: &[f64], n: usize, gt: &GlobalThresholdConfig) -> f64 {
    if let Some(p) = gt.pinned {
        return p;
    }
    if n < 2 {
        return gt.fallback;
    }
    nearest_rank(sims, gt.percentile).expect("n >= 2 gives at least one pair") + gt.margin
}

/// `percentile(pairwise summary similarities) + margin`, or `fallback` below two summaries.
pub fn global_threshold(summaries: &[SummaryNode], percentile: f64, margin: f64, fallback: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::InvalidConfig(format!(
            "percentile must lie in [0, 100], got {percentile}"
        )));
    }
    let gt = GlobalThresholdConfig {
        percentile,
        margin,
        fallback,
        pinned: None,
        recompute_on_append: false,
    };
    let sims = summary_similarities(summaries, &mut OpCounts::default())?;
    Ok(threshold_from_similarities(&sims, summaries.len(), &gt))
}

fn edges_from_similarities(sims: &[f64], n: usize, delta_g: f64) -> Vec<Edge> {
    let mut edges = Vec::new();
    let mut it = sims.iter();
    for p in 0..n {
        for q in p + 1..n {
            let w = *it.next().expect("one similarity per pair");
            if w >= delta_g {
                edges.push(Edge {
                    a: p as u32,
                    b: q as u32,
                    weight: w,
                });
            }
        }
    }
    edges
}

/// Empty memory whose frozen threshold is the pinned value or the fallback.
pub fn empty_memory(config: EngineConfig) -> Hierarchy {
    let delta_g = config.global.pinned.unwrap_or(config.global.fallback);
    Hierarchy {
        memory: GlobalMemory {
            summaries: Vec::new(),
            global_edges: Vec::new(),
            delta_g,
            config,
            metrics: MetricCounters::default(),
        },
        graphs: Vec::new(),
    }
}

/// Batch construction over already-segmented tokens.
pub fn build_memory(engine: &Engine, segments: &[Segment]) -> Result<Hierarchy> {
    for (i, s) in segments.iter().enumerate() {
        if s.index != i {
            return Err(Error::Sequencing {
                expected: i,
                found: s.index,
            });
        }
    }
    let embedded = segments
        .par_iter()
        .map(|s| engine.embedder().embed(&s.tokens).map_err(|e| e.in_segment(s.index)))
        .collect::<Result<Vec<_>>>()?;
    build_memory_from_embeddings(engine, embedded)
}

/// Batch construction over per-segment token embeddings, segment `i` at position `i`.
pub fn build_memory_from_embeddings(engine: &Engine, segments: Vec<Vec<TokenEmbedding>>) -> Result<Hierarchy> {
    let config = engine.config();
    let built = segments
        .into_par_iter()
        .enumerate()
        .map(|(i, nodes)| {
            let mut counts = OpCounts::default();
            build_local_graph(nodes, i, &config.threshold_policy, &mut counts)
                .map(|g| (g, counts))
                .map_err(|e| e.in_segment(i))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut counts = OpCounts::default();
    let mut graphs = Vec::with_capacity(built.len());
    for (g, c) in built {
        counts += c;
        graphs.push(g);
    }

    let mut summaries: Vec<SummaryNode> = Vec::with_capacity(graphs.len());
    for g in &graphs {
        let vector = aggregate_summary(&g.nodes, &summaries, engine.aggregator())
            .map_err(|e| e.in_segment(g.segment_index))?;
        summaries.push(SummaryNode {
            segment_index: g.segment_index,
            vector,
        });
    }

    let m = summaries.len();
    let sims = summary_similarities(&summaries, &mut counts)?;
    let delta_g = threshold_from_similarities(&sims, m, &config.global);
    let global_edges = edges_from_similarities(&sims, m, delta_g);

    let metrics = MetricCounters {
        similarity_evals: counts.similarity_evals,
        edges_built: global_edges.len() as u64,
        edges_reused: 0,
        appends: 0,
    };
    Ok(Hierarchy {
        memory: GlobalMemory {
            summaries,
            global_edges,
            delta_g,
            config: config.clone(),
            metrics,
        },
        graphs,
    })
}

/// Work done by one append.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppendDelta {
    pub similarity_evals: u64,
    pub edges_built: u64,
    pub edges_reused: u64,
}

/// Appends the next segment. Only the new local graph, the new summary and its
/// similarities to the existing summaries are computed.
pub fn append_segment(engine: &Engine, hierarchy: &mut Hierarchy, segment: &Segment) -> Result<AppendDelta> {
    let expected = hierarchy.memory.summaries.len();
    if segment.index != expected {
        return Err(Error::Sequencing {
            expected,
            found: segment.index,
        });
    }
    let nodes = engine
        .embedder()
        .embed(&segment.tokens)
        .map_err(|e| e.in_segment(segment.index))?;
    append_embeddings(engine, hierarchy, segment.index, nodes)
}

pub fn append_embeddings(
    engine: &Engine,
    hierarchy: &mut Hierarchy,
    index: usize,
    nodes: Vec<TokenEmbedding>,
) -> Result<AppendDelta> {
    let memory = &mut hierarchy.memory;
    let m = memory.summaries.len();
    if index != m {
        return Err(Error::Sequencing {
            expected: m,
            found: index,
        });
    }
    if &memory.config != engine.config() {
        return Err(Error::InvalidConfig(
            "engine config differs from the memory's config snapshot".into(),
        ));
    }

    let mut counts = OpCounts::default();
    let graph = build_local_graph(nodes, index, &engine.config().threshold_policy, &mut counts)
        .map_err(|e| e.in_segment(index))?;
    let vector = aggregate_summary(&graph.nodes, &memory.summaries, engine.aggregator())
        .map_err(|e| e.in_segment(index))?;
    let new = SummaryNode {
        segment_index: index,
        vector,
    };

    let (built, reused) = if memory.config.global.recompute_on_append {
        let before: std::collections::HashSet<(u32, u32)> =
            memory.global_edges.iter().map(|e| (e.a, e.b)).collect();
        memory.summaries.push(new);
        let sims = summary_similarities(&memory.summaries, &mut counts)?;
        let n = memory.summaries.len();
        memory.delta_g = threshold_from_similarities(&sims, n, &memory.config.global);
        memory.global_edges = edges_from_similarities(&sims, n, memory.delta_g);
        let reused = memory
            .global_edges
            .iter()
            .filter(|e| before.contains(&(e.a, e.b)))
            .count() as u64;
        (memory.global_edges.len() as u64 - reused, reused)
    } else {
        let norms = checked_sq_norms(
            &memory
                .summaries
                .iter()
                .map(|s| s.vector.clone())
                .chain(std::iter::once(new.vector.clone()))
                .collect::<Vec<_>>(),
            engine.embedder().dimension(),
        )
        .map_err(|e| e.in_segment(index))?;
        let reused = memory.global_edges.len() as u64;
        let mut built = 0;
        for (i, s) in memory.summaries.iter().enumerate() {
            let w = cosine_with_sq_norms(&s.vector, &new.vector, norms[i], norms[m]);
            if w >= memory.delta_g {
                memory.global_edges.push(Edge {
                    a: i as u32,
                    b: m as u32,
                    weight: w,
                });
                built += 1;
            }
        }
        counts.similarity_evals += m as u64;
        memory.summaries.push(new);
        (built, reused)
    };

    memory.metrics.similarity_evals += counts.similarity_evals;
    memory.metrics.edges_built += built;
    memory.metrics.edges_reused += reused;
    memory.metrics.appends += 1;
    hierarchy.graphs.push(graph);
    Ok(AppendDelta {
        similarity_evals: counts.similarity_evals,
        edges_built: built,
        edges_reused: reused,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine;

    fn summary(i: usize, v: Vec<f64>) -> SummaryNode {
        SummaryNode {
            segment_index: i,
            vector: v,
        }
    }

    #[test]
    fn identity_duplicate_nodes() {
        let p = AggregatorParams::identity(3);
        let v = vec![0.2, -0.5, 1.0];
        let g = aggregate_summary(&[v.clone(), v.clone()], &[], &p).unwrap();
        assert_eq!(g, vec![0.4, -1.0, 2.0]);
    }

    #[test]
    fn identity_axes() {
        let p = AggregatorParams::identity(2);
        let g = aggregate_summary(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[], &p).unwrap();
        assert_eq!(g, vec![1.5, 1.5]);
    }

    #[test]
    fn single_key_attention_returns_that_key() {
        let p = AggregatorParams::identity(2);
        let u = vec![0.3, -0.7];
        let nodes = vec![vec![1.0, 0.0], vec![0.25, 0.75]];
        let without = aggregate_summary(&nodes, &[], &p).unwrap();
        let with = aggregate_summary(&nodes, &[summary(0, u.clone())], &p).unwrap();
        for i in 0..2 {
            assert!((with[i] - without[i] - u[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn aggregate_rejects_dimension_mismatch() {
        let p = AggregatorParams::identity(2);
        assert!(matches!(
            aggregate_summary(&[vec![1.0, 0.0]], &[summary(0, vec![1.0, 0.0, 0.0])], &p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn seeded_mlp_is_deterministic() {
        let a = AggregatorParams::seeded(8, 16, 42);
        let b = AggregatorParams::seeded(8, 16, 42);
        assert_eq!(a, b);
        assert_ne!(a, AggregatorParams::seeded(8, 16, 43));
        let x: Vec<f64> = (0..8).map(|i| i as f64 / 8.0 - 0.4).collect();
        assert_eq!(a.mlp(&x).len(), 8);
    }

    #[test]
    fn nearest_rank_tenths() {
        let sims: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        assert_eq!(nearest_rank(&sims, 85.0), Some(0.9));
        assert_eq!(nearest_rank(&sims, 0.0), Some(0.1));
        assert_eq!(nearest_rank(&sims, 100.0), Some(1.0));
    }

    #[test]
    fn global_threshold_cases() {
        let a = summary(0, vec![1.0, 0.0]);
        let b = summary(1, vec![1.0, 1.0]);
        let s = cosine(&a.vector, &b.vector).unwrap();
        for p in [0.0, 50.0, 85.0, 100.0] {
            let t = global_threshold(&[a.clone(), b.clone()], p, 0.01, 0.1).unwrap();
            assert!((t - (s + 0.01)).abs() < 1e-15);
        }
        assert_eq!(global_threshold(std::slice::from_ref(&a), 85.0, 0.01, 0.1).unwrap(), 0.1);
        assert!(global_threshold(&[a], 101.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn hit_rate() {
        let m = |reused, built| MetricCounters {
            edges_reused: reused,
            edges_built: built,
            ..Default::default()
        };
        assert!((cache_hit_rate(&m(82, 18)) - 0.82).abs() < 1e-15);
        assert_eq!(cache_hit_rate(&m(0, 0)), 1.0);
        assert_eq!(cache_hit_rate(&m(3, 1)), 0.75);
    }
}
