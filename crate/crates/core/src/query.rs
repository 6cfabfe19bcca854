//! Hierarchical query answering.
//!
//! The query is encoded as the normalized mean of its token embeddings, the top-K
//! summaries by cosine are retrieved, a residual GCN runs on each retrieved local
//! graph and the per-segment mean states are merged with softmax weights over the
//! retrieval similarities.
//!
//! The GCN layer is `h_j' = act(W * mean(h_n for n in N(j)) + h_j)`, where `N(j)`
//! excludes `j`, an isolated node uses a zero neighbor mean, and the activation is
//! applied at every layer. The query vector does not condition the GCN.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{checked_sq_norms, cosine_with_sq_norms, Embedder};
use crate::error::{Error, Result};
use crate::instrument::OpCounts;
use crate::linalg::{self, Matrix};
use crate::local_graph::LocalGraph;
use crate::memory::{GlobalMemory, Hierarchy};

pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_GCN_LAYERS: usize = 2;

pub(crate) const GCN_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub layers: usize,
    pub activation: Activation,
    pub identity_mode: bool,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            layers: DEFAULT_GCN_LAYERS,
            activation: Activation::Relu,
            identity_mode: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub dimension: usize,
    /// One `d x d` matrix per layer.
    pub weights: Vec<Matrix>,
    pub activation: Activation,
    pub identity_mode: bool,
}

impl GcnParams {
    pub fn seeded(dimension: usize, layers: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(GCN_STREAM);
        let scale = 1.0 / (dimension as f64).sqrt();
        GcnParams {
            dimension,
            weights: (0..layers)
                .map(|_| Matrix::gaussian(dimension, dimension, scale, &mut rng))
                .collect(),
            activation,
            identity_mode: false,
        }
    }

    /// `W = I`, identity activation.
    pub fn identity(dimension: usize, layers: usize) -> Self {
        GcnParams {
            dimension,
            weights: vec![Matrix::identity(dimension); layers],
            activation: Activation::Identity,
            identity_mode: true,
        }
    }

    pub fn from_config(config: &GcnConfig, dimension: usize, seed: u64) -> Self {
        if config.identity_mode {
            Self::identity(dimension, config.layers)
        } else {
            Self::seeded(dimension, config.layers, config.activation, seed)
        }
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub retrieved: Vec<usize>,
    pub similarities: Vec<f64>,
    pub weights: Vec<f64>,
    pub vector: Vec<f64>,
}

/// `phi(q) / |phi(q)|` with `phi(q)` the mean token embedding.
pub fn encode_query<S: AsRef<str>>(query_tokens: &[S], embedder: &Embedder) -> Result<Vec<f64>> {
    if query_tokens.is_empty() {
        return Err(Error::InvalidQuery("query has no tokens".into()));
    }
    let vectors = embedder.embed(query_tokens)?;
    let mut q = linalg::mean(&vectors, embedder.dimension());
    let n = linalg::norm(&q);
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::DegenerateVector { index: None });
    }
    linalg::scale(&mut q, 1.0 / n);
    Ok(q)
}

/// The `min(K, M)` most similar summaries, descending, ties to the lower index.
pub fn top_k(q_enc: &[f64], memory: &GlobalMemory, k: usize, counter: &mut OpCounts) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::InvalidConfig("top-K must be >= 1".into()));
    }
    if memory.summaries.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let qn = linalg::dot(q_enc, q_enc);
    if !(qn > 0.0 && qn.is_finite()) {
        return Err(Error::DegenerateVector { index: None });
    }
    let vectors: Vec<Vec<f64>> = memory.summaries.iter().map(|s| s.vector.clone()).collect();
    let norms = checked_sq_norms(&vectors, q_enc.len())?;
    let mut scored: Vec<(usize, f64)> = vectors
        .iter()
        .zip(&norms)
        .enumerate()
        .map(|(i, (v, n))| (i, cosine_with_sq_norms(q_enc, v, qn, *n)))
        .collect();
    counter.similarity_evals += scored.len() as u64;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Final-layer node states. `L = 0` returns the nodes unchanged.
pub fn local_gcn(graph: &LocalGraph, params: &GcnParams, counter: &mut OpCounts) -> Result<Vec<Vec<f64>>> {
    let d = params.dimension;
    if let Some(bad) = graph.nodes.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    let adjacency = graph.adjacency();
    let mut h = graph.nodes.clone();
    for w in &params.weights {
        let next: Vec<Vec<f64>> = adjacency
            .iter()
            .zip(&h)
            .map(|(neighbors, own)| {
                let mut agg = vec![0.0; d];
                if !neighbors.is_empty() {
                    for &n in neighbors {
                        linalg::add_assign(&mut agg, &h[n]);
                    }
                    linalg::scale(&mut agg, 1.0 / neighbors.len() as f64);
                }
                let mut out = if params.identity_mode { agg } else { w.matvec(&agg) };
                for (o, x) in out.iter_mut().zip(own) {
                    *o = params.activation.apply(*o + x);
                }
                out
            })
            .collect();
        counter.gcn_node_updates += next.len() as u64;
        h = next;
    }
    Ok(h)
}

/// Merge weights over the retrieved similarities.
pub fn attention_weights(similarities: &[f64]) -> Vec<f64> {
    linalg::softmax(similarities)
}

/// Runs the full hierarchical query. Read-only over `hierarchy`.
pub fn answer_query<S: AsRef<str>>(
    hierarchy: &Hierarchy,
    query_tokens: &[S],
    k: usize,
    gcn: &GcnParams,
    embedder: &Embedder,
    counter: &mut OpCounts,
) -> Result<QueryResult> {
    let q = encode_query(query_tokens, embedder)?;
    answer_encoded(hierarchy, &q, k, gcn, counter)
}

/// [`answer_query`] for an already-encoded query vector.
pub fn answer_encoded(
    hierarchy: &Hierarchy,
    q_enc: &[f64],
    k: usize,
    gcn: &GcnParams,
    counter: &mut OpCounts,
) -> Result<QueryResult> {
    let hits = top_k(q_enc, &hierarchy.memory, k, counter)?;
    let d = gcn.dimension;
    let mut states = Vec::with_capacity(hits.len());
    for &(i, _) in &hits {
        let graph = hierarchy
            .graphs
            .get(i)
            .filter(|g| g.segment_index == i && !g.is_empty())
            .ok_or_else(|| Error::CorruptState(format!("no local graph for retrieved segment {i}")))?;
        let h = local_gcn(graph, gcn, counter)?;
        states.push(linalg::mean(&h, d));
    }
    let similarities: Vec<f64> = hits.iter().map(|h| h.1).collect();
    let weights = attention_weights(&similarities);
    let mut vector = vec![0.0; d];
    for (w, s) in weights.iter().zip(&states) {
        for (v, x) in vector.iter_mut().zip(s) {
            *v += w * x;
        }
    }
    Ok(QueryResult {
        retrieved: hits.iter().map(|h| h.0).collect(),
        similarities,
        weights,
        vector,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbedderSpec;
    use crate::local_graph::Edge;

    fn graph(nodes: Vec<Vec<f64>>, edges: &[(u32, u32)]) -> LocalGraph {
        LocalGraph {
            segment_index: 0,
            nodes,
            edges: edges
                .iter()
                .map(|&(a, b)| Edge { a, b, weight: 1.0 })
                .collect(),
            threshold_used: -1.0,
        }
    }

    #[test]
    fn zero_layers_is_identity() {
        let g = graph(vec![vec![0.1, 0.2], vec![-0.3, 0.4]], &[(0, 1)]);
        let mut c = OpCounts::default();
        let out = local_gcn(&g, &GcnParams::seeded(2, 0, Activation::Relu, 1), &mut c).unwrap();
        assert_eq!(out, g.nodes);
        assert_eq!(c.gcn_node_updates, 0);
    }

    #[test]
    fn identity_pair_doubles() {
        let v = vec![0.5, -1.5];
        let g = graph(vec![v.clone(), v.clone()], &[(0, 1)]);
        let mut c = OpCounts::default();
        let out = local_gcn(&g, &GcnParams::identity(2, 1), &mut c).unwrap();
        assert_eq!(out, vec![vec![1.0, -3.0], vec![1.0, -3.0]]);
        assert_eq!(c.gcn_node_updates, 2);
    }

    #[test]
    fn identity_isolated_node_unchanged() {
        let v = vec![0.5, -1.5];
        let g = graph(vec![v.clone()], &[]);
        let out = local_gcn(&g, &GcnParams::identity(2, 1), &mut OpCounts::default()).unwrap();
        assert_eq!(out, vec![v]);
    }

    #[test]
    fn encode_single_and_duplicate() {
        let e = Embedder::new(EmbedderSpec::hash(16, 3)).unwrap();
        let one = encode_query(&["alpha"], &e).unwrap();
        let two = encode_query(&["alpha", "alpha"], &e).unwrap();
        let direct = e.embed(&["alpha"]).unwrap().remove(0);
        for i in 0..16 {
            assert!((one[i] - direct[i]).abs() < 1e-12);
            assert!((one[i] - two[i]).abs() < 1e-12);
        }
        assert!((linalg::norm(&encode_query(&["a", "b", "c"], &e).unwrap()) - 1.0).abs() < 1e-9);
        let none: [&str; 0] = [];
        assert!(matches!(encode_query(&none, &e), Err(Error::InvalidQuery(_))));
    }

    #[test]
    fn softmax_hand_values() {
        assert_eq!(attention_weights(&[0.4]), vec![1.0]);
        assert_eq!(attention_weights(&[0.7, 0.7]), vec![0.5, 0.5]);
        let w = attention_weights(&[0.9, 0.5]);
        let z = 0.9f64.exp() + 0.5f64.exp();
        assert!((w[0] - 0.9f64.exp() / z).abs() < 1e-12);
        assert!((w[0] - 0.5987).abs() < 1e-4 && (w[1] - 0.4013).abs() < 1e-4);
    }
}
