//! Per-segment semantic graphs: thresholded all-pairs cosine edges.

use serde::{Deserialize, Serialize};

use crate::embedding::{checked_sq_norms, cosine_with_sq_norms, TokenEmbedding};
use crate::error::{Error, Result};
use crate::instrument::{pair_count, OpCounts};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 0.5;

/// Threshold used when a segment has no pairs to take statistics over.
pub const SINGLE_NODE_THRESHOLD: f64 = f64::INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ThresholdPolicy {
    /// `alpha * mean + beta * population_std` of the segment's similarities.
    Adaptive { alpha: f64, beta: f64 },
    Fixed { delta: f64 },
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Adaptive {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdPolicy::Adaptive { alpha, beta } if !(alpha.is_finite() && beta.is_finite()) => {
                Err(Error::InvalidConfig("adaptive alpha/beta must be finite".into()))
            }
            ThresholdPolicy::Fixed { delta } if delta.is_nan() => {
                Err(Error::InvalidConfig("fixed delta must not be NaN".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Undirected weighted edge with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraph {
    pub segment_index: usize,
    pub nodes: Vec<TokenEmbedding>,
    /// Sorted by `(a, b)`.
    pub edges: Vec<Edge>,
    pub threshold_used: f64,
}

impl LocalGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.nodes.first().map_or(0, Vec::len)
    }

    /// Neighbor lists derived from the edge set (self excluded).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.a as usize].push(e.b as usize);
            adj[e.b as usize].push(e.a as usize);
        }
        adj
    }

    /// Checks the structural invariants: `a < b`, indices in range, sorted without
    /// duplicates, every weight at or above the threshold.
    pub fn check(&self) -> Result<()> {
        let n = self.nodes.len();
        let mut prev: Option<(u32, u32)> = None;
        for e in &self.edges {
            if e.a >= e.b || e.b as usize >= n {
                return Err(Error::CorruptState(format!(
                    "segment {}: bad edge ({}, {})",
                    self.segment_index, e.a, e.b
                )));
            }
            if prev.is_some_and(|p| p >= (e.a, e.b)) {
                return Err(Error::CorruptState(format!(
                    "segment {}: edges not strictly ordered",
                    self.segment_index
                )));
            }
            if e.weight < self.threshold_used {
                return Err(Error::CorruptState(format!(
                    "segment {}: edge weight below threshold",
                    self.segment_index
                )));
            }
            prev = Some((e.a, e.b));
        }
        Ok(())
    }
}

/// Upper-triangle cosines in row-major order: `(0,1), (0,2), .., (1,2), ..`.
pub fn pairwise_similarities(nodes: &[TokenEmbedding], counter: &mut OpCounts) -> Result<Vec<f64>> {
    let dim = nodes.first().map_or(0, Vec::len);
    let norms = checked_sq_norms(nodes, dim)?;
    let mut out = Vec::with_capacity(pair_count(nodes.len()) as usize);
    for j in 0..nodes.len() {
        for k in j + 1..nodes.len() {
            out.push(cosine_with_sq_norms(&nodes[j], &nodes[k], norms[j], norms[k]));
        }
    }
    counter.similarity_evals += out.len() as u64;
    Ok(out)
}

/// Threshold for one segment. An adaptive policy over no similarities yields
/// [`SINGLE_NODE_THRESHOLD`].
pub fn adaptive_threshold(similarities: &[f64], policy: &ThresholdPolicy) -> f64 {
    match *policy {
        ThresholdPolicy::Fixed { delta } => delta,
        ThresholdPolicy::Adaptive { .. } if similarities.is_empty() => SINGLE_NODE_THRESHOLD,
        ThresholdPolicy::Adaptive { alpha, beta } => {
            let n = similarities.len() as f64;
            let mean = similarities.iter().sum::<f64>() / n;
            let var = similarities.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
            alpha * mean + beta * var.sqrt()
        }
    }
}

/// Builds `G_i`: an edge for every pair whose cosine reaches the threshold.
///
/// Performs exactly `n(n-1)/2` similarity evaluations.
pub fn build_local_graph(
    nodes: Vec<TokenEmbedding>,
    segment_index: usize,
    policy: &ThresholdPolicy,
    counter: &mut OpCounts,
) -> Result<LocalGraph> {
    if nodes.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "segment {segment_index} has no nodes"
        )));
    }
    if nodes.len() > u32::MAX as usize {
        return Err(Error::InvalidConfig("segment too large".into()));
    }
    let mut edges = Vec::new();
    let threshold_used = match policy {
        ThresholdPolicy::Adaptive { .. } => {
            let sims = pairwise_similarities(&nodes, counter)?;
            let threshold = adaptive_threshold(&sims, policy);
            let mut it = sims.into_iter();
            for j in 0..nodes.len() {
                for k in j + 1..nodes.len() {
                    let w = it.next().expect("one similarity per pair");
                    if w >= threshold {
                        edges.push(Edge {
                            a: j as u32,
                            b: k as u32,
                            weight: w,
                        });
                    }
                }
            }
            threshold
        }
        // No statistics needed, so the similarities are never materialized.
        ThresholdPolicy::Fixed { delta } => {
            let dim = nodes[0].len();
            let norms = checked_sq_norms(&nodes, dim)?;
            for j in 0..nodes.len() {
                for k in j + 1..nodes.len() {
                    let w = cosine_with_sq_norms(&nodes[j], &nodes[k], norms[j], norms[k]);
                    if w >= *delta {
                        edges.push(Edge {
                            a: j as u32,
                            b: k as u32,
                            weight: w,
                        });
                    }
                }
            }
            counter.similarity_evals += pair_count(nodes.len());
            *delta
        }
    };
    Ok(LocalGraph {
        segment_index,
        nodes,
        edges,
        threshold_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{cosine, hash_embedding};
    use proptest::prelude::*;

    fn axes() -> Vec<Vec<f64>> {
        vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]
    }

    #[test]
    fn pair_counts() {
        let mut c = OpCounts::default();
        assert!(pairwise_similarities(&[vec![1.0, 0.0]], &mut c).unwrap().is_empty());
        let three = vec![vec![1.0, 2.0], vec![0.5, 1.0], vec![-1.0, 3.0]];
        assert_eq!(pairwise_similarities(&three, &mut c).unwrap().len(), 3);
        assert_eq!(c.similarity_evals, 3);
    }

    #[test]
    fn axis_similarities() {
        let mut c = OpCounts::default();
        assert_eq!(pairwise_similarities(&axes(), &mut c).unwrap(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn degenerate_node_is_identified() {
        let mut c = OpCounts::default();
        let nodes = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        assert!(matches!(
            pairwise_similarities(&nodes, &mut c),
            Err(Error::DegenerateVector { index: Some(1) })
        ));
    }

    #[test]
    fn thresholds() {
        let p = ThresholdPolicy::Adaptive { alpha: 1.0, beta: 1.0 };
        assert!((adaptive_threshold(&[0.3, 0.3, 0.3], &p) - 0.3).abs() < 1e-15);
        assert!((adaptive_threshold(&[0.0, 1.0], &p) - 1.0).abs() < 1e-15);
        assert_eq!(adaptive_threshold(&[], &p), SINGLE_NODE_THRESHOLD);
        assert_eq!(adaptive_threshold(&[0.9, -0.4], &ThresholdPolicy::Fixed { delta: 0.2 }), 0.2);
    }

    #[test]
    fn identical_pair_gives_unit_edge() {
        let mut c = OpCounts::default();
        let v = vec![0.6, 0.8];
        let g = build_local_graph(vec![v.clone(), v], 0, &ThresholdPolicy::Fixed { delta: 0.9 }, &mut c)
            .unwrap();
        assert_eq!(g.edges, vec![Edge { a: 0, b: 1, weight: 1.0 }]);
    }

    #[test]
    fn threshold_above_one_prunes_everything() {
        let mut c = OpCounts::default();
        let g = build_local_graph(axes(), 0, &ThresholdPolicy::Fixed { delta: 1.5 }, &mut c).unwrap();
        assert!(g.edges.is_empty());
    }

    #[test]
    fn axes_at_half() {
        let mut c = OpCounts::default();
        let g = build_local_graph(axes(), 3, &ThresholdPolicy::Fixed { delta: 0.5 }, &mut c).unwrap();
        let pairs: Vec<_> = g.edges.iter().map(|e| (e.a, e.b)).collect();
        assert_eq!(pairs, vec![(0, 1)]);
        assert_eq!(g.segment_index, 3);
        assert_eq!(c.similarity_evals, 3);
    }

    #[test]
    fn single_node_adaptive_has_sentinel_threshold() {
        let mut c = OpCounts::default();
        let g = build_local_graph(vec![vec![1.0, 1.0]], 0, &ThresholdPolicy::default(), &mut c).unwrap();
        assert!(g.edges.is_empty());
        assert_eq!(g.threshold_used, f64::INFINITY);
        assert_eq!(c.similarity_evals, 0);
    }

    #[test]
    fn empty_segment_rejected() {
        let mut c = OpCounts::default();
        assert!(build_local_graph(Vec::new(), 0, &ThresholdPolicy::default(), &mut c).is_err());
    }

    fn nodes_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..40, any::<u64>(), 0usize..6).prop_map(|(n, seed, vocab_bits)| {
            // Small vocabularies force repeated tokens and hence exact-1.0 pairs.
            let vocab = 1usize << (vocab_bits + 1);
            (0..n)
                .map(|i| hash_embedding(&format!("w{}", (i * 7919) % vocab), seed, 8))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn edges_match_brute_force(nodes in nodes_strategy(), delta in -1.2f64..1.2, adaptive: bool) {
            let policy = if adaptive {
                ThresholdPolicy::Adaptive { alpha: 1.0, beta: 0.5 }
            } else {
                ThresholdPolicy::Fixed { delta }
            };
            let mut c = OpCounts::default();
            let n = nodes.len();
            let g = build_local_graph(nodes.clone(), 0, &policy, &mut c).unwrap();
            prop_assert_eq!(c.similarity_evals, pair_count(n));
            g.check().unwrap();
            let mut expected = Vec::new();
            for j in 0..n {
                for k in j + 1..n {
                    let w = cosine(&nodes[j], &nodes[k]).unwrap();
                    if w >= g.threshold_used {
                        expected.push((j as u32, k as u32, w));
                    }
                }
            }
            prop_assert_eq!(expected.len(), g.edges.len());
            for (e, (a, b, w)) in g.edges.iter().zip(expected) {
                prop_assert_eq!((e.a, e.b), (a, b));
                prop_assert!((e.weight - w).abs() < 1e-9);
            }
        }

        #[test]
        fn raising_threshold_never_adds_edges(nodes in nodes_strategy(), lo in -1.2f64..1.2, bump in 0.0f64..1.0) {
            let mut c = OpCounts::default();
            let low = build_local_graph(nodes.clone(), 0, &ThresholdPolicy::Fixed { delta: lo }, &mut c).unwrap();
            let high = build_local_graph(nodes.clone(), 0, &ThresholdPolicy::Fixed { delta: lo + bump }, &mut c).unwrap();
            let low_pairs: std::collections::HashSet<_> = low.edges.iter().map(|e| (e.a, e.b)).collect();
            prop_assert!(high.edges.iter().all(|e| low_pairs.contains(&(e.a, e.b))));
            let n = nodes.len();
            let complete = build_local_graph(nodes.clone(), 0, &ThresholdPolicy::Fixed { delta: -1.0 }, &mut c).unwrap();
            prop_assert_eq!(complete.edges.len() as u64, pair_count(n));
            let empty = build_local_graph(nodes, 0, &ThresholdPolicy::Fixed { delta: 1.0 + 1e-12 }, &mut c).unwrap();
            prop_assert!(empty.edges.is_empty());
        }
    }
}
