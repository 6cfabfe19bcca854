//! Operation tallies used by the complexity and speedup checks.

use std::ops::AddAssign;

/// Mergeable per-task operation tally.
///
/// Every cosine evaluated by graph construction, global-edge construction or
/// retrieval bumps `similarity_evals`; every node state computed by a GCN layer
/// bumps `gcn_node_updates`.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCounts {
    pub similarity_evals: u64,
    pub gcn_node_updates: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.similarity_evals + self.gcn_node_updates
    }
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.similarity_evals += rhs.similarity_evals;
        self.gcn_node_updates += rhs.gcn_node_updates;
    }
}

/// Number of unordered pairs among `n` items.
pub fn pair_count(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}
