use crate::embedding::Embedder;
use crate::error::Result;
use crate::instrument::OpCounts;
use crate::memory::{self, AggregatorParams, AppendDelta, Hierarchy};
use crate::persist::EngineConfig;
use crate::query::{self, GcnParams, QueryResult};
use crate::segmenter::{self, Segment};

/// A validated config together with the parameters it determines.
///
/// Aggregator and GCN weights are derived from `config.seed`, so an engine rebuilt
/// from a snapshot's config snapshot reproduces the original weights exactly.
#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    embedder: Embedder,
    aggregator: AggregatorParams,
    gcn: GcnParams,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embedder.dimension;
        let embedder = Embedder::new(config.embedder.clone())?;
        let aggregator = AggregatorParams::from_config(&config.aggregator, d, config.seed)?;
        let gcn = GcnParams::from_config(&config.gcn, d, config.seed);
        Ok(Engine {
            config,
            embedder,
            aggregator,
            gcn,
        })
    }

    /// Engine matching the config a memory was built with.
    pub fn for_memory(hierarchy: &Hierarchy) -> Result<Self> {
        Self::new(hierarchy.memory.config.clone())
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn aggregator(&self) -> &AggregatorParams {
        &self.aggregator
    }

    pub fn gcn(&self) -> &GcnParams {
        &self.gcn
    }

    pub fn segment<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<Segment>> {
        segmenter::segment(tokens, self.config.k)
    }

    pub fn empty(&self) -> Hierarchy {
        memory::empty_memory(self.config.clone())
    }

    /// Segments and indexes a whole document.
    pub fn build<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Hierarchy> {
        memory::build_memory(self, &self.segment(tokens)?)
    }

    pub fn append(&self, hierarchy: &mut Hierarchy, segment: &Segment) -> Result<AppendDelta> {
        memory::append_segment(self, hierarchy, segment)
    }

    pub fn query<S: AsRef<str>>(
        &self,
        hierarchy: &Hierarchy,
        query_tokens: &[S],
        k: usize,
        counter: &mut OpCounts,
    ) -> Result<QueryResult> {
        query::answer_query(hierarchy, query_tokens, k, &self.gcn, &self.embedder, counter)
    }
}
