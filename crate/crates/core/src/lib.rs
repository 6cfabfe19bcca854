//! Hierarchical segment-graph memory.
//!
//! A document is cut into fixed-size segments. Each segment gets a local graph
//! of thresholded token-to-token cosine edges and a summary vector; summaries
//! form a global graph of their own. New segments append in time proportional
//! to the segment plus the number of existing summaries, and queries touch only
//! the top-K retrieved segments.
//!
//! ```
//! use hsgm::{Engine, EngineConfig, OpCounts};
//!
//! let mut config = EngineConfig::default();
//! config.k = 4;
//! let engine = Engine::new(config).unwrap();
//! let doc: Vec<String> = "the cat sat on the mat and the dog sat too"
//!     .split(' ')
//!     .map(String::from)
//!     .collect();
//! let memory = engine.build(&doc).unwrap();
//! assert_eq!(memory.memory.summaries.len(), 3);
//!
//! let result = engine.query(&memory, &["cat"], 2, &mut OpCounts::default()).unwrap();
//! assert_eq!(result.retrieved.len(), 2);
//! ```

pub mod embedding;
mod engine;
pub mod error;
pub mod instrument;
pub mod linalg;
pub mod local_graph;
pub mod memory;
pub mod oracle;
pub mod persist;
pub mod query;
pub mod segmenter;
pub mod synthetic;

pub use embedding::{cosine, embed_tokens, Embedder, EmbedderKind, EmbedderSpec, TokenEmbedding};
pub use engine::Engine;
pub use error::{Error, Result, SnapshotError};
pub use instrument::OpCounts;
pub use local_graph::{build_local_graph, Edge, LocalGraph, ThresholdPolicy};
pub use memory::{cache_hit_rate, GlobalMemory, Hierarchy, MetricCounters, SummaryNode};
pub use oracle::{DenseAdjacency, ErrorReport, ProbeMode};
pub use persist::{load_snapshot, save_snapshot, CorpusRecord, EngineConfig};
pub use query::{GcnParams, QueryResult};
pub use segmenter::Segment;
