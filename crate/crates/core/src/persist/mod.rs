//! Durable state: engine configs, corpora, memory snapshots and metric logs.

mod config;
mod corpus;
mod metrics_log;
mod snapshot;

pub use config::{EngineConfig, CONFIG_KEYS, ENV_PREFIX};
pub use corpus::{load_corpus, parse_corpus, CorpusRecord};
pub use metrics_log::{MetricsLog, METRICS_HEADER};
pub use snapshot::{
    decode_snapshot, encode_snapshot, load_snapshot, save_snapshot, write_atomic, FORMAT_MAJOR,
    FORMAT_MINOR, MAGIC,
};
