use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::memory::{cache_hit_rate, MetricCounters};

pub const METRICS_HEADER: &str =
    "timestamp_ms,append_index,cache_hit_rate,similarity_evals,edges_built,edges_reused";

/// Append-only CSV of streaming metrics. The header is written when the file is new.
pub struct MetricsLog {
    path: PathBuf,
    file: File,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if fresh {
            writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
        }
        Ok(MetricsLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn record(&mut self, timestamp_ms: u64, append_index: usize, metrics: &MetricCounters) -> Result<()> {
        writeln!(
            self.file,
            "{timestamp_ms},{append_index},{:.6},{},{},{}",
            cache_hit_rate(metrics),
            metrics.similarity_evals,
            metrics.edges_built,
            metrics.edges_reused
        )
        .map_err(|e| Error::io(&self.path, e))
    }
}
