//! Binary memory snapshots.
//!
//! Layout (all integers and floats little-endian, floats IEEE-754 binary64):
//!
//! ```text
//! magic        8 bytes   "HSGMSNAP"
//! major        u16
//! minor        u16
//! section*     u32 tag, u64 payload length, payload
//!   1 config     UTF-8 JSON of the engine config
//!   2 summaries  u64 M, u64 d, M x (u64 segment_index, d x f64)
//!   3 global     f64 delta_g, u64 E, E x (u32 p, u32 q, f64 weight)
//!   4 local      u64 M, M x (u64 segment_index, f64 threshold, u64 n, u64 d,
//!                            n*d x f64, u64 e, e x (u32 j, u32 k, f64 weight))
//!   5 counters   u64 similarity_evals, u64 edges_built, u64 edges_reused, u64 appends
//! checksum     32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Sections appear exactly once each, in tag order, so equal memories encode to
//! equal bytes.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result, SnapshotError};
use crate::local_graph::{Edge, LocalGraph};
use crate::memory::{GlobalMemory, Hierarchy, MetricCounters, SummaryNode};
use crate::persist::EngineConfig;

pub const MAGIC: &[u8; 8] = b"HSGMSNAP";
pub const FORMAT_MAJOR: u16 = 1;
pub const FORMAT_MINOR: u16 = 0;

const TAG_CONFIG: u32 = 1;
const TAG_SUMMARIES: u32 = 2;
const TAG_GLOBAL: u32 = 3;
const TAG_LOCAL: u32 = 4;
const TAG_COUNTERS: u32 = 5;
const CHECKSUM_LEN: usize = 32;

#[derive(Default)]
struct Buf(Vec<u8>);

impl Buf {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn vector(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
    fn edges(&mut self, edges: &[Edge]) {
        self.u64(edges.len() as u64);
        for e in edges {
            self.u32(e.a);
            self.u32(e.b);
            self.f64(e.weight);
        }
    }
    fn section(&mut self, tag: u32, payload: Buf) {
        self.u32(tag);
        self.u64(payload.0.len() as u64);
        self.0.extend_from_slice(&payload.0);
    }
}

pub fn encode_snapshot(h: &Hierarchy) -> Vec<u8> {
    let m = &h.memory;
    let dim = m.config.embedder.dimension;
    let mut out = Buf::default();
    out.0.extend_from_slice(MAGIC);
    out.0.extend_from_slice(&FORMAT_MAJOR.to_le_bytes());
    out.0.extend_from_slice(&FORMAT_MINOR.to_le_bytes());

    let config = serde_json::to_vec(&m.config).expect("config serializes");
    out.section(TAG_CONFIG, Buf(config));

    let mut s = Buf::default();
    s.u64(m.summaries.len() as u64);
    s.u64(dim as u64);
    for node in &m.summaries {
        s.u64(node.segment_index as u64);
        s.vector(&node.vector);
    }
    out.section(TAG_SUMMARIES, s);

    let mut g = Buf::default();
    g.f64(m.delta_g);
    g.edges(&m.global_edges);
    out.section(TAG_GLOBAL, g);

    let mut l = Buf::default();
    l.u64(h.graphs.len() as u64);
    for graph in &h.graphs {
        l.u64(graph.segment_index as u64);
        l.f64(graph.threshold_used);
        l.u64(graph.nodes.len() as u64);
        l.u64(dim as u64);
        for n in &graph.nodes {
            l.vector(n);
        }
        l.edges(&graph.edges);
    }
    out.section(TAG_LOCAL, l);

    let mut c = Buf::default();
    c.u64(m.metrics.similarity_evals);
    c.u64(m.metrics.edges_built);
    c.u64(m.metrics.edges_reused);
    c.u64(m.metrics.appends);
    out.section(TAG_COUNTERS, c);

    let digest = Sha256::digest(&out.0);
    out.0.extend_from_slice(&digest);
    out.0
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        if self.bytes.len() < n {
            return Err(SnapshotError::Truncated);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }
    fn u16(&mut self) -> Result<u16, SnapshotError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize, SnapshotError> {
        usize::try_from(self.u64()?).map_err(|_| SnapshotError::Malformed("count overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// Count prefix checked against the bytes left, so corrupt lengths fail fast.
    fn count(&mut self, item_bytes: usize) -> Result<usize, SnapshotError> {
        let n = self.usize()?;
        if n.checked_mul(item_bytes).is_none_or(|total| total > self.bytes.len()) {
            return Err(SnapshotError::Truncated);
        }
        Ok(n)
    }
    fn vector(&mut self, d: usize) -> Result<Vec<f64>, SnapshotError> {
        (0..d).map(|_| self.f64()).collect()
    }
    fn edges(&mut self) -> Result<Vec<Edge>, SnapshotError> {
        let n = self.count(16)?;
        (0..n)
            .map(|_| {
                Ok(Edge {
                    a: self.u32()?,
                    b: self.u32()?,
                    weight: self.f64()?,
                })
            })
            .collect()
    }
    fn section(&mut self, tag: u32) -> Result<Reader<'a>, SnapshotError> {
        let found = self.u32()?;
        if found != tag {
            return Err(SnapshotError::Malformed(format!(
                "expected section {tag}, found {found}"
            )));
        }
        let len = self.usize()?;
        Ok(Reader {
            bytes: self.take(len)?,
        })
    }
    fn finish(self, what: &str) -> Result<(), SnapshotError> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(SnapshotError::Malformed(format!("trailing bytes in {what} section")))
        }
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Hierarchy> {
    let mut header = Reader { bytes };
    if header.take(MAGIC.len()).map_err(|_| SnapshotError::Truncated)? != MAGIC {
        return Err(SnapshotError::BadMagic.into());
    }
    let major = header.u16()?;
    let minor = header.u16()?;
    if major != FORMAT_MAJOR {
        return Err(SnapshotError::VersionMismatch {
            found_major: major,
            found_minor: minor,
            supported: FORMAT_MAJOR,
        }
        .into());
    }
    if bytes.len() < MAGIC.len() + 4 + CHECKSUM_LEN {
        return Err(SnapshotError::Truncated.into());
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(SnapshotError::Checksum.into());
    }
    let mut r = Reader {
        bytes: &body[MAGIC.len() + 4..],
    };

    let config_bytes = r.section(TAG_CONFIG)?.bytes;
    let config: EngineConfig = serde_json::from_slice(config_bytes)
        .map_err(|e| SnapshotError::Malformed(format!("config: {e}")))?;

    let mut s = r.section(TAG_SUMMARIES)?;
    let m = s.usize()?;
    let d = s.usize()?;
    if d != config.embedder.dimension {
        return Err(SnapshotError::Malformed("summary dimension disagrees with config".into()).into());
    }
    if m.checked_mul(8 * (d + 1)).is_none_or(|t| t > s.bytes.len()) {
        return Err(SnapshotError::Truncated.into());
    }
    let summaries = (0..m)
        .map(|_| {
            Ok(SummaryNode {
                segment_index: s.usize()?,
                vector: s.vector(d)?,
            })
        })
        .collect::<Result<Vec<_>, SnapshotError>>()?;
    s.finish("summaries")?;

    let mut g = r.section(TAG_GLOBAL)?;
    let delta_g = g.f64()?;
    let global_edges = g.edges()?;
    g.finish("global")?;

    let mut l = r.section(TAG_LOCAL)?;
    let graph_count = l.count(32)?;
    let mut graphs = Vec::with_capacity(graph_count);
    for _ in 0..graph_count {
        let segment_index = l.usize()?;
        let threshold_used = l.f64()?;
        let n = l.usize()?;
        let gd = l.usize()?;
        if gd != d {
            return Err(SnapshotError::Malformed("local graph dimension disagrees with config".into()).into());
        }
        if n.checked_mul(8 * d).is_none_or(|t| t > l.bytes.len()) {
            return Err(SnapshotError::Truncated.into());
        }
        let nodes = (0..n).map(|_| l.vector(d)).collect::<Result<Vec<_>, _>>()?;
        let edges = l.edges()?;
        graphs.push(LocalGraph {
            segment_index,
            nodes,
            edges,
            threshold_used,
        });
    }
    l.finish("local")?;

    let mut c = r.section(TAG_COUNTERS)?;
    let metrics = MetricCounters {
        similarity_evals: c.u64()?,
        edges_built: c.u64()?,
        edges_reused: c.u64()?,
        appends: c.u64()?,
    };
    c.finish("counters")?;
    r.finish("snapshot")?;

    let h = Hierarchy {
        memory: GlobalMemory {
            summaries,
            global_edges,
            delta_g,
            config,
            metrics,
        },
        graphs,
    };
    h.check()?;
    Ok(h)
}

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn save_snapshot(h: &Hierarchy, path: &Path) -> Result<()> {
    write_atomic(path, &encode_snapshot(h))
}

pub fn load_snapshot(path: &Path) -> Result<Hierarchy> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes)
}
